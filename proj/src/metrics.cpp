#include "nsync/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>

#include "nsync/common.hpp"
#include "nsync/rng.hpp"

#include "json.hpp"

namespace nsync {

namespace {

Tensor gaussian_matrix(int rows, int cols, double stddev, RandomStream& rng) {
    Tensor t = Tensor::zeros({rows, cols});
    for (double& v : t.data) v = stddev * rng.normal();
    return t;
}

void check_feature_matrix(const Tensor& fx, const char* which) {
    NSYNC_CHECK(fx.shape.size() == 2, which, " features must be a matrix, got shape ",
                shape_str(fx.shape));
    NSYNC_CHECK(fx.shape[0] >= 2, which, " needs at least two feature rows, got ", fx.shape[0]);
}

}  // namespace

FeatureExtractor make_feature_extractor(int d_data, uint64_t seed) {
    NSYNC_CHECK(d_data > 0, "feature extractor input dimension must be positive, got ", d_data);
    FeatureExtractor fx;
    fx.d_data = d_data;
    fx.seed = seed;
    RandomStream r1 = derive_stream(seed, "fx/w1");
    RandomStream r2 = derive_stream(seed, "fx/w2");
    fx.w1 = gaussian_matrix(fx.d_hidden, d_data, std::sqrt(2.0 / (d_data + fx.d_hidden)), r1);
    fx.b1 = Tensor::zeros({fx.d_hidden});
    fx.w2 = gaussian_matrix(fx.d_out, fx.d_hidden, std::sqrt(2.0 / (fx.d_hidden + fx.d_out)), r2);
    fx.b2 = Tensor::zeros({fx.d_out});
    return fx;
}

Tensor extract_features(const FeatureExtractor& fx, const Tensor& x) {
    NSYNC_CHECK(x.shape.size() == 1 && x.shape[0] == fx.d_data, "extractor expects a vector of ",
                fx.d_data, ", got shape ", shape_str(x.shape));
    Tensor h = Tensor::zeros({fx.d_hidden});
    for (int i = 0; i < fx.d_hidden; ++i) {
        double s = fx.b1.data[static_cast<size_t>(i)];
        const double* row = &fx.w1.data[static_cast<size_t>(i) * static_cast<size_t>(fx.d_data)];
        for (int j = 0; j < fx.d_data; ++j) s += row[j] * x.data[static_cast<size_t>(j)];
        h.data[static_cast<size_t>(i)] = std::tanh(s);
    }
    Tensor out = Tensor::zeros({fx.d_out});
    for (int i = 0; i < fx.d_out; ++i) {
        double s = fx.b2.data[static_cast<size_t>(i)];
        const double* row = &fx.w2.data[static_cast<size_t>(i) * static_cast<size_t>(fx.d_hidden)];
        for (int j = 0; j < fx.d_hidden; ++j) s += row[j] * h.data[static_cast<size_t>(j)];
        out.data[static_cast<size_t>(i)] = s;
    }
    NSYNC_CHECK_NUM(out.all_finite(), "non-finite feature vector");
    return out;
}

Tensor extract_features(const FeatureExtractor& fx, const Dataset& ds) {
    NSYNC_CHECK(ds.d_data == fx.d_data, "dataset dimension ", ds.d_data,
                " does not match extractor dimension ", fx.d_data);
    NSYNC_CHECK(!ds.samples.empty(), "cannot extract features from an empty dataset");
    const int n = static_cast<int>(ds.samples.size());
    Tensor out = Tensor::zeros({n, fx.d_out});
    for (int i = 0; i < n; ++i) {
        Tensor f = extract_features(fx, ds.samples[static_cast<size_t>(i)].x);
        std::copy(f.data.begin(), f.data.end(),
                  out.data.begin() + static_cast<int64_t>(i) * fx.d_out);
    }
    return out;
}

double mmd2_unbiased(const Tensor& fx_x, const Tensor& fx_y, const KernelFn& kernel) {
    check_feature_matrix(fx_x, "first set");
    check_feature_matrix(fx_y, "second set");
    NSYNC_CHECK(fx_x.shape[1] == fx_y.shape[1], "feature dimensions differ: ", fx_x.shape[1],
                " vs ", fx_y.shape[1]);

    // Canonical argument order: fewer rows first, ties broken by raw bytes.
    // This makes the estimate bitwise symmetric without changing its value.
    const Tensor* a = &fx_x;
    const Tensor* b = &fx_y;
    bool swap = false;
    if (a->shape[0] != b->shape[0]) {
        swap = a->shape[0] > b->shape[0];
    } else {
        swap = std::memcmp(a->data.data(), b->data.data(), a->data.size() * sizeof(double)) > 0;
    }
    if (swap) std::swap(a, b);

    const int m = static_cast<int>(a->shape[0]);
    const int n = static_cast<int>(b->shape[0]);
    const int d = static_cast<int>(a->shape[1]);
    auto row = [d](const Tensor& t, int i) { return &t.data[static_cast<size_t>(i) * d]; };

    double s_aa = 0.0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            if (i != j) s_aa += kernel(row(*a, i), row(*a, j), d);
    double s_bb = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) s_bb += kernel(row(*b, i), row(*b, j), d);
    double s_ab = 0.0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) s_ab += kernel(row(*a, i), row(*b, j), d);

    const double v = s_aa / (static_cast<double>(m) * (m - 1)) +
                     s_bb / (static_cast<double>(n) * (n - 1)) -
                     2.0 * s_ab / (static_cast<double>(m) * n);
    NSYNC_CHECK_NUM(std::isfinite(v), "non-finite kernel distance");
    return v;
}

namespace {

double poly3_kernel(const double* a, const double* b, int d) {
    double dot = 0.0;
    for (int i = 0; i < d; ++i) dot += a[i] * b[i];
    const double base = dot / d + 1.0;
    return base * base * base;
}

Tensor take_block(const Tensor& fx, int block, int n_blocks) {
    const int n = static_cast<int>(fx.shape[0]);
    const int d = static_cast<int>(fx.shape[1]);
    std::vector<int> rows;
    for (int i = block; i < n; i += n_blocks) rows.push_back(i);
    Tensor out = Tensor::zeros({static_cast<int64_t>(rows.size()), d});
    for (size_t r = 0; r < rows.size(); ++r) {
        const double* src = &fx.data[static_cast<size_t>(rows[r]) * d];
        std::copy(src, src + d, out.data.begin() + static_cast<int64_t>(r) * d);
    }
    return out;
}

}  // namespace

double kid_score(const Tensor& fx_gen, const Tensor& fx_ref, const KidConfig& cfg) {
    NSYNC_CHECK(cfg.n_blocks >= 1, "kid block count must be >= 1, got ", cfg.n_blocks);
    if (cfg.n_blocks == 1) return mmd2_unbiased(fx_gen, fx_ref, poly3_kernel);
    double acc = 0.0;
    for (int b = 0; b < cfg.n_blocks; ++b) {
        Tensor gb = take_block(fx_gen, b, cfg.n_blocks);
        Tensor rb = take_block(fx_ref, b, cfg.n_blocks);
        NSYNC_CHECK(gb.shape[0] >= 2 && rb.shape[0] >= 2, "kid block ", b,
                    " has fewer than two rows per set; lower n_blocks");
        acc += mmd2_unbiased(gb, rb, poly3_kernel);
    }
    return acc / cfg.n_blocks;
}

double cmmd_score(const Tensor& fx_gen, const Tensor& fx_ref, const CmmdConfig& cfg,
                  double* sigma_out) {
    check_feature_matrix(fx_gen, "generated set");
    check_feature_matrix(fx_ref, "reference set");
    NSYNC_CHECK(fx_gen.shape[1] == fx_ref.shape[1], "feature dimensions differ");

    double sigma = cfg.sigma;
    if (cfg.bandwidth == BandwidthMode::Median) {
        // Median pairwise distance over the pooled rows.
        const int d = static_cast<int>(fx_gen.shape[1]);
        std::vector<const double*> rows;
        for (int i = 0; i < fx_gen.shape[0]; ++i)
            rows.push_back(&fx_gen.data[static_cast<size_t>(i) * d]);
        for (int i = 0; i < fx_ref.shape[0]; ++i)
            rows.push_back(&fx_ref.data[static_cast<size_t>(i) * d]);
        std::vector<double> dist;
        dist.reserve(rows.size() * (rows.size() - 1) / 2);
        for (size_t i = 0; i < rows.size(); ++i) {
            for (size_t j = i + 1; j < rows.size(); ++j) {
                double s = 0.0;
                for (int k = 0; k < d; ++k) {
                    const double diff = rows[i][k] - rows[j][k];
                    s += diff * diff;
                }
                dist.push_back(std::sqrt(s));
            }
        }
        std::sort(dist.begin(), dist.end());
        const size_t mid = dist.size() / 2;
        sigma = (dist.size() % 2 == 1) ? dist[mid] : 0.5 * (dist[mid - 1] + dist[mid]);
        NSYNC_CHECK_NUM(sigma > 0.0,
                        "median pairwise distance is zero; the pooled rows are degenerate");
    } else {
        NSYNC_CHECK(sigma > 0.0, "fixed bandwidth must be positive, got ", sigma);
    }
    if (sigma_out != nullptr) *sigma_out = sigma;

    const double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    auto rbf = [inv_two_sigma_sq](const double* a, const double* b, int d) {
        double s = 0.0;
        for (int i = 0; i < d; ++i) {
            const double diff = a[i] - b[i];
            s += diff * diff;
        }
        return std::exp(-s * inv_two_sigma_sq);
    };
    return mmd2_unbiased(fx_gen, fx_ref, rbf);
}

namespace {

using EMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::MatrixXd covariance(const Eigen::Map<const EMatrix>& x, Eigen::VectorXd& mean) {
    const auto n = x.rows();
    mean = x.colwise().mean();
    Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
    return centered.transpose() * centered / static_cast<double>(n - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    NSYNC_CHECK_NUM(es.info() == Eigen::Success, "eigendecomposition failed");
    Eigen::VectorXd d = es.eigenvalues();
    for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = std::sqrt(std::max(d[i], 0.0));
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fid_score(const Tensor& fx_gen, const Tensor& fx_ref) {
    check_feature_matrix(fx_gen, "generated set");
    check_feature_matrix(fx_ref, "reference set");
    NSYNC_CHECK(fx_gen.shape[1] == fx_ref.shape[1], "feature dimensions differ");

    Eigen::Map<const EMatrix> xg(fx_gen.data.data(), fx_gen.shape[0], fx_gen.shape[1]);
    Eigen::Map<const EMatrix> xr(fx_ref.data.data(), fx_ref.shape[0], fx_ref.shape[1]);
    Eigen::VectorXd mu_g, mu_r;
    Eigen::MatrixXd cov_g = covariance(xg, mu_g);
    Eigen::MatrixXd cov_r = covariance(xr, mu_r);

    const double mean_term = (mu_g - mu_r).squaredNorm();
    Eigen::MatrixXd sg = psd_sqrt(cov_g);
    // tr sqrt(Cg Cr) through the symmetric product sqrt(Cg) Cr sqrt(Cg).
    Eigen::MatrixXd prod = sg * cov_r * sg;
    Eigen::MatrixXd sym = 0.5 * (prod + prod.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    NSYNC_CHECK_NUM(es.info() == Eigen::Success, "eigendecomposition failed");
    double tr_sqrt = 0.0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        tr_sqrt += std::sqrt(std::max(es.eigenvalues()[i], 0.0));
    }
    const double v = mean_term + cov_g.trace() + cov_r.trace() - 2.0 * tr_sqrt;
    NSYNC_CHECK_NUM(std::isfinite(v), "non-finite distribution distance");
    return v;
}

double csd_score(const Tensor& fx_gen, const Tensor& fx_ref) {
    check_feature_matrix(fx_gen, "generated set");
    NSYNC_CHECK(fx_ref.shape.size() == 2 && fx_ref.shape[0] >= 1, "reference set must be a matrix");
    NSYNC_CHECK(fx_gen.shape[1] == fx_ref.shape[1], "feature dimensions differ");

    const int d = static_cast<int>(fx_gen.shape[1]);
    std::vector<double> mean(static_cast<size_t>(d), 0.0);
    for (int i = 0; i < fx_ref.shape[0]; ++i) {
        const double* r = &fx_ref.data[static_cast<size_t>(i) * d];
        for (int k = 0; k < d; ++k) mean[static_cast<size_t>(k)] += r[k];
    }
    for (double& v : mean) v /= static_cast<double>(fx_ref.shape[0]);
    double mean_norm = 0.0;
    for (double v : mean) mean_norm += v * v;
    mean_norm = std::sqrt(mean_norm);
    NSYNC_CHECK_NUM(mean_norm > 0.0, "reference feature mean has zero norm");

    double acc = 0.0;
    for (int i = 0; i < fx_gen.shape[0]; ++i) {
        const double* g = &fx_gen.data[static_cast<size_t>(i) * d];
        double dot = 0.0, nrm = 0.0;
        for (int k = 0; k < d; ++k) {
            dot += g[k] * mean[static_cast<size_t>(k)];
            nrm += g[k] * g[k];
        }
        nrm = std::sqrt(nrm);
        NSYNC_CHECK_NUM(nrm > 0.0, "generated feature row ", i, " has zero norm");
        acc += dot / (nrm * mean_norm);
    }
    return acc / static_cast<double>(fx_gen.shape[0]);
}

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["fid"] = fid;
    j["kid"] = kid;
    j["cmmd"] = cmmd;
    j["csd"] = csd;
    j["n_generated"] = n_generated;
    j["n_reference"] = n_reference;
    j["feature_dim"] = feature_dim;
    j["extractor_seed"] = extractor_seed;
    j["cmmd_bandwidth_mode"] = cmmd_bandwidth_mode;
    j["cmmd_sigma"] = cmmd_sigma;
    j["kid_blocks"] = kid_blocks;
    return j.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json(const std::string& text) {
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        MetricsReport rep;
        rep.fid = j.at("fid").get<double>();
        rep.kid = j.at("kid").get<double>();
        rep.cmmd = j.at("cmmd").get<double>();
        rep.csd = j.at("csd").get<double>();
        rep.n_generated = j.at("n_generated").get<int>();
        rep.n_reference = j.at("n_reference").get<int>();
        rep.feature_dim = j.at("feature_dim").get<int>();
        rep.extractor_seed = j.at("extractor_seed").get<uint64_t>();
        rep.cmmd_bandwidth_mode = j.at("cmmd_bandwidth_mode").get<std::string>();
        rep.cmmd_sigma = j.at("cmmd_sigma").get<double>();
        rep.kid_blocks = j.at("kid_blocks").get<int>();
        return rep;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(str_cat("bad metrics report: ", e.what()));
    }
}

std::string MetricsReport::csv_header() {
    return "fid,kid,cmmd,csd,n_generated,n_reference,feature_dim,extractor_seed,"
           "cmmd_bandwidth_mode,cmmd_sigma,kid_blocks";
}

std::string MetricsReport::csv_row() const {
    return str_cat(fmt_double(fid), ",", fmt_double(kid), ",", fmt_double(cmmd), ",",
                   fmt_double(csd), ",", n_generated, ",", n_reference, ",", feature_dim, ",",
                   extractor_seed, ",", cmmd_bandwidth_mode, ",", fmt_double(cmmd_sigma), ",",
                   kid_blocks);
}

MetricsReport evaluate_sets(const Dataset& generated, const Dataset& reference,
                            const MetricsConfig& cfg) {
    NSYNC_CHECK(generated.d_data == reference.d_data, "dataset dimensions differ: ",
                generated.d_data, " vs ", reference.d_data);
    FeatureExtractor fx = make_feature_extractor(generated.d_data, cfg.extractor_seed);
    Tensor fg = extract_features(fx, generated);
    Tensor fr = extract_features(fx, reference);

    MetricsReport rep;
    rep.fid = fid_score(fg, fr);
    rep.kid = kid_score(fg, fr, cfg.kid);
    rep.cmmd = cmmd_score(fg, fr, cfg.cmmd, &rep.cmmd_sigma);
    rep.csd = csd_score(fg, fr);
    rep.n_generated = static_cast<int>(generated.samples.size());
    rep.n_reference = static_cast<int>(reference.samples.size());
    rep.extractor_seed = cfg.extractor_seed;
    rep.cmmd_bandwidth_mode = cfg.cmmd.bandwidth == BandwidthMode::Median ? "median" : "fixed";
    rep.kid_blocks = cfg.kid.n_blocks;
    return rep;
}

}  // namespace nsync
