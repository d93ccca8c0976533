#include "nsync/styleworld.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nsync/ddim.hpp"

namespace nsync {

const StyleParams& StyleWorld::style_by_id(const std::string& id) const {
    for (const auto& s : generic_styles)
        if (s.id == id) return s;
    for (const auto& s : target_styles)
        if (s.id == id) return s;
    throw ConfigError("unknown style id: " + id);
}

StyleWorld bundled_world() {
    StyleWorld w;
    w.cfg = WorldConfig{};
    // Style separation must ride coefficients the class patterns actually
    // populate: mostly the low bands, the offset, and the contrast.
    w.generic_styles = {
        {"plain", {1.0, 1.0, 1.0, 1.0}, 0.0, 1.0},
        {"soft", {0.55, 0.75, 0.7, 0.6}, 0.2, 0.8},
        {"crisp", {1.5, 1.35, 1.6, 1.8}, -0.18, 1.3},
        {"flat", {0.8, 0.45, 0.9, 1.0}, 0.42, 0.55},
    };
    w.target_styles = {
        {"inky", {1.25, 1.75, 2.4, 3.2}, -0.45, 1.6},
        {"pastel", {1.7, 0.6, 0.3, 0.15}, 0.62, 0.85},
    };
    return w;
}

namespace {

void check_style(const WorldConfig& cfg, const StyleParams& style) {
    NSYNC_CHECK(static_cast<int>(style.band_gains.size()) == cfg.n_bands, "style ", style.id,
                " has ", style.band_gains.size(), " band gains, world expects ", cfg.n_bands);
    NSYNC_CHECK(style.contrast > 0.0, "style ", style.id, " has non-positive contrast");
}

// Orthonormal type-II cosine basis, row u = frequency u.
std::vector<double> cosine_basis(int n) {
    std::vector<double> c(static_cast<size_t>(n * n));
    for (int u = 0; u < n; ++u) {
        double s = std::sqrt((u == 0 ? 1.0 : 2.0) / n);
        for (int x = 0; x < n; ++x)
            c[static_cast<size_t>(u * n + x)] =
                s * std::cos(M_PI * (2.0 * x + 1.0) * u / (2.0 * n));
    }
    return c;
}

int band_of(int u, int v, int grid, int n_bands) {
    int r = u + v;  // 1 .. 2*(grid-1); (0,0) never reaches here
    return (r - 1) * n_bands / (2 * grid - 2);
}

}  // namespace

Tensor class_pattern(const WorldConfig& cfg, int content_class) {
    NSYNC_CHECK(content_class >= 0 && content_class < cfg.n_classes, "content class ",
                content_class, " outside [0, ", cfg.n_classes, ")");
    int n = cfg.grid;
    Tensor p = Tensor::zeros({n * n});
    int n_bumps = 2 + content_class % 2;
    for (int j = 0; j < n_bumps; ++j) {
        double cx = (content_class * 3 + j * 5 + 1) % n;
        double cy = (content_class * 5 + j * 3 + 2) % n;
        double amp = 1.0 + 0.15 * ((content_class + j) % 3);
        double sig = 1.1;
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                p.data[static_cast<size_t>(y * n + x)] += amp * std::exp(-d2 / (2.0 * sig * sig));
            }
    }
    double mean = 0.0;
    for (double v : p.data) mean += v;
    mean /= static_cast<double>(p.data.size());
    for (double& v : p.data) v -= mean;
    return p;
}

Tensor render(const WorldConfig& cfg, int content_class, const StyleParams& style,
              RandomStream& rng) {
    check_style(cfg, style);
    int n = cfg.grid;
    Tensor base = class_pattern(cfg, content_class);

    // Gains act on the deviation from unit gain, applied in coefficient space:
    // delta = idct((g-1) .* dct(base)). Zero deviation stays exactly zero,
    // which keeps the identity style an exact no-op.
    std::vector<double> C = cosine_basis(n);
    std::vector<double> tmp(static_cast<size_t>(n * n), 0.0);
    std::vector<double> coef(static_cast<size_t>(n * n), 0.0);
    // coef = C * base * C^T
    for (int u = 0; u < n; ++u)
        for (int x = 0; x < n; ++x) {
            double acc = 0.0;
            for (int y = 0; y < n; ++y)
                acc += C[static_cast<size_t>(u * n + y)] * base.data[static_cast<size_t>(y * n + x)];
            tmp[static_cast<size_t>(u * n + x)] = acc;
        }
    for (int u = 0; u < n; ++u)
        for (int v = 0; v < n; ++v) {
            double acc = 0.0;
            for (int x = 0; x < n; ++x)
                acc += tmp[static_cast<size_t>(u * n + x)] * C[static_cast<size_t>(v * n + x)];
            coef[static_cast<size_t>(u * n + v)] = acc;
        }
    for (int u = 0; u < n; ++u)
        for (int v = 0; v < n; ++v) {
            if (u == 0 && v == 0) {
                coef[0] = 0.0;
                continue;
            }
            double g = style.band_gains[static_cast<size_t>(band_of(u, v, n, cfg.n_bands))];
            coef[static_cast<size_t>(u * n + v)] *= g - 1.0;
        }
    // delta = C^T * coef * C
    for (int y = 0; y < n; ++y)
        for (int v = 0; v < n; ++v) {
            double acc = 0.0;
            for (int u = 0; u < n; ++u)
                acc += C[static_cast<size_t>(u * n + y)] * coef[static_cast<size_t>(u * n + v)];
            tmp[static_cast<size_t>(y * n + v)] = acc;
        }
    Tensor out = Tensor::zeros({n * n});
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double acc = 0.0;
            for (int v = 0; v < n; ++v)
                acc += tmp[static_cast<size_t>(y * n + v)] * C[static_cast<size_t>(v * n + x)];
            size_t i = static_cast<size_t>(y * n + x);
            out.data[i] = style.contrast * (base.data[i] + acc) + style.dc_offset;
            if (cfg.obs_sigma > 0.0) out.data[i] += cfg.obs_sigma * rng.normal();
        }
    return out;
}

std::vector<Caption> Dataset::captions() const {
    std::vector<Caption> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.caption);
    return out;
}

std::vector<double> uniform_class_mix(int n_classes) {
    return std::vector<double>(static_cast<size_t>(n_classes),
                               1.0 / static_cast<double>(n_classes));
}

Dataset make_dataset(const WorldConfig& cfg, const StyleParams& style, int n,
                     const std::vector<double>& class_mix, uint64_t class_seed,
                     uint64_t render_seed) {
    NSYNC_CHECK(n >= 1, "dataset size must be positive, got ", n);
    NSYNC_CHECK(static_cast<int>(class_mix.size()) == cfg.n_classes, "class mix has ",
                class_mix.size(), " entries, world has ", cfg.n_classes, " classes");
    double total = 0.0;
    for (double p : class_mix) {
        NSYNC_CHECK(p >= 0.0, "class mix probabilities must be nonnegative");
        total += p;
    }
    NSYNC_CHECK(total > 0.0, "class mix sums to zero");

    Dataset ds;
    ds.d_data = cfg.d_data();
    ds.style_id = style.id;
    ds.source = "styleworld";
    ds.class_seed = class_seed;
    ds.render_seed = render_seed;
    ds.samples.reserve(static_cast<size_t>(n));

    RandomStream class_rng = derive_stream(class_seed, "classes");
    for (int i = 0; i < n; ++i) {
        double u = class_rng.uniform01() * total;
        int cls = cfg.n_classes - 1;
        double acc = 0.0;
        for (int c = 0; c < cfg.n_classes; ++c) {
            acc += class_mix[static_cast<size_t>(c)];
            if (u < acc) {
                cls = c;
                break;
            }
        }
        RandomStream noise_rng = derive_stream(render_seed, "sample", static_cast<uint64_t>(i));
        LabeledSample s;
        s.x = render(cfg, cls, style, noise_rng);
        s.caption = Caption{cls, kTokenNone};
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

Dataset curate_negatives(const Model& base, const std::vector<Caption>& captions,
                         int n_per_caption, uint64_t seed, int n_steps) {
    NSYNC_CHECK(!captions.empty(), "cannot curate negatives for an empty caption list");
    NSYNC_CHECK(n_per_caption >= 1, "n_per_caption must be positive, got ", n_per_caption);
    NSYNC_CHECK(base.params.has("cond/token/generic"),
                "base model has no generic token; cannot curate negatives");

    NoiseSchedule sched = base.sched.make();
    Dataset ds;
    ds.d_data = base.cfg.d_data;
    ds.source = "model";
    ds.class_seed = seed;
    ds.render_seed = seed;
    ds.samples.reserve(captions.size() * static_cast<size_t>(n_per_caption));
    for (size_t i = 0; i < captions.size(); ++i) {
        Caption cap{captions[i].content_class, kTokenGeneric};
        Tensor cond = embed_caption(base, cap);
        for (int k = 0; k < n_per_caption; ++k) {
            uint64_t draw_seed =
                derive_seed(seed, "negative", i * static_cast<size_t>(n_per_caption) +
                                                  static_cast<size_t>(k));
            EpsFn eps = [&](const Tensor& z, int t) { return denoise(base, z, t, cond); };
            LabeledSample s;
            s.x = ddim_sample(eps, {base.cfg.d_data}, sched, n_steps, draw_seed);
            s.caption = Caption{cap.content_class, kTokenNone};
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

Dataset sample_dataset(const Model& m, const std::vector<Caption>& captions, int n_per_caption,
                       uint64_t seed, int token, int n_steps) {
    NSYNC_CHECK(!captions.empty(), "cannot sample for an empty caption list");
    NSYNC_CHECK(n_per_caption >= 1, "n_per_caption must be positive, got ", n_per_caption);

    NoiseSchedule sched = m.sched.make();
    Dataset ds;
    ds.d_data = m.cfg.d_data;
    ds.source = "model";
    ds.class_seed = seed;
    ds.render_seed = seed;
    ds.samples.reserve(captions.size() * static_cast<size_t>(n_per_caption));
    for (size_t i = 0; i < captions.size(); ++i) {
        Caption cap{captions[i].content_class, token};
        Tensor cond = embed_caption(m, cap);
        for (int k = 0; k < n_per_caption; ++k) {
            uint64_t draw_seed = derive_seed(
                seed, "sample",
                i * static_cast<size_t>(n_per_caption) + static_cast<size_t>(k));
            EpsFn eps = [&](const Tensor& z, int t) { return denoise(m, z, t, cond); };
            LabeledSample s;
            s.x = ddim_sample(eps, {m.cfg.d_data}, sched, n_steps, draw_seed);
            s.caption = Caption{cap.content_class, kTokenNone};
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

namespace {
std::string header_token(const std::string& s) { return s.empty() ? "-" : s; }

std::string parse_header_value(std::istream& in, const std::string& key, const std::string& path) {
    std::string line;
    NSYNC_CHECK(std::getline(in, line).good(), "dataset ", path, " truncated before '", key, "'");
    auto sp = line.find(' ');
    NSYNC_CHECK(sp != std::string::npos && line.substr(0, sp) == key, "dataset ", path,
                " bad header line '", line, "', expected key '", key, "'");
    return line.substr(sp + 1);
}
}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        NSYNC_CHECK(out.good(), "cannot open dataset for writing: ", path);
        out << "nsync-dataset v1\n";
        out << "n " << ds.samples.size() << "\n";
        out << "d_data " << ds.d_data << "\n";
        out << "style " << header_token(ds.style_id) << "\n";
        out << "source " << header_token(ds.source) << "\n";
        out << "class_seed " << ds.class_seed << "\n";
        out << "render_seed " << ds.render_seed << "\n";
        out << "payload\n";
        for (const auto& s : ds.samples) {
            NSYNC_CHECK(s.x.numel() == ds.d_data, "sample length ", s.x.numel(),
                        " does not match dataset d_data ", ds.d_data);
            out << s.caption.content_class << " " << s.caption.style_token;
            for (double v : s.x.data) out << " " << fmt_double(v);
            out << "\n";
        }
        NSYNC_CHECK(out.good(), "write failure on dataset: ", path);
    }
    std::filesystem::rename(tmp, path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    NSYNC_CHECK(in.good(), "cannot open dataset: ", path);
    std::string line;
    NSYNC_CHECK(std::getline(in, line).good() && line == "nsync-dataset v1",
                "not a dataset file (bad signature): ", path);

    Dataset ds;
    size_t n = 0;
    try {
        n = std::stoull(parse_header_value(in, "n", path));
        ds.d_data = std::stoi(parse_header_value(in, "d_data", path));
        ds.style_id = parse_header_value(in, "style", path);
        ds.source = parse_header_value(in, "source", path);
        ds.class_seed = std::stoull(parse_header_value(in, "class_seed", path));
        ds.render_seed = std::stoull(parse_header_value(in, "render_seed", path));
    } catch (const std::logic_error&) {
        throw ConfigError("dataset " + path + " has a malformed header number");
    }
    if (ds.style_id == "-") ds.style_id.clear();
    if (ds.source == "-") ds.source.clear();
    NSYNC_CHECK(ds.d_data >= 1, "dataset ", path, " has bad d_data ", ds.d_data);
    NSYNC_CHECK(std::getline(in, line).good() && line == "payload", "dataset ", path,
                " missing payload marker");

    ds.samples.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        NSYNC_CHECK(std::getline(in, line).good(), "dataset ", path, " truncated at sample ", i);
        std::istringstream ls(line);
        LabeledSample s;
        ls >> s.caption.content_class >> s.caption.style_token;
        s.x = Tensor::zeros({ds.d_data});
        for (int j = 0; j < ds.d_data; ++j) ls >> s.x.data[static_cast<size_t>(j)];
        NSYNC_CHECK(!ls.fail(), "dataset ", path, " sample ", i, " is malformed");
        double extra;
        NSYNC_CHECK(!(ls >> extra), "dataset ", path, " sample ", i, " has trailing values");
        ds.samples.push_back(std::move(s));
    }
    NSYNC_CHECK(!std::getline(in, line) || line.empty(), "dataset ", path,
                " has trailing lines after payload");
    return ds;
}

void export_dataset_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    NSYNC_CHECK(out.good(), "cannot open csv for writing: ", path);
    out << "class,token";
    for (int j = 0; j < ds.d_data; ++j) out << ",x" << j;
    out << "\n";
    for (const auto& s : ds.samples) {
        out << s.caption.content_class << "," << s.caption.style_token;
        for (double v : s.x.data) out << "," << fmt_double(v);
        out << "\n";
    }
    NSYNC_CHECK(out.good(), "write failure on csv: ", path);
}

}  // namespace nsync
