#include "nsync/model.hpp"

#include <cmath>

#include "nsync/rng.hpp"

namespace nsync {

std::string adaptation_mode_name(AdaptationMode mode) {
    switch (mode) {
        case AdaptationMode::None: return "none";
        case AdaptationMode::StyleToken: return "ti";
        case AdaptationMode::LowRank: return "lora";
    }
    return "none";
}

AdaptationMode parse_adaptation_mode(const std::string& name) {
    if (name == "none") return AdaptationMode::None;
    if (name == "ti") return AdaptationMode::StyleToken;
    if (name == "lora") return AdaptationMode::LowRank;
    throw ConfigError("unknown adaptation mode: " + name + " (expected none|ti|lora)");
}

bool Model::is_lora_target(const std::string& weight) const {
    if (mode != AdaptationMode::LowRank) return false;
    for (const auto& t : lora.targets)
        if (t == weight) return true;
    return false;
}

namespace {
Tensor gaussian_tensor(std::vector<int64_t> shape, double stddev, RandomStream& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = stddev * rng.normal();
    return t;
}

int layer_in_dim(const DenoiserConfig& cfg, int layer) {
    return layer == 1 ? cfg.input_dim() : cfg.d_hidden;
}
int layer_out_dim(const DenoiserConfig& cfg, int layer) {
    return layer == cfg.n_layers ? cfg.d_data : cfg.d_hidden;
}
}  // namespace

Model init_base_model(const DenoiserConfig& cfg, int n_content, uint64_t seed,
                      const ScheduleSpec& sched) {
    NSYNC_CHECK(cfg.n_layers >= 1, "denoiser needs at least one layer");
    NSYNC_CHECK(cfg.d_data >= 1 && cfg.d_hidden >= 1 && cfg.d_time >= 2 && cfg.d_e >= 1,
                "bad denoiser dims");
    NSYNC_CHECK(cfg.d_time % 2 == 0, "d_time must be even, got ", cfg.d_time);
    NSYNC_CHECK(n_content >= 1, "need at least one content class");

    Model m;
    m.cfg = cfg;
    m.sched = sched;
    m.n_content = n_content;
    RandomStream wrng = derive_stream(seed, "init/weights");
    for (int l = 1; l <= cfg.n_layers; ++l) {
        int64_t in = layer_in_dim(cfg, l);
        int64_t out = layer_out_dim(cfg, l);
        double stddev = std::sqrt(2.0 / static_cast<double>(in));
        m.params.add(m.weight_name(l), gaussian_tensor({out, in}, stddev, wrng), true);
        m.params.add(m.bias_name(l), Tensor::zeros({out}), true);
    }
    RandomStream erng = derive_stream(seed, "init/embeddings");
    double estd = 1.0 / std::sqrt(static_cast<double>(cfg.d_e));
    m.params.add("cond/content", gaussian_tensor({n_content, cfg.d_e}, estd, erng), true);
    m.params.add("cond/token/generic", gaussian_tensor({cfg.d_e}, estd, erng), true);
    return m;
}

Tensor time_embedding(int t, int d_time) {
    Tensor emb = Tensor::zeros({d_time});
    int half = d_time / 2;
    for (int k = 0; k < half; ++k) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) /
                               static_cast<double>(half));
        emb.data[static_cast<size_t>(2 * k)] = std::sin(t * freq);
        emb.data[static_cast<size_t>(2 * k + 1)] = std::cos(t * freq);
    }
    return emb;
}

namespace {
const std::string& token_param_name(const Model& m, int token) {
    static const std::string generic = "cond/token/generic";
    static const std::string style = "cond/token/style";
    if (token == kTokenGeneric) return generic;
    if (token == kTokenStyle) {
        NSYNC_CHECK(m.params.has(style), "model has no learned style token; set an adaptation "
                                         "mode before conditioning on it");
        return style;
    }
    throw ConfigError("unknown style token id: " + std::to_string(token));
}

void check_caption(const Model& m, const Caption& cap) {
    NSYNC_CHECK(cap.content_class >= 0 && cap.content_class < m.n_content, "content class ",
                cap.content_class, " outside [0, ", m.n_content, ")");
}
}  // namespace

Tensor embed_caption(const Model& m, const Caption& cap) {
    check_caption(m, cap);
    const Tensor& table = m.params.at("cond/content");
    Tensor cond = Tensor::zeros({m.cfg.d_e});
    const double* src = table.data.data() + static_cast<int64_t>(cap.content_class) * m.cfg.d_e;
    std::copy(src, src + m.cfg.d_e, cond.data.begin());
    if (cap.style_token != kTokenNone) {
        const Tensor& tok = m.params.at(token_param_name(m, cap.style_token));
        for (int i = 0; i < m.cfg.d_e; ++i) cond.data[static_cast<size_t>(i)] += tok.data[static_cast<size_t>(i)];
    }
    return cond;
}

Var embed_caption_g(Graph& g, const Model& m, const Caption& cap) {
    check_caption(m, cap);
    Var table = g.param("cond/content", m.params.at("cond/content"),
                        m.params.is_trainable("cond/content"));
    Var cond = g.row(table, cap.content_class);
    if (cap.style_token != kTokenNone) {
        const std::string& name = token_param_name(m, cap.style_token);
        Var tok = g.param(name, m.params.at(name), m.params.is_trainable(name));
        cond = g.add(cond, tok);
    }
    return cond;
}

Tensor denoise(const Model& m, const Tensor& z_t, int t, const Tensor& cond) {
    NSYNC_CHECK(z_t.shape == std::vector<int64_t>{m.cfg.d_data}, "z_t shape ",
                shape_str(z_t.shape), " does not match d_data ", m.cfg.d_data);
    NSYNC_CHECK(cond.shape == std::vector<int64_t>{m.cfg.d_e}, "cond shape ",
                shape_str(cond.shape), " does not match d_e ", m.cfg.d_e);

    Tensor temb = time_embedding(t, m.cfg.d_time);
    std::vector<double> x;
    x.reserve(static_cast<size_t>(m.cfg.input_dim()));
    x.insert(x.end(), z_t.data.begin(), z_t.data.end());
    x.insert(x.end(), temb.data.begin(), temb.data.end());
    x.insert(x.end(), cond.data.begin(), cond.data.end());

    // Operation order mirrors the graph forward exactly, so both paths give
    // bitwise-identical activations.
    std::vector<double> h;
    for (int l = 1; l <= m.cfg.n_layers; ++l) {
        const Tensor& W = m.params.at(m.weight_name(l));
        const Tensor& b = m.params.at(m.bias_name(l));
        int64_t rows = W.shape[0], cols = W.shape[1];
        h.assign(static_cast<size_t>(rows), 0.0);
        for (int64_t i = 0; i < rows; ++i) {
            const double* wr = W.data.data() + i * cols;
            double acc = 0.0;
            for (int64_t j = 0; j < cols; ++j) acc += wr[j] * x[static_cast<size_t>(j)];
            h[static_cast<size_t>(i)] = acc;
        }
        if (m.is_lora_target(m.weight_name(l))) {
            const Tensor& A = m.params.at("lora/W" + std::to_string(l) + "/A");
            const Tensor& B = m.params.at("lora/W" + std::to_string(l) + "/B");
            int64_t r = A.shape[1];
            std::vector<double> u(static_cast<size_t>(r), 0.0);
            for (int64_t k = 0; k < r; ++k) {
                const double* br = B.data.data() + k * cols;
                double acc = 0.0;
                for (int64_t j = 0; j < cols; ++j) acc += br[j] * x[static_cast<size_t>(j)];
                u[static_cast<size_t>(k)] = acc;
            }
            const double s = m.lora.alpha / static_cast<double>(m.lora.rank);
            for (int64_t i = 0; i < rows; ++i) {
                const double* ar = A.data.data() + i * r;
                double acc = 0.0;
                for (int64_t k = 0; k < r; ++k) acc += ar[k] * u[static_cast<size_t>(k)];
                const double scaled = s * acc;
                h[static_cast<size_t>(i)] += scaled;
            }
        }
        for (int64_t i = 0; i < rows; ++i) h[static_cast<size_t>(i)] += b.data[static_cast<size_t>(i)];
        if (l < m.cfg.n_layers)
            for (double& v : h) v = v * (1.0 / (1.0 + std::exp(-v)));
        x = h;
    }
    Tensor out = Tensor::vec(std::move(x));
    NSYNC_CHECK_NUM(out.all_finite(), "non-finite denoiser activation at t=", t);
    return out;
}

Var denoise_g(Graph& g, const Model& m, Var z_t, int t, Var cond) {
    NSYNC_CHECK(g.value(cond).shape == std::vector<int64_t>{m.cfg.d_e}, "cond shape ",
                shape_str(g.value(cond).shape), " does not match d_e ", m.cfg.d_e);
    Var temb = g.constant(time_embedding(t, m.cfg.d_time));
    Var x = g.concat({z_t, temb, cond});
    for (int l = 1; l <= m.cfg.n_layers; ++l) {
        const std::string wn = m.weight_name(l);
        Var W = g.param(wn, m.params.at(wn), m.params.is_trainable(wn));
        Var b = g.param(m.bias_name(l), m.params.at(m.bias_name(l)),
                        m.params.is_trainable(m.bias_name(l)));
        Var h = g.matvec(W, x);
        if (m.is_lora_target(wn)) {
            const std::string an = "lora/W" + std::to_string(l) + "/A";
            const std::string bn = "lora/W" + std::to_string(l) + "/B";
            Var A = g.param(an, m.params.at(an), m.params.is_trainable(an));
            Var B = g.param(bn, m.params.at(bn), m.params.is_trainable(bn));
            Var low = g.matvec(A, g.matvec(B, x));
            h = g.add(h, g.scale(low, m.lora.alpha / static_cast<double>(m.lora.rank)));
        }
        h = g.add(h, b);
        x = l < m.cfg.n_layers ? g.silu(h) : h;
    }
    return x;
}

DenoiseGraphFn denoise_fn(const Model& m) {
    return [&m](Graph& g, Var z_t, int t, Var cond) { return denoise_g(g, m, z_t, t, cond); };
}

void set_adaptation_mode(Model& m, AdaptationMode mode, uint64_t seed, const LoraSpec* spec) {
    NSYNC_CHECK(m.mode == AdaptationMode::None,
                "adaptation mode already set to ", adaptation_mode_name(m.mode));
    NSYNC_CHECK(mode != AdaptationMode::None, "cannot set adaptation mode to none");

    for (const auto& name : m.params.names()) m.params.set_trainable(name, false);

    Tensor style_init = m.params.at("cond/token/generic");
    if (mode == AdaptationMode::StyleToken) {
        m.params.add("cond/token/style", std::move(style_init), true);
    } else {
        LoraSpec ls;
        if (spec != nullptr) {
            ls = *spec;
        } else {
            ls.targets = {m.weight_name(1), m.weight_name(m.cfg.n_layers)};
        }
        NSYNC_CHECK(!ls.targets.empty(), "low-rank mode needs at least one target matrix");
        NSYNC_CHECK(ls.rank >= 1, "low-rank rank must be positive, got ", ls.rank);
        RandomStream rng = derive_stream(seed, "lora/init");
        for (const auto& wn : ls.targets) {
            NSYNC_CHECK(m.params.has(wn), "low-rank target does not exist: ", wn);
            const Tensor& W = m.params.at(wn);
            NSYNC_CHECK(W.shape.size() == 2, "low-rank target must be a matrix: ", wn);
            int64_t out = W.shape[0], in = W.shape[1];
            double stddev = 1.0 / std::sqrt(static_cast<double>(in));
            Tensor A = Tensor::zeros({out, ls.rank});
            for (double& v : A.data) v = stddev * rng.normal();
            // Zero B keeps effective weights equal to base weights at step 0.
            m.params.add("lora/" + wn.substr(wn.find('/') + 1) + "/A", std::move(A), true);
            m.params.add("lora/" + wn.substr(wn.find('/') + 1) + "/B",
                         Tensor::zeros({ls.rank, in}), true);
        }
        m.lora = ls;
        // Inference conditioning still appends the style token; it just stays
        // frozen at the generic embedding in this mode.
        m.params.add("cond/token/style", std::move(style_init), false);
    }
    m.mode = mode;
}

}  // namespace nsync
