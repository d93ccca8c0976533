#pragma once

#include <string>
#include <vector>

#include "nsync/graph.hpp"
#include "nsync/param_set.hpp"
#include "nsync/schedule.hpp"
#include "nsync/ti_loss.hpp"

namespace nsync {

// Conditioning token attached to a caption. The generic token is what the
// base model is pretrained with; the style token is the one slot finetuning
// may learn. kTokenNone means content-only conditioning.
inline constexpr int kTokenNone = -1;
inline constexpr int kTokenGeneric = 0;
inline constexpr int kTokenStyle = 1;

struct Caption {
    int content_class = 0;
    int style_token = kTokenNone;
};

struct DenoiserConfig {
    int d_data = 64;
    int d_hidden = 128;
    int n_layers = 3;
    int d_time = 16;
    int d_e = 16;

    int input_dim() const { return d_data + d_time + d_e; }
};

struct ScheduleSpec {
    int T = kDefaultT;
    double beta_min = kDefaultBetaMin;
    double beta_max = kDefaultBetaMax;

    NoiseSchedule make() const { return make_linear_schedule(T, beta_min, beta_max); }
};

enum class AdaptationMode { None, StyleToken, LowRank };

std::string adaptation_mode_name(AdaptationMode mode);
AdaptationMode parse_adaptation_mode(const std::string& name);

// Low-rank adapter placement: which weight matrices get A*B terms.
struct LoraSpec {
    std::vector<std::string> targets;
    int rank = 4;
    double alpha = 4.0;
};

// Denoiser MLP plus conditioning table, all tensors living in one ParamSet:
//   denoiser/W{l}, denoiser/b{l}   l = 1..n_layers
//   cond/content                   (n_content, d_e)
//   cond/token/generic             (d_e)
//   cond/token/style               (d_e), present once adaptation is set
//   lora/W{l}/A, lora/W{l}/B       present in low-rank mode
struct Model {
    DenoiserConfig cfg;
    ScheduleSpec sched;
    int n_content = 0;
    AdaptationMode mode = AdaptationMode::None;
    LoraSpec lora;
    ParamSet params;

    std::string weight_name(int layer) const { return "denoiser/W" + std::to_string(layer); }
    std::string bias_name(int layer) const { return "denoiser/b" + std::to_string(layer); }
    bool is_lora_target(const std::string& weight) const;
};

// Fresh model with seeded weights; every tensor trainable (pretraining state).
Model init_base_model(const DenoiserConfig& cfg, int n_content, uint64_t seed,
                      const ScheduleSpec& sched = {});

// Sin/cos features of the integer timestep, d_time long.
Tensor time_embedding(int t, int d_time);

// Conditioning vector for a caption: content embedding plus optional token
// embedding. Rejects unknown classes and tokens not present in the model.
Tensor embed_caption(const Model& m, const Caption& cap);
Var embed_caption_g(Graph& g, const Model& m, const Caption& cap);

// Noise prediction without gradient tracking. cond must be d_e long.
Tensor denoise(const Model& m, const Tensor& z_t, int t, const Tensor& cond);
// Graph-building forward; weight leaves borrow the model's tensors, so the
// model must outlive the pass.
Var denoise_g(Graph& g, const Model& m, Var z_t, int t, Var cond);
// denoise_g bound as a loss-builder callback.
DenoiseGraphFn denoise_fn(const Model& m);

// Switches a pretrained model into one finetuning regime. Freezes every base
// tensor; style-token mode adds a trainable copy of the generic token,
// low-rank mode adds adapters (zero B, so effective weights start equal to
// base) and a frozen style token. Rejects being called twice.
void set_adaptation_mode(Model& m, AdaptationMode mode, uint64_t seed = 0,
                         const LoraSpec* spec = nullptr);

// Versioned checkpoint of config, schedule, mode, adapter spec, and every
// tensor with its trainable flag. Load fails loudly on bad magic, version, or
// shape/size mismatch. full=false writes only trainable tensors.
void save_checkpoint(const Model& m, const std::string& path, bool full = true);
Model load_checkpoint(const std::string& path);
// Overlays a trainable-only checkpoint onto a model with matching structure.
void load_checkpoint_overlay(Model& m, const std::string& path);

}  // namespace nsync
