#pragma once

#include <functional>
#include <optional>
#include <string_view>

#include "nsync/adam.hpp"
#include "nsync/model.hpp"
#include "nsync/styleworld.hpp"

namespace nsync {

// Update rules for finetuning against synthetic negatives.
//   Baseline            plain denoising loss on positives
//   MeanPair            average positive and negative branch gradients
//   MeanAnchored        average positive, anchor, and negative branches
//   Orthogonal          positive gradient minus its projection on the negative
//   OrthogonalAnchored  Orthogonal plus the projection on the anchor gradient
enum class Variant { Baseline, MeanPair, MeanAnchored, Orthogonal, OrthogonalAnchored };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);
bool variant_uses_negatives(Variant v);
bool variant_uses_anchor(Variant v);

struct TrainConfig {
    Variant variant = Variant::OrthogonalAnchored;
    AdaptationMode mode = AdaptationMode::StyleToken;
    int iterations = 8000;
    int batch = 8;
    double lr = 8e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    // Squared-norm floor below which a projection target counts as degenerate.
    double eps_g = 1e-12;
    uint64_t seed = 1;
    int log_every = 50;
    int checkpoint_every = 2000;  // 0 disables periodic snapshots
    // One (t, eps) draw per triplet reused by all branches instead of
    // independent per-branch draws.
    bool share_branch_draws = false;
    // Project each triplet's gradients before averaging instead of averaging
    // the branch gradients first.
    bool per_triplet_projection = false;
};

// Branch quantities logged every log_every steps. NaN marks branches the
// active variant does not compute.
struct StepStats {
    int step = 0;
    double loss_pos, loss_anchor, loss_neg;
    double norm_pos, norm_anchor, norm_neg, norm_update;
    double cos_pos_neg, cos_pos_anchor;

    StepStats();
    static std::string csv_header();
    std::string csv_row() const;
};

// Named random streams of one training run. A branch owns its draws, so
// variants that skip a branch never disturb the others.
namespace stream_tag {
inline constexpr std::string_view kBatchPos = "batch/pos";
inline constexpr std::string_view kBatchAnchor = "batch/anchor";
inline constexpr std::string_view kBatchNeg = "batch/neg";
inline constexpr std::string_view kDrawPos = "draw/pos";
inline constexpr std::string_view kDrawAnchor = "draw/anchor";
inline constexpr std::string_view kDrawNeg = "draw/neg";
inline constexpr std::string_view kDrawShared = "draw/shared";
inline constexpr std::string_view kAdapt = "adapt";
inline constexpr std::string_view kBatchPretrain = "batch/pretrain";
inline constexpr std::string_view kDrawPretrain = "draw/pretrain";
}  // namespace stream_tag

// Component of src along dst: (src.dst / ||dst||^2) dst, the zero vector when
// ||dst||^2 < eps_g. Computed through exact accumulation, so the result is a
// function of the real values involved: rescaling dst by any factor c with
// exactly representable products leaves the output bit-identical.
GradVector project(const GradVector& src, const GradVector& dst, double eps_g);

struct BranchGrads {
    GradVector pos;
    std::optional<GradVector> anchor;
    std::optional<GradVector> neg;
};

// Applies the variant's combination rule. Rejects missing branches that the
// variant requires and non-finite results.
GradVector combine_gradients(Variant v, const BranchGrads& g, double eps_g);

struct TripletEntry {
    const LabeledSample* pos = nullptr;
    const LabeledSample* anchor = nullptr;
    const LabeledSample* neg = nullptr;
};
using TripletBatch = std::vector<TripletEntry>;

struct TrainSinks {
    std::function<void(const StepStats&)> on_stats;
    std::function<void(int step, const Model& m)> on_checkpoint;
};

struct TrainResult {
    int steps = 0;
    std::vector<StepStats> stats;
};

// One finetuning run. Adapts the model in place (setting cfg.mode if the
// model is still unadapted), then runs cfg.iterations update steps. Within a
// branch each triplet gets its own (t, eps) draw; draws are independent
// across branches unless share_branch_draws is set. Negative examples are
// matched to the positive's content class. Inputs are never mutated; the run
// is a pure function of (model, datasets, cfg).
TrainResult train(Model& model, const Dataset& positives, const Dataset* negatives,
                  const TrainConfig& cfg, const TrainSinks& sinks = {});

struct PretrainConfig {
    int iterations = 3000;
    int batch = 16;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 1;
    int log_every = 50;
};

struct PretrainStat {
    int step = 0;
    double loss = 0.0;
    double grad_norm = 0.0;

    static std::string csv_header();
    std::string csv_row() const;
};

struct PretrainResult {
    int steps = 0;
    std::vector<PretrainStat> stats;
};

// Denoising pretraining of a fresh model: every parameter trains, and each
// sample is conditioned on its content class plus the generic token. The
// model must still be unadapted.
PretrainResult pretrain(Model& model, const Dataset& data, const PretrainConfig& cfg,
                        const std::function<void(const PretrainStat&)>& on_stats = {});

}  // namespace nsync
