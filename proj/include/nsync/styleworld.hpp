#pragma once

#include <string>
#include <vector>

#include "nsync/model.hpp"
#include "nsync/rng.hpp"
#include "nsync/tensor.hpp"

namespace nsync {

// A rendering style: per-frequency-band gains applied to the pattern's
// non-constant coefficients, then a contrast multiplier and constant offset.
struct StyleParams {
    std::string id;
    std::vector<double> band_gains;
    double dc_offset = 0.0;
    double contrast = 1.0;
};

struct WorldConfig {
    int grid = 8;
    int n_classes = 6;
    int n_bands = 4;
    double obs_sigma = 0.02;

    int d_data() const { return grid * grid; }
};

// The bundled world: content classes shared by every style, a handful of
// mild generic styles for pretraining, and two strongly distinct held-out
// target styles for finetuning experiments.
struct StyleWorld {
    WorldConfig cfg;
    std::vector<StyleParams> generic_styles;
    std::vector<StyleParams> target_styles;

    const StyleParams& style_by_id(const std::string& id) const;
};

StyleWorld bundled_world();

// Zero-mean base pattern of a content class: a fixed set of Gaussian bumps at
// class-specific grid locations.
Tensor class_pattern(const WorldConfig& cfg, int content_class);

// Styled observation of a class pattern. The band gains act on the pattern's
// deviation in coefficient space, so the identity style with zero noise
// reproduces the base pattern bit for bit.
Tensor render(const WorldConfig& cfg, int content_class, const StyleParams& style,
              RandomStream& rng);

struct LabeledSample {
    Tensor x;
    Caption caption;
};

struct Dataset {
    int d_data = 0;
    std::string style_id;  // empty for model-generated sets
    std::string source;    // "styleworld" or "model"
    uint64_t class_seed = 0;
    uint64_t render_seed = 0;
    std::vector<LabeledSample> samples;

    std::vector<Caption> captions() const;
};

// n draws of one style. Content classes come from class_seed alone and
// observation noise from render_seed alone, so reseeding the renderer never
// changes which captions a dataset carries.
Dataset make_dataset(const WorldConfig& cfg, const StyleParams& style, int n,
                     const std::vector<double>& class_mix, uint64_t class_seed,
                     uint64_t render_seed);

// Synthetic negatives: one reverse-process sample from the base model per
// caption occurrence, conditioned on the caption's content class plus the
// generic token. Never touches any style renderer; the output is a pure
// function of (base model, captions, seed).
Dataset curate_negatives(const Model& base, const std::vector<Caption>& captions,
                         int n_per_caption, uint64_t seed, int n_steps = 50);

// Reverse-process samples for evaluation: n_per_caption draws per caption,
// conditioned on the caption's content class plus the requested token.
// Rejects tokens the model does not carry. Pure function of (model, captions,
// seed).
Dataset sample_dataset(const Model& m, const std::vector<Caption>& captions, int n_per_caption,
                       uint64_t seed, int token = kTokenStyle, int n_steps = 50);

// Structured-text dataset files: a small header, then one line per sample
// with class, token, and the flat payload.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);
void export_dataset_csv(const Dataset& ds, const std::string& path);

std::vector<double> uniform_class_mix(int n_classes);

}  // namespace nsync
