#pragma once

#include <functional>
#include <string>

#include "nsync/styleworld.hpp"
#include "nsync/tensor.hpp"

namespace nsync {

inline constexpr int kFeatureDim = 32;
inline constexpr uint64_t kDefaultExtractorSeed = 7777;

// Frozen random two-layer tanh network standing in for a pretrained feature
// backbone. Same seed, same features, on any machine.
struct FeatureExtractor {
    int d_data = 0;
    int d_hidden = 64;
    int d_out = kFeatureDim;
    uint64_t seed = 0;
    Tensor w1, b1, w2, b2;
};

FeatureExtractor make_feature_extractor(int d_data, uint64_t seed = kDefaultExtractorSeed);
Tensor extract_features(const FeatureExtractor& fx, const Tensor& x);
// One row of features per sample.
Tensor extract_features(const FeatureExtractor& fx, const Dataset& ds);

using KernelFn = std::function<double(const double* a, const double* b, int d)>;

// Unbiased two-sample MMD^2 estimate over feature rows: within-set sums skip
// the diagonal, the cross term uses every pair. Both sets need at least two
// rows. Arguments are brought into a canonical order first, so the result is
// bitwise symmetric in (X, Y). Slightly negative values are expected when the
// sets are close; only the exact-duplicate case is pinned near zero.
double mmd2_unbiased(const Tensor& fx_x, const Tensor& fx_y, const KernelFn& kernel);

// Kernel distance with the cubic polynomial kernel (a.b/d + 1)^3. n_blocks > 1
// averages the estimate over deterministic round-robin row blocks.
struct KidConfig {
    int n_blocks = 1;
};
double kid_score(const Tensor& fx_gen, const Tensor& fx_ref, const KidConfig& cfg = {});

// Gaussian-kernel MMD^2. The bandwidth either comes from the median of
// pairwise distances over the pooled rows or is fixed by the caller; a
// non-positive bandwidth is rejected. sigma_out receives the bandwidth used.
enum class BandwidthMode { Median, Fixed };
struct CmmdConfig {
    BandwidthMode bandwidth = BandwidthMode::Median;
    double sigma = 1.0;
};
double cmmd_score(const Tensor& fx_gen, const Tensor& fx_ref, const CmmdConfig& cfg = {},
                  double* sigma_out = nullptr);

// Frechet distance between Gaussian fits of the two feature sets, with
// unbiased covariances. Eigenvalues that come out slightly negative from the
// symmetric solver are clamped to zero before the square roots.
double fid_score(const Tensor& fx_gen, const Tensor& fx_ref);

// Mean cosine similarity between each generated feature row and the mean
// reference feature row. Rejects zero-norm rows and a zero-norm mean.
double csd_score(const Tensor& fx_gen, const Tensor& fx_ref);

struct MetricsConfig {
    uint64_t extractor_seed = kDefaultExtractorSeed;
    CmmdConfig cmmd;
    KidConfig kid;
};

struct MetricsReport {
    double fid = 0.0;
    double kid = 0.0;
    double cmmd = 0.0;
    double csd = 0.0;
    int n_generated = 0;
    int n_reference = 0;
    int feature_dim = kFeatureDim;
    uint64_t extractor_seed = 0;
    std::string cmmd_bandwidth_mode;
    double cmmd_sigma = 0.0;
    int kid_blocks = 1;

    std::string to_json() const;
    // Inverse of to_json. Rejects missing or mistyped fields.
    static MetricsReport from_json(const std::string& text);
    static std::string csv_header();
    std::string csv_row() const;
};

// Runs the full panel: one shared extractor, then all four scores.
MetricsReport evaluate_sets(const Dataset& generated, const Dataset& reference,
                            const MetricsConfig& cfg = {});

}  // namespace nsync
