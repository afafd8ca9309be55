#pragma once

#include <cstdint>
#include <vector>

#include "lbp/checkin.hpp"
#include "lbp/model.hpp"

namespace lbp {

// Generator knobs. The first block mirrors the planted model; the second
// block shapes corpora for specific recovery experiments.
struct SynthConfig {
    int n_users = 50;
    int n_pois = 200;
    int n_categories = 5;
    int events_per_user = 100;
    int K_true = 2;
    int D_true = 8;
    double gate_sharpness = 3.0;  // 0 makes every pattern equally likely
    double geo_extent_km = 40.0;
    std::uint64_t seed = 7;

    double factor_scale = 1.0;
    double rho_true = 1.0;
    // 0: independent pattern factors; 1: later patterns are exact sign
    // flips of pattern 0, so averaging them cancels the signal
    double pattern_opposition = 0.0;
    // last pattern becomes geography-driven: zero factors, rho scaled up.
    // Gives the mixture structurally distinct regimes (preference-driven
    // vs distance-driven moves), which EM separates by fit alone.
    bool spatial_last_pattern = false;
    double spatial_pattern_rho = 3.0;
    int light_events_per_user = 0;      // 0: every user gets events_per_user
    double light_user_fraction = 0.0;
    bool opposing_gate_cohorts = false;  // odd users get the sign-flipped gate
    bool spatial_kernel_only = false;    // displacement-driven walk, no patterns
    int candidate_pool = 200;            // nearest POIs considered per step
    int time_bins = 24;
};

struct SynthResult {
    Dataset dataset;
    ModelParams truth;
    std::vector<std::vector<bool>> novelty;  // aligned with dataset.checkins
    std::vector<int> cohort;                 // per user, 0 or 1
    std::vector<std::size_t> pattern_draws;  // how often each pattern fired
};

// Timestamped walks driven by the planted model: each step draws a
// pattern from the true gate at the current context, then the next POI
// from the softmax of that pattern's scores over the nearest-candidate
// pool. Deterministic under seed; users walk on independent sub-seeds.
SynthResult generate(const SynthConfig& config);

// Independent full ranking of all POIs by the mixture score, naive loops
// and long-double accumulation. Ties break toward the lower POI index.
std::vector<int> brute_force_rank(const ModelParams& truth, int user, int prev_poi,
                                  const ContextVector& context);

}  // namespace lbp
