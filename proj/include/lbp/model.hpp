#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lbp/context.hpp"

namespace lbp {

// One latent behavior pattern's factor blocks plus its spatial weight.
// All matrices are flat row-major with stride D.
struct PatternParams {
    std::vector<double> user_factors;       // M x D, pairs with next_factors_user
    std::vector<double> next_factors_user;  // N x D
    std::vector<double> next_factors_prev;  // N x D, pairs with prev_factors
    std::vector<double> prev_factors;       // N x D
    double rho = 0.0;
};

enum class GateMode : std::uint8_t { global = 0, per_user = 1 };

// Softmax gate weights over context features: K x F (global) or
// M x K x F (per-user), flat row-major.
struct GateParams {
    GateMode mode = GateMode::global;
    std::vector<double> alpha;
};

struct PatternDistribution {
    std::vector<double> probs;  // length K, sums to 1
};

// Full parameter set plus everything scoring needs so a model file is
// self-contained: the feature schema, POI coordinates, and the
// fingerprint of the dataset it was trained on.
struct ModelParams {
    int K = 1;
    int D = 1;
    int M = 0;  // users
    int N = 0;  // POIs
    std::vector<PatternParams> patterns;
    GateParams gate;
    FeatureSchema schema;
    double lambda_theta = 1.0;
    double min_distance_km = 0.01;
    std::vector<double> poi_lat;  // length N
    std::vector<double> poi_lon;
    std::uint64_t dataset_fingerprint = 0;

    std::span<const double> user_row(int s, int u) const {
        return {patterns[s].user_factors.data() + static_cast<std::size_t>(u) * D,
                static_cast<std::size_t>(D)};
    }
    std::span<const double> next_user_row(int s, int l) const {
        return {patterns[s].next_factors_user.data() + static_cast<std::size_t>(l) * D,
                static_cast<std::size_t>(D)};
    }
    std::span<const double> next_prev_row(int s, int l) const {
        return {patterns[s].next_factors_prev.data() + static_cast<std::size_t>(l) * D,
                static_cast<std::size_t>(D)};
    }
    std::span<const double> prev_row(int s, int i) const {
        return {patterns[s].prev_factors.data() + static_cast<std::size_t>(i) * D,
                static_cast<std::size_t>(D)};
    }
    // Gate weight row for pattern s (per-user mode indexes the user's block).
    std::span<const double> alpha_row(int s, int u = -1) const;
    std::span<double> alpha_row_mut(int s, int u = -1);

    double poi_distance_km(int i, int l) const;
};

// Pattern-level score: <user, next> + <next', prev> + rho / max(d, clamp).
double pattern_score(const ModelParams& model, int s, int u, int i, int l,
                     double distance_km);

// Softmax over the K gate logits alpha^s . g(c); u is required in
// per-user mode and ignored otherwise.
PatternDistribution gate_distribution(const ModelParams& model, int u,
                                      const ContextVector& context);

// Mixture score: sum_s pattern_score(s) * p(s|c).
double fused_score(const ModelParams& model, int u, int i, int l,
                   const ContextVector& context, double distance_km);

// Binary model format "LBPM"; round-trips every field bit-exactly.
std::vector<std::uint8_t> serialize(const ModelParams& model);
ModelParams deserialize(const std::vector<std::uint8_t>& bytes);

void save_model(const ModelParams& model, const std::string& path);
ModelParams load_model(const std::string& path);

// Exact size in bytes a serialized model occupies.
std::size_t serialized_size(const ModelParams& model);

}  // namespace lbp
