#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <unordered_map>
#include <vector>

#include "lbp/checkin.hpp"
#include "lbp/context.hpp"
#include "lbp/model.hpp"

namespace lbp {

// One ranked training pair: user u at POI i moved to m, never to n.
struct BprTriple {
    int user = -1;
    int prev_poi = -1;
    int pos_poi = -1;  // m, the observed next POI
    int neg_poi = -1;  // n, sampled unobserved next POI
    ContextVector context;
    double d_pos_km = 0.0;  // distance i -> m
    double d_neg_km = 0.0;  // distance i -> n
};

// Posterior over patterns for one triple.
struct Responsibilities {
    std::vector<double> gamma;  // length K, sums to 1
};

enum class TrainMode : std::uint8_t { gpdm, ppdm };

struct TrainConfig {
    int K = 4;
    int D = 60;
    double lambda_theta = 1.0;
    double learning_rate = 0.05;
    int epochs = 30;
    int negatives_per_positive = 1;
    std::uint64_t seed = 1;
    TrainMode mode = TrainMode::gpdm;
    double convergence_tol = 1e-5;
    // init draw scale; <= 0 means the prior's sqrt(2/lambda_theta)
    double init_sigma = 0.0;
    int time_bins = 24;
    double utc_offset_hours = 0.0;
    double min_distance_km = 0.01;
    // Full-batch verification mode: negatives fixed up front, one
    // accumulated M-step per epoch with backtracking so the audit
    // objective cannot decrease.
    bool full_batch = false;
    std::size_t max_audit_triples = 2000;
};

struct TraceRow {
    int epoch = 0;
    double audit_objective = 0.0;
    bool gradient_check_ok = true;  // finite params + spot FD check
    double wall_seconds = 0.0;
};

struct TrainResult {
    ModelParams model;
    std::vector<TraceRow> trace;
    bool diverged = false;
    std::size_t users_without_transitions = 0;
};

// Membership index over observed transitions: which next POIs has (u, i)
// ever produced in the training set.
class TransitionIndex {
public:
    TransitionIndex(const std::vector<Transition>& transitions, int num_pois);
    bool contains(int user, int prev_poi, int next_poi) const;
    const std::vector<int>* observed_next(int user, int prev_poi) const;
    int num_pois() const { return num_pois_; }

private:
    std::unordered_map<std::int64_t, std::vector<int>> next_sets_;
    int num_pois_ = 0;
};

// All parameters drawn i.i.d. N(0, 2/lambda_theta) from the seeded
// generator; coordinates and fingerprint are copied from the dataset.
ModelParams init_params(const TrainConfig& config, const Dataset& dataset,
                        const FeatureSchema& schema);

// Uniform negative over POIs excluding every observed next POI of (u, i).
// Throws if the observed set covers the whole catalog.
BprTriple sample_bpr_triple(const Transition& transition, const TransitionIndex& index,
                            const Dataset& dataset, const FeatureSchema& schema,
                            std::mt19937_64& rng);

// E-step posterior: gamma(s) proportional to sigmoid(delta_s) * p(s|c).
Responsibilities responsibilities(const ModelParams& model, const BprTriple& triple);

// Per-triple EM objective with gamma held fixed:
//   sum_s gamma_s [ln sigmoid(delta_s) + ln p(s|c)]
//   - (lambda/2) sum_s gamma_s ||touched params of pattern s||^2.
// sgd_step ascends exactly this, which is what the finite-difference
// checks differentiate.
double per_triple_q(const ModelParams& model, const BprTriple& triple,
                    const Responsibilities& gamma);

// One stochastic ascent step on per_triple_q at the current point.
// Throws on a non-finite update.
void sgd_step(ModelParams& model, const BprTriple& triple,
              const Responsibilities& gamma, double learning_rate);

// Full MAP objective over a fixed triple set:
//   sum_t ln[sum_s sigmoid(delta_s) p(s|c)] - (lambda/2) ||Theta||^2.
double log_objective(const ModelParams& model, const std::vector<BprTriple>& triples);

// EM-wrapped S-BPR training over one dataset's transitions.
TrainResult train(const Dataset& train_dataset, const TrainConfig& config,
                  std::optional<double> max_gap_hours = std::nullopt);

// Numerically stable helpers shared with tests.
double stable_sigmoid(double z);
double stable_log_sigmoid(double z);

std::string trace_to_text(const std::vector<TraceRow>& trace);

}  // namespace lbp
