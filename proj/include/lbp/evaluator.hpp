#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lbp/checkin.hpp"
#include "lbp/context.hpp"
#include "lbp/model.hpp"
#include "lbp/trainer.hpp"

namespace lbp {

// Anything that can rank next-POI candidates. Scoring is read-only and
// safe to call concurrently.
class RankingModel {
public:
    virtual ~RankingModel() = default;
    virtual double score(int user, int prev_poi, int candidate,
                         const ContextVector& context, double distance_km) const = 0;
    virtual std::string name() const = 0;
    virtual int num_users() const = 0;
    virtual int num_pois() const = 0;
};

// The latent-pattern mixture model behind the common interface.
class LbpRankingModel : public RankingModel {
public:
    explicit LbpRankingModel(ModelParams model, std::string name = "lbp")
        : model_(std::move(model)), name_(std::move(name)) {}
    double score(int user, int prev_poi, int candidate, const ContextVector& context,
                 double distance_km) const override {
        return fused_score(model_, user, prev_poi, candidate, context, distance_km);
    }
    std::string name() const override { return name_; }
    int num_users() const override { return model_.M; }
    int num_pois() const override { return model_.N; }
    const ModelParams& params() const { return model_; }

private:
    ModelParams model_;
    std::string name_;
};

// Plain user x POI matrix factorization trained with BPR; ignores the
// previous POI, the context, and the distance.
class MfBprModel : public RankingModel {
public:
    MfBprModel(int M, int N, int D) : M_(M), N_(N), D_(D) {
        user_factors.assign(static_cast<std::size_t>(M) * D, 0.0);
        poi_factors.assign(static_cast<std::size_t>(N) * D, 0.0);
    }
    double score(int user, int, int candidate, const ContextVector&,
                 double) const override {
        const auto* u = user_factors.data() + static_cast<std::size_t>(user) * D_;
        const auto* q = poi_factors.data() + static_cast<std::size_t>(candidate) * D_;
        double s = 0.0;
        for (int d = 0; d < D_; ++d) s += u[d] * q[d];
        return s;
    }
    std::string name() const override { return "mf-bpr"; }
    int num_users() const override { return M_; }
    int num_pois() const override { return N_; }

    std::vector<double> user_factors;  // M x D
    std::vector<double> poi_factors;   // N x D

private:
    int M_, N_, D_;
};

// BPR pair objective for the baseline: ln sigmoid(x_up - x_un) minus the
// L2 term over the three touched factor rows. mf_bpr_update ascends it.
double mf_bpr_pair_objective(const MfBprModel& model, int user, int pos, int neg,
                             double lambda);
void mf_bpr_update(MfBprModel& model, int user, int pos, int neg, double lambda,
                   double learning_rate);

// BPR over (visited, not-visited) POI pairs; K and mode in the config are
// ignored. Deterministic under config.seed.
MfBprModel train_mf_bpr_baseline(const Dataset& train, const TrainConfig& config);

// Candidates sorted by score descending, ties broken by ascending POI
// index, truncated to n. candidate_set = nullptr means all POIs except
// prev_poi. Distances come from the supplied coordinate table.
std::vector<int> recommend_top_n(const RankingModel& model, int user, int prev_poi,
                                 const ContextVector& context, int n,
                                 const std::vector<double>& poi_lat,
                                 const std::vector<double>& poi_lon,
                                 const std::vector<int>* candidate_set = nullptr);

// One held-out next-POI query: the previous event for the first test
// transition is the user's last training check-in.
struct TestQuery {
    int user = -1;
    int prev_poi = -1;
    int true_next = -1;
    ContextVector context;
    bool next_is_new = false;  // true next POI absent from the user's train history
};

std::vector<TestQuery> build_test_queries(const SplitDataset& split,
                                          const FeatureSchema& schema);

struct EvalUserRow {
    int user = -1;
    std::size_t train_events = 0;
    std::size_t total_events = 0;
    std::size_t test_transitions = 0;
    std::size_t new_test_transitions = 0;
    std::map<int, double> hit_rate_at;      // over all test transitions
    std::map<int, double> hit_rate_new_at;  // over new-POI transitions only
};

struct EvalReport {
    std::map<int, double> precision_at;
    std::map<int, double> precision_new_at;
    std::map<int, double> new_fraction_at;  // hits on new POIs / all hits
    std::vector<EvalUserRow> per_user;
    std::string model_id;
    std::string dataset_id;
    std::string config_snapshot;
};

// Mean over users of the per-user hit rate at cutoff n; candidates are
// all POIs.
double precision_at_n(const RankingModel& model, const SplitDataset& split,
                      const FeatureSchema& schema, int n);

// Same, restricted to test transitions whose target the user never
// visited in training. Throws if no such transition exists at all.
double precision_at_n_new(const RankingModel& model, const SplitDataset& split,
                          const FeatureSchema& schema, int n);

std::vector<EvalReport> evaluate_run(const std::vector<const RankingModel*>& models,
                                     const SplitDataset& split,
                                     const FeatureSchema& schema,
                                     const std::vector<int>& cutoffs);

std::string eval_reports_to_text(const std::vector<EvalReport>& reports);
std::string eval_reports_to_json(const std::vector<EvalReport>& reports);
std::string per_user_breakdown_to_text(const EvalReport& report);

}  // namespace lbp
