#include "lbp/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"
#include "lbp/geo.hpp"

namespace lbp {

double mf_bpr_pair_objective(const MfBprModel& model, int user, int pos, int neg,
                             double lambda) {
    ContextVector none;
    const double x = model.score(user, -1, pos, none, 0.0) -
                     model.score(user, -1, neg, none, 0.0);
    double reg = 0.0;
    const int D = static_cast<int>(model.user_factors.size() / model.num_users());
    const auto* u = model.user_factors.data() + static_cast<std::size_t>(user) * D;
    const auto* qp = model.poi_factors.data() + static_cast<std::size_t>(pos) * D;
    const auto* qn = model.poi_factors.data() + static_cast<std::size_t>(neg) * D;
    for (int d = 0; d < D; ++d) reg += u[d] * u[d] + qp[d] * qp[d] + qn[d] * qn[d];
    return stable_log_sigmoid(x) - 0.5 * lambda * reg;
}

void mf_bpr_update(MfBprModel& model, int user, int pos, int neg, double lambda,
                   double learning_rate) {
    const int D = static_cast<int>(model.user_factors.size() / model.num_users());
    auto* u = model.user_factors.data() + static_cast<std::size_t>(user) * D;
    auto* qp = model.poi_factors.data() + static_cast<std::size_t>(pos) * D;
    auto* qn = model.poi_factors.data() + static_cast<std::size_t>(neg) * D;

    double x = 0.0;
    for (int d = 0; d < D; ++d) x += u[d] * (qp[d] - qn[d]);
    const double delta = 1.0 - stable_sigmoid(x);
    for (int d = 0; d < D; ++d) {
        const double uo = u[d], po = qp[d], no = qn[d];
        u[d] += learning_rate * (delta * (po - no) - lambda * uo);
        qp[d] += learning_rate * (delta * uo - lambda * po);
        qn[d] += learning_rate * (-delta * uo - lambda * no);
    }
}

MfBprModel train_mf_bpr_baseline(const Dataset& train, const TrainConfig& config) {
    const int M = static_cast<int>(train.num_users());
    const int N = static_cast<int>(train.num_pois());
    MfBprModel model(M, N, config.D);

    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> init(0.0, 0.1);
    for (auto& v : model.user_factors) v = init(rng);
    for (auto& v : model.poi_factors) v = init(rng);

    std::vector<std::unordered_set<int>> visited(M);
    std::vector<std::pair<int, int>> positives;  // (user, poi) per check-in
    for (int u = 0; u < M; ++u)
        for (const auto& e : train.checkins[u]) {
            visited[u].insert(e.poi);
            positives.emplace_back(u, e.poi);
        }
    if (positives.empty())
        throw std::runtime_error("train_mf_bpr_baseline: empty training set");

    std::uniform_int_distribution<int> pick(0, N - 1);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(positives.begin(), positives.end(), rng);
        for (const auto& [u, pos] : positives) {
            if (static_cast<int>(visited[u].size()) >= N) continue;  // nothing to contrast
            for (int k = 0; k < config.negatives_per_positive; ++k) {
                int neg = pick(rng);
                while (visited[u].count(neg)) neg = pick(rng);
                mf_bpr_update(model, u, pos, neg, config.lambda_theta,
                              config.learning_rate);
            }
        }
    }
    return model;
}

std::vector<int> recommend_top_n(const RankingModel& model, int user, int prev_poi,
                                 const ContextVector& context, int n,
                                 const std::vector<double>& poi_lat,
                                 const std::vector<double>& poi_lon,
                                 const std::vector<int>* candidate_set) {
    std::vector<int> candidates;
    if (candidate_set) {
        candidates = *candidate_set;
        if (candidates.empty())
            throw std::invalid_argument("recommend_top_n: empty candidate set");
    } else {
        candidates.reserve(model.num_pois());
        for (int l = 0; l < model.num_pois(); ++l)
            if (l != prev_poi) candidates.push_back(l);
    }

    std::vector<std::pair<double, int>> scored;
    scored.reserve(candidates.size());
    for (int l : candidates) {
        const double d = haversine_km(poi_lat[prev_poi], poi_lon[prev_poi],
                                      poi_lat[l], poi_lon[l]);
        scored.emplace_back(model.score(user, prev_poi, l, context, d), l);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });

    std::vector<int> out;
    const auto take = std::min<std::size_t>(n, scored.size());
    out.reserve(take);
    for (std::size_t j = 0; j < take; ++j) out.push_back(scored[j].second);
    return out;
}

std::vector<TestQuery> build_test_queries(const SplitDataset& split,
                                          const FeatureSchema& schema) {
    if (split.train.provenance != Provenance::train ||
        split.test.provenance != Provenance::test)
        throw std::invalid_argument("build_test_queries: split lacks provenance tags");

    std::vector<TestQuery> queries;
    for (std::size_t u = 0; u < split.test.checkins.size(); ++u) {
        const auto& test_events = split.test.checkins[u];
        if (test_events.empty()) continue;
        const auto& train_events = split.train.checkins[u];
        if (train_events.empty()) continue;  // no previous POI to condition on

        std::unordered_set<int> train_pois;
        for (const auto& e : train_events) train_pois.insert(e.poi);

        Event prev = train_events.back();
        for (const auto& e : test_events) {
            TestQuery q;
            q.user = static_cast<int>(u);
            q.prev_poi = prev.poi;
            q.true_next = e.poi;
            q.context = featurize_at(prev.timestamp, prev.category, schema);
            q.next_is_new = !train_pois.count(e.poi);
            queries.push_back(std::move(q));
            prev = e;
        }
    }
    return queries;
}

namespace {

// Zero-based rank of the true candidate under the (score desc, index asc)
// order, without materializing the sorted list.
int rank_of_true(const RankingModel& model, const TestQuery& q,
                 const std::vector<double>& poi_lat, const std::vector<double>& poi_lon) {
    const double d_true =
        haversine_km(poi_lat[q.prev_poi], poi_lon[q.prev_poi], poi_lat[q.true_next],
                     poi_lon[q.true_next]);
    const double true_score =
        model.score(q.user, q.prev_poi, q.true_next, q.context, d_true);
    int rank = 0;
    for (int l = 0; l < model.num_pois(); ++l) {
        if (l == q.true_next) continue;
        const double d = haversine_km(poi_lat[q.prev_poi], poi_lon[q.prev_poi],
                                      poi_lat[l], poi_lon[l]);
        const double s = model.score(q.user, q.prev_poi, l, q.context, d);
        if (s > true_score || (s == true_score && l < q.true_next)) ++rank;
    }
    return rank;
}

struct UserAccumulator {
    std::size_t n_test = 0;
    std::size_t n_new = 0;
    std::map<int, std::size_t> hits_at;
    std::map<int, std::size_t> hits_new_at;
};

EvalReport evaluate_one(const RankingModel& model, const SplitDataset& split,
                        const std::vector<int>& cutoffs,
                        const std::vector<TestQuery>& queries) {
    if (model.num_users() != static_cast<int>(split.train.num_users()) ||
        model.num_pois() != static_cast<int>(split.train.num_pois()))
        throw std::invalid_argument(
            "evaluate_run: model and dataset index spaces disagree");

    std::vector<int> sorted_cutoffs = cutoffs;
    std::sort(sorted_cutoffs.begin(), sorted_cutoffs.end());

    std::vector<UserAccumulator> acc(split.train.num_users());
    std::map<int, std::size_t> global_hits, global_new_hits;
    for (int n : sorted_cutoffs) {
        global_hits[n] = 0;
        global_new_hits[n] = 0;
    }

    for (const auto& q : queries) {
        const int rank = rank_of_true(model, q, split.train.poi_lat, split.train.poi_lon);
        auto& a = acc[q.user];
        ++a.n_test;
        if (q.next_is_new) ++a.n_new;
        for (int n : sorted_cutoffs) {
            if (rank < n) {
                ++a.hits_at[n];
                ++global_hits[n];
                if (q.next_is_new) {
                    ++a.hits_new_at[n];
                    ++global_new_hits[n];
                }
            }
        }
    }

    EvalReport report;
    report.model_id = model.name();
    for (int n : sorted_cutoffs) {
        double sum = 0.0, sum_new = 0.0;
        std::size_t users = 0, users_new = 0;
        for (const auto& a : acc) {
            if (a.n_test > 0) {
                const auto it = a.hits_at.find(n);
                sum += static_cast<double>(it == a.hits_at.end() ? 0 : it->second) /
                       static_cast<double>(a.n_test);
                ++users;
            }
            if (a.n_new > 0) {
                const auto it = a.hits_new_at.find(n);
                sum_new +=
                    static_cast<double>(it == a.hits_new_at.end() ? 0 : it->second) /
                    static_cast<double>(a.n_new);
                ++users_new;
            }
        }
        report.precision_at[n] = users > 0 ? sum / static_cast<double>(users) : 0.0;
        report.precision_new_at[n] =
            users_new > 0 ? sum_new / static_cast<double>(users_new) : 0.0;
        report.new_fraction_at[n] =
            global_hits[n] > 0 ? static_cast<double>(global_new_hits[n]) /
                                     static_cast<double>(global_hits[n])
                               : 0.0;
    }

    for (std::size_t u = 0; u < acc.size(); ++u) {
        if (acc[u].n_test == 0) continue;
        EvalUserRow row;
        row.user = static_cast<int>(u);
        row.train_events = split.train.checkins[u].size();
        row.total_events = split.train.checkins[u].size() + split.test.checkins[u].size();
        row.test_transitions = acc[u].n_test;
        row.new_test_transitions = acc[u].n_new;
        for (int n : sorted_cutoffs) {
            const auto it = acc[u].hits_at.find(n);
            row.hit_rate_at[n] =
                static_cast<double>(it == acc[u].hits_at.end() ? 0 : it->second) /
                static_cast<double>(acc[u].n_test);
            if (acc[u].n_new > 0) {
                const auto itn = acc[u].hits_new_at.find(n);
                row.hit_rate_new_at[n] =
                    static_cast<double>(itn == acc[u].hits_new_at.end() ? 0
                                                                        : itn->second) /
                    static_cast<double>(acc[u].n_new);
            }
        }
        report.per_user.push_back(std::move(row));
    }
    return report;
}

}  // namespace

double precision_at_n(const RankingModel& model, const SplitDataset& split,
                      const FeatureSchema& schema, int n) {
    const auto queries = build_test_queries(split, schema);
    if (queries.empty()) throw std::runtime_error("precision_at_n: empty test set");
    return evaluate_one(model, split, {n}, queries).precision_at.at(n);
}

double precision_at_n_new(const RankingModel& model, const SplitDataset& split,
                          const FeatureSchema& schema, int n) {
    const auto queries = build_test_queries(split, schema);
    bool any_new = false;
    for (const auto& q : queries) any_new = any_new || q.next_is_new;
    if (!any_new)
        throw std::runtime_error(
            "precision_at_n_new: no new-POI transition in the test set");
    return evaluate_one(model, split, {n}, queries).precision_new_at.at(n);
}

std::vector<EvalReport> evaluate_run(const std::vector<const RankingModel*>& models,
                                     const SplitDataset& split,
                                     const FeatureSchema& schema,
                                     const std::vector<int>& cutoffs) {
    const auto queries = build_test_queries(split, schema);
    if (queries.empty()) throw std::runtime_error("evaluate_run: empty test set");
    std::vector<EvalReport> reports;
    reports.reserve(models.size());
    for (const auto* model : models) {
        auto r = evaluate_one(*model, split, cutoffs, queries);
        r.dataset_id = std::to_string(split.train.fingerprint());
        reports.push_back(std::move(r));
    }
    return reports;
}

std::string eval_reports_to_text(const std::vector<EvalReport>& reports) {
    std::ostringstream out;
    out.imbue(std::locale::classic());
    out.precision(6);
    out << "metric";
    for (const auto& r : reports) out << '\t' << r.model_id;
    out << '\n';
    if (reports.empty()) return out.str();

    for (const auto& [n, _] : reports.front().precision_at) {
        out << "P@" << n;
        for (const auto& r : reports) out << '\t' << r.precision_at.at(n);
        out << '\n';
    }
    for (const auto& [n, _] : reports.front().precision_new_at) {
        out << "Pnew@" << n;
        for (const auto& r : reports) out << '\t' << r.precision_new_at.at(n);
        out << '\n';
    }
    for (const auto& [n, _] : reports.front().new_fraction_at) {
        out << "new_fraction@" << n;
        for (const auto& r : reports) out << '\t' << r.new_fraction_at.at(n);
        out << '\n';
    }
    return out.str();
}

std::string eval_reports_to_json(const std::vector<EvalReport>& reports) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : reports) {
        nlohmann::json jr;
        jr["model_id"] = r.model_id;
        jr["dataset_id"] = r.dataset_id;
        jr["config_snapshot"] = r.config_snapshot;
        for (const auto& [n, v] : r.precision_at)
            jr["precision_at"][std::to_string(n)] = v;
        for (const auto& [n, v] : r.precision_new_at)
            jr["precision_new_at"][std::to_string(n)] = v;
        for (const auto& [n, v] : r.new_fraction_at)
            jr["new_fraction_at"][std::to_string(n)] = v;
        j.push_back(std::move(jr));
    }
    return j.dump(2);
}

std::string per_user_breakdown_to_text(const EvalReport& report) {
    std::ostringstream out;
    out.imbue(std::locale::classic());
    out.precision(6);
    out << "user\ttrain_events\ttotal_events\ttest_transitions\tnew_test_transitions";
    if (!report.per_user.empty())
        for (const auto& [n, _] : report.per_user.front().hit_rate_at)
            out << "\thit@" << n;
    out << '\n';
    for (const auto& row : report.per_user) {
        out << row.user << '\t' << row.train_events << '\t' << row.total_events << '\t'
            << row.test_transitions << '\t' << row.new_test_transitions;
        for (const auto& [_, v] : row.hit_rate_at) out << '\t' << v;
        out << '\n';
    }
    return out.str();
}

}  // namespace lbp
