#include "lbp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "lbp/geo.hpp"

namespace lbp {

double stable_sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double stable_log_sigmoid(double z) {
    if (z >= 0.0) return -std::log1p(std::exp(-z));
    return z - std::log1p(std::exp(z));
}

TransitionIndex::TransitionIndex(const std::vector<Transition>& transitions,
                                 int num_pois)
    : num_pois_(num_pois) {
    for (const auto& t : transitions) {
        const auto key =
            static_cast<std::int64_t>(t.user) * num_pois_ + t.prev_poi;
        next_sets_[key].push_back(t.next_poi);
    }
    for (auto& [key, nexts] : next_sets_) {
        std::sort(nexts.begin(), nexts.end());
        nexts.erase(std::unique(nexts.begin(), nexts.end()), nexts.end());
    }
}

bool TransitionIndex::contains(int user, int prev_poi, int next_poi) const {
    const auto* nexts = observed_next(user, prev_poi);
    if (!nexts) return false;
    return std::binary_search(nexts->begin(), nexts->end(), next_poi);
}

const std::vector<int>* TransitionIndex::observed_next(int user, int prev_poi) const {
    const auto key = static_cast<std::int64_t>(user) * num_pois_ + prev_poi;
    auto it = next_sets_.find(key);
    return it == next_sets_.end() ? nullptr : &it->second;
}

ModelParams init_params(const TrainConfig& config, const Dataset& dataset,
                        const FeatureSchema& schema) {
    ModelParams model;
    model.K = config.K;
    model.D = config.D;
    model.M = static_cast<int>(dataset.num_users());
    model.N = static_cast<int>(dataset.num_pois());
    model.schema = schema;
    model.lambda_theta = config.lambda_theta;
    model.min_distance_km = config.min_distance_km;
    model.poi_lat = dataset.poi_lat;
    model.poi_lon = dataset.poi_lon;
    model.dataset_fingerprint = dataset.fingerprint();
    model.gate.mode = config.mode == TrainMode::ppdm ? GateMode::per_user
                                                     : GateMode::global;

    std::mt19937_64 rng(config.seed);
    const double sigma = config.init_sigma > 0.0
                             ? config.init_sigma
                             : std::sqrt(2.0 / config.lambda_theta);
    std::normal_distribution<double> prior(0.0, sigma);
    auto fill = [&](std::vector<double>& v, std::size_t n) {
        v.resize(n);
        for (auto& x : v) x = prior(rng);
    };

    const auto MD = static_cast<std::size_t>(model.M) * model.D;
    const auto ND = static_cast<std::size_t>(model.N) * model.D;
    model.patterns.resize(model.K);
    for (auto& pat : model.patterns) {
        fill(pat.user_factors, MD);
        fill(pat.next_factors_user, ND);
        fill(pat.next_factors_prev, ND);
        fill(pat.prev_factors, ND);
        pat.rho = prior(rng);
    }
    const std::size_t gate_rows =
        model.gate.mode == GateMode::global
            ? static_cast<std::size_t>(model.K)
            : static_cast<std::size_t>(model.M) * model.K;
    fill(model.gate.alpha, gate_rows * schema.total_F());
    return model;
}

BprTriple sample_bpr_triple(const Transition& transition, const TransitionIndex& index,
                            const Dataset& dataset, const FeatureSchema& schema,
                            std::mt19937_64& rng) {
    const auto* observed = index.observed_next(transition.user, transition.prev_poi);
    const int N = index.num_pois();
    if (observed && static_cast<int>(observed->size()) >= N)
        throw std::runtime_error(
            "sample_bpr_triple: user's observed next-set covers every POI");

    std::uniform_int_distribution<int> pick(0, N - 1);
    int neg = pick(rng);
    while (observed && std::binary_search(observed->begin(), observed->end(), neg))
        neg = pick(rng);

    BprTriple triple;
    triple.user = transition.user;
    triple.prev_poi = transition.prev_poi;
    triple.pos_poi = transition.next_poi;
    triple.neg_poi = neg;
    triple.context = featurize(transition, transition.prev_category, schema);
    triple.d_pos_km = transition.distance_km;
    triple.d_neg_km = haversine_km(
        dataset.poi_lat[transition.prev_poi], dataset.poi_lon[transition.prev_poi],
        dataset.poi_lat[neg], dataset.poi_lon[neg]);
    return triple;
}

namespace {

// delta_s = x^s(u,i,m) - x^s(u,i,n) for every pattern.
std::vector<double> pattern_deltas(const ModelParams& model, const BprTriple& t) {
    std::vector<double> deltas(model.K);
    const double sp_diff = spatial_preference(t.d_pos_km, model.min_distance_km) -
                           spatial_preference(t.d_neg_km, model.min_distance_km);
    for (int s = 0; s < model.K; ++s) {
        const auto uf = model.user_row(s, t.user);
        const auto lum = model.next_user_row(s, t.pos_poi);
        const auto lun = model.next_user_row(s, t.neg_poi);
        const auto lim = model.next_prev_row(s, t.pos_poi);
        const auto lin = model.next_prev_row(s, t.neg_poi);
        const auto il = model.prev_row(s, t.prev_poi);
        double d = 0.0;
        for (int k = 0; k < model.D; ++k) d += uf[k] * (lum[k] - lun[k]);
        for (int k = 0; k < model.D; ++k) d += (lim[k] - lin[k]) * il[k];
        deltas[s] = d + model.patterns[s].rho * sp_diff;
    }
    return deltas;
}

std::vector<double> gate_log_probs(const ModelParams& model, int u,
                                   const ContextVector& context) {
    std::vector<double> logits(model.K);
    for (int s = 0; s < model.K; ++s) {
        const auto alpha = model.alpha_row(s, u);
        double z = 0.0;
        for (std::size_t j = 0; j < alpha.size(); ++j) z += alpha[j] * context.values[j];
        logits[s] = z;
    }
    const double zmax = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double z : logits) denom += std::exp(z - zmax);
    const double lse = zmax + std::log(denom);
    for (auto& z : logits) z -= lse;
    return logits;  // now log-probabilities
}

double sq_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

double params_sq_norm(const ModelParams& model) {
    double s = 0.0;
    for (const auto& pat : model.patterns) {
        s += sq_norm(pat.user_factors);
        s += sq_norm(pat.next_factors_user);
        s += sq_norm(pat.next_factors_prev);
        s += sq_norm(pat.prev_factors);
        s += pat.rho * pat.rho;
    }
    s += sq_norm(model.gate.alpha);
    return s;
}

bool params_all_finite(const ModelParams& model) {
    auto ok = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(),
                           [](double x) { return std::isfinite(x); });
    };
    for (const auto& pat : model.patterns) {
        if (!ok(pat.user_factors) || !ok(pat.next_factors_user) ||
            !ok(pat.next_factors_prev) || !ok(pat.prev_factors) ||
            !std::isfinite(pat.rho))
            return false;
    }
    return ok(model.gate.alpha);
}

}  // namespace

Responsibilities responsibilities(const ModelParams& model, const BprTriple& triple) {
    const auto deltas = pattern_deltas(model, triple);
    const auto log_p = gate_log_probs(model, triple.user, triple.context);

    std::vector<double> logw(model.K);
    for (int s = 0; s < model.K; ++s)
        logw[s] = stable_log_sigmoid(deltas[s]) + log_p[s];
    const double wmax = *std::max_element(logw.begin(), logw.end());

    Responsibilities resp;
    resp.gamma.resize(model.K);
    double denom = 0.0;
    for (int s = 0; s < model.K; ++s) {
        resp.gamma[s] = std::exp(logw[s] - wmax);
        denom += resp.gamma[s];
    }
    for (auto& g : resp.gamma) g /= denom;
    return resp;
}

double per_triple_q(const ModelParams& model, const BprTriple& t,
                    const Responsibilities& gamma) {
    const auto deltas = pattern_deltas(model, t);
    const auto log_p = gate_log_probs(model, t.user, t.context);
    const double lam = model.lambda_theta;

    double q = 0.0;
    for (int s = 0; s < model.K; ++s) {
        q += gamma.gamma[s] * (stable_log_sigmoid(deltas[s]) + log_p[s]);
        double reg = sq_norm(model.user_row(s, t.user)) +
                     sq_norm(model.next_user_row(s, t.pos_poi)) +
                     sq_norm(model.next_user_row(s, t.neg_poi)) +
                     sq_norm(model.prev_row(s, t.prev_poi)) +
                     sq_norm(model.next_prev_row(s, t.pos_poi)) +
                     sq_norm(model.next_prev_row(s, t.neg_poi)) +
                     model.patterns[s].rho * model.patterns[s].rho +
                     sq_norm(model.alpha_row(s, t.user));
        q -= 0.5 * lam * gamma.gamma[s] * reg;
    }
    return q;
}

void sgd_step(ModelParams& model, const BprTriple& t, const Responsibilities& gamma,
              double learning_rate) {
    const auto deltas = pattern_deltas(model, t);
    const auto log_p = gate_log_probs(model, t.user, t.context);
    const double lam = model.lambda_theta;
    const double eta = learning_rate;
    const double sp_diff = spatial_preference(t.d_pos_km, model.min_distance_km) -
                           spatial_preference(t.d_neg_km, model.min_distance_km);
    const int D = model.D;

    std::vector<double> old_u(D), old_il(D), diff_lu(D), diff_li(D);
    bool finite = true;

    for (int s = 0; s < model.K; ++s) {
        const double g = gamma.gamma[s];
        const double delta = 1.0 - stable_sigmoid(deltas[s]);
        auto& pat = model.patterns[s];
        auto* uf = pat.user_factors.data() + static_cast<std::size_t>(t.user) * D;
        auto* lum = pat.next_factors_user.data() + static_cast<std::size_t>(t.pos_poi) * D;
        auto* lun = pat.next_factors_user.data() + static_cast<std::size_t>(t.neg_poi) * D;
        auto* lim = pat.next_factors_prev.data() + static_cast<std::size_t>(t.pos_poi) * D;
        auto* lin = pat.next_factors_prev.data() + static_cast<std::size_t>(t.neg_poi) * D;
        auto* il = pat.prev_factors.data() + static_cast<std::size_t>(t.prev_poi) * D;

        // Snapshot the values every update reads so the step equals the
        // gradient at the pre-step point.
        for (int k = 0; k < D; ++k) {
            old_u[k] = uf[k];
            old_il[k] = il[k];
            diff_lu[k] = lum[k] - lun[k];
            diff_li[k] = lim[k] - lin[k];
        }
        for (int k = 0; k < D; ++k) {
            uf[k] += eta * g * (delta * diff_lu[k] - lam * uf[k]);
            lum[k] += eta * g * (delta * old_u[k] - lam * lum[k]);
            lun[k] += eta * g * (-delta * old_u[k] - lam * lun[k]);
            il[k] += eta * g * (delta * diff_li[k] - lam * il[k]);
            lim[k] += eta * g * (delta * old_il[k] - lam * lim[k]);
            lin[k] += eta * g * (-delta * old_il[k] - lam * lin[k]);
            finite = finite && std::isfinite(uf[k]) && std::isfinite(lum[k]) &&
                     std::isfinite(lun[k]) && std::isfinite(il[k]) &&
                     std::isfinite(lim[k]) && std::isfinite(lin[k]);
        }
        pat.rho += eta * g * (delta * sp_diff - lam * pat.rho);
        finite = finite && std::isfinite(pat.rho);

        const double gate_coeff = g - std::exp(log_p[s]);
        auto alpha = model.alpha_row_mut(s, t.user);
        for (std::size_t j = 0; j < alpha.size(); ++j) {
            alpha[j] += eta * (gate_coeff * t.context.values[j] - lam * g * alpha[j]);
            finite = finite && std::isfinite(alpha[j]);
        }
    }
    if (!finite)
        throw std::runtime_error("sgd_step: non-finite parameter after update "
                                 "(exploding step)");
}

double log_objective(const ModelParams& model, const std::vector<BprTriple>& triples) {
    double total = 0.0;
    std::vector<double> logw(model.K);
    for (const auto& t : triples) {
        const auto deltas = pattern_deltas(model, t);
        const auto log_p = gate_log_probs(model, t.user, t.context);
        for (int s = 0; s < model.K; ++s)
            logw[s] = stable_log_sigmoid(deltas[s]) + log_p[s];
        const double wmax = *std::max_element(logw.begin(), logw.end());
        double denom = 0.0;
        for (double w : logw) denom += std::exp(w - wmax);
        total += wmax + std::log(denom);
    }
    total -= 0.5 * model.lambda_theta * params_sq_norm(model);
    return total;
}

namespace {

ModelParams zero_like(const ModelParams& model) {
    ModelParams z = model;
    for (auto& pat : z.patterns) {
        std::fill(pat.user_factors.begin(), pat.user_factors.end(), 0.0);
        std::fill(pat.next_factors_user.begin(), pat.next_factors_user.end(), 0.0);
        std::fill(pat.next_factors_prev.begin(), pat.next_factors_prev.end(), 0.0);
        std::fill(pat.prev_factors.begin(), pat.prev_factors.end(), 0.0);
        pat.rho = 0.0;
    }
    std::fill(z.gate.alpha.begin(), z.gate.alpha.end(), 0.0);
    return z;
}

void axpy_params(ModelParams& y, double a, const ModelParams& x) {
    for (int s = 0; s < y.K; ++s) {
        auto& yp = y.patterns[s];
        const auto& xp = x.patterns[s];
        for (std::size_t k = 0; k < yp.user_factors.size(); ++k)
            yp.user_factors[k] += a * xp.user_factors[k];
        for (std::size_t k = 0; k < yp.next_factors_user.size(); ++k)
            yp.next_factors_user[k] += a * xp.next_factors_user[k];
        for (std::size_t k = 0; k < yp.next_factors_prev.size(); ++k)
            yp.next_factors_prev[k] += a * xp.next_factors_prev[k];
        for (std::size_t k = 0; k < yp.prev_factors.size(); ++k)
            yp.prev_factors[k] += a * xp.prev_factors[k];
        yp.rho += a * xp.rho;
    }
    for (std::size_t k = 0; k < y.gate.alpha.size(); ++k)
        y.gate.alpha[k] += a * x.gate.alpha[k];
}

// Accumulates the data-term gradient of one triple (no regularizer).
void accumulate_data_gradient(ModelParams& grad, const ModelParams& model,
                              const BprTriple& t, const Responsibilities& gamma) {
    const auto deltas = pattern_deltas(model, t);
    const auto log_p = gate_log_probs(model, t.user, t.context);
    const double sp_diff = spatial_preference(t.d_pos_km, model.min_distance_km) -
                           spatial_preference(t.d_neg_km, model.min_distance_km);
    const int D = model.D;

    for (int s = 0; s < model.K; ++s) {
        const double g = gamma.gamma[s];
        const double delta = 1.0 - stable_sigmoid(deltas[s]);
        const auto uf = model.user_row(s, t.user);
        const auto lum = model.next_user_row(s, t.pos_poi);
        const auto lun = model.next_user_row(s, t.neg_poi);
        const auto lim = model.next_prev_row(s, t.pos_poi);
        const auto lin = model.next_prev_row(s, t.neg_poi);
        const auto il = model.prev_row(s, t.prev_poi);

        auto& gp = grad.patterns[s];
        auto* g_uf = gp.user_factors.data() + static_cast<std::size_t>(t.user) * D;
        auto* g_lum = gp.next_factors_user.data() + static_cast<std::size_t>(t.pos_poi) * D;
        auto* g_lun = gp.next_factors_user.data() + static_cast<std::size_t>(t.neg_poi) * D;
        auto* g_lim = gp.next_factors_prev.data() + static_cast<std::size_t>(t.pos_poi) * D;
        auto* g_lin = gp.next_factors_prev.data() + static_cast<std::size_t>(t.neg_poi) * D;
        auto* g_il = gp.prev_factors.data() + static_cast<std::size_t>(t.prev_poi) * D;

        for (int k = 0; k < D; ++k) {
            g_uf[k] += g * delta * (lum[k] - lun[k]);
            g_lum[k] += g * delta * uf[k];
            g_lun[k] -= g * delta * uf[k];
            g_il[k] += g * delta * (lim[k] - lin[k]);
            g_lim[k] += g * delta * il[k];
            g_lin[k] -= g * delta * il[k];
        }
        gp.rho += g * delta * sp_diff;

        const double gate_coeff = g - std::exp(log_p[s]);
        auto galpha = grad.alpha_row_mut(s, t.user);
        for (std::size_t j = 0; j < galpha.size(); ++j)
            galpha[j] += gate_coeff * t.context.values[j];
    }
}

double batch_q(const ModelParams& model, const std::vector<BprTriple>& triples,
               const std::vector<Responsibilities>& gammas) {
    double q = 0.0;
    for (std::size_t i = 0; i < triples.size(); ++i) {
        const auto deltas = pattern_deltas(model, triples[i]);
        const auto log_p = gate_log_probs(model, triples[i].user, triples[i].context);
        for (int s = 0; s < model.K; ++s)
            q += gammas[i].gamma[s] *
                 (stable_log_sigmoid(deltas[s]) + log_p[s]);
    }
    q -= 0.5 * model.lambda_theta * params_sq_norm(model);
    return q;
}

// One generalized-EM epoch over a fixed triple set: gradient ascent on
// the EM lower bound with step halving until the bound does not drop.
void full_batch_epoch(ModelParams& model, const std::vector<BprTriple>& triples,
                      double learning_rate) {
    std::vector<Responsibilities> gammas;
    gammas.reserve(triples.size());
    for (const auto& t : triples) gammas.push_back(responsibilities(model, t));

    const double q0 = batch_q(model, triples, gammas);
    ModelParams grad = zero_like(model);
    for (std::size_t i = 0; i < triples.size(); ++i)
        accumulate_data_gradient(grad, model, triples[i], gammas[i]);
    axpy_params(grad, -model.lambda_theta, model);  // prior, applied once

    double eta = learning_rate;
    for (int tries = 0; tries < 40; ++tries) {
        ModelParams cand = model;
        axpy_params(cand, eta, grad);
        if (params_all_finite(cand) && batch_q(cand, triples, gammas) >= q0) {
            model = std::move(cand);
            return;
        }
        eta *= 0.5;
    }
    // no ascent step found; keep the current iterate
}

// Cheap per-epoch sanity: compare three implemented update components
// against finite differences of per_triple_q.
bool spot_check_gradient(const ModelParams& model, const BprTriple& triple) {
    const auto gamma = responsibilities(model, triple);
    const double h = 1e-5;
    const double lr = 1e-3;

    ModelParams stepped = model;
    try {
        sgd_step(stepped, triple, gamma, lr);
    } catch (const std::runtime_error&) {
        return false;
    }

    auto fd = [&](auto&& get_ref) {
        ModelParams p = model, m = model;
        get_ref(p) += h;
        get_ref(m) -= h;
        return (per_triple_q(p, triple, gamma) - per_triple_q(m, triple, gamma)) /
               (2.0 * h);
    };
    auto close = [](double implemented, double expected) {
        const double scale = std::max({std::abs(implemented), std::abs(expected), 1e-6});
        return std::abs(implemented - expected) / scale < 1e-3;
    };

    const int u = triple.user;
    const int D = model.D;
    const double g_user =
        (stepped.patterns[0].user_factors[static_cast<std::size_t>(u) * D] -
         model.patterns[0].user_factors[static_cast<std::size_t>(u) * D]) / lr;
    const double g_rho = (stepped.patterns[0].rho - model.patterns[0].rho) / lr;
    const double g_alpha =
        (stepped.alpha_row(0, u)[0] - model.alpha_row(0, u)[0]) / lr;

    return close(g_user, fd([&](ModelParams& m) -> double& {
               return m.patterns[0].user_factors[static_cast<std::size_t>(u) * D];
           })) &&
           close(g_rho, fd([&](ModelParams& m) -> double& {
               return m.patterns[0].rho;
           })) &&
           close(g_alpha, fd([&](ModelParams& m) -> double& {
               return m.alpha_row_mut(0, u)[0];
           }));
}

}  // namespace

TrainResult train(const Dataset& train_dataset, const TrainConfig& config,
                  std::optional<double> max_gap_hours) {
    const auto schema = build_feature_schema(train_dataset, config.time_bins,
                                             config.utc_offset_hours);
    const auto transitions = build_transitions(train_dataset, max_gap_hours);
    if (transitions.empty())
        throw std::runtime_error("train: no transitions in the training set");

    TrainResult result;
    for (const auto& events : train_dataset.checkins)
        if (events.size() < 2) ++result.users_without_transitions;

    const TransitionIndex index(transitions,
                                static_cast<int>(train_dataset.num_pois()));
    result.model = init_params(config, train_dataset, schema);

    // Fixed audit triples with their own generator so the audit negative
    // set never depends on how many epochs run. Full-batch mode trains on
    // the audit set itself: that is the set its ascent guarantee covers.
    std::vector<BprTriple> fixed_triples;
    if (config.full_batch) {
        std::mt19937_64 fixed_rng(config.seed ^ 0x51ed270b7a2cf345ULL);
        for (const auto& tr : transitions)
            for (int k = 0; k < config.negatives_per_positive; ++k)
                fixed_triples.push_back(
                    sample_bpr_triple(tr, index, train_dataset, schema, fixed_rng));
    }

    std::vector<BprTriple> audit;
    if (config.full_batch) {
        audit = fixed_triples;
    } else {
        std::mt19937_64 audit_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
        const std::size_t audit_n =
            std::min(config.max_audit_triples, transitions.size());
        for (std::size_t j = 0; j < audit_n; ++j) {
            const std::size_t idx = j * transitions.size() / audit_n;
            audit.push_back(sample_bpr_triple(transitions[idx], index, train_dataset,
                                              schema, audit_rng));
        }
    }

    std::mt19937_64 rng(config.seed + 1);
    std::vector<std::size_t> order(transitions.size());
    std::iota(order.begin(), order.end(), 0);

    ModelParams checkpoint = result.model;
    double prev_objective = log_objective(result.model, audit);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        bool epoch_ok = true;
        if (config.full_batch) {
            full_batch_epoch(result.model, fixed_triples, config.learning_rate);
        } else {
            std::shuffle(order.begin(), order.end(), rng);
            for (const auto idx : order) {
                for (int k = 0; epoch_ok && k < config.negatives_per_positive; ++k) {
                    auto triple = sample_bpr_triple(transitions[idx], index,
                                                    train_dataset, schema, rng);
                    const auto gamma = responsibilities(result.model, triple);
                    try {
                        sgd_step(result.model, triple, gamma, config.learning_rate);
                    } catch (const std::runtime_error&) {
                        epoch_ok = false;  // exploding step; revert below
                    }
                }
                if (!epoch_ok) break;
            }
        }

        const double objective = log_objective(result.model, audit);
        const bool finite = epoch_ok && std::isfinite(objective) &&
                            params_all_finite(result.model);
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        TraceRow row;
        row.epoch = epoch;
        row.audit_objective = objective;
        row.gradient_check_ok =
            finite && spot_check_gradient(result.model, audit.front());
        row.wall_seconds = wall;
        result.trace.push_back(row);

        if (!finite) {
            result.model = checkpoint;  // last good state
            result.diverged = true;
            break;
        }
        checkpoint = result.model;

        const double rel_change = std::abs(objective - prev_objective) /
                                  std::max(1.0, std::abs(prev_objective));
        prev_objective = objective;
        if (rel_change < config.convergence_tol) break;
    }

    // PPDM cold users (no training transitions) score with the mean of
    // the learned per-user gates.
    if (result.model.gate.mode == GateMode::per_user) {
        const auto F = static_cast<std::size_t>(schema.total_F());
        const auto block = static_cast<std::size_t>(result.model.K) * F;
        std::vector<bool> seen(result.model.M, false);
        for (const auto& tr : transitions) seen[tr.user] = true;
        std::vector<double> mean(block, 0.0);
        std::size_t n_seen = 0;
        for (int u = 0; u < result.model.M; ++u) {
            if (!seen[u]) continue;
            ++n_seen;
            for (std::size_t k = 0; k < block; ++k)
                mean[k] += result.model.gate.alpha[u * block + k];
        }
        if (n_seen > 0) {
            for (auto& v : mean) v /= static_cast<double>(n_seen);
            for (int u = 0; u < result.model.M; ++u)
                if (!seen[u])
                    std::copy(mean.begin(), mean.end(),
                              result.model.gate.alpha.begin() + u * block);
        }
    }
    return result;
}

std::string trace_to_text(const std::vector<TraceRow>& trace) {
    std::ostringstream out;
    out.imbue(std::locale::classic());
    out.precision(12);
    out << "epoch\taudit_objective\tgradient_check\twall_seconds\n";
    for (const auto& row : trace)
        out << row.epoch << '\t' << row.audit_objective << '\t'
            << (row.gradient_check_ok ? "ok" : "fail") << '\t' << row.wall_seconds << '\n';
    return out.str();
}

}  // namespace lbp
