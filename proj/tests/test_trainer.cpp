#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "lbp/checkin.hpp"
#include "lbp/context.hpp"
#include "lbp/synth.hpp"
#include "lbp/trainer.hpp"

#include "fd_oracle.hpp"

using namespace lbp;

namespace {

Dataset tiny_corpus(int n_users, int n_pois, int events_per_user,
                    std::uint64_t seed = 3) {
    SynthConfig cfg;
    cfg.n_users = n_users;
    cfg.n_pois = n_pois;
    cfg.events_per_user = events_per_user;
    cfg.n_categories = 3;
    cfg.K_true = 2;
    cfg.D_true = 4;
    cfg.seed = seed;
    cfg.candidate_pool = std::min(50, n_pois - 1);
    return generate(cfg).dataset;
}

struct TestRig {
    Dataset dataset;
    FeatureSchema schema;
    std::vector<Transition> transitions;
    TransitionIndex index;
    ModelParams model;

    explicit TestRig(const TrainConfig& cfg, int n_users = 8, int n_pois = 30,
                     int events = 12, std::uint64_t data_seed = 3)
        : dataset(tiny_corpus(n_users, n_pois, events, data_seed)),
          schema(build_feature_schema(dataset, cfg.time_bins, cfg.utc_offset_hours)),
          transitions(build_transitions(dataset)),
          index(transitions, (int)dataset.num_pois()),
          model(init_params(cfg, dataset, schema)) {}
};

}  // namespace

TEST_CASE("init_params is deterministic under the seed") {
    TrainConfig cfg;
    cfg.K = 2;
    cfg.D = 4;
    cfg.seed = 42;
    const auto ds = tiny_corpus(5, 20, 8);
    const auto schema = build_feature_schema(ds, 24, 0.0);
    const auto a = init_params(cfg, ds, schema);
    const auto b = init_params(cfg, ds, schema);
    CHECK(serialize(a) == serialize(b));
}

TEST_CASE("init_params draws with variance 2/lambda") {
    const auto ds = tiny_corpus(40, 400, 8);
    const auto schema = build_feature_schema(ds, 24, 0.0);
    for (double lambda : {2.0, 1.0}) {
        TrainConfig cfg;
        cfg.K = 4;
        cfg.D = 40;
        cfg.lambda_theta = lambda;
        cfg.seed = 7;
        const auto m = init_params(cfg, ds, schema);
        long double sum = 0.0L, sq = 0.0L;
        std::size_t n = 0;
        for (const auto& pat : m.patterns)
            for (const auto* block : {&pat.user_factors, &pat.next_factors_user,
                                      &pat.next_factors_prev, &pat.prev_factors})
                for (double v : *block) {
                    sum += v;
                    sq += (long double)v * v;
                    ++n;
                }
        REQUIRE(n > 100000);
        const double var = (double)(sq / n - (sum / n) * (sum / n));
        CHECK(std::abs(var - 2.0 / lambda) / (2.0 / lambda) < 0.02);
    }
}

TEST_CASE("negative sampling excludes the observed next set") {
    Transition t;
    t.user = 0;
    t.prev_poi = 0;
    t.next_poi = 1;
    t.prev_time = 1000000;
    t.next_time = 1003600;
    const TransitionIndex index({t}, 3);

    Dataset ds;
    ds.user_ids = {"u"};
    ds.poi_ids = {"a", "b", "c"};
    ds.poi_lat = {34.0, 34.1, 34.2};
    ds.poi_lon = {-118.0, -118.0, -118.0};
    ds.checkins.resize(1);
    FeatureSchema schema;

    std::mt19937_64 rng(1);
    for (int it = 0; it < 200; ++it) {
        const auto triple = sample_bpr_triple(t, index, ds, schema, rng);
        CHECK(triple.neg_poi != 1);
        CHECK((triple.neg_poi == 0 || triple.neg_poi == 2));
        CHECK(triple.pos_poi == 1);
    }
}

TEST_CASE("negative sampling is uniform over the complement") {
    Transition t;
    t.user = 0;
    t.prev_poi = 0;
    t.next_poi = 4;
    t.prev_time = 1000000;
    t.next_time = 1003600;
    const TransitionIndex index({t}, 10);

    Dataset ds;
    ds.user_ids = {"u"};
    for (int p = 0; p < 10; ++p) {
        ds.poi_ids.push_back("p" + std::to_string(p));
        ds.poi_lat.push_back(34.0 + 0.01 * p);
        ds.poi_lon.push_back(-118.0);
    }
    ds.checkins.resize(1);
    FeatureSchema schema;

    std::mt19937_64 rng(5);
    std::vector<int> counts(10, 0);
    const int n_samples = 100000;
    for (int it = 0; it < n_samples; ++it)
        ++counts[sample_bpr_triple(t, index, ds, schema, rng).neg_poi];

    CHECK(counts[4] == 0);
    // chi^2 against uniform over the 9 allowed POIs; dof 8, p = 0.01 -> 20.09
    const double expected = n_samples / 9.0;
    double chi2 = 0.0;
    for (int p = 0; p < 10; ++p) {
        if (p == 4) continue;
        chi2 += (counts[p] - expected) * (counts[p] - expected) / expected;
    }
    CHECK(chi2 < 20.09);
}

TEST_CASE("negative sampling fails when every POI was observed") {
    std::vector<Transition> transitions;
    for (int l = 0; l < 3; ++l) {
        Transition t;
        t.user = 0;
        t.prev_poi = 0;
        t.next_poi = l;
        transitions.push_back(t);
    }
    const TransitionIndex index(transitions, 3);
    Dataset ds;
    ds.user_ids = {"u"};
    ds.poi_ids = {"a", "b", "c"};
    ds.poi_lat = {34.0, 34.1, 34.2};
    ds.poi_lon = {-118.0, -118.0, -118.0};
    ds.checkins.resize(1);
    FeatureSchema schema;
    std::mt19937_64 rng(1);
    CHECK_THROWS(sample_bpr_triple(transitions[0], index, ds, schema, rng));
}

TEST_CASE("responsibilities: degenerate, symmetric, and oracle cases") {
    std::mt19937_64 rng(2);

    TrainConfig cfg1;
    cfg1.K = 1;
    cfg1.D = 3;
    TestRig rig1(cfg1);
    const auto t1 = sample_bpr_triple(rig1.transitions[0], rig1.index, rig1.dataset,
                                      rig1.schema, rng);
    const auto r1 = responsibilities(rig1.model, t1);
    REQUIRE(r1.gamma.size() == 1);
    CHECK(r1.gamma[0] == doctest::Approx(1.0));

    // identical patterns and constant gate weights -> uniform posterior
    TrainConfig cfg4;
    cfg4.K = 4;
    cfg4.D = 3;
    TestRig rig4(cfg4);
    auto symmetric = rig4.model;
    for (int s = 1; s < 4; ++s) symmetric.patterns[s] = symmetric.patterns[0];
    std::fill(symmetric.gate.alpha.begin(), symmetric.gate.alpha.end(), 0.25);
    const auto t4 = sample_bpr_triple(rig4.transitions[0], rig4.index, rig4.dataset,
                                      rig4.schema, rng);
    const auto r4 = responsibilities(symmetric, t4);
    for (double g : r4.gamma) CHECK(g == doctest::Approx(0.25).epsilon(1e-12));

    // K = 3 random model vs a direct long-double evaluation
    TrainConfig cfg3;
    cfg3.K = 3;
    cfg3.D = 4;
    cfg3.seed = 17;
    TestRig rig3(cfg3);
    for (int it = 0; it < 50; ++it) {
        const auto& tr = rig3.transitions[it % rig3.transitions.size()];
        const auto t = sample_bpr_triple(tr, rig3.index, rig3.dataset, rig3.schema, rng);
        const auto got = responsibilities(rig3.model, t);

        std::vector<long double> w(3);
        long double denom = 0.0L;
        for (int s = 0; s < 3; ++s) {
            const long double dm =
                pattern_score(rig3.model, s, t.user, t.prev_poi, t.pos_poi, t.d_pos_km);
            const long double dn =
                pattern_score(rig3.model, s, t.user, t.prev_poi, t.neg_poi, t.d_neg_km);
            const long double sig = 1.0L / (1.0L + std::exp(-(dm - dn)));
            const auto alpha = rig3.model.alpha_row(s, t.user);
            long double z = 0.0L;
            for (std::size_t j = 0; j < alpha.size(); ++j)
                z += (long double)alpha[j] * t.context.values[j];
            w[s] = sig * std::exp(z);
            denom += w[s];
        }
        for (int s = 0; s < 3; ++s)
            CHECK(std::abs(got.gamma[s] - (double)(w[s] / denom)) < 1e-10);
    }
}

TEST_CASE("responsibilities sum to one and ignore gate logit shifts") {
    std::mt19937_64 rng(23);
    TrainConfig cfg;
    cfg.K = 5;
    cfg.D = 3;
    cfg.seed = 6;
    TestRig rig(cfg);
    for (int it = 0; it < 100; ++it) {
        const auto& tr = rig.transitions[it % rig.transitions.size()];
        const auto t = sample_bpr_triple(tr, rig.index, rig.dataset, rig.schema, rng);
        const auto r = responsibilities(rig.model, t);
        CHECK(std::abs(std::accumulate(r.gamma.begin(), r.gamma.end(), 0.0) - 1.0) <=
              1e-12);

        auto shifted = rig.model;
        const int F = rig.schema.total_F();
        int active = -1;
        for (int j = 0; j < F; ++j)
            if (t.context.values[j] == 1.0) active = j;
        REQUIRE(active >= 0);
        for (int s = 0; s < cfg.K; ++s)
            shifted.gate.alpha[(std::size_t)s * F + active] += 3.25;
        const auto r2 = responsibilities(shifted, t);
        for (int s = 0; s < cfg.K; ++s)
            CHECK(std::abs(r.gamma[s] - r2.gamma[s]) <= 1e-12);
    }
}

TEST_CASE("sgd_step matches finite differences of the per-triple objective") {
    std::mt19937_64 rng(31);
    for (const auto mode : {TrainMode::gpdm, TrainMode::ppdm}) {
        TrainConfig cfg;
        cfg.K = 3;
        cfg.D = 4;
        cfg.lambda_theta = 0.7;
        cfg.seed = 11;
        cfg.mode = mode;
        TestRig rig(cfg);
        for (int it = 0; it < 5; ++it) {
            const auto& tr = rig.transitions[(it * 7) % rig.transitions.size()];
            const auto t = sample_bpr_triple(tr, rig.index, rig.dataset, rig.schema, rng);
            const auto res = lbp::testing::check_triple_gradients(rig.model, t);
            INFO("worst " << res.worst_label << " rel=" << res.worst_rel);
            CHECK(res.failed == 0);
            CHECK(res.checked > 0);
        }
    }
}

TEST_CASE("saturated pairs and zero responsibilities freeze the factors") {
    TrainConfig cfg;
    cfg.K = 2;
    cfg.D = 3;
    cfg.lambda_theta = 1.0;
    cfg.seed = 9;
    TestRig rig(cfg);
    std::mt19937_64 rng(3);
    auto t =
        sample_bpr_triple(rig.transitions[0], rig.index, rig.dataset, rig.schema, rng);

    // saturate the margin via rho against a tiny positive distance
    auto sat = rig.model;
    sat.lambda_theta = 0.0;
    for (auto& pat : sat.patterns) pat.rho = 1e6;
    t.d_pos_km = 0.02;
    t.d_neg_km = 40.0;
    const auto gamma = responsibilities(sat, t);
    auto stepped = sat;
    sgd_step(stepped, t, gamma, 0.1);
    for (int s = 0; s < 2; ++s) {
        CHECK(stepped.patterns[s].user_factors == sat.patterns[s].user_factors);
        CHECK(stepped.patterns[s].next_factors_user == sat.patterns[s].next_factors_user);
    }

    // gamma(s) = 0 leaves pattern s untouched even with regularization on
    auto frozen = rig.model;
    Responsibilities manual;
    manual.gamma = {1.0, 0.0};
    auto stepped2 = frozen;
    sgd_step(stepped2, t, manual, 0.1);
    CHECK(stepped2.patterns[1].user_factors == frozen.patterns[1].user_factors);
    CHECK(stepped2.patterns[1].prev_factors == frozen.patterns[1].prev_factors);
    CHECK(stepped2.patterns[1].rho == frozen.patterns[1].rho);
    CHECK(stepped2.patterns[0].user_factors != frozen.patterns[0].user_factors);
}

TEST_CASE("score shifts common to both candidates leave updates unchanged") {
    TrainConfig cfg;
    cfg.K = 2;
    cfg.D = 4;
    cfg.lambda_theta = 0.5;
    cfg.seed = 29;
    TestRig rig(cfg);
    rig.model.lambda_theta = 0.0;  // invariance holds for the data terms
    std::mt19937_64 rng(4);
    const auto t =
        sample_bpr_triple(rig.transitions[1], rig.index, rig.dataset, rig.schema, rng);

    auto shifted = rig.model;
    for (int s = 0; s < cfg.K; ++s)
        for (int k = 0; k < cfg.D; ++k) {
            // the same vector added to both candidates shifts both pattern
            // scores by the same amount
            shifted.patterns[s].next_factors_user[(std::size_t)t.pos_poi * cfg.D + k] +=
                0.37 * (k + 1);
            shifted.patterns[s].next_factors_user[(std::size_t)t.neg_poi * cfg.D + k] +=
                0.37 * (k + 1);
        }

    const auto g1 = responsibilities(rig.model, t);
    const auto g2 = responsibilities(shifted, t);
    for (int s = 0; s < cfg.K; ++s) CHECK(std::abs(g1.gamma[s] - g2.gamma[s]) <= 1e-12);

    auto s1 = rig.model, s2 = shifted;
    sgd_step(s1, t, g1, 0.05);
    sgd_step(s2, t, g2, 0.05);
    for (int s = 0; s < cfg.K; ++s) {
        for (int k = 0; k < cfg.D; ++k) {
            const auto idx = (std::size_t)t.user * cfg.D + k;
            const double d1 = s1.patterns[s].user_factors[idx] -
                              rig.model.patterns[s].user_factors[idx];
            const double d2 = s2.patterns[s].user_factors[idx] -
                              shifted.patterns[s].user_factors[idx];
            CHECK(d1 == doctest::Approx(d2).epsilon(1e-10));
        }
        CHECK(s1.patterns[s].rho - rig.model.patterns[s].rho ==
              doctest::Approx(s2.patterns[s].rho - shifted.patterns[s].rho)
                  .epsilon(1e-10));
    }
}

TEST_CASE("log objective: closed forms and summation oracle") {
    std::mt19937_64 rng(12);
    TrainConfig cfg;
    cfg.K = 1;
    cfg.D = 3;
    cfg.lambda_theta = 1.0;
    TestRig rig(cfg);
    std::vector<BprTriple> triples;
    for (int it = 0; it < 40; ++it)
        triples.push_back(sample_bpr_triple(rig.transitions[it % rig.transitions.size()],
                                            rig.index, rig.dataset, rig.schema, rng));

    auto zero = rig.model;
    zero.lambda_theta = 0.0;
    for (auto& pat : zero.patterns) {
        std::fill(pat.user_factors.begin(), pat.user_factors.end(), 0.0);
        std::fill(pat.next_factors_user.begin(), pat.next_factors_user.end(), 0.0);
        std::fill(pat.next_factors_prev.begin(), pat.next_factors_prev.end(), 0.0);
        std::fill(pat.prev_factors.begin(), pat.prev_factors.end(), 0.0);
        pat.rho = 0.0;
    }
    std::fill(zero.gate.alpha.begin(), zero.gate.alpha.end(), 0.0);
    CHECK(log_objective(zero, triples) ==
          doctest::Approx(triples.size() * std::log(0.5)).epsilon(1e-12));

    // zero parameters contribute no regularizer even at lambda > 0
    auto zero_reg = zero;
    zero_reg.lambda_theta = 5.0;
    CHECK(log_objective(zero_reg, triples) ==
          doctest::Approx(triples.size() * std::log(0.5)).epsilon(1e-12));

    // random instance vs direct long-double summation
    TrainConfig cfg3;
    cfg3.K = 3;
    cfg3.D = 4;
    cfg3.lambda_theta = 0.8;
    cfg3.seed = 21;
    TestRig rig3(cfg3);
    std::vector<BprTriple> triples3;
    for (int it = 0; it < 60; ++it)
        triples3.push_back(
            sample_bpr_triple(rig3.transitions[it % rig3.transitions.size()], rig3.index,
                              rig3.dataset, rig3.schema, rng));
    long double want = 0.0L;
    for (const auto& t : triples3) {
        long double mix = 0.0L, sc = 0.0L;
        std::vector<long double> ez(3);
        for (int s = 0; s < 3; ++s) {
            const auto alpha = rig3.model.alpha_row(s, t.user);
            long double z = 0.0L;
            for (std::size_t j = 0; j < alpha.size(); ++j)
                z += (long double)alpha[j] * t.context.values[j];
            ez[s] = std::exp(z);
            sc += ez[s];
        }
        for (int s = 0; s < 3; ++s) {
            const long double dm =
                pattern_score(rig3.model, s, t.user, t.prev_poi, t.pos_poi, t.d_pos_km);
            const long double dn =
                pattern_score(rig3.model, s, t.user, t.prev_poi, t.neg_poi, t.d_neg_km);
            mix += (1.0L / (1.0L + std::exp(-(dm - dn)))) * ez[s] / sc;
        }
        want += std::log(mix);
    }
    long double norm = 0.0L;
    for (const auto& pat : rig3.model.patterns) {
        for (const auto* block : {&pat.user_factors, &pat.next_factors_user,
                                  &pat.next_factors_prev, &pat.prev_factors})
            for (double v : *block) norm += (long double)v * v;
        norm += (long double)pat.rho * pat.rho;
    }
    for (double v : rig3.model.gate.alpha) norm += (long double)v * v;
    want -= 0.5L * 0.8L * norm;
    CHECK(std::abs(log_objective(rig3.model, triples3) - (double)want) < 1e-10);
}

TEST_CASE("gpdm gate gradient equals the sum of tied ppdm per-user gradients") {
    TrainConfig gcfg;
    gcfg.K = 2;
    gcfg.D = 3;
    gcfg.lambda_theta = 0.5;
    gcfg.seed = 14;
    TestRig rig(gcfg, 6, 25, 10);

    auto ppdm = rig.model;
    ppdm.gate.mode = GateMode::per_user;
    const int F = rig.schema.total_F();
    const std::size_t block = (std::size_t)gcfg.K * F;
    ppdm.gate.alpha.assign((std::size_t)ppdm.M * block, 0.0);
    for (int u = 0; u < ppdm.M; ++u)
        std::copy(rig.model.gate.alpha.begin(), rig.model.gate.alpha.end(),
                  ppdm.gate.alpha.begin() + (std::size_t)u * block);

    std::mt19937_64 rng(19);
    std::vector<BprTriple> triples;
    for (std::size_t i = 0; i < rig.transitions.size(); ++i)
        triples.push_back(sample_bpr_triple(rig.transitions[i], rig.index, rig.dataset,
                                            rig.schema, rng));

    // accumulate each triple's alpha update applied at the same point
    std::vector<double> global_grad(block, 0.0);
    std::vector<double> tied_grad(block, 0.0);
    for (const auto& t : triples) {
        const auto g1 = responsibilities(rig.model, t);
        auto m1 = rig.model;
        sgd_step(m1, t, g1, 1.0);
        for (std::size_t k = 0; k < block; ++k)
            global_grad[k] += m1.gate.alpha[k] - rig.model.gate.alpha[k];

        const auto g2 = responsibilities(ppdm, t);
        auto m2 = ppdm;
        sgd_step(m2, t, g2, 1.0);
        const auto off = (std::size_t)t.user * block;
        for (std::size_t k = 0; k < block; ++k)
            tied_grad[k] += m2.gate.alpha[off + k] - ppdm.gate.alpha[off + k];
    }
    for (std::size_t k = 0; k < block; ++k)
        CHECK(global_grad[k] == doctest::Approx(tied_grad[k]).epsilon(1e-10));
}

TEST_CASE("train is deterministic under the seed") {
    TrainConfig cfg;
    cfg.K = 2;
    cfg.D = 4;
    cfg.lambda_theta = 0.1;
    cfg.learning_rate = 0.05;
    cfg.epochs = 3;
    cfg.seed = 77;
    const auto ds = tiny_corpus(10, 40, 15);
    const auto a = train(ds, cfg);
    const auto b = train(ds, cfg);
    CHECK(serialize(a.model) == serialize(b.model));
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t e = 0; e < a.trace.size(); ++e)
        CHECK(a.trace[e].audit_objective == b.trace[e].audit_objective);
}

TEST_CASE("full-batch EM never lets the audit objective drop") {
    TrainConfig cfg;
    cfg.K = 2;
    cfg.D = 4;
    cfg.lambda_theta = 0.5;
    cfg.learning_rate = 0.1;
    cfg.epochs = 12;
    cfg.seed = 5;
    cfg.full_batch = true;
    cfg.convergence_tol = 0.0;  // run every epoch
    const auto ds = tiny_corpus(8, 30, 12);
    const auto result = train(ds, cfg);
    REQUIRE(result.trace.size() >= 2);
    for (std::size_t e = 1; e < result.trace.size(); ++e)
        CHECK(result.trace[e].audit_objective >=
              result.trace[e - 1].audit_objective - 1e-6);
    CHECK_FALSE(result.diverged);
    for (const auto& row : result.trace) CHECK(row.gradient_check_ok);
}

TEST_CASE("training aborts to the last good checkpoint on divergence") {
    TrainConfig cfg;
    cfg.K = 2;
    cfg.D = 4;
    cfg.lambda_theta = 1.0;
    cfg.learning_rate = 1e12;  // guaranteed explosion
    cfg.epochs = 5;
    cfg.seed = 3;
    const auto ds = tiny_corpus(6, 25, 10);
    const auto result = train(ds, cfg);
    CHECK(result.diverged);
    const auto bytes = serialize(result.model);  // checkpoint is intact
    CHECK(!bytes.empty());
    CHECK(std::isfinite(result.model.patterns[0].rho));
}

TEST_CASE("ppdm training fills cold users with the mean gate") {
    SynthConfig scfg;
    scfg.n_users = 6;
    scfg.n_pois = 25;
    scfg.events_per_user = 10;
    scfg.light_events_per_user = 1;  // light users yield no transitions
    scfg.light_user_fraction = 0.3;
    scfg.seed = 15;
    scfg.candidate_pool = 20;
    const auto ds = generate(scfg).dataset;

    TrainConfig cfg;
    cfg.K = 2;
    cfg.D = 3;
    cfg.mode = TrainMode::ppdm;
    cfg.epochs = 2;
    cfg.lambda_theta = 0.5;
    cfg.seed = 8;
    const auto result = train(ds, cfg);

    const int F = result.model.schema.total_F();
    const std::size_t block = (std::size_t)cfg.K * F;
    std::vector<bool> cold(ds.num_users(), false);
    std::size_t n_cold = 0;
    for (std::size_t u = 0; u < ds.num_users(); ++u)
        if (ds.checkins[u].size() < 2) {
            cold[u] = true;
            ++n_cold;
        }
    REQUIRE(n_cold > 0);
    REQUIRE(n_cold < ds.num_users());
    CHECK(result.users_without_transitions == n_cold);

    std::vector<double> mean(block, 0.0);
    for (std::size_t u = 0; u < ds.num_users(); ++u) {
        if (cold[u]) continue;
        for (std::size_t k = 0; k < block; ++k)
            mean[k] += result.model.gate.alpha[u * block + k];
    }
    for (auto& v : mean) v /= (double)(ds.num_users() - n_cold);
    for (std::size_t u = 0; u < ds.num_users(); ++u) {
        if (!cold[u]) continue;
        for (std::size_t k = 0; k < block; ++k)
            CHECK(result.model.gate.alpha[u * block + k] == doctest::Approx(mean[k]));
    }
}
