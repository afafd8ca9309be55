// Test-side oracles: a long-double reimplementation of the per-triple EM
// objective, independent of the trainer's code path, plus the finite-
// difference gradient checker built on it.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lbp/model.hpp"
#include "lbp/trainer.hpp"

namespace lbp::testing {

inline long double log_sigmoid_ld(long double z) {
    if (z >= 0.0L) return -std::log1p(std::exp(-z));
    return z - std::log1p(std::exp(z));
}

// Q(theta; gamma) = sum_s gamma_s [ln sigmoid(delta_s) + ln p(s|c)]
//                 - (lambda/2) sum_s gamma_s ||touched params of s||^2
inline long double per_triple_q_oracle(const ModelParams& m, const BprTriple& t,
                                       const Responsibilities& gamma) {
    const int D = m.D;
    const int F = m.schema.total_F();

    std::vector<long double> logits(m.K);
    for (int s = 0; s < m.K; ++s) {
        const auto alpha = m.alpha_row(s, t.user);
        long double z = 0.0L;
        for (int j = 0; j < F; ++j) z += (long double)alpha[j] * t.context.values[j];
        logits[s] = z;
    }
    long double zmax = logits[0];
    for (long double z : logits) zmax = std::max(zmax, z);
    long double lse = 0.0L;
    for (long double z : logits) lse += std::exp(z - zmax);
    lse = zmax + std::log(lse);

    const long double sp_pos = 1.0L / std::max<long double>(t.d_pos_km, m.min_distance_km);
    const long double sp_neg = 1.0L / std::max<long double>(t.d_neg_km, m.min_distance_km);

    long double q = 0.0L;
    for (int s = 0; s < m.K; ++s) {
        const auto& pat = m.patterns[s];
        long double dm = 0.0L, dn = 0.0L;
        for (int k = 0; k < D; ++k) {
            const long double uf = pat.user_factors[(std::size_t)t.user * D + k];
            const long double il = pat.prev_factors[(std::size_t)t.prev_poi * D + k];
            dm += uf * pat.next_factors_user[(std::size_t)t.pos_poi * D + k] +
                  il * pat.next_factors_prev[(std::size_t)t.pos_poi * D + k];
            dn += uf * pat.next_factors_user[(std::size_t)t.neg_poi * D + k] +
                  il * pat.next_factors_prev[(std::size_t)t.neg_poi * D + k];
        }
        dm += (long double)pat.rho * sp_pos;
        dn += (long double)pat.rho * sp_neg;

        long double reg = 0.0L;
        for (int k = 0; k < D; ++k) {
            auto sq = [](long double v) { return v * v; };
            reg += sq(pat.user_factors[(std::size_t)t.user * D + k]);
            reg += sq(pat.next_factors_user[(std::size_t)t.pos_poi * D + k]);
            reg += sq(pat.next_factors_user[(std::size_t)t.neg_poi * D + k]);
            reg += sq(pat.next_factors_prev[(std::size_t)t.pos_poi * D + k]);
            reg += sq(pat.next_factors_prev[(std::size_t)t.neg_poi * D + k]);
            reg += sq(pat.prev_factors[(std::size_t)t.prev_poi * D + k]);
        }
        reg += (long double)pat.rho * pat.rho;
        const auto alpha = m.alpha_row(s, t.user);
        for (int j = 0; j < F; ++j) reg += (long double)alpha[j] * alpha[j];

        q += (long double)gamma.gamma[s] *
             (log_sigmoid_ld(dm - dn) + (logits[s] - lse) -
              0.5L * (long double)m.lambda_theta * reg);
    }
    return q;
}

struct TouchedParam {
    std::string label;
    std::function<double&(ModelParams&)> ref;
};

inline std::vector<TouchedParam> touched_params(const ModelParams& model,
                                                const BprTriple& t) {
    std::vector<TouchedParam> out;
    const int D = model.D;
    for (int s = 0; s < model.K; ++s) {
        const std::string tag = "s" + std::to_string(s) + ":";
        for (int k = 0; k < D; ++k) {
            out.push_back(
                {tag + "user", [s, k, D, u = t.user](ModelParams& m) -> double& {
                     return m.patterns[s].user_factors[(std::size_t)u * D + k];
                 }});
            out.push_back({tag + "next_user_pos",
                           [s, k, D, l = t.pos_poi](ModelParams& m) -> double& {
                               return m.patterns[s]
                                   .next_factors_user[(std::size_t)l * D + k];
                           }});
            out.push_back({tag + "next_user_neg",
                           [s, k, D, l = t.neg_poi](ModelParams& m) -> double& {
                               return m.patterns[s]
                                   .next_factors_user[(std::size_t)l * D + k];
                           }});
            out.push_back({tag + "next_prev_pos",
                           [s, k, D, l = t.pos_poi](ModelParams& m) -> double& {
                               return m.patterns[s]
                                   .next_factors_prev[(std::size_t)l * D + k];
                           }});
            out.push_back({tag + "next_prev_neg",
                           [s, k, D, l = t.neg_poi](ModelParams& m) -> double& {
                               return m.patterns[s]
                                   .next_factors_prev[(std::size_t)l * D + k];
                           }});
            out.push_back(
                {tag + "prev", [s, k, D, i = t.prev_poi](ModelParams& m) -> double& {
                     return m.patterns[s].prev_factors[(std::size_t)i * D + k];
                 }});
        }
        out.push_back(
            {tag + "rho", [s](ModelParams& m) -> double& { return m.patterns[s].rho; }});
        const int F = model.schema.total_F();
        for (int j = 0; j < F; ++j)
            out.push_back({tag + "alpha", [s, j, u = t.user](ModelParams& m) -> double& {
                               return m.alpha_row_mut(s, u)[j];
                           }});
    }
    return out;
}

struct GradCheckResult {
    std::size_t checked = 0;
    std::size_t skipped = 0;   // |gradient| below the floor
    std::size_t failed = 0;
    double worst_rel = 0.0;
    std::string worst_label;
};

// Compares the implemented update (sgd_step at unit rate) against central
// finite differences of the long-double oracle.
inline GradCheckResult check_triple_gradients(const ModelParams& model,
                                              const BprTriple& triple,
                                              double h = 1e-5, double rel_tol = 1e-4,
                                              double grad_floor = 1e-8) {
    const auto gamma = responsibilities(model, triple);
    ModelParams stepped = model;
    sgd_step(stepped, triple, gamma, 1.0);

    GradCheckResult res;
    for (auto& par : touched_params(model, triple)) {
        ModelParams plus = model, minus = model;
        par.ref(plus) += h;
        par.ref(minus) -= h;
        const double fd = (double)((per_triple_q_oracle(plus, triple, gamma) -
                                    per_triple_q_oracle(minus, triple, gamma)) /
                                   (2.0L * (long double)h));
        ModelParams tmp = stepped, base = model;
        const double implemented = par.ref(tmp) - par.ref(base);
        if (std::abs(fd) < grad_floor) {
            ++res.skipped;
            continue;
        }
        ++res.checked;
        const double rel = std::abs(implemented - fd) / std::abs(fd);
        if (rel > res.worst_rel) {
            res.worst_rel = rel;
            res.worst_label = par.label;
        }
        if (rel > rel_tol) ++res.failed;
    }
    return res;
}

}  // namespace lbp::testing
