#include "lbp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "lbp/context.hpp"
#include "lbp/geo.hpp"

namespace lbp {

namespace {

constexpr double kKmPerDegreeLat = 111.194;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

int sample_categorical(const std::vector<double>& probs, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double r = unit(rng);
    double acc = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        acc += probs[k];
        if (r < acc) return static_cast<int>(k);
    }
    return static_cast<int>(probs.size()) - 1;
}

}  // namespace

SynthResult generate(const SynthConfig& cfg) {
    if (cfg.n_users < 1 || cfg.n_pois < 2 || cfg.events_per_user < 1 ||
        cfg.K_true < 1 || cfg.D_true < 1 || cfg.geo_extent_km <= 0.0)
        throw std::invalid_argument("generate: bad synth config");

    SynthResult out;
    Dataset& ds = out.dataset;
    std::mt19937_64 rng(cfg.seed);

    // POI field around a fixed anchor; the box is geo_extent_km on a side.
    const double lat0 = 34.0, lon0 = -118.0;
    const double dlat = cfg.geo_extent_km / 2.0 / kKmPerDegreeLat;
    const double dlon =
        cfg.geo_extent_km / 2.0 / (kKmPerDegreeLat * std::cos(lat0 * M_PI / 180.0));
    std::uniform_real_distribution<double> ulat(lat0 - dlat, lat0 + dlat);
    std::uniform_real_distribution<double> ulon(lon0 - dlon, lon0 + dlon);
    std::uniform_int_distribution<int> ucat(0, std::max(0, cfg.n_categories - 1));

    std::vector<int> poi_category(cfg.n_pois, -1);
    for (int p = 0; p < cfg.n_pois; ++p) {
        ds.poi_ids.push_back("p" + std::to_string(p));
        ds.poi_index.emplace(ds.poi_ids.back(), p);
        ds.poi_lat.push_back(ulat(rng));
        ds.poi_lon.push_back(ulon(rng));
        if (cfg.n_categories > 0) poi_category[p] = ucat(rng);
    }
    for (int c = 0; c < cfg.n_categories; ++c) {
        ds.category_labels.push_back("c" + std::to_string(c));
        ds.category_index.emplace(ds.category_labels.back(), c);
    }
    for (int u = 0; u < cfg.n_users; ++u) {
        ds.user_ids.push_back("u" + std::to_string(u));
        ds.user_index.emplace(ds.user_ids.back(), u);
    }
    ds.checkins.resize(cfg.n_users);

    // Planted model. The gate is time-of-day driven: each pattern owns a
    // contiguous arc of hour bins.
    ModelParams& truth = out.truth;
    truth.K = cfg.K_true;
    truth.D = cfg.D_true;
    truth.M = cfg.n_users;
    truth.N = cfg.n_pois;
    truth.schema.time_bins = cfg.time_bins;
    truth.schema.utc_offset_hours = 0.0;
    truth.schema.category_slots = cfg.n_categories;
    truth.schema.category_labels = ds.category_labels;
    truth.lambda_theta = 1.0;
    truth.min_distance_km = 0.01;
    truth.poi_lat = ds.poi_lat;
    truth.poi_lon = ds.poi_lon;
    truth.gate.mode = cfg.opposing_gate_cohorts ? GateMode::per_user : GateMode::global;

    std::normal_distribution<double> factor(0.0, cfg.factor_scale);
    const auto MD = static_cast<std::size_t>(truth.M) * truth.D;
    const auto ND = static_cast<std::size_t>(truth.N) * truth.D;
    truth.patterns.resize(truth.K);
    for (int s = 0; s < truth.K; ++s) {
        auto& pat = truth.patterns[s];
        pat.user_factors.resize(MD);
        pat.next_factors_user.resize(ND);
        pat.next_factors_prev.resize(ND);
        pat.prev_factors.resize(ND);
        for (auto& v : pat.user_factors) v = factor(rng);
        for (auto& v : pat.next_factors_user) v = factor(rng);
        for (auto& v : pat.next_factors_prev) v = factor(rng);
        for (auto& v : pat.prev_factors) v = factor(rng);
        pat.rho = cfg.rho_true;
        if (cfg.spatial_last_pattern && s == truth.K - 1) {
            // geography-dominant regime; without opposition its factor
            // blocks are silent, with opposition they anti-align with
            // pattern 0 on top of the rho boost
            pat.rho = cfg.spatial_pattern_rho;
            if (cfg.pattern_opposition <= 0.0) {
                std::fill(pat.user_factors.begin(), pat.user_factors.end(), 0.0);
                std::fill(pat.next_factors_user.begin(), pat.next_factors_user.end(),
                          0.0);
                std::fill(pat.next_factors_prev.begin(), pat.next_factors_prev.end(),
                          0.0);
                std::fill(pat.prev_factors.begin(), pat.prev_factors.end(), 0.0);
            }
        }
        if (s > 0 && cfg.pattern_opposition > 0.0) {
            // pattern s scores -w * (pattern 0 score) + sqrt(1-w^2) * fresh:
            // the user and prev sides are shared and only the next-POI
            // blocks blend, so the opposition acts in score space
            const double w = cfg.pattern_opposition;
            const double mix = std::sqrt(std::max(0.0, 1.0 - w * w));
            const auto& base = truth.patterns[0];
            pat.user_factors = base.user_factors;
            pat.prev_factors = base.prev_factors;
            auto blend = [&](std::vector<double>& dst, const std::vector<double>& src) {
                for (std::size_t k = 0; k < dst.size(); ++k)
                    dst[k] = -w * src[k] + mix * dst[k];
            };
            blend(pat.next_factors_user, base.next_factors_user);
            blend(pat.next_factors_prev, base.next_factors_prev);
        }
    }

    const int F = truth.schema.total_F();
    std::vector<double> planted_alpha(static_cast<std::size_t>(truth.K) * F, 0.0);
    for (int s = 0; s < truth.K; ++s)
        for (int b = 0; b < cfg.time_bins; ++b) {
            const int owner = b * truth.K / cfg.time_bins;
            planted_alpha[static_cast<std::size_t>(s) * F + b] =
                owner == s ? cfg.gate_sharpness : -cfg.gate_sharpness;
        }
    if (truth.gate.mode == GateMode::global) {
        truth.gate.alpha = planted_alpha;
    } else {
        truth.gate.alpha.assign(static_cast<std::size_t>(truth.M) * truth.K * F, 0.0);
        for (int u = 0; u < truth.M; ++u) {
            const double sign = (u % 2 == 0) ? 1.0 : -1.0;
            for (std::size_t k = 0; k < planted_alpha.size(); ++k)
                truth.gate.alpha[static_cast<std::size_t>(u) * truth.K * F + k] =
                    sign * planted_alpha[k];
        }
    }

    out.cohort.resize(cfg.n_users);
    for (int u = 0; u < cfg.n_users; ++u) out.cohort[u] = u % 2;

    // Nearest-candidate pools, filled lazily; and, for the displacement
    // walk, full distance rows.
    std::unordered_map<int, std::vector<std::pair<double, int>>> pool_cache;
    auto candidate_pool = [&](int current) -> const std::vector<std::pair<double, int>>& {
        auto it = pool_cache.find(current);
        if (it != pool_cache.end()) return it->second;
        std::vector<std::pair<double, int>> all;
        all.reserve(cfg.n_pois - 1);
        for (int p = 0; p < cfg.n_pois; ++p) {
            if (p == current) continue;
            all.emplace_back(haversine_km(ds.poi_lat[current], ds.poi_lon[current],
                                          ds.poi_lat[p], ds.poi_lon[p]),
                             p);
        }
        const auto keep = std::min<std::size_t>(cfg.candidate_pool, all.size());
        std::partial_sort(all.begin(), all.begin() + keep, all.end());
        all.resize(keep);
        return pool_cache.emplace(current, std::move(all)).first->second;
    };

    out.novelty.resize(cfg.n_users);
    out.pattern_draws.assign(cfg.K_true, 0);

    for (int u = 0; u < cfg.n_users; ++u) {
        std::mt19937_64 walk_rng(splitmix64(cfg.seed ^ (0xabcd0000ULL + u)));
        std::uniform_real_distribution<double> wunit(0.0, 1.0);

        int n_events = cfg.events_per_user;
        if (cfg.light_events_per_user > 0 &&
            wunit(walk_rng) < cfg.light_user_fraction)
            n_events = cfg.light_events_per_user;

        std::uniform_int_distribution<int> upoi(0, cfg.n_pois - 1);
        int current = upoi(walk_rng);
        std::int64_t t = 1600000000LL +
                         static_cast<std::int64_t>(wunit(walk_rng) * 604800.0);

        std::unordered_set<int> seen;
        auto push_event = [&](int poi, std::int64_t ts) {
            ds.checkins[u].push_back(Event{poi, ts, poi_category[poi]});
            out.novelty[u].push_back(!seen.count(poi));
            seen.insert(poi);
        };
        push_event(current, t);

        for (int e = 1; e < n_events; ++e) {
            int next;
            if (cfg.spatial_kernel_only) {
                // Target displacement drawn so that log-binned transition
                // counts follow ~ d^-1, then snapped to the closest POI.
                // Snaps landing outside the kernel support are redrawn:
                // stray counts below it would dominate a log-log fit.
                const double d_lo = 1.0;
                const double d_hi = 0.9 * cfg.geo_extent_km;
                const auto& pool = candidate_pool(current);
                next = pool.front().second;
                for (int attempt = 0; attempt < 50; ++attempt) {
                    const double r = wunit(walk_rng);
                    const double target =
                        1.0 / (1.0 / d_lo - r * (1.0 / d_lo - 1.0 / d_hi));
                    double best = 1e300, realized = 0.0;
                    for (const auto& [d, p] : pool) {
                        const double err = std::abs(d - target);
                        if (err < best) {
                            best = err;
                            next = p;
                            realized = d;
                        }
                    }
                    if (realized >= d_lo && realized <= d_hi) break;
                }
            } else {
                const auto ctx = featurize_at(t, poi_category[current], truth.schema);
                const auto gate = gate_distribution(truth, u, ctx);
                const int s = sample_categorical(gate.probs, walk_rng);
                ++out.pattern_draws[s];

                const auto& pool = candidate_pool(current);
                std::vector<double> scores(pool.size());
                for (std::size_t c = 0; c < pool.size(); ++c)
                    scores[c] = pattern_score(truth, s, u, current, pool[c].second,
                                              pool[c].first);
                const double smax = *std::max_element(scores.begin(), scores.end());
                double denom = 0.0;
                for (auto& sc : scores) {
                    sc = std::exp(sc - smax);
                    denom += sc;
                }
                for (auto& sc : scores) sc /= denom;
                next = pool[sample_categorical(scores, walk_rng)].second;
            }

            // Short gaps dominate: 70% of moves happen within 16 hours.
            const double gap_h = wunit(walk_rng) < 0.7
                                     ? 0.5 + wunit(walk_rng) * 15.5
                                     : 16.0 + wunit(walk_rng) * 56.0;
            t += static_cast<std::int64_t>(gap_h * 3600.0);
            current = next;
            push_event(current, t);
        }
    }

    truth.dataset_fingerprint = ds.fingerprint();
    return out;
}

std::vector<int> brute_force_rank(const ModelParams& truth, int user, int prev_poi,
                                  const ContextVector& context) {
    const int N = truth.N;
    const int K = truth.K;
    const int D = truth.D;
    const int F = truth.schema.total_F();

    // Gate probabilities, straight from the definition.
    std::vector<long double> gate(K);
    long double denom = 0.0L;
    for (int s = 0; s < K; ++s) {
        const double* alpha =
            truth.gate.mode == GateMode::global
                ? truth.gate.alpha.data() + static_cast<std::size_t>(s) * F
                : truth.gate.alpha.data() +
                      (static_cast<std::size_t>(user) * K + s) * F;
        long double z = 0.0L;
        for (int j = 0; j < F; ++j)
            z += static_cast<long double>(alpha[j]) * context.values[j];
        gate[s] = expl(z);
        denom += gate[s];
    }
    for (auto& g : gate) g /= denom;

    std::vector<std::pair<long double, int>> scored(N);
    for (int l = 0; l < N; ++l) {
        const long double d = haversine_km(truth.poi_lat[prev_poi],
                                           truth.poi_lon[prev_poi], truth.poi_lat[l],
                                           truth.poi_lon[l]);
        const long double sp =
            1.0L / std::max<long double>(d, truth.min_distance_km);
        long double mix = 0.0L;
        for (int s = 0; s < K; ++s) {
            const auto& pat = truth.patterns[s];
            long double x = 0.0L;
            for (int k = 0; k < D; ++k)
                x += static_cast<long double>(
                         pat.user_factors[static_cast<std::size_t>(user) * D + k]) *
                     pat.next_factors_user[static_cast<std::size_t>(l) * D + k];
            for (int k = 0; k < D; ++k)
                x += static_cast<long double>(
                         pat.next_factors_prev[static_cast<std::size_t>(l) * D + k]) *
                     pat.prev_factors[static_cast<std::size_t>(prev_poi) * D + k];
            x += static_cast<long double>(pat.rho) * sp;
            mix += gate[s] * x;
        }
        scored[l] = {mix, l};
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });

    std::vector<int> ranking(N);
    for (int l = 0; l < N; ++l) ranking[l] = scored[l].second;
    return ranking;
}

}  // namespace lbp
