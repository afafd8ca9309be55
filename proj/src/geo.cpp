#include "lbp/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace lbp {

namespace {
constexpr double kEarthRadiusKm = 6371.0;

double to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
}  // namespace

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
    const double dlat = to_rad(lat2 - lat1);
    const double dlon = to_rad(lon2 - lon1);
    const double slat = std::sin(dlat / 2.0);
    const double slon = std::sin(dlon / 2.0);
    // the grouped cosine product keeps the distance bit-exactly symmetric
    double a = slat * slat +
               slon * slon * (std::cos(to_rad(lat1)) * std::cos(to_rad(lat2)));
    a = std::clamp(a, 0.0, 1.0);
    return kEarthRadiusKm * 2.0 * std::atan2(std::sqrt(a), std::sqrt(1.0 - a));
}

double spatial_preference(double distance_km, double min_distance_km) {
    return 1.0 / std::max(distance_km, min_distance_km);
}

PowerLawFit fit_power_law(const std::vector<std::pair<double, double>>& samples,
                          double max_distance_km) {
    std::vector<std::pair<double, double>> logs;  // (log d, log f)
    logs.reserve(samples.size());
    for (const auto& [d, f] : samples) {
        if (d > 0.0 && d <= max_distance_km && f > 0.0)
            logs.emplace_back(std::log(d), std::log(f));
    }

    bool distinct = false;
    for (std::size_t i = 1; i < logs.size(); ++i)
        if (logs[i].first != logs[0].first) distinct = true;
    if (logs.size() < 2 || !distinct)
        throw std::invalid_argument(
            "fit_power_law: need at least two samples with distinct positive "
            "distances within the cutoff");

    const double n = static_cast<double>(logs.size());
    double sx = 0.0, sy = 0.0;
    for (const auto& [x, y] : logs) {
        sx += x;
        sy += y;
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& [x, y] : logs) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }

    PowerLawFit fit;
    fit.k = sxy / sxx;
    fit.a = std::exp(my - fit.k * mx);
    fit.max_distance_km = max_distance_km;
    // r^2 = 1 - SS_res/SS_tot; degenerate all-equal y fits exactly.
    if (syy > 0.0) {
        double ss_res = 0.0;
        for (const auto& [x, y] : logs) {
            const double e = y - (my + fit.k * (x - mx));
            ss_res += e * e;
        }
        fit.r_squared = 1.0 - ss_res / syy;
    } else {
        fit.r_squared = 1.0;
    }
    return fit;
}

std::vector<std::pair<double, double>> bin_distances_log(
    const std::vector<double>& distances_km, std::size_t n_bins, double min_km,
    double max_km) {
    if (n_bins == 0 || min_km <= 0.0 || max_km <= min_km)
        throw std::invalid_argument("bin_distances_log: bad bin layout");

    const double lmin = std::log(min_km);
    const double lmax = std::log(max_km);
    const double width = (lmax - lmin) / static_cast<double>(n_bins);

    std::vector<double> counts(n_bins, 0.0);
    for (double d : distances_km) {
        if (d < min_km || d > max_km) continue;
        auto b = static_cast<std::size_t>((std::log(d) - lmin) / width);
        if (b >= n_bins) b = n_bins - 1;
        counts[b] += 1.0;
    }

    std::vector<std::pair<double, double>> out;
    for (std::size_t b = 0; b < n_bins; ++b) {
        if (counts[b] == 0.0) continue;
        const double center = std::exp(lmin + (static_cast<double>(b) + 0.5) * width);
        out.emplace_back(center, counts[b]);
    }
    return out;
}

}  // namespace lbp
