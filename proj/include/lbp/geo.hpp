#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace lbp {

// Great-circle distance in kilometers (spherical Earth, R = 6371 km).
double haversine_km(double lat1, double lon1, double lat2, double lon2);

// Distance-decay preference term: max(d, min_distance_km)^-1. The clamp
// bounds the value for repeated check-ins at the same venue (d = 0).
double spatial_preference(double distance_km, double min_distance_km);

// Result of an ordinary least-squares fit of log(freq) = log(a) + k*log(d).
struct PowerLawFit {
    double a = 0.0;                // scale, exp(intercept)
    double k = 0.0;                // exponent (slope), expected negative
    double r_squared = 0.0;        // goodness of the log-log fit
    double max_distance_km = 0.0;  // samples beyond this were ignored
};

// OLS on (log d, log f) over samples with 0 < d <= max_distance_km and
// f > 0. Throws std::invalid_argument if fewer than two distinct
// distances survive the filter.
PowerLawFit fit_power_law(const std::vector<std::pair<double, double>>& samples,
                          double max_distance_km);

// Histogram of distances into logarithmically spaced bins over
// [min_km, max_km]. Returns (bin geometric center, count) for non-empty
// bins only; samples outside the range are dropped.
std::vector<std::pair<double, double>> bin_distances_log(
    const std::vector<double>& distances_km, std::size_t n_bins, double min_km,
    double max_km);

}  // namespace lbp
