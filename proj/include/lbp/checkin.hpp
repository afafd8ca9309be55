#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace lbp {

// One parsed check-in record, identifiers still raw.
struct CheckIn {
    std::string user_id;
    std::string poi_id;
    std::int64_t timestamp = 0;  // seconds since epoch, UTC
    double lat = 0.0;
    double lon = 0.0;
    std::optional<std::string> category;
};

// A check-in after entity resolution: dense POI/category indices.
struct Event {
    int poi = -1;
    std::int64_t timestamp = 0;
    int category = -1;  // -1 when the record carried no category
};

enum class Provenance { full, train, test };

// Check-in corpus with dense entity indexes. Immutable once built; all
// operations below are pure.
struct Dataset {
    std::vector<std::vector<Event>> checkins;  // per user, time-sorted
    std::vector<std::string> user_ids;         // dense index -> id
    std::vector<std::string> poi_ids;
    std::vector<std::string> category_labels;  // empty when corpus has none
    std::unordered_map<std::string, int> user_index;
    std::unordered_map<std::string, int> poi_index;
    std::unordered_map<std::string, int> category_index;
    std::vector<double> poi_lat;  // per dense POI index
    std::vector<double> poi_lon;
    Provenance provenance = Provenance::full;

    std::size_t num_users() const { return user_ids.size(); }
    std::size_t num_pois() const { return poi_ids.size(); }
    std::size_t num_events() const;

    // FNV-1a over the dense content; embedded in model files so that
    // evaluation can refuse a mismatched split.
    std::uint64_t fingerprint() const;
};

// One observed move (u, i -> l); the unit the transition tensor indexes.
struct Transition {
    int user = -1;
    int prev_poi = -1;
    int next_poi = -1;
    std::int64_t prev_time = 0;
    std::int64_t next_time = 0;
    double distance_km = 0.0;
    int prev_category = -1;  // category of the previous check-in
};

struct SplitDataset {
    Dataset train;
    Dataset test;
    double split_fraction = 0.0;
};

struct WeekdayCategoryMatrix {
    std::vector<double> rows;        // C x C row-major, each row sums to 1 or is all-zero
    std::vector<int> empty_rows;     // source categories with no observed transition
};

struct StatsReport {
    std::vector<std::pair<double, double>> distance_cdf;   // (km threshold, cum. fraction)
    std::vector<std::pair<double, double>> time_gap_cdf;   // (hours threshold, cum. fraction)
    std::map<std::int64_t, double> visit_count_histogram;  // visit count -> fraction of POIs
    std::vector<std::pair<double, double>> new_poi_ratio_by_timescale;  // (fraction of timeline, ratio)
    std::vector<WeekdayCategoryMatrix> category_transition_matrix_by_weekday;  // 7 or empty
    double tensor_sparsity = 0.0;  // distinct (u,i,l) cells / (M * N^2)
};

// Column order of the input text format.
struct CheckinSchema {
    int user_col = 0;
    int poi_col = 1;
    int timestamp_col = 2;
    int lat_col = 3;
    int lon_col = 4;
    int category_col = 5;  // -1 when the file carries no category column
};

// Parses one delimited line (tab preferred, comma accepted). Throws
// std::runtime_error naming the line number and offending field.
CheckIn parse_checkin_line(const std::string& line, std::size_t line_number,
                           const CheckinSchema& schema = CheckinSchema{});

// Drops users with fewer than min_user_checkins events, sorts the rest by
// time, and builds dense indexes over what remains (first-appearance
// order). Throws if nothing survives.
Dataset ingest(const std::vector<std::string>& lines, std::size_t min_user_checkins,
               const CheckinSchema& schema = CheckinSchema{});

// Convenience: read a corpus file into lines and ingest.
Dataset ingest_file(const std::string& path, std::size_t min_user_checkins,
                    const CheckinSchema& schema = CheckinSchema{});

// Per user the earliest ceil(fraction*n) events go to train, the rest to
// test. Both halves keep the parent's index tables so that dense ids stay
// comparable across the split.
SplitDataset chronological_split(const Dataset& dataset, double fraction);

// Every consecutive pair of one user's events, unless max_gap_hours is set
// and the pair is further apart than that.
std::vector<Transition> build_transitions(const Dataset& dataset,
                                          std::optional<double> max_gap_hours = std::nullopt);

// Descriptive statistics of a corpus. Weekday matrices use local time
// shifted by utc_offset_hours; they are skipped when the corpus has no
// categories.
StatsReport compute_stats(const Dataset& dataset, double utc_offset_hours = 0.0);

// Serializes a dataset back to the input text format (tab-separated),
// users in index order.
std::string to_checkin_text(const Dataset& dataset);

std::string stats_to_text(const StatsReport& report);
std::string stats_to_json(const StatsReport& report);

}  // namespace lbp
