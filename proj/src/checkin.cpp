#include "lbp/checkin.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"
#include "lbp/geo.hpp"

namespace lbp {

namespace {

std::vector<std::string> split_fields(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == delim) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

[[noreturn]] void parse_fail(std::size_t line_number, const std::string& field,
                             const std::string& what) {
    throw std::runtime_error("parse error at line " + std::to_string(line_number) +
                             ", field '" + field + "': " + what);
}

double parse_double(const std::string& s, std::size_t line_number,
                    const std::string& field) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        parse_fail(line_number, field, "malformed number '" + s + "'");
    }
    if (pos != s.size()) parse_fail(line_number, field, "malformed number '" + s + "'");
    return v;
}

std::int64_t parse_int64(const std::string& s, std::size_t line_number,
                         const std::string& field) {
    std::size_t pos = 0;
    std::int64_t v = 0;
    try {
        v = std::stoll(s, &pos);
    } catch (const std::exception&) {
        parse_fail(line_number, field, "malformed number '" + s + "'");
    }
    if (pos != s.size()) parse_fail(line_number, field, "malformed number '" + s + "'");
    return v;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t fnv1a_str(std::uint64_t h, const std::string& s) {
    return fnv1a(h, s.data(), s.size());
}

}  // namespace

std::size_t Dataset::num_events() const {
    std::size_t n = 0;
    for (const auto& ev : checkins) n += ev.size();
    return n;
}

std::uint64_t Dataset::fingerprint() const {
    std::uint64_t h = 14695981039346656037ULL;
    for (const auto& id : user_ids) h = fnv1a_str(h, id);
    for (const auto& id : poi_ids) h = fnv1a_str(h, id);
    for (const auto& label : category_labels) h = fnv1a_str(h, label);
    for (std::size_t p = 0; p < poi_lat.size(); ++p) {
        h = fnv1a(h, &poi_lat[p], sizeof(double));
        h = fnv1a(h, &poi_lon[p], sizeof(double));
    }
    for (const auto& events : checkins) {
        for (const auto& e : events) {
            h = fnv1a(h, &e.poi, sizeof(e.poi));
            h = fnv1a(h, &e.timestamp, sizeof(e.timestamp));
            h = fnv1a(h, &e.category, sizeof(e.category));
        }
    }
    return h;
}

CheckIn parse_checkin_line(const std::string& line, std::size_t line_number,
                           const CheckinSchema& schema) {
    const char delim = line.find('\t') != std::string::npos ? '\t' : ',';
    const auto fields = split_fields(line, delim);

    const int mandatory = std::max({schema.user_col, schema.poi_col,
                                    schema.timestamp_col, schema.lat_col,
                                    schema.lon_col}) + 1;
    if (static_cast<int>(fields.size()) < mandatory)
        parse_fail(line_number, "line", "expected at least " +
                                            std::to_string(mandatory) + " fields, got " +
                                            std::to_string(fields.size()));

    CheckIn c;
    c.user_id = fields[schema.user_col];
    c.poi_id = fields[schema.poi_col];
    if (c.user_id.empty()) parse_fail(line_number, "user_id", "missing mandatory field");
    if (c.poi_id.empty()) parse_fail(line_number, "poi_id", "missing mandatory field");

    c.timestamp = parse_int64(fields[schema.timestamp_col], line_number, "timestamp");
    if (c.timestamp <= 0) parse_fail(line_number, "timestamp", "must be strictly positive");

    c.lat = parse_double(fields[schema.lat_col], line_number, "lat");
    if (c.lat < -90.0 || c.lat > 90.0) parse_fail(line_number, "lat", "out of range [-90, 90]");
    c.lon = parse_double(fields[schema.lon_col], line_number, "lon");
    if (c.lon < -180.0 || c.lon > 180.0) parse_fail(line_number, "lon", "out of range [-180, 180]");

    if (schema.category_col >= 0 &&
        static_cast<int>(fields.size()) > schema.category_col &&
        !fields[schema.category_col].empty())
        c.category = fields[schema.category_col];
    return c;
}

Dataset ingest(const std::vector<std::string>& lines, std::size_t min_user_checkins,
               const CheckinSchema& schema) {
    if (min_user_checkins < 1)
        throw std::invalid_argument("ingest: min_user_checkins must be >= 1");

    std::vector<CheckIn> records;
    records.reserve(lines.size());
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        records.push_back(parse_checkin_line(lines[i], i + 1, schema));
    }

    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& r : records) ++counts[r.user_id];

    Dataset ds;
    for (const auto& r : records) {
        if (counts[r.user_id] < min_user_checkins) continue;
        if (!ds.user_index.count(r.user_id)) {
            ds.user_index.emplace(r.user_id, static_cast<int>(ds.user_ids.size()));
            ds.user_ids.push_back(r.user_id);
        }
    }
    if (ds.user_ids.empty())
        throw std::runtime_error("ingest: no user has at least " +
                                 std::to_string(min_user_checkins) + " check-ins");

    // Group retained records per user in input order, then time-sort.
    std::vector<std::vector<const CheckIn*>> per_user(ds.user_ids.size());
    for (const auto& r : records) {
        auto it = ds.user_index.find(r.user_id);
        if (it != ds.user_index.end()) per_user[it->second].push_back(&r);
    }
    for (auto& list : per_user)
        std::stable_sort(list.begin(), list.end(),
                         [](const CheckIn* a, const CheckIn* b) {
                             return a->timestamp < b->timestamp;
                         });

    // Entity indexes in first-appearance order over the sorted stream.
    ds.checkins.resize(ds.user_ids.size());
    for (std::size_t u = 0; u < per_user.size(); ++u) {
        for (const CheckIn* r : per_user[u]) {
            auto pit = ds.poi_index.find(r->poi_id);
            int poi;
            if (pit == ds.poi_index.end()) {
                poi = static_cast<int>(ds.poi_ids.size());
                ds.poi_index.emplace(r->poi_id, poi);
                ds.poi_ids.push_back(r->poi_id);
                ds.poi_lat.push_back(r->lat);
                ds.poi_lon.push_back(r->lon);
            } else {
                poi = pit->second;
            }
            int cat = -1;
            if (r->category) {
                auto cit = ds.category_index.find(*r->category);
                if (cit == ds.category_index.end()) {
                    cat = static_cast<int>(ds.category_labels.size());
                    ds.category_index.emplace(*r->category, cat);
                    ds.category_labels.push_back(*r->category);
                } else {
                    cat = cit->second;
                }
            }
            ds.checkins[u].push_back(Event{poi, r->timestamp, cat});
        }
    }
    return ds;
}

Dataset ingest_file(const std::string& path, std::size_t min_user_checkins,
                    const CheckinSchema& schema) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open input file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return ingest(lines, min_user_checkins, schema);
}

SplitDataset chronological_split(const Dataset& dataset, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw std::invalid_argument("chronological_split: fraction must be in (0,1]");

    SplitDataset split;
    split.split_fraction = fraction;
    split.train = dataset;
    split.test = dataset;
    split.train.provenance = Provenance::train;
    split.test.provenance = Provenance::test;

    for (std::size_t u = 0; u < dataset.checkins.size(); ++u) {
        const auto& events = dataset.checkins[u];
        const auto n = events.size();
        auto train_n = static_cast<std::size_t>(
            std::ceil(fraction * static_cast<double>(n) - 1e-12));
        train_n = std::min(train_n, n);
        split.train.checkins[u].assign(events.begin(), events.begin() + train_n);
        split.test.checkins[u].assign(events.begin() + train_n, events.end());
    }
    return split;
}

std::vector<Transition> build_transitions(const Dataset& dataset,
                                          std::optional<double> max_gap_hours) {
    if (dataset.checkins.empty())
        throw std::invalid_argument("build_transitions: empty dataset");

    std::vector<Transition> out;
    for (std::size_t u = 0; u < dataset.checkins.size(); ++u) {
        const auto& events = dataset.checkins[u];
        for (std::size_t t = 1; t < events.size(); ++t) {
            const Event& prev = events[t - 1];
            const Event& next = events[t];
            if (max_gap_hours) {
                const double gap_h =
                    static_cast<double>(next.timestamp - prev.timestamp) / 3600.0;
                if (gap_h > *max_gap_hours) continue;
            }
            Transition tr;
            tr.user = static_cast<int>(u);
            tr.prev_poi = prev.poi;
            tr.next_poi = next.poi;
            tr.prev_time = prev.timestamp;
            tr.next_time = next.timestamp;
            tr.distance_km =
                haversine_km(dataset.poi_lat[prev.poi], dataset.poi_lon[prev.poi],
                             dataset.poi_lat[next.poi], dataset.poi_lon[next.poi]);
            tr.prev_category = prev.category;
            out.push_back(tr);
        }
    }
    return out;
}

namespace {

// CDF over fixed thresholds; the ladder is extended in powers of two until
// it covers the largest sample, so the last value is exactly 1.
std::vector<std::pair<double, double>> cdf_over_ladder(std::vector<double> samples,
                                                       std::vector<double> ladder) {
    std::sort(samples.begin(), samples.end());
    const double maxv = samples.empty() ? 0.0 : samples.back();
    while (!ladder.empty() && ladder.back() < maxv) ladder.push_back(ladder.back() * 2.0);

    std::vector<std::pair<double, double>> cdf;
    const double n = static_cast<double>(samples.size());
    for (double thr : ladder) {
        const auto below =
            std::upper_bound(samples.begin(), samples.end(), thr) - samples.begin();
        cdf.emplace_back(thr, n > 0 ? static_cast<double>(below) / n : 0.0);
    }
    return cdf;
}

int local_weekday(std::int64_t ts, double utc_offset_hours) {
    const auto local = ts + static_cast<std::int64_t>(utc_offset_hours * 3600.0);
    std::int64_t days = local / 86400;
    if (local % 86400 < 0) --days;
    // 1970-01-01 was a Thursday; index 0 = Monday.
    return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

}  // namespace

StatsReport compute_stats(const Dataset& dataset, double utc_offset_hours) {
    if (dataset.checkins.empty())
        throw std::invalid_argument("compute_stats: empty dataset");

    const auto transitions = build_transitions(dataset);
    StatsReport report;

    std::vector<double> distances, gaps_h;
    distances.reserve(transitions.size());
    gaps_h.reserve(transitions.size());
    for (const auto& tr : transitions) {
        distances.push_back(tr.distance_km);
        gaps_h.push_back(static_cast<double>(tr.next_time - tr.prev_time) / 3600.0);
    }
    // 20100 km exceeds half the Earth's circumference, so the distance
    // ladder always covers the data.
    report.distance_cdf = cdf_over_ladder(
        distances, {0.1, 0.5, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000,
                    10000, 20100});
    report.time_gap_cdf =
        cdf_over_ladder(gaps_h, {1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024});

    // Visit counts per POI.
    std::vector<std::int64_t> visits(dataset.num_pois(), 0);
    for (const auto& events : dataset.checkins)
        for (const auto& e : events) ++visits[e.poi];
    for (auto v : visits)
        if (v > 0) report.visit_count_histogram[v] += 1.0;
    for (auto& [count, frac] : report.visit_count_histogram)
        frac /= static_cast<double>(dataset.num_pois());

    // New-POI ratio at deciles of each user's own timeline, averaged over
    // users that still have events after the cut.
    for (int decile = 1; decile <= 9; ++decile) {
        const double t = decile / 10.0;
        double sum = 0.0;
        std::size_t users = 0;
        for (const auto& events : dataset.checkins) {
            const auto n = events.size();
            if (n == 0) continue;
            const auto cut = std::min(
                n, static_cast<std::size_t>(std::ceil(t * static_cast<double>(n) - 1e-12)));
            if (cut >= n) continue;
            std::unordered_set<int> seen;
            for (std::size_t j = 0; j < cut; ++j) seen.insert(events[j].poi);
            std::size_t novel = 0;
            for (std::size_t j = cut; j < n; ++j)
                if (!seen.count(events[j].poi)) ++novel;
            sum += static_cast<double>(novel) / static_cast<double>(n - cut);
            ++users;
        }
        report.new_poi_ratio_by_timescale.emplace_back(
            t, users > 0 ? sum / static_cast<double>(users) : 0.0);
    }

    // Weekday category-transition matrices (local time of the previous
    // check-in selects the weekday).
    const auto C = dataset.category_labels.size();
    if (C > 0) {
        report.category_transition_matrix_by_weekday.resize(7);
        for (auto& m : report.category_transition_matrix_by_weekday)
            m.rows.assign(C * C, 0.0);
        for (const auto& events : dataset.checkins) {
            for (std::size_t t = 1; t < events.size(); ++t) {
                const Event& prev = events[t - 1];
                const Event& next = events[t];
                if (prev.category < 0 || next.category < 0) continue;
                const int wd = local_weekday(prev.timestamp, utc_offset_hours);
                report.category_transition_matrix_by_weekday[wd]
                    .rows[static_cast<std::size_t>(prev.category) * C + next.category] += 1.0;
            }
        }
        for (auto& m : report.category_transition_matrix_by_weekday) {
            for (std::size_t r = 0; r < C; ++r) {
                double row_sum = 0.0;
                for (std::size_t c = 0; c < C; ++c) row_sum += m.rows[r * C + c];
                if (row_sum == 0.0) {
                    m.empty_rows.push_back(static_cast<int>(r));
                } else {
                    for (std::size_t c = 0; c < C; ++c) m.rows[r * C + c] /= row_sum;
                }
            }
        }
    }

    // Density of the observed transition tensor: distinct (u,i,l) cells.
    std::set<std::tuple<int, int, int>> cells;
    for (const auto& tr : transitions) cells.emplace(tr.user, tr.prev_poi, tr.next_poi);
    const double m = static_cast<double>(dataset.num_users());
    const double nn = static_cast<double>(dataset.num_pois());
    report.tensor_sparsity = static_cast<double>(cells.size()) / (m * nn * nn);

    return report;
}

std::string to_checkin_text(const Dataset& dataset) {
    std::ostringstream out;
    out.imbue(std::locale::classic());
    out.precision(17);
    for (std::size_t u = 0; u < dataset.checkins.size(); ++u) {
        for (const auto& e : dataset.checkins[u]) {
            out << dataset.user_ids[u] << '\t' << dataset.poi_ids[e.poi] << '\t'
                << e.timestamp << '\t' << dataset.poi_lat[e.poi] << '\t'
                << dataset.poi_lon[e.poi];
            if (!dataset.category_labels.empty()) {
                out << '\t'
                    << (e.category >= 0 ? dataset.category_labels[e.category] : "");
            }
            out << '\n';
        }
    }
    return out.str();
}

std::string stats_to_text(const StatsReport& report) {
    std::ostringstream out;
    out.imbue(std::locale::classic());
    out.precision(6);
    out << "tensor_sparsity\t" << report.tensor_sparsity << '\n';
    for (const auto& [thr, frac] : report.distance_cdf)
        out << "distance_cdf\t" << thr << '\t' << frac << '\n';
    for (const auto& [thr, frac] : report.time_gap_cdf)
        out << "time_gap_cdf\t" << thr << '\t' << frac << '\n';
    for (const auto& [count, frac] : report.visit_count_histogram)
        out << "visit_count_histogram\t" << count << '\t' << frac << '\n';
    for (const auto& [t, ratio] : report.new_poi_ratio_by_timescale)
        out << "new_poi_ratio_by_timescale\t" << t << '\t' << ratio << '\n';
    for (std::size_t wd = 0; wd < report.category_transition_matrix_by_weekday.size(); ++wd) {
        const auto& m = report.category_transition_matrix_by_weekday[wd];
        out << "category_transition_matrix_by_weekday\t" << wd;
        for (double v : m.rows) out << '\t' << v;
        out << '\n';
    }
    return out.str();
}

std::string stats_to_json(const StatsReport& report) {
    nlohmann::json j;
    j["tensor_sparsity"] = report.tensor_sparsity;
    j["distance_cdf"] = report.distance_cdf;
    j["time_gap_cdf"] = report.time_gap_cdf;
    auto& hist = j["visit_count_histogram"];
    hist = nlohmann::json::object();
    for (const auto& [count, frac] : report.visit_count_histogram)
        hist[std::to_string(count)] = frac;
    j["new_poi_ratio_by_timescale"] = report.new_poi_ratio_by_timescale;
    auto& mats = j["category_transition_matrix_by_weekday"];
    mats = nlohmann::json::array();
    for (const auto& m : report.category_transition_matrix_by_weekday) {
        nlohmann::json jm;
        jm["rows"] = m.rows;
        jm["empty_rows"] = m.empty_rows;
        mats.push_back(jm);
    }
    return j.dump(2);
}

}  // namespace lbp
