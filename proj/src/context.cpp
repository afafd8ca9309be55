#include "lbp/context.hpp"

#include <stdexcept>

namespace lbp {

FeatureSchema build_feature_schema(const Dataset& dataset, int time_bins,
                                   double utc_offset_hours) {
    if (time_bins < 1 || 24 % time_bins != 0)
        throw std::invalid_argument("build_feature_schema: time_bins must divide 24");
    FeatureSchema schema;
    schema.time_bins = time_bins;
    schema.utc_offset_hours = utc_offset_hours;
    schema.category_slots = static_cast<int>(dataset.category_labels.size());
    schema.category_labels = dataset.category_labels;
    return schema;
}

ContextVector featurize_at(std::int64_t prev_timestamp, int prev_category,
                           const FeatureSchema& schema) {
    if (prev_category >= schema.category_slots)
        throw std::runtime_error("featurize: category index " +
                                 std::to_string(prev_category) +
                                 " not covered by the schema");

    const auto local =
        prev_timestamp + static_cast<std::int64_t>(schema.utc_offset_hours * 3600.0);
    std::int64_t sec_of_day = local % 86400;
    if (sec_of_day < 0) sec_of_day += 86400;
    const int hour = static_cast<int>(sec_of_day / 3600);
    const int hours_per_bin = 24 / schema.time_bins;

    std::int64_t days = local / 86400;
    if (local % 86400 < 0) --days;
    const int weekday = static_cast<int>(((days + 3) % 7 + 7) % 7);  // 0 = Monday

    ContextVector g;
    g.values.assign(schema.total_F(), 0.0);
    g.values[hour / hours_per_bin] = 1.0;
    g.values[schema.time_bins + weekday] = 1.0;
    if (prev_category >= 0)
        g.values[schema.time_bins + schema.weekday_slots + prev_category] = 1.0;
    return g;
}

ContextVector featurize(const Transition& transition, int prev_category,
                        const FeatureSchema& schema) {
    return featurize_at(transition.prev_time, prev_category, schema);
}

}  // namespace lbp
