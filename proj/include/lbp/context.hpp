#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lbp/checkin.hpp"

namespace lbp {

// Layout of the context feature vector g(c): one block of hour-of-day
// bins, one fixed block of 7 weekdays, one block of category indicators.
struct FeatureSchema {
    int time_bins = 24;
    int weekday_slots = 7;
    int category_slots = 0;
    double utc_offset_hours = 0.0;
    std::vector<std::string> category_labels;

    int total_F() const { return time_bins + weekday_slots + category_slots; }
};

// g(c): binary indicators, one-hot per present block.
struct ContextVector {
    std::vector<double> values;
};

// Schema over a corpus: the category block covers the corpus vocabulary.
// time_bins must divide 24.
FeatureSchema build_feature_schema(const Dataset& dataset, int time_bins,
                                   double utc_offset_hours);

// Hour-of-day and weekday come from the previous check-in's local time,
// the category block from its category. prev_category = -1 leaves the
// category block all-zero; an index outside the schema throws.
ContextVector featurize(const Transition& transition, int prev_category,
                        const FeatureSchema& schema);

// Low-level variant used anywhere a timestamp rather than a transition is
// at hand (generation, ad-hoc scoring).
ContextVector featurize_at(std::int64_t prev_timestamp, int prev_category,
                           const FeatureSchema& schema);

}  // namespace lbp
