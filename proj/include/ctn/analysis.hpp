#pragma once

#include <vector>

#include "ctn/data.hpp"
#include "ctn/model.hpp"

namespace ctn {

struct RelevanceEntry {
    int filter_index = 0;  // first-layer bank channel order
    int length = 0;
    double relevance = 0.0;
    std::vector<double> weights;  // snapshot, [f x 1]
    double bias = 0.0;
};

// All first-layer filters, sorted by descending relevance:
// r = mean over samples of the maximum raw conv response (pre BN/ReLU).
struct RelevanceReport {
    std::vector<RelevanceEntry> entries;
};

RelevanceReport filter_relevance(const CtnModel& model, const Dataset& dataset);

// Raw first-layer conv response of one filter plus its argmax position
// (first occurrence on ties).
struct ActivationMap {
    std::vector<double> response;
    int argmax = 0;
};

ActivationMap activation_map(const CtnModel& model, int filter_index,
                             const std::vector<double>& series);

struct OcclusionTrace {
    int window = 0;
    int stride = 1;
    std::vector<int> positions;    // window start indices
    std::vector<double> s;         // s_t = occluded prob - base prob
    int predicted_class = 0;
    double base_prob = 0.0;
};

// Slides a zero window over the series and records the change in the
// predicted class probability. Inference mode throughout.
OcclusionTrace occlusion_sensitivity(CtnModel& model, const Head& head,
                                     const std::vector<double>& series,
                                     double window_fraction = 0.1, int stride = 1);

}  // namespace ctn
