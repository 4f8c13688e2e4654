#include "ctn/analysis.hpp"

#include <algorithm>
#include <cmath>

namespace ctn {

namespace {

Mat as_map(const std::vector<double>& series) {
    Mat x(static_cast<int>(series.size()), 1);
    std::copy(series.begin(), series.end(), x.a.begin());
    return x;
}

}  // namespace

RelevanceReport filter_relevance(const CtnModel& model, const Dataset& dataset) {
    if (model.blocks.empty()) throw dim_error("filter_relevance: model has no blocks");
    if (dataset.size() < 1) throw data_error("filter_relevance: empty dataset");

    const FilterBank& bank = model.blocks.front().bank;
    const int m1 = bank.out_channels();
    const int n = dataset.size();

    RelevanceReport report;
    report.entries.resize(m1);
    // Parallel over filters; the per-filter mean runs in sample order so the
    // result is identical for any thread count.
#pragma omp parallel for schedule(static)
    for (int k = 0; k < m1; ++k) {
        const ConvFilter filter = bank.filter(k);
        std::vector<double> maxima(n);
        for (int i = 0; i < n; ++i) {
            const Mat x = as_map(dataset.samples[i].values);
            std::vector<double> resp(x.rows);
            conv1d_same_into(x, filter.length, filter.weights.data(), filter.bias,
                             resp.data(), 1);
            maxima[i] = *std::max_element(resp.begin(), resp.end());
        }
        // Summing in value order makes the mean a function of the sample
        // multiset, not of its ordering.
        std::sort(maxima.begin(), maxima.end());
        double acc = 0.0;
        for (double v : maxima) acc += v;
        RelevanceEntry e;
        e.filter_index = k;
        e.length = filter.length;
        e.relevance = acc / static_cast<double>(n);
        e.weights = filter.weights;
        e.bias = filter.bias;
        report.entries[k] = std::move(e);
    }
    std::stable_sort(report.entries.begin(), report.entries.end(),
                     [](const RelevanceEntry& a, const RelevanceEntry& b) {
                         return a.relevance > b.relevance;
                     });
    return report;
}

ActivationMap activation_map(const CtnModel& model, int filter_index,
                             const std::vector<double>& series) {
    if (model.blocks.empty()) throw dim_error("activation_map: model has no blocks");
    const FilterBank& bank = model.blocks.front().bank;
    if (filter_index < 0 || filter_index >= bank.out_channels())
        throw dim_error("activation_map: filter index out of range");

    const ConvFilter filter = bank.filter(filter_index);
    const Mat x = as_map(series);
    ActivationMap out;
    out.response.resize(x.rows);
    conv1d_same_into(x, filter.length, filter.weights.data(), filter.bias,
                     out.response.data(), 1);
    out.argmax = static_cast<int>(
        std::max_element(out.response.begin(), out.response.end()) -
        out.response.begin());
    return out;
}

OcclusionTrace occlusion_sensitivity(CtnModel& model, const Head& head,
                                     const std::vector<double>& series,
                                     double window_fraction, int stride) {
    const int T = static_cast<int>(series.size());
    const int w = std::max(1, static_cast<int>(std::lround(window_fraction * T)));
    if (w > T) throw dim_error("occlusion: window longer than the series");
    if (stride < 1) throw config_error("occlusion: stride must be positive");

    OcclusionTrace trace;
    trace.window = w;
    trace.stride = stride;

    const auto base = forward_classify(model, head, series, Phase::Infer);
    int pred = 0;
    for (int k = 1; k < static_cast<int>(base.size()); ++k)
        if (base[k] > base[pred]) pred = k;
    trace.predicted_class = pred;
    trace.base_prob = base[pred];

    for (int t = 0; t + w <= T; t += stride) trace.positions.push_back(t);
    trace.s.resize(trace.positions.size());

    const int n = static_cast<int>(trace.positions.size());
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        std::vector<double> occluded = series;
        std::fill(occluded.begin() + trace.positions[i],
                  occluded.begin() + trace.positions[i] + w, 0.0);
        const auto probs = forward_classify(model, head, occluded, Phase::Infer);
        trace.s[i] = probs[pred] - trace.base_prob;
    }
    return trace;
}

}  // namespace ctn
