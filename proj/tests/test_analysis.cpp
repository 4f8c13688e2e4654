#include <algorithm>

#include "ctn/analysis.hpp"
#include "ctn/reference.hpp"
#include "test_util.hpp"

using namespace ctn;
using testutil::random_vec;

namespace {

ArchConfig tiny_arch() {
    ArchConfig a;
    a.num_blocks = 2;
    a.lengths = {4, 8};
    a.filters_per_length = 2;
    return a;
}

Dataset random_dataset(int n, int T, Rng& rng) {
    Dataset d;
    d.name = "random";
    d.num_classes = 2;
    d.series_length = T;
    for (int i = 0; i < n; ++i) {
        TimeSeriesSample s;
        s.label = i % 2;
        s.values = random_vec(T, rng);
        d.samples.push_back(std::move(s));
    }
    return d;
}

}  // namespace

TEST_CASE("filter_relevance: zero-weight filter scores its bias") {
    Rng rng(110);
    CtnModel model = build_ctn(tiny_arch(), rng);
    auto& g0 = model.blocks[0].bank.groups[0];
    for (int c = 0; c < g0.weights.cols; ++c) g0.weights(0, c) = 0.0;
    g0.biases[0] = 0.37;

    Dataset d = random_dataset(6, 32, rng);
    const auto report = filter_relevance(model, d);
    bool found = false;
    for (const auto& e : report.entries)
        if (e.filter_index == 0) {
            CHECK(e.relevance == doctest::Approx(0.37));
            CHECK(e.length == 4);
            found = true;
        }
    CHECK(found);
    // Sorted descending, covers all first-layer filters.
    CHECK(report.entries.size() == 4);
    for (size_t i = 1; i < report.entries.size(); ++i)
        CHECK(report.entries[i - 1].relevance >= report.entries[i].relevance);
}

TEST_CASE("filter_relevance: identical samples reduce to the single-sample max") {
    Rng rng(111);
    CtnModel model = build_ctn(tiny_arch(), rng);
    const auto x = random_vec(30, rng);
    Dataset d;
    d.num_classes = 2;
    d.series_length = 30;
    for (int i = 0; i < 5; ++i) d.samples.push_back({x, 0});

    Dataset single = d;
    single.samples.resize(1);
    const auto rep5 = filter_relevance(model, d);
    const auto rep1 = filter_relevance(model, single);
    for (size_t i = 0; i < rep5.entries.size(); ++i) {
        CHECK(rep5.entries[i].filter_index == rep1.entries[i].filter_index);
        CHECK(rep5.entries[i].relevance == doctest::Approx(rep1.entries[i].relevance));
    }
}

TEST_CASE("filter_relevance matches the exhaustive oracle") {
    Rng rng(112);
    CtnModel model = build_ctn(tiny_arch(), rng);
    Dataset d = random_dataset(3, 10, rng);

    const auto report = filter_relevance(model, d);
    const FilterBank& bank = model.blocks[0].bank;
    for (const auto& e : report.entries) {
        double mean = 0.0;
        for (const auto& s : d.samples) {
            Mat x(10, 1);
            std::copy(s.values.begin(), s.values.end(), x.a.begin());
            const auto resp = ref::conv1d_same(x, bank.filter(e.filter_index));
            mean += *std::max_element(resp.begin(), resp.end());
        }
        mean /= d.size();
        CHECK(std::abs(e.relevance - mean) < 1e-12);
    }
}

TEST_CASE("filter_relevance is bitwise invariant to sample order") {
    Rng rng(113);
    CtnModel model = build_ctn(tiny_arch(), rng);
    Dataset d = random_dataset(7, 20, rng);
    Dataset reversed = d;
    std::reverse(reversed.samples.begin(), reversed.samples.end());

    const auto a = filter_relevance(model, d);
    const auto b = filter_relevance(model, reversed);
    for (size_t i = 0; i < a.entries.size(); ++i)
        CHECK(a.entries[i].relevance == b.entries[i].relevance);
}

TEST_CASE("activation_map: flat response, identity tap, oracle, bounds") {
    Rng rng(114);
    CtnModel model = build_ctn(tiny_arch(), rng);

    SUBCASE("zero input with zero bias is flat; ties pick position 0") {
        auto& g0 = model.blocks[0].bank.groups[0];
        g0.biases[0] = 0.0;
        const auto map = activation_map(model, 0, std::vector<double>(16, 0.0));
        for (double v : map.response) CHECK(v == 0.0);
        CHECK(map.argmax == 0);
    }
    SUBCASE("identity tap reproduces the input and its argmax") {
        auto& g0 = model.blocks[0].bank.groups[0];  // f = 4, p_left = 1
        for (int c = 0; c < g0.weights.cols; ++c) g0.weights(0, c) = 0.0;
        g0.weights(0, 1) = 1.0;
        g0.biases[0] = 0.0;
        const auto x = random_vec(24, rng);
        const auto map = activation_map(model, 0, x);
        for (int t = 0; t < 24; ++t) CHECK(map.response[t] == x[t]);
        CHECK(map.argmax ==
              static_cast<int>(std::max_element(x.begin(), x.end()) - x.begin()));
    }
    SUBCASE("random filter matches the reference and the index bound holds") {
        const auto x = random_vec(18, rng);
        const auto map = activation_map(model, 3, x);
        Mat xm(18, 1);
        std::copy(x.begin(), x.end(), xm.a.begin());
        const auto expect = ref::conv1d_same(xm, model.blocks[0].bank.filter(3));
        for (int t = 0; t < 18; ++t) CHECK(std::abs(map.response[t] - expect[t]) < 1e-12);
        CHECK_THROWS_AS(activation_map(model, 99, x), dim_error);
    }
}

TEST_CASE("occlusion: constant classifier has zero sensitivity everywhere") {
    Rng rng(115);
    CtnModel model = build_ctn(tiny_arch(), rng);
    Head head = make_head("t", 3, model.embedding_dim(), rng);
    std::fill(head.weights.a.begin(), head.weights.a.end(), 0.0);
    head.bias = {0.3, 0.1, -0.2};

    const auto x = random_vec(50, rng);
    const auto trace = occlusion_sensitivity(model, head, x, 0.1, 1);
    CHECK(trace.window == 5);
    CHECK(static_cast<int>(trace.positions.size()) == 50 - 5 + 1);
    CHECK(trace.predicted_class == 0);
    for (double s : trace.s) CHECK(s == 0.0);
}

TEST_CASE("occlusion: zeroing an already-zero window changes nothing") {
    Rng rng(116);
    CtnModel model = build_ctn(tiny_arch(), rng);
    Head head = make_head("t", 3, model.embedding_dim(), rng);

    auto x = random_vec(40, rng);
    std::fill(x.begin() + 10, x.begin() + 14, 0.0);  // window = round(0.1*40) = 4
    const auto trace = occlusion_sensitivity(model, head, x, 0.1, 1);
    REQUIRE(trace.window == 4);
    CHECK(trace.s[10] == 0.0);
}

TEST_CASE("occlusion: sensitivities stay within probability bounds") {
    Rng rng(117);
    CtnModel model = build_ctn(tiny_arch(), rng);
    Head head = make_head("t", 4, model.embedding_dim(), rng);
    const auto x = random_vec(60, rng);
    const auto trace = occlusion_sensitivity(model, head, x, 0.1, 2);
    CHECK(trace.stride == 2);
    for (double s : trace.s) {
        CHECK(s >= -trace.base_prob - 1e-15);
        CHECK(s <= 1.0 - trace.base_prob + 1e-15);
    }

    CHECK_THROWS_AS(occlusion_sensitivity(model, head, x, 0.1, 0), config_error);
    std::vector<double> shorty(3, 1.0);
    CHECK_THROWS_AS(occlusion_sensitivity(model, head, shorty, 2.0, 1), dim_error);
}
