#include <algorithm>

#include "ctn/model.hpp"
#include "ctn/optim.hpp"
#include "test_util.hpp"

using namespace ctn;
using testutil::max_abs_diff;
using testutil::random_vec;
using testutil::rel_err;

namespace {

// |det| via Gaussian elimination with partial pivoting.
double abs_det(Mat m) {
    REQUIRE(m.rows == m.cols);
    const int n = m.rows;
    double det = 1.0;
    for (int i = 0; i < n; ++i) {
        int piv = i;
        for (int r = i + 1; r < n; ++r)
            if (std::abs(m(r, i)) > std::abs(m(piv, i))) piv = r;
        if (piv != i)
            for (int c = 0; c < n; ++c) std::swap(m(i, c), m(piv, c));
        det *= m(i, i);
        if (m(i, i) == 0.0) return 0.0;
        for (int r = i + 1; r < n; ++r) {
            const double factor = m(r, i) / m(i, i);
            for (int c = i; c < n; ++c) m(r, c) -= factor * m(i, c);
        }
    }
    return std::abs(det);
}

ArchConfig tiny_arch() {
    ArchConfig a;
    a.num_blocks = 2;
    a.lengths = {2, 4};
    a.filters_per_length = 2;
    return a;
}

std::vector<std::vector<double>> random_series(int n, int T, Rng& rng) {
    std::vector<std::vector<double>> out;
    for (int i = 0; i < n; ++i) out.push_back(random_vec(T, rng));
    return out;
}

SeriesBatch as_batch(const std::vector<std::vector<double>>& series) {
    SeriesBatch b;
    for (const auto& s : series) b.push_back(&s);
    return b;
}

}  // namespace

TEST_CASE("build_ctn: paper default configuration") {
    Rng rng(40);
    CtnModel model = build_ctn(ArchConfig{}, rng);
    CHECK(model.num_blocks() == 4);
    CHECK(model.embedding_dim() == 165);
    CHECK(model.blocks[0].kind == BlockKind::Type1);
    CHECK(model.blocks[1].kind == BlockKind::Type2);
    CHECK(model.blocks[2].kind == BlockKind::Type1);
    CHECK(model.blocks[3].kind == BlockKind::Type2);
    // Block 2's residual reaches back to the 1-channel input.
    REQUIRE(model.blocks[1].projection.has_value());
    CHECK(model.blocks[1].projection->conv.in_channels == 1);
    CHECK(model.blocks[1].projection->conv.count() == 165);
    // Block 4's skip already has matching channels.
    CHECK(!model.blocks[3].projection.has_value());
    // BN/bias initialization.
    for (const auto& block : model.blocks) {
        for (double g : block.bn.gamma) CHECK(g == 1.0);
        for (double b : block.bn.beta) CHECK(b == 0.0);
        for (const auto& grp : block.bank.groups)
            for (double b : grp.biases) CHECK(b == 0.0);
    }
}

TEST_CASE("build_ctn: minimal single-block model") {
    Rng rng(41);
    ArchConfig a;
    a.num_blocks = 1;
    a.lengths = {3};
    a.filters_per_length = 2;
    CtnModel model = build_ctn(a, rng);
    CHECK(model.embedding_dim() == 2);
    CHECK(model.blocks[0].kind == BlockKind::Type1);
}

TEST_CASE("build_ctn: invalid configurations") {
    Rng rng(42);
    ArchConfig bad = tiny_arch();
    bad.kinds = {BlockKind::Type2, BlockKind::Type1};
    CHECK_THROWS_AS(build_ctn(bad, rng), config_error);

    ArchConfig dup = tiny_arch();
    dup.lengths = {4, 4};
    CHECK_THROWS_AS(build_ctn(dup, rng), config_error);

    ArchConfig empty = tiny_arch();
    empty.lengths = {};
    CHECK_THROWS_AS(build_ctn(empty, rng), config_error);
}

TEST_CASE("fixed-length ablation variant is parameter-matched to the default") {
    Rng rng(43);
    CtnModel base = build_ctn(ArchConfig{}, rng);
    ArchConfig fixed;
    fixed.lengths = {16};
    fixed.filters_per_length = 200;  // published ablation count for f=16
    CtnModel variant = build_ctn(fixed, rng);
    const double ratio = static_cast<double>(param_count(variant)) /
                         static_cast<double>(param_count(base));
    // The published count lands at -5.2%; see the README note on matching.
    CHECK(std::abs(ratio - 1.0) < 0.055);

    // The automatic matcher gets closer than the published round number.
    const int c = matched_filter_count(16, ArchConfig{});
    ArchConfig matched = fixed;
    matched.filters_per_length = c;
    CtnModel auto_variant = build_ctn(matched, rng);
    const double auto_ratio = static_cast<double>(param_count(auto_variant)) /
                              static_cast<double>(param_count(base));
    CHECK(std::abs(auto_ratio - 1.0) < 0.05);
}

TEST_CASE("orthogonal_init: 1x1 gives a sign") {
    for (uint64_t seed = 0; seed < 8; ++seed) {
        Rng rng(seed);
        const Mat m = orthogonal_init(1, 1, rng);
        CHECK(std::abs(std::abs(m(0, 0)) - 1.0) < 1e-12);
    }
}

TEST_CASE("orthogonal_init: square matrix has |det| = 1") {
    Rng rng(44);
    const Mat m = orthogonal_init(8, 8, rng);
    CHECK(std::abs(abs_det(m) - 1.0) < 1e-10);
}

TEST_CASE("orthogonal_init: Gram matrices stay within 1e-6 of identity") {
    for (uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(100 + seed);
        {
            const Mat m = orthogonal_init(10, 40, rng);  // rows orthonormal
            for (int i = 0; i < 10; ++i)
                for (int j = 0; j < 10; ++j) {
                    double dot = 0.0;
                    for (int c = 0; c < 40; ++c) dot += m(i, c) * m(j, c);
                    CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-6);
                }
        }
        {
            const Mat m = orthogonal_init(40, 10, rng);  // columns orthonormal
            for (int i = 0; i < 10; ++i)
                for (int j = 0; j < 10; ++j) {
                    double dot = 0.0;
                    for (int r = 0; r < 40; ++r) dot += m(r, i) * m(r, j);
                    CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-6);
                }
        }
    }
}

TEST_CASE("forward_embed: zeroed model maps everything to zero") {
    Rng rng(45);
    CtnModel model = build_ctn(tiny_arch(), rng);
    for (auto& e : param_entries(model))
        if (e.name.find(".w") != std::string::npos ||
            e.name.find(".b") != std::string::npos ||
            e.name.find("beta") != std::string::npos)
            std::fill(e.values->begin(), e.values->end(), 0.0);
    const auto z = forward_embed(model, random_vec(20, rng), Phase::Infer);
    for (double v : z) CHECK(v == 0.0);
}

TEST_CASE("forward_embed: embedding width is m_L and independent of T") {
    Rng rng(46);
    CtnModel model = build_ctn(ArchConfig{}, rng);
    const auto z = forward_embed(model, random_vec(24, rng), Phase::Infer);
    CHECK(z.size() == 165);

    CtnModel small = build_ctn(tiny_arch(), rng);
    const auto z50 = forward_embed(small, random_vec(50, rng), Phase::Infer);
    const auto z300 = forward_embed(small, random_vec(300, rng), Phase::Infer);
    CHECK(z50.size() == small.embedding_dim());
    CHECK(z300.size() == small.embedding_dim());
}

TEST_CASE("forward_embed is deterministic in inference mode") {
    Rng rng(47);
    CtnModel model = build_ctn(tiny_arch(), rng);
    const auto x = random_vec(30, rng);
    const auto z1 = forward_embed(model, x, Phase::Infer);
    const auto z2 = forward_embed(model, x, Phase::Infer);
    CHECK(std::equal(z1.begin(), z1.end(), z2.begin()));
}

TEST_CASE("forward_classify: closed forms and normalization") {
    Rng rng(48);
    CtnModel model = build_ctn(tiny_arch(), rng);

    SUBCASE("zero embedding and zero head bias give the uniform distribution") {
        CtnModel zeroed = model;
        for (auto& e : param_entries(zeroed))
            std::fill(e.values->begin(), e.values->end(), 0.0);
        for (auto& block : zeroed.blocks) {
            std::fill(block.bn.gamma.begin(), block.bn.gamma.end(), 1.0);
            if (block.projection)
                std::fill(block.projection->bn.gamma.begin(),
                          block.projection->bn.gamma.end(), 1.0);
        }
        Head head = make_head("t", 4, zeroed.embedding_dim(), rng);
        std::fill(head.weights.a.begin(), head.weights.a.end(), 0.0);
        const auto p = forward_classify(zeroed, head, random_vec(25, rng), Phase::Infer);
        for (double v : p) CHECK(v == doctest::Approx(0.25));
    }
    SUBCASE("zero weights with bias [0, ln 9] give [0.1, 0.9]") {
        Head head = make_head("t", 2, model.embedding_dim(), rng);
        std::fill(head.weights.a.begin(), head.weights.a.end(), 0.0);
        head.bias = {0.0, std::log(9.0)};
        const auto p = forward_classify(model, head, random_vec(25, rng), Phase::Infer);
        CHECK(p[0] == doctest::Approx(0.1));
        CHECK(p[1] == doctest::Approx(0.9));
    }
    SUBCASE("probabilities sum to one") {
        Head head = make_head("t", 5, model.embedding_dim(), rng);
        for (int i = 0; i < 100; ++i) {
            const auto p =
                forward_classify(model, head, random_vec(20, rng), Phase::Infer);
            double sum = 0.0;
            for (double v : p) sum += v;
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("backward: saturated prediction leaves near-zero head gradients") {
    Rng rng(49);
    CtnModel model = build_ctn(tiny_arch(), rng);
    Head head = make_head("t", 3, model.embedding_dim(), rng);
    head.bias = {60.0, 0.0, 0.0};  // forces p(target) > 1 - 1e-9

    const auto series = random_series(2, 16, rng);
    auto res = backward(model, head, as_batch(series), {0, 0});
    const auto probs = forward_classify(model, head, series[0], Phase::Infer);
    REQUIRE(probs[0] > 1.0 - 1e-9);
    for (double g : res.head_grads.bias) CHECK(std::abs(g) < 1e-6);
    for (double g : res.head_grads.weights.a) CHECK(std::abs(g) < 1e-6);
}

TEST_CASE("backward: tiny CTN gradients match finite differences") {
    Rng rng(50);
    ArchConfig arch = tiny_arch();  // L=2, lengths {2,4}, 2 filters each
    CtnModel model = build_ctn(arch, rng);
    REQUIRE(model.blocks[1].kind == BlockKind::Type2);
    REQUIRE(model.blocks[1].projection.has_value());
    // Move BN shifts off the ReLU kink for clean differencing.
    for (auto& block : model.blocks) {
        for (double& b : block.bn.beta) b = rng.uniform(0.05, 0.3);
        if (block.projection)
            for (double& b : block.projection->bn.beta) b = rng.uniform(0.05, 0.3);
    }
    Head head = make_head("t", 3, model.embedding_dim(), rng);

    const auto series = random_series(2, 16, rng);
    const std::vector<int> targets{0, 2};
    const auto report = finite_diff_check(model, head, as_batch(series), targets,
                                          1e-6, 1e-4);
    CHECK(report.pass);
    CHECK(report.max_rel_err < 1e-4);
    CHECK(report.groups.size() ==
          param_entries(model).size() + param_entries(head).size());
}

TEST_CASE("backward: full freeze leaves only BN and head gradients") {
    Rng rng(51);
    CtnModel model = build_ctn(tiny_arch(), rng);
    model.freeze_mask.assign(model.num_blocks(), true);
    Head head = make_head("t", 3, model.embedding_dim(), rng);

    const auto series = random_series(3, 12, rng);
    auto res = backward(model, head, as_batch(series), {0, 1, 2});

    for (int l = 0; l < model.num_blocks(); ++l) {
        for (const auto& w : res.model_grads.blocks[l].bank.weights)
            for (double v : w.a) CHECK(v == 0.0);
        for (const auto& b : res.model_grads.blocks[l].bank.biases)
            for (double v : b) CHECK(v == 0.0);
        if (res.model_grads.blocks[l].proj) {
            for (double v : res.model_grads.blocks[l].proj->weights.a) CHECK(v == 0.0);
            for (double v : res.model_grads.blocks[l].proj->biases) CHECK(v == 0.0);
        }
    }
    double bn_norm = 0.0, head_norm = 0.0;
    for (int l = 0; l < model.num_blocks(); ++l)
        for (double v : res.model_grads.blocks[l].bn.gamma) bn_norm += v * v;
    for (double v : res.head_grads.weights.a) head_norm += v * v;
    CHECK(bn_norm > 0.0);
    CHECK(head_norm > 0.0);
}

TEST_CASE("permuting last-bank channels with the head columns is a no-op") {
    Rng rng(52);
    ArchConfig arch;
    arch.num_blocks = 3;
    arch.lengths = {2, 4};
    arch.filters_per_length = 3;  // m = 6, last block Type1
    CtnModel model = build_ctn(arch, rng);
    REQUIRE(model.blocks[2].kind == BlockKind::Type1);
    // Non-trivial BN affine on the last block.
    model.blocks[2].bn.gamma = random_vec(6, rng);
    model.blocks[2].bn.beta = random_vec(6, rng);
    Head head = make_head("t", 4, 6, rng);

    const auto x = random_vec(30, rng);
    const auto base = forward_classify(model, head, x, Phase::Infer);

    // Swap filters 0<->2 inside the first length group (channels 0 and 2).
    CtnModel permuted = model;
    auto& g = permuted.blocks[2].bank.groups[0];
    for (int c = 0; c < g.weights.cols; ++c) std::swap(g.weights(0, c), g.weights(2, c));
    std::swap(g.biases[0], g.biases[2]);
    auto& bn = permuted.blocks[2].bn;
    std::swap(bn.gamma[0], bn.gamma[2]);
    std::swap(bn.beta[0], bn.beta[2]);
    std::swap(bn.running_mean[0], bn.running_mean[2]);
    std::swap(bn.running_var[0], bn.running_var[2]);
    Head permuted_head = head;
    for (int k = 0; k < 4; ++k)
        std::swap(permuted_head.weights(k, 0), permuted_head.weights(k, 2));

    const auto out = forward_classify(permuted, permuted_head, x, Phase::Infer);
    CHECK(max_abs_diff(out, base) < 1e-12);
}

TEST_CASE("build is deterministic under a fixed seed") {
    Rng a(77), b(77);
    CtnModel m1 = build_ctn(tiny_arch(), a);
    CtnModel m2 = build_ctn(tiny_arch(), b);
    CHECK(model_hash(m1) == model_hash(m2));
}

TEST_CASE("float32 precision mode quantizes parameters") {
    Rng rng(53);
    CtnModel model = build_ctn(tiny_arch(), rng, Precision::F32);
    for (auto& e : param_entries(model))
        for (double v : *e.values)
            CHECK(v == static_cast<double>(static_cast<float>(v)));
}
