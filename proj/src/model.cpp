#include "ctn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace ctn {

std::vector<BlockKind> ArchConfig::resolved_kinds() const {
    if (!kinds.empty()) return kinds;
    std::vector<BlockKind> k(num_blocks, BlockKind::Type1);
    for (int i = 1; i < num_blocks; i += 2) k[i] = BlockKind::Type2;
    return k;
}

Mat orthogonal_init(int rows, int cols, Rng& rng) {
    if (rows < 1 || cols < 1) throw dim_error("orthogonal_init: bad shape");

    const bool transposed = rows > cols;
    const int r = transposed ? cols : rows;
    const int c = transposed ? rows : cols;

    Mat m(r, c);
    for (double& v : m.a) v = rng.gaussian();

    // Modified Gram-Schmidt with one re-orthogonalization pass. Row norms are
    // kept positive, which pins the sign of each row and makes the result a
    // unique function of the random draw.
    for (int i = 0; i < r; ++i) {
        double* vi = m.row(i);
        for (int pass = 0; pass < 2; ++pass) {
            for (int j = 0; j < i; ++j) {
                const double* vj = m.row(j);
                double dot = 0.0;
                for (int t = 0; t < c; ++t) dot += vi[t] * vj[t];
                for (int t = 0; t < c; ++t) vi[t] -= dot * vj[t];
            }
        }
        double norm = 0.0;
        for (int t = 0; t < c; ++t) norm += vi[t] * vi[t];
        norm = std::sqrt(norm);
        if (norm < 1e-12) {
            // Degenerate draw; redo this row.
            for (int t = 0; t < c; ++t) vi[t] = rng.gaussian();
            --i;
            continue;
        }
        for (int t = 0; t < c; ++t) vi[t] /= norm;
    }

    if (!transposed) return m;
    Mat out(rows, cols);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out(j, i) = m(i, j);
    return out;
}

namespace {

void validate_arch(const ArchConfig& config) {
    if (config.num_blocks < 1) throw config_error("arch: need at least one block");
    if (config.lengths.empty()) throw config_error("arch: empty filter length list");
    for (size_t i = 0; i < config.lengths.size(); ++i) {
        if (config.lengths[i] < 1) throw config_error("arch: filter length < 1");
        if (i > 0 && config.lengths[i] <= config.lengths[i - 1])
            throw config_error("arch: filter lengths must be strictly ascending");
    }
    if (config.filters_per_length < 1) throw config_error("arch: filters_per_length < 1");
    if (config.input_channels != 1) throw config_error("arch: univariate input only");
    if (!config.kinds.empty() &&
        static_cast<int>(config.kinds.size()) != config.num_blocks)
        throw config_error("arch: kinds list length != num_blocks");
    const auto kinds = config.resolved_kinds();
    if (kinds[0] == BlockKind::Type2)
        throw config_error("arch: first block cannot be Type2 (no skip source)");
}

}  // namespace

CtnModel build_ctn(const ArchConfig& config, Rng& rng, Precision precision) {
    validate_arch(config);

    CtnModel model;
    model.arch = config;
    model.precision = precision;
    model.seed = rng.seed();

    const int m = config.embedding_dim();
    const auto kinds = config.resolved_kinds();

    for (int l = 0; l < config.num_blocks; ++l) {
        const int in_ch = (l == 0) ? config.input_channels : m;
        ConvBlock block;
        block.kind = kinds[l];
        for (int f : config.lengths) {
            FilterGroup g;
            g.length = f;
            g.in_channels = in_ch;
            g.weights = orthogonal_init(config.filters_per_length, f * in_ch, rng);
            g.biases.assign(config.filters_per_length, 0.0);
            block.bank.groups.push_back(std::move(g));
        }
        block.bn = BatchNormParams::make(m);
        if (block.kind == BlockKind::Type2) {
            const int skip_ch = (l == 1) ? config.input_channels : m;
            if (skip_ch != m) {
                Projection proj;
                proj.conv.length = 1;
                proj.conv.in_channels = skip_ch;
                proj.conv.weights = orthogonal_init(m, skip_ch, rng);
                proj.conv.biases.assign(m, 0.0);
                proj.bn = BatchNormParams::make(m);
                block.projection = std::move(proj);
            }
        }
        model.blocks.push_back(std::move(block));
    }
    model.freeze_mask.assign(config.num_blocks, false);
    if (precision == Precision::F32) quantize_params(model);
    return model;
}

Head make_head(const std::string& task_name, int num_classes, int embedding_dim,
               Rng& rng) {
    if (num_classes < 2) throw config_error("head: need at least two classes");
    Head h;
    h.task_name = task_name;
    h.weights = Mat(num_classes, embedding_dim);
    const double a = std::sqrt(6.0 / (embedding_dim + num_classes));
    for (double& v : h.weights.a) v = rng.uniform(-a, a);
    h.bias.assign(num_classes, 0.0);
    return h;
}

size_t param_count(const CtnModel& model) {
    size_t n = 0;
    for (const auto& block : model.blocks) {
        for (const auto& g : block.bank.groups)
            n += g.weights.size() + g.biases.size();
        n += block.bn.gamma.size() + block.bn.beta.size();
        if (block.projection) {
            n += block.projection->conv.weights.size() +
                 block.projection->conv.biases.size();
            n += block.projection->bn.gamma.size() + block.projection->bn.beta.size();
        }
    }
    return n;
}

size_t param_count(const Head& head) {
    return head.weights.size() + head.bias.size();
}

namespace {

size_t arch_param_count(const ArchConfig& config) {
    validate_arch(config);
    const int m = config.embedding_dim();
    const auto kinds = config.resolved_kinds();
    size_t n = 0;
    for (int l = 0; l < config.num_blocks; ++l) {
        const int in_ch = (l == 0) ? config.input_channels : m;
        for (int f : config.lengths)
            n += static_cast<size_t>(config.filters_per_length) * f * in_ch +
                 config.filters_per_length;
        n += 2 * static_cast<size_t>(m);
        if (kinds[l] == BlockKind::Type2) {
            const int skip_ch = (l == 1) ? config.input_channels : m;
            if (skip_ch != m) n += static_cast<size_t>(m) * skip_ch + m + 2 * static_cast<size_t>(m);
        }
    }
    return n;
}

}  // namespace

int matched_filter_count(int fixed_length, const ArchConfig& reference) {
    const size_t target = arch_param_count(reference);
    ArchConfig fixed = reference;
    fixed.lengths = {fixed_length};

    auto count_for = [&](int c) {
        fixed.filters_per_length = c;
        return arch_param_count(fixed);
    };

    int c = 1;
    while (count_for(c) < target) ++c;
    if (c == 1) return 1;
    const size_t hi = count_for(c), lo = count_for(c - 1);
    return (hi - target) < (target - lo) ? c : c - 1;
}

// ---- forward / backward ----

namespace {

void quantize_batch(Batch& batch) {
    for (Mat& m : batch) quantize_f32(std::span<double>(m.a));
}

void add_into(Batch& dst, Batch&& src) {
    if (dst.empty()) {
        dst = std::move(src);
        return;
    }
    for (size_t s = 0; s < dst.size(); ++s)
        for (size_t i = 0; i < dst[s].a.size(); ++i) dst[s].a[i] += src[s].a[i];
}

const Batch* skip_source(const ForwardCache& cache, int l) {
    return (l == 1) ? &cache.x0 : &cache.blocks[l - 2].out;
}

}  // namespace

void forward_batch(CtnModel& model, const SeriesBatch& series, Phase phase,
                   bool update_running, ForwardCache& cache) {
    if (series.empty()) throw dim_error("forward: empty batch");
    const size_t T = series[0]->size();
    if (T < 1) throw dim_error("forward: empty series");
    for (const auto* s : series)
        if (s->size() != T) throw dim_error("forward: batch series lengths differ");

    const int B = static_cast<int>(series.size());
    cache.x0.assign(B, Mat());
    for (int s = 0; s < B; ++s) {
        Mat x(static_cast<int>(T), 1);
        std::copy(series[s]->begin(), series[s]->end(), x.a.begin());
        cache.x0[s] = std::move(x);
    }

    const bool f32 = model.precision == Precision::F32;
    const int L = model.num_blocks();
    cache.blocks.assign(L, BlockCache());
    const Batch* prev = &cache.x0;
    for (int l = 0; l < L; ++l) {
        const Batch* skips = model.blocks[l].kind == BlockKind::Type2
                                 ? skip_source(cache, l)
                                 : nullptr;
        block_forward_batch(*prev, skips, model.blocks[l], phase, update_running,
                            &cache.blocks[l]);
        if (f32) quantize_batch(cache.blocks[l].out);
        prev = &cache.blocks[l].out;
    }

    cache.z.assign(B, {});
    for (int s = 0; s < B; ++s) {
        cache.z[s] = mean_over_time((*prev)[s]);
        if (f32) quantize_f32(std::span<double>(cache.z[s]));
    }
}

std::vector<double> forward_embed(CtnModel& model, const std::vector<double>& series,
                                  Phase phase) {
    ForwardCache cache;
    SeriesBatch batch{&series};
    forward_batch(model, batch, phase, phase == Phase::Train, cache);
    return std::move(cache.z[0]);
}

std::vector<double> forward_classify(CtnModel& model, const Head& head,
                                     const std::vector<double>& series, Phase phase) {
    const auto z = forward_embed(model, series, phase);
    return softmax(affine(z, head.weights, head.bias));
}

ModelGrads make_model_grads(const CtnModel& model) {
    ModelGrads g;
    for (const auto& block : model.blocks) g.blocks.push_back(make_block_grads(block));
    return g;
}

HeadGrads make_head_grads(const Head& head) {
    HeadGrads g;
    g.weights = Mat(head.weights.rows, head.weights.cols);
    g.bias.assign(head.bias.size(), 0.0);
    return g;
}

BackwardResult backward(CtnModel& model, const Head& head, const SeriesBatch& batch,
                        const std::vector<int>& targets, Reduction reduction,
                        bool update_running) {
    if (batch.size() != targets.size())
        throw dim_error("backward: batch/target size mismatch");

    ForwardCache fc;
    forward_batch(model, batch, Phase::Train, update_running, fc);

    const int B = static_cast<int>(batch.size());
    const int m_L = model.embedding_dim();
    const int K = head.num_classes();

    BackwardResult res{make_model_grads(model), make_head_grads(head), {}};

    std::vector<std::vector<double>> probs(B);
    for (int s = 0; s < B; ++s)
        probs[s] = softmax(affine(fc.z[s], head.weights, head.bias));
    res.loss = cross_entropy_batch(probs, targets, reduction);

    const double scale = reduction == Reduction::Mean ? 1.0 / B : 1.0;

    // Head and embedding grads; d logits = (p - onehot) * scale.
    std::vector<std::vector<double>> dz(B, std::vector<double>(m_L, 0.0));
    for (int s = 0; s < B; ++s) {
        for (int k = 0; k < K; ++k) {
            const double d = (probs[s][k] - (k == targets[s] ? 1.0 : 0.0)) * scale;
            res.head_grads.bias[k] += d;
            double* gw = res.head_grads.weights.row(k);
            const double* wr = head.weights.row(k);
            for (int i = 0; i < m_L; ++i) {
                gw[i] += d * fc.z[s][i];
                dz[s][i] += d * wr[i];
            }
        }
    }

    // GAP backward: every time step shares dz/T.
    const int L = model.num_blocks();
    std::vector<Batch> grad_x(L + 1);
    grad_x[L].assign(B, Mat());
    for (int s = 0; s < B; ++s) {
        const int T = fc.blocks[L - 1].out[s].rows;
        Mat g(T, m_L);
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < m_L; ++c) g(t, c) = dz[s][c] / T;
        grad_x[L][s] = std::move(g);
    }

    for (int l = L - 1; l >= 0; --l) {
        const Batch& inputs = (l == 0) ? fc.x0 : fc.blocks[l - 1].out;
        const bool type2 = model.blocks[l].kind == BlockKind::Type2;
        const Batch* skips = type2 ? skip_source(fc, l) : nullptr;

        Batch gin, gskip;
        const bool want_input = l > 0;
        const bool want_skip = type2 && l > 1;
        block_backward(inputs, skips, model.blocks[l], fc.blocks[l], grad_x[l + 1],
                       &res.model_grads.blocks[l], want_input ? &gin : nullptr,
                       want_skip ? &gskip : nullptr, !model.freeze_mask[l]);
        if (want_input) add_into(grad_x[l], std::move(gin));
        if (want_skip && !gskip.empty()) add_into(grad_x[l - 1], std::move(gskip));
    }
    return res;
}

double loss_eval(CtnModel& model, const Head& head, const SeriesBatch& batch,
                 const std::vector<int>& targets, Reduction reduction, Phase phase,
                 bool update_running) {
    ForwardCache fc;
    forward_batch(model, batch, phase, update_running, fc);
    std::vector<std::vector<double>> probs(batch.size());
    for (size_t s = 0; s < batch.size(); ++s)
        probs[s] = softmax(affine(fc.z[s], head.weights, head.bias));
    return cross_entropy_batch(probs, targets, reduction).value;
}

// ---- parameter traversal ----

namespace {

void bank_entries(const std::string& prefix, FilterBank& bank, BankGrads* g,
                  bool frozen, std::vector<ParamEntry>& out) {
    for (size_t i = 0; i < bank.groups.size(); ++i) {
        auto& grp = bank.groups[i];
        const std::string base = prefix + ".len" + std::to_string(grp.length);
        out.push_back({base + ".w", &grp.weights.a,
                       g ? &g->weights[i].a : nullptr, frozen});
        out.push_back({base + ".b", &grp.biases, g ? &g->biases[i] : nullptr, frozen});
    }
}

}  // namespace

std::vector<ParamEntry> param_entries(CtnModel& model, ModelGrads* grads) {
    std::vector<ParamEntry> out;
    for (int l = 0; l < model.num_blocks(); ++l) {
        auto& block = model.blocks[l];
        BlockGrads* bg = grads ? &grads->blocks[l] : nullptr;
        const std::string prefix = "block" + std::to_string(l + 1);
        const bool frozen = model.freeze_mask[l];
        bank_entries(prefix, block.bank, bg ? &bg->bank : nullptr, frozen, out);
        out.push_back({prefix + ".bn.gamma", &block.bn.gamma,
                       bg ? &bg->bn.gamma : nullptr, false});
        out.push_back({prefix + ".bn.beta", &block.bn.beta,
                       bg ? &bg->bn.beta : nullptr, false});
        if (block.projection) {
            ProjGrads* pg = (bg && bg->proj) ? &*bg->proj : nullptr;
            out.push_back({prefix + ".proj.w", &block.projection->conv.weights.a,
                           pg ? &pg->weights.a : nullptr, frozen});
            out.push_back({prefix + ".proj.b", &block.projection->conv.biases,
                           pg ? &pg->biases : nullptr, frozen});
            out.push_back({prefix + ".proj_bn.gamma", &block.projection->bn.gamma,
                           pg ? &pg->bn.gamma : nullptr, false});
            out.push_back({prefix + ".proj_bn.beta", &block.projection->bn.beta,
                           pg ? &pg->bn.beta : nullptr, false});
        }
    }
    return out;
}

std::vector<ParamEntry> param_entries(Head& head, HeadGrads* grads) {
    std::vector<ParamEntry> out;
    const std::string prefix = "head." + head.task_name;
    out.push_back({prefix + ".w", &head.weights.a,
                   grads ? &grads->weights.a : nullptr, false});
    out.push_back({prefix + ".b", &head.bias, grads ? &grads->bias : nullptr, false});
    return out;
}

std::vector<ParamEntry> stat_entries(CtnModel& model) {
    std::vector<ParamEntry> out;
    for (int l = 0; l < model.num_blocks(); ++l) {
        auto& block = model.blocks[l];
        const std::string prefix = "block" + std::to_string(l + 1);
        out.push_back({prefix + ".bn.rmean", &block.bn.running_mean, nullptr, false});
        out.push_back({prefix + ".bn.rvar", &block.bn.running_var, nullptr, false});
        if (block.projection) {
            out.push_back({prefix + ".proj_bn.rmean",
                           &block.projection->bn.running_mean, nullptr, false});
            out.push_back({prefix + ".proj_bn.rvar",
                           &block.projection->bn.running_var, nullptr, false});
        }
    }
    return out;
}

uint64_t model_hash(CtnModel& model) {
    uint64_t h = 14695981039346656037ull;
    for (const auto& e : param_entries(model)) {
        h = fnv1a64(e.name.data(), e.name.size(), h);
        h = hash_doubles(*e.values, h);
    }
    for (const auto& e : stat_entries(model)) {
        h = fnv1a64(e.name.data(), e.name.size(), h);
        h = hash_doubles(*e.values, h);
    }
    return h;
}

uint64_t head_hash(Head& head) {
    uint64_t h = hash_doubles(head.weights.a);
    return hash_doubles(head.bias, h);
}

void quantize_params(CtnModel& model) {
    for (auto& e : param_entries(model)) quantize_f32(std::span<double>(*e.values));
    for (auto& e : stat_entries(model)) quantize_f32(std::span<double>(*e.values));
}

void quantize_params(Head& head) {
    quantize_f32(std::span<double>(head.weights.a));
    quantize_f32(std::span<double>(head.bias));
}

}  // namespace ctn
