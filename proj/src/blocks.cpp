#include "ctn/blocks.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ctn {

ConvFilter FilterBank::filter(int k) const {
    int i = k;
    for (const auto& g : groups) {
        if (i < g.count()) {
            ConvFilter f(g.length, g.in_channels);
            const double* row = g.weights.row(i);
            f.weights.assign(row, row + g.weights.cols);
            f.bias = g.biases[i];
            return f;
        }
        i -= g.count();
    }
    throw dim_error("filter index out of range");
}

BatchNormParams BatchNormParams::make(int channels, double eps, double momentum) {
    BatchNormParams bn;
    bn.gamma.assign(channels, 1.0);
    bn.beta.assign(channels, 0.0);
    bn.running_mean.assign(channels, 0.0);
    bn.running_var.assign(channels, 1.0);
    bn.eps = eps;
    bn.momentum = momentum;
    return bn;
}

namespace {

struct FilterIndex {
    int group;
    int row;
};

std::vector<FilterIndex> bank_index(const FilterBank& bank) {
    std::vector<FilterIndex> idx;
    idx.reserve(bank.out_channels());
    for (int g = 0; g < static_cast<int>(bank.groups.size()); ++g)
        for (int r = 0; r < bank.groups[g].count(); ++r) idx.push_back({g, r});
    return idx;
}

}  // namespace

Mat filterbank_forward(const Mat& x, const FilterBank& bank) {
    Batch out;
    filterbank_forward_batch(Batch{x}, bank, out);
    return std::move(out[0]);
}

void filterbank_forward_batch(const Batch& xs, const FilterBank& bank, Batch& out) {
    if (xs.empty()) throw dim_error("filterbank_forward: empty batch");
    const int m_out = bank.out_channels();
    for (const Mat& x : xs) {
        if (x.cols != bank.in_channels())
            throw dim_error("filterbank_forward: channel mismatch");
        require_finite(x, "filterbank input");
    }

    const auto idx = bank_index(bank);
    const int B = static_cast<int>(xs.size());

    out.assign(B, Mat());
    for (int s = 0; s < B; ++s) out[s] = Mat(xs[s].rows, m_out);

#pragma omp parallel for collapse(2) schedule(static)
    for (int s = 0; s < B; ++s) {
        for (int k = 0; k < m_out; ++k) {
            const FilterGroup& g = bank.groups[idx[k].group];
            conv1d_same_into(xs[s], g.length, g.weights.row(idx[k].row),
                             g.biases[idx[k].row], out[s].a.data() + k, m_out);
        }
    }
}

void filterbank_backward(const Batch& xs, const FilterBank& bank,
                         const Batch& upstream, BankGrads* grads,
                         Batch* grad_inputs) {
    const int B = static_cast<int>(xs.size());
    const int m_in = bank.in_channels();
    const int m_out = bank.out_channels();
    const auto idx = bank_index(bank);

    if (grads) {
        // dL/dw and dL/db, independent per filter: parallel over filters,
        // serial over samples and time so the sum order is fixed.
#pragma omp parallel for schedule(static)
        for (int k = 0; k < m_out; ++k) {
            const FilterGroup& g = bank.groups[idx[k].group];
            const int f = g.length;
            const int p = pad_left(f);
            double* gw = grads->weights[idx[k].group].row(idx[k].row);
            double gb = grads->biases[idx[k].group][idx[k].row];
            for (int s = 0; s < B; ++s) {
                const int T = xs[s].rows;
                for (int t = 0; t < T; ++t) {
                    const double u = upstream[s](t, k);
                    gb += u;
                    if (u == 0.0) continue;
                    const int j0 = std::max(0, p - t);
                    const int j1 = std::min(f, T + p - t);
                    const double* xr = xs[s].row(t + j0 - p);
                    double* gwr = gw + static_cast<size_t>(j0) * m_in;
                    for (int i = 0; i < (j1 - j0) * m_in; ++i) gwr[i] += u * xr[i];
                }
            }
            grads->biases[idx[k].group][idx[k].row] = gb;
        }
    }

    if (grad_inputs) {
        grad_inputs->assign(B, Mat());
        for (int s = 0; s < B; ++s) (*grad_inputs)[s] = Mat(xs[s].rows, m_in);
        // Gather form: each (sample, time) row of the input gradient is
        // produced by exactly one iteration, so the result does not depend
        // on the thread count.
#pragma omp parallel for collapse(2) schedule(static)
        for (int s = 0; s < B; ++s) {
            for (int t = 0; t < xs[0].rows; ++t) {
                const int T = xs[s].rows;
                double* gx = (*grad_inputs)[s].row(t);
                for (int k = 0; k < m_out; ++k) {
                    const FilterGroup& g = bank.groups[idx[k].group];
                    const int f = g.length;
                    const int p = pad_left(f);
                    const double* w = g.weights.row(idx[k].row);
                    const int j0 = std::max(0, t + p - T + 1);
                    const int j1 = std::min(f, t + p + 1);
                    for (int j = j0; j < j1; ++j) {
                        const double u = upstream[s](t - j + p, k);
                        if (u == 0.0) continue;
                        const double* wr = w + static_cast<size_t>(j) * m_in;
                        for (int c = 0; c < m_in; ++c) gx[c] += u * wr[c];
                    }
                }
            }
        }
    }
}

namespace {

// Pooled per-channel mean/var over batch x time; per-sample partial sums are
// combined in sample order so stats are independent of the thread count.
void pooled_stats(const Batch& batch, std::vector<double>& mean,
                  std::vector<double>& var) {
    const int m = batch[0].cols;
    const int B = static_cast<int>(batch.size());
    size_t count = 0;
    for (const Mat& x : batch) count += static_cast<size_t>(x.rows);

    std::vector<std::vector<double>> partial(B, std::vector<double>(m, 0.0));
#pragma omp parallel for schedule(static)
    for (int s = 0; s < B; ++s) {
        for (int t = 0; t < batch[s].rows; ++t) {
            const double* r = batch[s].row(t);
            for (int c = 0; c < m; ++c) partial[s][c] += r[c];
        }
    }
    mean.assign(m, 0.0);
    for (int s = 0; s < B; ++s)
        for (int c = 0; c < m; ++c) mean[c] += partial[s][c];
    for (int c = 0; c < m; ++c) mean[c] /= static_cast<double>(count);

#pragma omp parallel for schedule(static)
    for (int s = 0; s < B; ++s) {
        std::fill(partial[s].begin(), partial[s].end(), 0.0);
        for (int t = 0; t < batch[s].rows; ++t) {
            const double* r = batch[s].row(t);
            for (int c = 0; c < m; ++c) {
                const double d = r[c] - mean[c];
                partial[s][c] += d * d;
            }
        }
    }
    var.assign(m, 0.0);
    for (int s = 0; s < B; ++s)
        for (int c = 0; c < m; ++c) var[c] += partial[s][c];
    for (int c = 0; c < m; ++c) var[c] /= static_cast<double>(count);
}

}  // namespace

Batch batchnorm_forward(const Batch& batch, BatchNormParams& bn, Phase phase,
                        bool update_running, BnStats* cache) {
    if (batch.empty()) throw dim_error("batchnorm_forward: empty batch");
    const int m = bn.channels();
    for (const Mat& x : batch) {
        if (x.cols != m) throw dim_error("batchnorm_forward: channel mismatch");
        if (x.rows < 1) throw dim_error("batchnorm_forward: empty map");
    }

    BnStats stats;
    if (phase == Phase::Train) {
        pooled_stats(batch, stats.mean, stats.var);
        stats.batch_stats = true;
        if (update_running) {
            for (int c = 0; c < m; ++c) {
                bn.running_mean[c] = (1.0 - bn.momentum) * bn.running_mean[c] +
                                     bn.momentum * stats.mean[c];
                bn.running_var[c] = (1.0 - bn.momentum) * bn.running_var[c] +
                                    bn.momentum * stats.var[c];
            }
        }
    } else {
        stats.mean = bn.running_mean;
        stats.var = bn.running_var;
        stats.batch_stats = false;
    }
    stats.inv_std.resize(m);
    for (int c = 0; c < m; ++c) stats.inv_std[c] = 1.0 / std::sqrt(stats.var[c] + bn.eps);

    Batch out(batch.size());
    const int B = static_cast<int>(batch.size());
#pragma omp parallel for schedule(static)
    for (int s = 0; s < B; ++s) {
        out[s] = Mat(batch[s].rows, m);
        for (int t = 0; t < batch[s].rows; ++t) {
            const double* x = batch[s].row(t);
            double* y = out[s].row(t);
            for (int c = 0; c < m; ++c)
                y[c] = bn.gamma[c] * (x[c] - stats.mean[c]) * stats.inv_std[c] + bn.beta[c];
        }
    }
    if (cache) *cache = std::move(stats);
    return out;
}

void batchnorm_backward(const Batch& inputs, const BnStats& stats,
                        const BatchNormParams& bn, const Batch& upstream,
                        BnGrads* grads, Batch* grad_inputs) {
    const int m = bn.channels();
    const int B = static_cast<int>(inputs.size());
    size_t count = 0;
    for (const Mat& x : inputs) count += static_cast<size_t>(x.rows);
    const double inv_count = 1.0 / static_cast<double>(count);

    // s1[c] = sum dy, s2[c] = sum dy * xhat
    std::vector<double> s1(m, 0.0), s2(m, 0.0);
    for (int s = 0; s < B; ++s) {
        for (int t = 0; t < inputs[s].rows; ++t) {
            const double* x = inputs[s].row(t);
            const double* dy = upstream[s].row(t);
            for (int c = 0; c < m; ++c) {
                s1[c] += dy[c];
                s2[c] += dy[c] * (x[c] - stats.mean[c]) * stats.inv_std[c];
            }
        }
    }
    if (grads) {
        for (int c = 0; c < m; ++c) {
            grads->gamma[c] += s2[c];
            grads->beta[c] += s1[c];
        }
    }
    if (!grad_inputs) return;

    grad_inputs->assign(B, Mat());
#pragma omp parallel for schedule(static)
    for (int s = 0; s < B; ++s) {
        (*grad_inputs)[s] = Mat(inputs[s].rows, m);
        for (int t = 0; t < inputs[s].rows; ++t) {
            const double* x = inputs[s].row(t);
            const double* dy = upstream[s].row(t);
            double* dx = (*grad_inputs)[s].row(t);
            if (stats.batch_stats) {
                for (int c = 0; c < m; ++c) {
                    const double xhat = (x[c] - stats.mean[c]) * stats.inv_std[c];
                    dx[c] = bn.gamma[c] * stats.inv_std[c] *
                            (dy[c] - s1[c] * inv_count - xhat * s2[c] * inv_count);
                }
            } else {
                for (int c = 0; c < m; ++c)
                    dx[c] = bn.gamma[c] * stats.inv_std[c] * dy[c];
            }
        }
    }
}

Batch block_forward_batch(const Batch& inputs, const Batch* skips,
                          ConvBlock& block, Phase phase, bool update_running,
                          BlockCache* cache) {
    const bool type2 = block.kind == BlockKind::Type2;
    if (type2 && !skips) throw dim_error("block_forward: Type2 block needs a skip input");

    Batch conv_out;
    filterbank_forward_batch(inputs, block.bank, conv_out);

    BnStats bn_stats;
    Batch y = batchnorm_forward(conv_out, block.bn, phase, update_running, &bn_stats);

    Batch proj_out;
    BnStats proj_stats;
    const Batch* skip_term = nullptr;
    Batch projected;
    if (type2) {
        const int m_out = block.out_channels();
        if (block.projection) {
            FilterBank proj_bank;
            proj_bank.groups.push_back(block.projection->conv);
            filterbank_forward_batch(*skips, proj_bank, proj_out);
            projected = batchnorm_forward(proj_out, block.projection->bn, phase,
                                          update_running, &proj_stats);
            skip_term = &projected;
        } else {
            if ((*skips)[0].cols != m_out)
                throw dim_error("block_forward: skip channels differ but no projection");
            skip_term = skips;
        }
        for (size_t s = 0; s < y.size(); ++s)
            if (!y[s].same_shape((*skip_term)[s]))
                throw dim_error("block_forward: skip shape mismatch after projection");
    }

    const int B = static_cast<int>(y.size());
    Batch out(y.size());
#pragma omp parallel for schedule(static)
    for (int s = 0; s < B; ++s) {
        out[s] = Mat(y[s].rows, y[s].cols);
        const double* add = skip_term ? (*skip_term)[s].a.data() : nullptr;
        for (size_t i = 0; i < y[s].a.size(); ++i) {
            const double v = y[s].a[i] + (add ? add[i] : 0.0);
            out[s].a[i] = v > 0.0 ? v : 0.0;
        }
    }

    if (cache) {
        cache->conv_out = std::move(conv_out);
        cache->bn = std::move(bn_stats);
        cache->proj_out = std::move(proj_out);
        cache->proj_bn = std::move(proj_stats);
        cache->out = out;
    }
    return out;
}

Mat block_forward(const Mat& x_prev, const Mat* x_skip, ConvBlock& block, Phase phase) {
    Batch skips;
    if (x_skip) skips.push_back(*x_skip);
    Batch out = block_forward_batch(Batch{x_prev}, x_skip ? &skips : nullptr,
                                    block, phase);
    return std::move(out[0]);
}

void block_backward(const Batch& inputs, const Batch* skips,
                    const ConvBlock& block, const BlockCache& cache,
                    const Batch& upstream, BlockGrads* grads,
                    Batch* grad_inputs, Batch* grad_skips,
                    bool want_weight_grads) {
    const bool type2 = block.kind == BlockKind::Type2;
    const int B = static_cast<int>(inputs.size());

    // ReLU: the stored output doubles as the mask.
    Batch d_sum(upstream.size());
#pragma omp parallel for schedule(static)
    for (int s = 0; s < B; ++s) {
        d_sum[s] = Mat(upstream[s].rows, upstream[s].cols);
        for (size_t i = 0; i < upstream[s].a.size(); ++i)
            d_sum[s].a[i] = cache.out[s].a[i] > 0.0 ? upstream[s].a[i] : 0.0;
    }

    // Main path: BN then bank.
    Batch d_conv;
    batchnorm_backward(cache.conv_out, cache.bn, block.bn, d_sum,
                       grads ? &grads->bn : nullptr, &d_conv);
    filterbank_backward(inputs, block.bank, d_conv,
                        (grads && want_weight_grads) ? &grads->bank : nullptr,
                        grad_inputs);

    // Residual path. Projection parameter grads are needed even when the
    // caller has no use for the skip-input gradient.
    if (type2) {
        if (block.projection) {
            Batch d_proj;
            BnGrads* pbn = (grads && grads->proj) ? &grads->proj->bn : nullptr;
            batchnorm_backward(cache.proj_out, cache.proj_bn, block.projection->bn,
                               d_sum, pbn, &d_proj);
            FilterBank proj_bank;
            proj_bank.groups.push_back(block.projection->conv);
            BankGrads proj_bank_grads;
            BankGrads* pg = nullptr;
            if (grads && grads->proj && want_weight_grads) {
                proj_bank_grads.weights.push_back(grads->proj->weights);
                proj_bank_grads.biases.push_back(grads->proj->biases);
                pg = &proj_bank_grads;
            }
            filterbank_backward(*skips, proj_bank, d_proj, pg, grad_skips);
            if (pg) {
                grads->proj->weights = std::move(proj_bank_grads.weights[0]);
                grads->proj->biases = std::move(proj_bank_grads.biases[0]);
            }
        } else if (grad_skips) {
            *grad_skips = d_sum;
        }
    }
}

std::vector<double> softmax(const std::vector<double>& logits) {
    if (logits.empty()) throw dim_error("softmax: empty logits");
    require_finite(std::span<const double>(logits), "softmax logits");
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (size_t k = 0; k < logits.size(); ++k) {
        out[k] = std::exp(logits[k] - mx);
        sum += out[k];
    }
    for (double& v : out) v /= sum;
    return out;
}

CeLoss cross_entropy_batch(const std::vector<std::vector<double>>& probs,
                           const std::vector<int>& targets, Reduction reduction) {
    if (probs.size() != targets.size())
        throw dim_error("cross_entropy_batch: batch size mismatch");
    if (probs.empty()) throw dim_error("cross_entropy_batch: empty batch");

    constexpr double kFloor = 1e-12;
    CeLoss loss;
    for (size_t i = 0; i < probs.size(); ++i) {
        if (targets[i] < 0 || targets[i] >= static_cast<int>(probs[i].size()))
            throw dim_error("cross_entropy_batch: target out of range");
        double p = probs[i][targets[i]];
        if (p < kFloor) {
            p = kFloor;
            ++loss.clamped;
        }
        loss.value -= std::log(p);
    }
    if (reduction == Reduction::Mean) loss.value /= static_cast<double>(probs.size());
    return loss;
}

BankGrads make_bank_grads(const FilterBank& bank) {
    BankGrads g;
    for (const auto& grp : bank.groups) {
        g.weights.emplace_back(grp.weights.rows, grp.weights.cols);
        g.biases.emplace_back(grp.count(), 0.0);
    }
    return g;
}

BlockGrads make_block_grads(const ConvBlock& block) {
    BlockGrads g;
    g.bank = make_bank_grads(block.bank);
    g.bn.gamma.assign(block.bn.channels(), 0.0);
    g.bn.beta.assign(block.bn.channels(), 0.0);
    if (block.projection) {
        ProjGrads p;
        p.weights = Mat(block.projection->conv.weights.rows,
                        block.projection->conv.weights.cols);
        p.biases.assign(block.projection->conv.count(), 0.0);
        p.bn.gamma.assign(block.projection->bn.channels(), 0.0);
        p.bn.beta.assign(block.projection->bn.channels(), 0.0);
        g.proj = std::move(p);
    }
    return g;
}

}  // namespace ctn
