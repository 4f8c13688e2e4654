#pragma once

#include <optional>
#include <vector>

#include "ctn/conv.hpp"
#include "ctn/matrix.hpp"

namespace ctn {

enum class Phase { Train, Infer };
enum class Reduction { Sum, Mean };

// A batch of feature maps, one [T x m] matrix per sample. All maps in a
// batch share m; T is uniform within one training batch.
using Batch = std::vector<Mat>;

// Filters of one length, stored as a matrix with one flattened [f x m_in]
// filter per row. This is also the layout the orthogonal initializer works on.
struct FilterGroup {
    int length = 1;
    int in_channels = 1;
    Mat weights;                 // [count x f*m_in]
    std::vector<double> biases;  // [count]

    int count() const { return weights.rows; }
};

// Multi-length filter bank; groups ascend by length, output channel order is
// groups in that order, filters stable within a group.
struct FilterBank {
    std::vector<FilterGroup> groups;

    int in_channels() const { return groups.empty() ? 0 : groups.front().in_channels; }
    int out_channels() const {
        int n = 0;
        for (const auto& g : groups) n += g.count();
        return n;
    }
    // Materialize filter k (bank channel order) as a standalone ConvFilter.
    ConvFilter filter(int k) const;
};

struct BatchNormParams {
    std::vector<double> gamma, beta;
    std::vector<double> running_mean, running_var;
    double eps = 1e-5;
    double momentum = 0.1;

    int channels() const { return static_cast<int>(gamma.size()); }
    static BatchNormParams make(int channels, double eps = 1e-5, double momentum = 0.1);
};

enum class BlockKind { Type1, Type2 };

// 1x1 channel projection on the residual path, with its own BN.
struct Projection {
    FilterGroup conv;  // length 1, m_skip -> m_l
    BatchNormParams bn;
};

struct ConvBlock {
    BlockKind kind = BlockKind::Type1;
    FilterBank bank;
    BatchNormParams bn;
    std::optional<Projection> projection;  // Type2 only, present iff channel counts differ

    int out_channels() const { return bank.out_channels(); }
};

// ---- gradients ----

struct BankGrads {
    std::vector<Mat> weights;                // per group, [count x f*m_in]
    std::vector<std::vector<double>> biases; // per group
};

struct BnGrads {
    std::vector<double> gamma, beta;
};

struct ProjGrads {
    Mat weights;
    std::vector<double> biases;
    BnGrads bn;
};

struct BlockGrads {
    BankGrads bank;
    BnGrads bn;
    std::optional<ProjGrads> proj;
};

// ---- forward caches ----

struct BnStats {
    std::vector<double> mean, var, inv_std;  // stats used by the forward pass
    bool batch_stats = true;                 // false when running stats were used
};

struct BlockCache {
    Batch conv_out;   // Y, pre-BN
    BnStats bn;
    Batch proj_out;   // projection conv output, pre its BN (Type2 w/ projection)
    BnStats proj_bn;
    Batch out;        // X_l, post-ReLU (doubles as the ReLU mask)
};

// ---- operations ----

// Column k of the result is conv1d_same(x, bank.filter(k)).
Mat filterbank_forward(const Mat& x, const FilterBank& bank);
void filterbank_forward_batch(const Batch& xs, const FilterBank& bank, Batch& out);

// Accumulates weight/bias grads over the whole batch; per-sample input grads.
// Weight grads are skipped when want_weight_grads is false (frozen block).
void filterbank_backward(const Batch& xs, const FilterBank& bank,
                         const Batch& upstream, BankGrads* grads,
                         Batch* grad_inputs);

// Train mode pools statistics over batch x time per channel and (optionally)
// updates running stats; infer mode normalizes with running stats.
Batch batchnorm_forward(const Batch& batch, BatchNormParams& bn, Phase phase,
                        bool update_running = true, BnStats* cache = nullptr);

void batchnorm_backward(const Batch& inputs, const BnStats& stats,
                        const BatchNormParams& bn, const Batch& upstream,
                        BnGrads* grads, Batch* grad_inputs);

// skips: required for Type2 (the block's X_{l-2}), ignored for Type1.
Batch block_forward_batch(const Batch& inputs, const Batch* skips,
                          ConvBlock& block, Phase phase,
                          bool update_running = true, BlockCache* cache = nullptr);

// Single-map convenience wrapper (batch of one).
Mat block_forward(const Mat& x_prev, const Mat* x_skip, ConvBlock& block, Phase phase);

// grad_skips is filled only for Type2 (same shapes as the skip input).
void block_backward(const Batch& inputs, const Batch* skips,
                    const ConvBlock& block, const BlockCache& cache,
                    const Batch& upstream, BlockGrads* grads,
                    Batch* grad_inputs, Batch* grad_skips,
                    bool want_weight_grads = true);

std::vector<double> softmax(const std::vector<double>& logits);

struct CeLoss {
    double value = 0.0;
    int clamped = 0;  // evaluations that hit the log-probability floor
};

CeLoss cross_entropy_batch(const std::vector<std::vector<double>>& probs,
                           const std::vector<int>& targets, Reduction reduction);

BankGrads make_bank_grads(const FilterBank& bank);
BlockGrads make_block_grads(const ConvBlock& block);

}  // namespace ctn
