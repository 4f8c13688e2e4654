#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ctn/blocks.hpp"
#include "ctn/matrix.hpp"
#include "ctn/rng.hpp"

namespace ctn {

enum class Precision { F32, F64 };

struct ArchConfig {
    int num_blocks = 4;
    std::vector<int> lengths = {4, 8, 16, 32, 64};
    int filters_per_length = 33;
    std::vector<BlockKind> kinds;  // empty: Type1 at odd blocks, Type2 at even
    int input_channels = 1;

    int embedding_dim() const {
        return static_cast<int>(lengths.size()) * filters_per_length;
    }
    std::vector<BlockKind> resolved_kinds() const;
};

struct CtnModel {
    ArchConfig arch;
    std::vector<ConvBlock> blocks;
    std::vector<bool> freeze_mask;  // conv arrays of block l frozen? BN stays trainable
    Precision precision = Precision::F64;
    std::string name = "ctn";
    uint64_t seed = 0;

    int num_blocks() const { return static_cast<int>(blocks.size()); }
    int embedding_dim() const { return blocks.back().out_channels(); }
};

struct Head {
    std::string task_name;
    Mat weights;               // [K x m_L]
    std::vector<double> bias;  // [K]

    int num_classes() const { return weights.rows; }
};

struct HeadGrads {
    Mat weights;
    std::vector<double> bias;
};

struct ModelGrads {
    std::vector<BlockGrads> blocks;
};

// ---- construction ----

// Rows orthonormal when rows <= cols, else columns; modified Gram-Schmidt on
// a standard-normal matrix, positive diagonal so the result is unique.
Mat orthogonal_init(int rows, int cols, Rng& rng);

CtnModel build_ctn(const ArchConfig& config, Rng& rng,
                   Precision precision = Precision::F64);

Head make_head(const std::string& task_name, int num_classes, int embedding_dim,
               Rng& rng);

size_t param_count(const CtnModel& model);
size_t param_count(const Head& head);

// Filter count for a single-length variant of `f` whose parameter count is
// closest to the reference architecture's.
int matched_filter_count(int fixed_length, const ArchConfig& reference);

// ---- forward / backward ----

struct ForwardCache {
    Batch x0;                          // network inputs as [T x 1] maps
    std::vector<BlockCache> blocks;    // block l output = blocks[l].out
    std::vector<std::vector<double>> z;       // GAP embeddings
    std::vector<std::vector<double>> probs;   // filled by classify variants
};

using SeriesBatch = std::vector<const std::vector<double>*>;

// Runs all blocks + GAP over a batch. Caller keeps the cache for backward.
void forward_batch(CtnModel& model, const SeriesBatch& series, Phase phase,
                   bool update_running, ForwardCache& cache);

std::vector<double> forward_embed(CtnModel& model, const std::vector<double>& series,
                                  Phase phase);

std::vector<double> forward_classify(CtnModel& model, const Head& head,
                                     const std::vector<double>& series, Phase phase);

// Cross-entropy gradients for one batch. Train-mode BN; running stats update
// only when update_running (finite differencing turns it off). Frozen blocks
// get zero conv grads, BN grads always flow.
struct BackwardResult {
    ModelGrads model_grads;
    HeadGrads head_grads;
    CeLoss loss;
};

BackwardResult backward(CtnModel& model, const Head& head, const SeriesBatch& batch,
                        const std::vector<int>& targets,
                        Reduction reduction = Reduction::Mean,
                        bool update_running = true);

// Loss evaluation only (no gradients); same BN semantics as backward().
double loss_eval(CtnModel& model, const Head& head, const SeriesBatch& batch,
                 const std::vector<int>& targets, Reduction reduction,
                 Phase phase, bool update_running = false);

ModelGrads make_model_grads(const CtnModel& model);
HeadGrads make_head_grads(const Head& head);

// ---- parameter traversal (deterministic order) ----

struct ParamEntry {
    std::string name;
    std::vector<double>* values = nullptr;
    std::vector<double>* grad = nullptr;  // null when no grads requested
    bool frozen = false;
};

std::vector<ParamEntry> param_entries(CtnModel& model, ModelGrads* grads = nullptr);
std::vector<ParamEntry> param_entries(Head& head, HeadGrads* grads = nullptr);

// Running BN statistics (not trainable, persisted in checkpoints).
std::vector<ParamEntry> stat_entries(CtnModel& model);

uint64_t model_hash(CtnModel& model);  // params + running stats
uint64_t head_hash(Head& head);

// Round every parameter through float storage (float32 precision mode).
void quantize_params(CtnModel& model);
void quantize_params(Head& head);

}  // namespace ctn
