#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ctn/data.hpp"
#include "ctn/model.hpp"
#include "ctn/optim.hpp"

namespace ctn {

struct PretrainConfig {
    int max_train_epochs = 200;
    int batches_per_dataset = 5;  // n
    int batch_size = 16;          // b
    double lr = 0.002;
    int max_val_epochs = 50;
    double val_lr = 0.002;
    int validate_every = 1;  // per-epoch validation is the stated procedure
    uint64_t seed = 0;
    Reduction reduction = Reduction::Mean;
    bool with_replacement = true;
    bool parallel_validation = true;
};

struct FinetuneConfig {
    int iterations = 12000;
    double lr = 2e-4;
    int batch_size = 16;
    int freeze_depth = 0;  // leading blocks with frozen conv (BN stays trainable)
    uint64_t seed = 0;
    int smooth_window = 50;  // <=1 selects on raw per-iteration loss
    Reduction reduction = Reduction::Mean;
};

// A held-out task used for validation-by-fine-tuning: its train split is
// partitioned 75/25 into fine-tune/validate, the test split scores it.
struct ValidationTask {
    std::string name;
    Dataset train;
    Dataset test;
};

struct EpochRecord {
    int epoch = 0;
    double val_loss = 0.0;  // NaN when this epoch was not validated
    std::vector<double> per_dataset_loss;
    uint64_t model_hash = 0;
    bool diverged = false;
};

struct TraceRow {
    int epoch = 0;
    int iteration = 0;  // global iteration counter
    std::string dataset;
    double loss = 0.0;
};

struct PretrainHooks {
    // After every optimizer step.
    std::function<void(int epoch, int iteration, int dataset_idx, double loss,
                       CtnModel& model, std::vector<Head>& heads)>
        on_iteration;
    // After every epoch (including non-validated ones).
    std::function<void(const EpochRecord&, CtnModel& model, std::vector<Head>& heads,
                       const AdamState& core_adam)>
        on_epoch;
};

struct PretrainResult {
    CtnModel best_model;
    std::vector<Head> best_heads;
    int best_epoch = -1;  // -1: fell back to the final epoch (no validation)
    double best_val_loss = 0.0;
    std::vector<EpochRecord> records;
    std::vector<TraceRow> trace;
    bool diverged = false;
    int clamped = 0;
};

// Multi-head training over the source set with per-epoch validation-by-
// fine-tuning and checkpoint selection at the minimum validation loss.
PretrainResult pretrain(const std::vector<Dataset>& sources,
                        const std::vector<ValidationTask>& validation,
                        const CtnModel& init, const PretrainConfig& config,
                        const PretrainHooks* hooks = nullptr);

// Scores one checkpoint: each validation task fine-tunes a private copy and
// reports its test loss at the epoch with minimum validation-partition loss.
// Returns (mean, per-task losses). The checkpoint itself is never touched.
std::pair<double, std::vector<double>> validate_by_finetune(
    const CtnModel& checkpoint, const std::vector<ValidationTask>& validation,
    const PretrainConfig& config, uint64_t stream);

struct FinetuneResult {
    CtnModel model;
    Head head;
    std::vector<double> loss_trace;  // raw per-iteration training loss
    int best_iteration = -1;
    bool diverged = false;
    int clamped = 0;
};

// Joint fine-tuning of the backbone and a fresh head on a target task;
// returns the parameters at the iteration with minimum (smoothed) training
// loss.
FinetuneResult finetune_target(const CtnModel& pretrained, const Dataset& target,
                               const FinetuneConfig& config);

// Fraction of misclassified test samples; argmax prediction, ties resolved
// to the lowest class index.
double evaluate(CtnModel& model, const Head& head, const Dataset& test);

int predict(CtnModel& model, const Head& head, const std::vector<double>& series);

// Mean cross-entropy over a dataset (inference mode unless told otherwise).
double dataset_loss(CtnModel& model, const Head& head, const Dataset& data,
                    Phase phase = Phase::Infer);

}  // namespace ctn
