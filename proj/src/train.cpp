#include "ctn/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ctn {

namespace {

void gather_batch(const Dataset& data, const std::vector<int>& indices,
                  SeriesBatch& batch, std::vector<int>& targets) {
    batch.clear();
    targets.clear();
    for (int idx : indices) {
        batch.push_back(&data.samples[idx].values);
        targets.push_back(data.samples[idx].label);
    }
}

double subset_loss(CtnModel& model, const Head& head, const Dataset& data,
                   const std::vector<int>& indices, Phase phase) {
    if (indices.empty()) throw data_error("loss over empty partition");
    constexpr int kChunk = 64;
    double total = 0.0;
    for (size_t at = 0; at < indices.size(); at += kChunk) {
        SeriesBatch batch;
        std::vector<int> targets;
        const size_t end = std::min(indices.size(), at + kChunk);
        for (size_t i = at; i < end; ++i) {
            batch.push_back(&data.samples[indices[i]].values);
            targets.push_back(data.samples[indices[i]].label);
        }
        total += loss_eval(model, head, batch, targets, Reduction::Sum, phase, false);
    }
    return total / static_cast<double>(indices.size());
}

std::vector<int> all_indices(const Dataset& data) {
    std::vector<int> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

// Per-class 75/25 split so small validation tasks keep every class on both
// sides where possible.
void stratified_split(const Dataset& data, double train_fraction, Rng& rng,
                      std::vector<int>& train_idx, std::vector<int>& val_idx) {
    std::vector<std::vector<int>> per_class(data.num_classes);
    for (int i = 0; i < data.size(); ++i) per_class[data.samples[i].label].push_back(i);
    for (auto& cls : per_class) {
        std::shuffle(cls.begin(), cls.end(), rng.engine());
        const auto n_train = static_cast<size_t>(
            std::lround(train_fraction * static_cast<double>(cls.size())));
        for (size_t i = 0; i < cls.size(); ++i)
            (i < n_train ? train_idx : val_idx).push_back(cls[i]);
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
    if (train_idx.empty() || val_idx.empty())
        throw data_error("stratified split produced an empty partition");
}

// One optimizer family over backbone + head, as used by fine-tuning.
AdamResult joint_adam_step(CtnModel& model, Head& head, BackwardResult& grads,
                           AdamState& adam) {
    auto entries = param_entries(model, &grads.model_grads);
    auto head_entries = param_entries(head, &grads.head_grads);
    entries.insert(entries.end(), head_entries.begin(), head_entries.end());
    return adam_step(entries, adam, model.precision);
}

}  // namespace

double dataset_loss(CtnModel& model, const Head& head, const Dataset& data,
                    Phase phase) {
    return subset_loss(model, head, data, all_indices(data), phase);
}

int predict(CtnModel& model, const Head& head, const std::vector<double>& series) {
    const auto probs = forward_classify(model, head, series, Phase::Infer);
    int best = 0;
    for (int k = 1; k < static_cast<int>(probs.size()); ++k)
        if (probs[k] > probs[best]) best = k;
    return best;
}

double evaluate(CtnModel& model, const Head& head, const Dataset& test) {
    if (test.size() < 1) throw data_error("evaluate: empty test set");
    int wrong = 0;
    const int n = test.size();
#pragma omp parallel for schedule(dynamic) reduction(+ : wrong)
    for (int i = 0; i < n; ++i) {
        if (predict(model, head, test.samples[i].values) != test.samples[i].label)
            ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(n);
}

namespace {

double validate_one(const CtnModel& checkpoint, const ValidationTask& task,
                    const PretrainConfig& config, uint64_t seed) {
    if (task.train.size() < 1 || task.test.size() < 1)
        throw data_error("validation task '" + task.name + "' has an empty partition");

    Rng rng(seed);
    CtnModel model = checkpoint;
    std::vector<int> ft_idx, val_idx;
    stratified_split(task.train, 0.75, rng, ft_idx, val_idx);

    Head head = make_head(task.name, task.train.num_classes, model.embedding_dim(), rng);
    AdamState adam;
    adam.lr = config.val_lr;

    double best_val = std::numeric_limits<double>::infinity();
    CtnModel best_model = model;
    Head best_head = head;

    SeriesBatch batch;
    std::vector<int> targets;
    for (int epoch = 0; epoch < config.max_val_epochs; ++epoch) {
        std::shuffle(ft_idx.begin(), ft_idx.end(), rng.engine());
        for (size_t at = 0; at < ft_idx.size(); at += config.batch_size) {
            const size_t end = std::min(ft_idx.size(), at + config.batch_size);
            std::vector<int> chunk(ft_idx.begin() + at, ft_idx.begin() + end);
            gather_batch(task.train, chunk, batch, targets);
            auto res = backward(model, head, batch, targets, config.reduction, true);
            if (!std::isfinite(res.loss.value))
                throw numeric_error("validation fine-tuning diverged on " + task.name);
            joint_adam_step(model, head, res, adam);
        }
        const double vloss = subset_loss(model, head, task.train, val_idx, Phase::Infer);
        if (vloss < best_val) {
            best_val = vloss;
            best_model = model;
            best_head = head;
        }
    }
    return subset_loss(best_model, best_head, task.test, all_indices(task.test),
                       Phase::Infer);
}

}  // namespace

std::pair<double, std::vector<double>> validate_by_finetune(
    const CtnModel& checkpoint, const std::vector<ValidationTask>& validation,
    const PretrainConfig& config, uint64_t stream) {
    if (validation.empty()) throw config_error("validate_by_finetune: no tasks");

    const int v = static_cast<int>(validation.size());
    std::vector<double> losses(v, 0.0);
    std::exception_ptr error;
    // Independent model copies per task; per-task seeds keep the result
    // identical whatever the schedule.
#pragma omp parallel for schedule(dynamic) if (config.parallel_validation)
    for (int k = 0; k < v; ++k) {
        try {
            losses[k] = validate_one(checkpoint, validation[k], config,
                                     Rng::mix(stream, static_cast<uint64_t>(k)));
        } catch (...) {
#pragma omp critical
            if (!error) error = std::current_exception();
        }
    }
    if (error) std::rethrow_exception(error);

    double mean = 0.0;
    for (double l : losses) mean += l;
    mean /= static_cast<double>(v);
    return {mean, losses};
}

PretrainResult pretrain(const std::vector<Dataset>& sources,
                        const std::vector<ValidationTask>& validation,
                        const CtnModel& init, const PretrainConfig& config,
                        const PretrainHooks* hooks) {
    if (sources.empty()) throw config_error("pretrain: empty source set");
    if (config.max_train_epochs < 1 || config.batches_per_dataset < 1 ||
        config.batch_size < 1 || config.validate_every < 1)
        throw config_error("pretrain: config values must be positive");

    PretrainResult result;
    CtnModel model = init;
    Rng rng(config.seed);

    const int S = static_cast<int>(sources.size());
    std::vector<Head> heads;
    std::vector<AdamState> head_adam(S);
    for (int j = 0; j < S; ++j) {
        heads.push_back(make_head(sources[j].name, sources[j].num_classes,
                                  model.embedding_dim(), rng));
        head_adam[j].lr = config.lr;
    }
    AdamState core_adam;
    core_adam.lr = config.lr;

    double best_val = std::numeric_limits<double>::infinity();
    int iteration = 0;
    bool halted = false;

    for (int epoch = 1; epoch <= config.max_train_epochs && !halted; ++epoch) {
        std::vector<int> order(S);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng.engine());

        EpochRecord record;
        record.epoch = epoch;
        record.val_loss = std::numeric_limits<double>::quiet_NaN();

        for (int j : order) {
            const auto batches =
                sample_batches(sources[j], config.batches_per_dataset,
                               config.batch_size, rng, config.with_replacement);
            SeriesBatch batch;
            std::vector<int> targets;
            for (const auto& idx : batches) {
                gather_batch(sources[j], idx, batch, targets);
                auto res = backward(model, heads[j], batch, targets, config.reduction, true);
                result.clamped += res.loss.clamped;
                bool ok = std::isfinite(res.loss.value);
                if (ok) {
                    auto core_entries = param_entries(model, &res.model_grads);
                    ok = adam_step(core_entries, core_adam, model.precision).applied;
                    if (ok) {
                        auto head_entries = param_entries(heads[j], &res.head_grads);
                        ok = adam_step(head_entries, head_adam[j], model.precision).applied;
                    }
                }
                if (!ok) {
                    record.diverged = true;
                    result.diverged = true;
                    halted = true;
                    break;
                }
                result.trace.push_back({epoch, iteration, sources[j].name, res.loss.value});
                if (hooks && hooks->on_iteration)
                    hooks->on_iteration(epoch, iteration, j, res.loss.value, model, heads);
                ++iteration;
            }
            if (halted) break;
        }

        record.model_hash = model_hash(model);
        const bool validate_now =
            !halted && !validation.empty() &&
            (epoch % config.validate_every == 0 || epoch == config.max_train_epochs);
        if (validate_now) {
            auto [vloss, per] = validate_by_finetune(
                model, validation, config,
                Rng::mix(config.seed, 0x76616cull ^ static_cast<uint64_t>(epoch)));
            record.val_loss = vloss;
            record.per_dataset_loss = per;
            if (vloss < best_val) {
                best_val = vloss;
                result.best_model = model;
                result.best_heads = heads;
                result.best_epoch = epoch;
                result.best_val_loss = vloss;
            }
        }
        result.records.push_back(record);
        if (hooks && hooks->on_epoch)
            hooks->on_epoch(record, model, heads, core_adam);
    }

    if (result.best_epoch < 0) {
        // No validated epoch (empty validation set or divergence before the
        // first validation): final state stands in for the selected one.
        result.best_model = std::move(model);
        result.best_heads = std::move(heads);
        result.best_val_loss = std::numeric_limits<double>::quiet_NaN();
    }
    return result;
}

FinetuneResult finetune_target(const CtnModel& pretrained, const Dataset& target,
                               const FinetuneConfig& config) {
    if (target.size() < 1) throw data_error("finetune: empty target train split");
    if (config.freeze_depth < 0 || config.freeze_depth > pretrained.num_blocks())
        throw config_error("finetune: freeze_depth out of range");
    if (config.iterations < 0 || config.batch_size < 1)
        throw config_error("finetune: bad iteration/batch settings");

    Rng rng(config.seed);
    FinetuneResult result;
    CtnModel model = pretrained;
    model.freeze_mask.assign(model.num_blocks(), false);
    for (int l = 0; l < config.freeze_depth; ++l) model.freeze_mask[l] = true;

    Head head = make_head(target.name, target.num_classes, model.embedding_dim(), rng);
    AdamState adam;
    adam.lr = config.lr;

    result.model = model;
    result.head = head;

    double best_smoothed = std::numeric_limits<double>::infinity();
    double window_sum = 0.0;
    const int window = std::max(1, config.smooth_window);

    SeriesBatch batch;
    std::vector<int> targets;
    std::vector<int> idx(config.batch_size);
    for (int it = 0; it < config.iterations; ++it) {
        for (int& i : idx) i = rng.uniform_int(0, target.size() - 1);
        gather_batch(target, idx, batch, targets);
        auto res = backward(model, head, batch, targets, config.reduction, true);
        result.clamped += res.loss.clamped;
        bool ok = std::isfinite(res.loss.value);
        if (ok) ok = joint_adam_step(model, head, res, adam).applied;
        if (!ok) {
            result.diverged = true;
            break;
        }
        result.loss_trace.push_back(res.loss.value);
        window_sum += res.loss.value;
        if (static_cast<int>(result.loss_trace.size()) > window)
            window_sum -= result.loss_trace[result.loss_trace.size() - 1 - window];
        const int have = std::min<int>(window, static_cast<int>(result.loss_trace.size()));
        const double smoothed = window_sum / have;
        if (smoothed < best_smoothed) {
            best_smoothed = smoothed;
            result.model = model;
            result.head = head;
            result.best_iteration = it;
        }
    }
    return result;
}

}  // namespace ctn
