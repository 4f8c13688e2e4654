#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ctn/model.hpp"

namespace ctn {

struct AdamState {
    double lr = 0.002;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.0;  // 0 = no clipping
    int64_t t = 0;
    // per-array moments keyed by parameter name
    struct Moments {
        std::vector<double> m, v;
    };
    std::map<std::string, Moments> moments;
};

struct AdamResult {
    bool applied = false;   // false: non-finite gradient, step aborted
    bool clipped = false;
    double grad_norm = 0.0;
};

// Bias-corrected Adam over one parameter family. Frozen arrays are skipped
// entirely (no moment update, no write). t advances once per applied call.
AdamResult adam_step(const std::vector<ParamEntry>& entries, AdamState& state,
                     Precision precision = Precision::F64);

// ---- gradient verification ----

struct FdGroupReport {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_analytic = 0.0;
    bool frozen = false;
};

struct FdReport {
    std::vector<FdGroupReport> groups;
    double max_rel_err = 0.0;
    bool pass = true;
    double tolerance = 0.0;
};

// Central differences of the training loss against analytic gradients, per
// parameter group. |a-n| / max(|a|,|n|,1e-8), maximum over components.
// Frozen groups are verified to have exactly zero analytic gradient and are
// skipped by the numeric probe. analytic_override substitutes the gradients
// under test (fault-injection hook).
FdReport finite_diff_check(CtnModel& model, Head& head, const SeriesBatch& batch,
                           const std::vector<int>& targets, double step_size,
                           double tolerance,
                           Reduction reduction = Reduction::Mean,
                           const BackwardResult* analytic_override = nullptr);

// ---- state persistence (raw bytes; embedded in checkpoints) ----

std::vector<unsigned char> serialize_adam(const AdamState& state);
AdamState deserialize_adam(const std::vector<unsigned char>& bytes);

}  // namespace ctn
