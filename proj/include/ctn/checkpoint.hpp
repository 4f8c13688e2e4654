#pragma once

#include <map>
#include <string>
#include <vector>

#include "ctn/model.hpp"
#include "ctn/optim.hpp"

namespace ctn {

// Binary model container. Layout: "CTN1" magic, u32 format version, u64
// header length, JSON header (array names + shapes + metadata), then the
// payload in header order. Parameter and running-stat arrays are float32
// little-endian row-major; optimizer state is an opaque float64 blob so a
// reloaded state reproduces updates exactly.
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    CtnModel model;
    std::vector<Head> heads;
    std::map<std::string, AdamState> optimizers;  // "core", "head.<task>"
    uint64_t rng_seed = 0;
    int64_t epoch = -1;
    uint64_t source_hash = 0;
};

void save_checkpoint(const std::string& path, CtnModel& model,
                     std::vector<Head>* heads = nullptr,
                     const std::map<std::string, AdamState>* optimizers = nullptr,
                     uint64_t rng_seed = 0, int64_t epoch = -1,
                     uint64_t source_hash = 0);

CheckpointData load_checkpoint(const std::string& path);

}  // namespace ctn
