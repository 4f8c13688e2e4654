#pragma once

#include <map>
#include <string>
#include <vector>

#include "ctn/matrix.hpp"
#include "ctn/rng.hpp"

namespace ctn {

struct TimeSeriesSample {
    std::vector<double> values;
    int label = 0;
};

// Ground-truth pattern location, kept by the generators so occlusion results
// can be validated against where the signal actually is.
struct Segment {
    int start = 0;
    int len = 0;
    int kind = 0;  // 0 = up ramp, 1 = down ramp
};

struct Dataset {
    std::string name;
    std::vector<TimeSeriesSample> samples;
    int num_classes = 0;
    int series_length = 0;
    std::string split;                  // "train", "test", ...
    std::map<double, int> label_map;    // original label -> contiguous index
    std::vector<std::vector<Segment>> segments;  // per sample; empty if unknown
    int num_constant = 0;               // series hit by the sigma=0 guard

    int size() const { return static_cast<int>(samples.size()); }
};

enum class Delim { Tab, Comma };

// In-place z-normalization; returns false when the sigma=0 guard zeroed the
// series instead.
bool z_normalize(std::vector<double>& values);

// Row format: label v1 ... vT. Labels are remapped to 0..K-1 by ascending
// original value; each series is z-normalized independently.
Dataset load_ucr_file(const std::string& path, Delim delim,
                      std::vector<std::string>* warnings = nullptr);

// Same, but reuses (and extends) an existing label map, e.g. a test split
// loaded against its train split. Unseen labels are appended and reported.
Dataset load_ucr_file(const std::string& path, Delim delim,
                      std::map<double, int> label_map,
                      std::vector<std::string>* warnings);

void write_ucr_file(const Dataset& dataset, const std::string& path, Delim delim);

void write_segments_file(const Dataset& dataset, const std::string& path);
std::vector<std::vector<Segment>> load_segments_file(const std::string& path);

// n batches of b indices; uniform with replacement by default. The
// without-replacement mode reshuffles whole passes over the dataset.
std::vector<std::vector<int>> sample_batches(const Dataset& dataset, int n, int b,
                                             Rng& rng, bool with_replacement = true);

// Four classes from the ordered pair of (up|down) ramps placed on two
// disjoint random windows over Gaussian noise. Window widths default to 0.1T
// each; the width knobs produce the mixed-time-scale variants.
Dataset gen_two_patterns(int num_samples, int T, double noise_std, Rng& rng,
                         double w1_frac = 0.1, double w2_frac = 0.1);

// Cylinder-bell-funnel, classic definitions. eta_std/eps_std expose the
// amplitude/additive noise scales (1 = standard).
Dataset gen_cbf(int num_samples, int T, Rng& rng, double eta_std = 1.0,
                double eps_std = 1.0);

// ---- manifest ----

struct ManifestEntry {
    std::string name;
    std::string role;  // source | validation | target
    std::string train_path;
    std::string test_path;  // optional for sources
    Delim delim = Delim::Tab;
    bool merge_splits = true;  // sources: pool train+test for pretraining
};

std::vector<ManifestEntry> load_manifest(const std::string& path);

uint64_t file_hash(const std::string& path);

}  // namespace ctn
