#pragma once

// Serial reference implementations: naive direct-sum loops with explicit
// bounds checks, no blocking, no OpenMP. Tests compare the optimized kernels
// against these, and the benchmark tool measures the gap. Nothing in the
// main library links against this.

#include <vector>

#include "ctn/conv.hpp"
#include "ctn/matrix.hpp"

namespace ctn::ref {

std::vector<double> conv1d_same(const Mat& input, const ConvFilter& filter);

ConvGrads conv1d_grads(const Mat& input, const ConvFilter& filter,
                       const std::vector<double>& upstream);

std::vector<double> affine(const std::vector<double>& z, const Mat& weights,
                           const std::vector<double>& bias);

std::vector<double> mean_over_time(const Mat& x);

std::vector<double> softmax(const std::vector<double>& logits);

// Train-mode batch normalization, two-pass statistics, no running update.
std::vector<Mat> batchnorm_train(const std::vector<Mat>& batch,
                                 const std::vector<double>& gamma,
                                 const std::vector<double>& beta, double eps);

}  // namespace ctn::ref
