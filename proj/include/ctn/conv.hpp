#pragma once

#include <vector>

#include "ctn/matrix.hpp"

namespace ctn {

// 1-D cross-correlation filter over m_in channels with a scalar bias.
struct ConvFilter {
    int length = 1;       // f
    int in_channels = 1;  // m_{l-1}
    std::vector<double> weights;  // [f x m_in] row-major, w[j*m_in + c]
    double bias = 0.0;

    ConvFilter() = default;
    ConvFilter(int f, int m_in)
        : length(f), in_channels(m_in),
          weights(static_cast<size_t>(f) * m_in, 0.0) {}
};

// Same-length padding: p_left taps reach back, p_right reach forward.
inline int pad_left(int f) { return (f - 1) / 2; }
inline int pad_right(int f) { return f / 2; }

struct ConvGrads {
    Mat grad_input;                   // [T x m_in]
    std::vector<double> grad_weights; // [f x m_in]
    double grad_bias = 0.0;
};

// out[t] = b + sum_{j,c} w[j,c] * x[t+j-p_left, c], zero outside [0,T).
// Writes T values spaced out_stride apart starting at out.
void conv1d_same_into(const Mat& input, int f, const double* w, double bias,
                      double* out, int out_stride);

std::vector<double> conv1d_same(const Mat& input, const ConvFilter& filter);

// Gradients of sum_t upstream[t]*out[t] w.r.t. input, weights, bias.
ConvGrads conv1d_grads(const Mat& input, const ConvFilter& filter,
                       const std::vector<double>& upstream);

// out[k] = bias[k] + sum_i weights[k,i] * z[i]
std::vector<double> affine(const std::vector<double>& z, const Mat& weights,
                           const std::vector<double>& bias);

// Per-channel mean over the time axis (GAP).
std::vector<double> mean_over_time(const Mat& x);

}  // namespace ctn
