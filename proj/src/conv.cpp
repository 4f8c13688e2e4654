#include "ctn/conv.hpp"

#include <algorithm>

namespace ctn {

namespace {

// Four-lane dot product. The summation order is fixed by the expression
// tree, so results are reproducible run to run, and the independent
// accumulators let the compiler pipeline or vectorize the loop.
double dot(const double* a, const double* b, int n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    double tail = 0.0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((s0 + s1) + (s2 + s3)) + tail;
}

}  // namespace

void conv1d_same_into(const Mat& input, int f, const double* w, double bias,
                      double* out, int out_stride) {
    const int T = input.rows;
    const int m = input.cols;
    const int p = pad_left(f);
    const double* x = input.a.data();

    // Interior positions see the full tap range; the sum collapses to one
    // contiguous dot product of length f*m because both the filter and the
    // feature map are row-major over (tap, channel).
    const int t_lo = std::min(std::max(p, 0), T);
    const int t_hi = std::max(std::min(T - f + p + 1, T), t_lo);

    for (int t = 0; t < t_lo; ++t) {
        const int j0 = p - t;  // first in-range tap
        const int j1 = std::min(f, T + p - t);
        const double* xr = x + static_cast<size_t>(t + j0 - p) * m;
        const double* wr = w + static_cast<size_t>(j0) * m;
        out[static_cast<size_t>(t) * out_stride] = bias + dot(wr, xr, (j1 - j0) * m);
    }
    const int n = f * m;
    for (int t = t_lo; t < t_hi; ++t) {
        const double* xr = x + static_cast<size_t>(t - p) * m;
        out[static_cast<size_t>(t) * out_stride] = bias + dot(w, xr, n);
    }
    for (int t = t_hi; t < T; ++t) {
        const int j0 = std::max(0, p - t);
        const int j1 = std::min(f, T + p - t);
        double acc = bias;
        if (j1 > j0) {
            const double* xr = x + static_cast<size_t>(t + j0 - p) * m;
            const double* wr = w + static_cast<size_t>(j0) * m;
            acc += dot(wr, xr, (j1 - j0) * m);
        }
        out[static_cast<size_t>(t) * out_stride] = acc;
    }
}

std::vector<double> conv1d_same(const Mat& input, const ConvFilter& filter) {
    if (input.cols != filter.in_channels)
        throw dim_error("conv1d_same: input has " + std::to_string(input.cols) +
                        " channels, filter expects " + std::to_string(filter.in_channels));
    if (input.rows < 1) throw dim_error("conv1d_same: empty input");
    require_finite(input, "conv1d_same input");

    std::vector<double> out(input.rows);
    conv1d_same_into(input, filter.length, filter.weights.data(), filter.bias,
                     out.data(), 1);
    return out;
}

ConvGrads conv1d_grads(const Mat& input, const ConvFilter& filter,
                       const std::vector<double>& upstream) {
    if (input.cols != filter.in_channels)
        throw dim_error("conv1d_grads: channel mismatch");
    if (static_cast<int>(upstream.size()) != input.rows)
        throw dim_error("conv1d_grads: upstream length != T");

    const int T = input.rows;
    const int m = input.cols;
    const int f = filter.length;
    const int p = pad_left(f);

    ConvGrads g;
    g.grad_input = Mat(T, m);
    g.grad_weights.assign(static_cast<size_t>(f) * m, 0.0);

    for (int t = 0; t < T; ++t) g.grad_bias += upstream[t];

    // dL/dw[j,c] = sum_t u[t] * x[t+j-p, c]
    for (int j = 0; j < f; ++j) {
        const int t0 = std::max(0, p - j);
        const int t1 = std::min(T, T + p - j);
        double* gw = g.grad_weights.data() + static_cast<size_t>(j) * m;
        for (int t = t0; t < t1; ++t) {
            const double u = upstream[t];
            if (u == 0.0) continue;
            const double* xr = input.row(t + j - p);
            for (int c = 0; c < m; ++c) gw[c] += u * xr[c];
        }
    }

    // dL/dx[s,c] = sum_j u[s-j+p] * w[j,c]
    for (int s = 0; s < T; ++s) {
        const int j0 = std::max(0, s + p - T + 1);
        const int j1 = std::min(f, s + p + 1);
        double* gx = g.grad_input.row(s);
        for (int j = j0; j < j1; ++j) {
            const double u = upstream[s - j + p];
            if (u == 0.0) continue;
            const double* wr = filter.weights.data() + static_cast<size_t>(j) * m;
            for (int c = 0; c < m; ++c) gx[c] += u * wr[c];
        }
    }
    return g;
}

std::vector<double> affine(const std::vector<double>& z, const Mat& weights,
                           const std::vector<double>& bias) {
    if (static_cast<int>(z.size()) != weights.cols)
        throw dim_error("affine: input dim != weight cols");
    if (static_cast<int>(bias.size()) != weights.rows)
        throw dim_error("affine: bias dim != weight rows");
    require_finite(std::span<const double>(z), "affine input");

    std::vector<double> out(weights.rows);
    for (int k = 0; k < weights.rows; ++k) {
        double acc = bias[k];
        const double* wr = weights.row(k);
        for (size_t i = 0; i < z.size(); ++i) acc += wr[i] * z[i];
        out[k] = acc;
    }
    return out;
}

std::vector<double> mean_over_time(const Mat& x) {
    if (x.rows < 1) throw dim_error("mean_over_time: empty input");
    std::vector<double> out(x.cols, 0.0);
    for (int t = 0; t < x.rows; ++t) {
        const double* r = x.row(t);
        for (int c = 0; c < x.cols; ++c) out[c] += r[c];
    }
    const double inv = 1.0 / x.rows;
    for (double& v : out) v *= inv;
    return out;
}

}  // namespace ctn
