#include "ctn/reference.hpp"

#include <cmath>

namespace ctn::ref {

std::vector<double> conv1d_same(const Mat& input, const ConvFilter& filter) {
    const int T = input.rows;
    const int m = input.cols;
    const int f = filter.length;
    const int p = pad_left(f);

    std::vector<double> out(T, 0.0);
    for (int t = 0; t < T; ++t) {
        double acc = filter.bias;
        for (int j = 0; j < f; ++j) {
            const int idx = t + j - p;
            if (idx < 0 || idx >= T) continue;
            for (int c = 0; c < m; ++c)
                acc += filter.weights[static_cast<size_t>(j) * m + c] * input(idx, c);
        }
        out[t] = acc;
    }
    return out;
}

ConvGrads conv1d_grads(const Mat& input, const ConvFilter& filter,
                       const std::vector<double>& upstream) {
    const int T = input.rows;
    const int m = input.cols;
    const int f = filter.length;
    const int p = pad_left(f);

    ConvGrads g;
    g.grad_input = Mat(T, m);
    g.grad_weights.assign(static_cast<size_t>(f) * m, 0.0);

    for (int t = 0; t < T; ++t) {
        g.grad_bias += upstream[t];
        for (int j = 0; j < f; ++j) {
            const int idx = t + j - p;
            if (idx < 0 || idx >= T) continue;
            for (int c = 0; c < m; ++c) {
                g.grad_weights[static_cast<size_t>(j) * m + c] += upstream[t] * input(idx, c);
                g.grad_input(idx, c) += upstream[t] * filter.weights[static_cast<size_t>(j) * m + c];
            }
        }
    }
    return g;
}

std::vector<double> affine(const std::vector<double>& z, const Mat& weights,
                           const std::vector<double>& bias) {
    std::vector<double> out(weights.rows, 0.0);
    for (int k = 0; k < weights.rows; ++k) {
        out[k] = bias[k];
        for (int i = 0; i < weights.cols; ++i) out[k] += weights(k, i) * z[i];
    }
    return out;
}

std::vector<double> mean_over_time(const Mat& x) {
    std::vector<double> out(x.cols, 0.0);
    for (int c = 0; c < x.cols; ++c) {
        double s = 0.0;
        for (int t = 0; t < x.rows; ++t) s += x(t, c);
        out[c] = s / x.rows;
    }
    return out;
}

std::vector<double> softmax(const std::vector<double>& logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (size_t k = 0; k < logits.size(); ++k) {
        out[k] = std::exp(logits[k] - mx);
        sum += out[k];
    }
    for (double& v : out) v /= sum;
    return out;
}

std::vector<Mat> batchnorm_train(const std::vector<Mat>& batch,
                                 const std::vector<double>& gamma,
                                 const std::vector<double>& beta, double eps) {
    const int m = batch[0].cols;
    size_t n = 0;
    for (const Mat& x : batch) n += static_cast<size_t>(x.rows);

    std::vector<Mat> out;
    out.reserve(batch.size());
    for (const Mat& x : batch) out.emplace_back(x.rows, x.cols);

    for (int c = 0; c < m; ++c) {
        double mean = 0.0;
        for (const Mat& x : batch)
            for (int t = 0; t < x.rows; ++t) mean += x(t, c);
        mean /= static_cast<double>(n);

        double var = 0.0;
        for (const Mat& x : batch)
            for (int t = 0; t < x.rows; ++t) {
                const double d = x(t, c) - mean;
                var += d * d;
            }
        var /= static_cast<double>(n);

        const double inv = 1.0 / std::sqrt(var + eps);
        for (size_t i = 0; i < batch.size(); ++i)
            for (int t = 0; t < batch[i].rows; ++t)
                out[i](t, c) = gamma[c] * (batch[i](t, c) - mean) * inv + beta[c];
    }
    return out;
}

}  // namespace ctn::ref
