// Kernel benchmark: serial reference loops vs the optimized OpenMP kernels,
// at 1 thread and at the full thread count, with an agreement check.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ctn/blocks.hpp"
#include "ctn/model.hpp"
#include "ctn/reference.hpp"
#include "ctn/rng.hpp"

using namespace ctn;

namespace {

double seconds(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    return dt.count() / reps;
}

void set_threads(int n) {
#ifdef _OPENMP
    omp_set_num_threads(n);
#else
    (void)n;
#endif
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

struct Row {
    std::string name;
    double serial, one, many;
    double max_diff;
};

void print(const Row& r, int threads) {
    std::printf("%-28s %10.3f ms %10.3f ms %10.3f ms   x%.2f (%d thr)   max|d|=%.2e\n",
                r.name.c_str(), r.serial * 1e3, r.one * 1e3, r.many * 1e3,
                r.many > 0 ? r.serial / r.many : 0.0, threads, r.max_diff);
}

}  // namespace

int main(int argc, char** argv) {
    int reps = 5;
    if (argc > 1) reps = std::atoi(argv[1]);
    const int threads = max_threads();

    Rng rng(7);
    const int T = 512;
    const int B = 16;

    ArchConfig arch;
    arch.filters_per_length = 33;  // paper-scale bank, m = 165
    CtnModel model = build_ctn(arch, rng);
    FilterBank& bank = model.blocks[1].bank;  // 165 in, 165 out
    const int m = bank.out_channels();

    Batch xs;
    for (int s = 0; s < B; ++s) {
        Mat x(T, m);
        for (double& v : x.a) v = rng.gaussian();
        xs.push_back(std::move(x));
    }
    Batch upstream;
    for (int s = 0; s < B; ++s) {
        Mat u(T, m);
        for (double& v : u.a) v = rng.gaussian();
        upstream.push_back(std::move(u));
    }

    std::printf("%-28s %13s %13s %13s\n", "kernel (B=16, T=512, m=165)", "serial ref",
                "1 thread", "all threads");

    {  // bank forward, single map
        std::vector<Mat> ref_out(1);
        Row r{"filterbank_forward (1 map)", 0, 0, 0, 0};
        r.serial = seconds(
            [&] {
                Mat out(T, m);
                for (int k = 0; k < m; ++k) {
                    const auto col = ref::conv1d_same(xs[0], bank.filter(k));
                    for (int t = 0; t < T; ++t) out(t, k) = col[t];
                }
                ref_out[0] = std::move(out);
            },
            1);
        Batch fast;
        set_threads(1);
        r.one = seconds([&] { filterbank_forward_batch({xs[0]}, bank, fast); }, reps);
        set_threads(threads);
        r.many = seconds([&] { filterbank_forward_batch({xs[0]}, bank, fast); }, reps);
        for (size_t i = 0; i < fast[0].a.size(); ++i)
            r.max_diff = std::max(r.max_diff, std::abs(fast[0].a[i] - ref_out[0].a[i]));
        print(r, threads);
    }

    {  // bank forward, batch
        Row r{"filterbank_forward (batch)", 0, 0, 0, 0};
        Batch ref_out(B);
        r.serial = seconds(
            [&] {
                for (int s = 0; s < B; ++s) {
                    Mat out(T, m);
                    for (int k = 0; k < m; ++k) {
                        const auto col = ref::conv1d_same(xs[s], bank.filter(k));
                        for (int t = 0; t < T; ++t) out(t, k) = col[t];
                    }
                    ref_out[s] = std::move(out);
                }
            },
            1);
        Batch fast;
        set_threads(1);
        r.one = seconds([&] { filterbank_forward_batch(xs, bank, fast); }, reps);
        set_threads(threads);
        r.many = seconds([&] { filterbank_forward_batch(xs, bank, fast); }, reps);
        for (int s = 0; s < B; ++s)
            for (size_t i = 0; i < fast[s].a.size(); ++i)
                r.max_diff = std::max(r.max_diff, std::abs(fast[s].a[i] - ref_out[s].a[i]));
        print(r, threads);
    }

    {  // bank backward
        Row r{"filterbank_backward (batch)", 0, 0, 0, 0};
        BankGrads ref_grads = make_bank_grads(bank);
        Batch ref_gin(B);
        r.serial = seconds(
            [&] {
                ref_grads = make_bank_grads(bank);
                for (int s = 0; s < B; ++s) ref_gin[s] = Mat(T, m);
                int k = 0;
                for (size_t g = 0; g < bank.groups.size(); ++g)
                    for (int rrow = 0; rrow < bank.groups[g].count(); ++rrow, ++k) {
                        const ConvFilter f = bank.filter(k);
                        for (int s = 0; s < B; ++s) {
                            std::vector<double> u(T);
                            for (int t = 0; t < T; ++t) u[t] = upstream[s](t, k);
                            const auto gr = ref::conv1d_grads(xs[s], f, u);
                            for (size_t i = 0; i < gr.grad_weights.size(); ++i)
                                ref_grads.weights[g].row(rrow)[i] += gr.grad_weights[i];
                            ref_grads.biases[g][rrow] += gr.grad_bias;
                            for (size_t i = 0; i < gr.grad_input.a.size(); ++i)
                                ref_gin[s].a[i] += gr.grad_input.a[i];
                        }
                    }
            },
            1);
        BankGrads grads;
        Batch gin;
        auto run = [&] {
            grads = make_bank_grads(bank);
            filterbank_backward(xs, bank, upstream, &grads, &gin);
        };
        set_threads(1);
        r.one = seconds(run, reps);
        set_threads(threads);
        r.many = seconds(run, reps);
        for (size_t g = 0; g < grads.weights.size(); ++g)
            for (size_t i = 0; i < grads.weights[g].a.size(); ++i)
                r.max_diff = std::max(
                    r.max_diff, std::abs(grads.weights[g].a[i] - ref_grads.weights[g].a[i]));
        for (int s = 0; s < B; ++s)
            for (size_t i = 0; i < gin[s].a.size(); ++i)
                r.max_diff =
                    std::max(r.max_diff, std::abs(gin[s].a[i] - ref_gin[s].a[i]));
        print(r, threads);
    }

    {  // batch norm forward
        Row r{"batchnorm_forward (batch)", 0, 0, 0, 0};
        BatchNormParams bn = BatchNormParams::make(m);
        Batch ref_out;
        r.serial = seconds(
            [&] { ref_out = ref::batchnorm_train(xs, bn.gamma, bn.beta, bn.eps); },
            reps);
        Batch fast;
        set_threads(1);
        r.one = seconds([&] { fast = batchnorm_forward(xs, bn, Phase::Train, false); },
                        reps);
        set_threads(threads);
        r.many = seconds([&] { fast = batchnorm_forward(xs, bn, Phase::Train, false); },
                         reps);
        for (int s = 0; s < B; ++s)
            for (size_t i = 0; i < fast[s].a.size(); ++i)
                r.max_diff =
                    std::max(r.max_diff, std::abs(fast[s].a[i] - ref_out[s].a[i]));
        print(r, threads);
    }

    // Determinism across thread counts.
    {
        Batch one_thread, many_threads;
        set_threads(1);
        filterbank_forward_batch(xs, bank, one_thread);
        set_threads(threads);
        filterbank_forward_batch(xs, bank, many_threads);
        bool identical = true;
        for (int s = 0; s < B; ++s)
            for (size_t i = 0; i < one_thread[s].a.size(); ++i)
                identical &= one_thread[s].a[i] == many_threads[s].a[i];
        std::printf("\nthread-count invariance: %s\n",
                    identical ? "bitwise identical" : "MISMATCH");
    }
    return 0;
}
