#include "ctn/optim.hpp"

#include <cmath>
#include <cstring>

namespace ctn {

AdamResult adam_step(const std::vector<ParamEntry>& entries, AdamState& state,
                     Precision precision) {
    if (state.lr <= 0.0) throw config_error("adam: learning rate must be positive");

    AdamResult res;
    double sq = 0.0;
    for (const auto& e : entries) {
        if (e.frozen) continue;
        if (!e.grad) throw dim_error("adam: missing gradient for " + e.name);
        if (e.grad->size() != e.values->size())
            throw dim_error("adam: gradient shape mismatch for " + e.name);
        for (double g : *e.grad) {
            if (!std::isfinite(g)) return res;  // abort, nothing mutated
            sq += g * g;
        }
    }
    res.grad_norm = std::sqrt(sq);

    double scale = 1.0;
    if (state.clip_norm > 0.0 && res.grad_norm > state.clip_norm) {
        scale = state.clip_norm / res.grad_norm;
        res.clipped = true;
    }

    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));

    for (const auto& e : entries) {
        if (e.frozen) continue;
        auto& mom = state.moments[e.name];
        if (mom.m.empty()) {
            mom.m.assign(e.values->size(), 0.0);
            mom.v.assign(e.values->size(), 0.0);
        } else if (mom.m.size() != e.values->size()) {
            throw dim_error("adam: stale moment shape for " + e.name);
        }
        for (size_t i = 0; i < e.values->size(); ++i) {
            const double g = (*e.grad)[i] * scale;
            mom.m[i] = state.beta1 * mom.m[i] + (1.0 - state.beta1) * g;
            mom.v[i] = state.beta2 * mom.v[i] + (1.0 - state.beta2) * g * g;
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            double p = (*e.values)[i] - state.lr * mhat / (std::sqrt(vhat) + state.eps);
            if (precision == Precision::F32) p = quantize_f32(p);
            (*e.values)[i] = p;
        }
    }
    res.applied = true;
    return res;
}

FdReport finite_diff_check(CtnModel& model, Head& head, const SeriesBatch& batch,
                           const std::vector<int>& targets, double step_size,
                           double tolerance, Reduction reduction,
                           const BackwardResult* analytic_override) {
    BackwardResult computed;
    const BackwardResult* analytic = analytic_override;
    if (!analytic) {
        computed = backward(model, head, batch, targets, reduction, false);
        analytic = &computed;
    }

    // The override is const; walk a mutable mirror of its layout.
    auto& agrads = const_cast<BackwardResult&>(*analytic);
    auto model_entries = param_entries(model, &agrads.model_grads);
    auto head_entries = param_entries(head, &agrads.head_grads);
    std::vector<ParamEntry> entries = model_entries;
    entries.insert(entries.end(), head_entries.begin(), head_entries.end());

    FdReport report;
    report.tolerance = tolerance;

    auto probe = [&](double& p, double h) {
        const double saved = p;
        p = saved + h;
        const double up =
            loss_eval(model, head, batch, targets, reduction, Phase::Train, false);
        p = saved - h;
        const double down =
            loss_eval(model, head, batch, targets, reduction, Phase::Train, false);
        p = saved;
        return (up - down) / (2.0 * h);
    };
    auto rel_err = [](double a, double n) {
        return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
    };

    for (auto& e : entries) {
        FdGroupReport g;
        g.name = e.name;
        g.frozen = e.frozen;
        for (size_t i = 0; i < e.values->size(); ++i) {
            const double a = (*e.grad)[i];
            g.max_abs_analytic = std::max(g.max_abs_analytic, std::abs(a));
            double n = 0.0;
            if (!e.frozen) {  // frozen arrays must carry exactly zero gradient
                n = probe((*e.values)[i], step_size);
                if (rel_err(a, n) >= tolerance && std::abs(a) < 1e-6 &&
                    std::abs(n) < 1e-6) {
                    // Both sides sit at rounding-noise level. A wider step
                    // shrinks the noise proportionally while a real gradient
                    // would stay put (e.g. conv biases are cancelled exactly
                    // by the following BN, so their loss is constant).
                    n = probe((*e.values)[i], std::max(100.0 * step_size, 1e-3));
                }
            }
            g.max_rel_err = std::max(g.max_rel_err, rel_err(a, n));
        }
        report.max_rel_err = std::max(report.max_rel_err, g.max_rel_err);
        report.groups.push_back(std::move(g));
    }
    report.pass = report.max_rel_err < tolerance;
    return report;
}

// ---- serialization ----

namespace {

template <typename T>
void put(std::vector<unsigned char>& out, const T& v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(const std::vector<unsigned char>& in, size_t& off) {
    if (off + sizeof(T) > in.size()) throw data_error("adam state: truncated");
    T v;
    std::memcpy(&v, in.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

void put_doubles(std::vector<unsigned char>& out, const std::vector<double>& v) {
    put<uint64_t>(out, v.size());
    const auto* p = reinterpret_cast<const unsigned char*>(v.data());
    out.insert(out.end(), p, p + v.size() * sizeof(double));
}

std::vector<double> get_doubles(const std::vector<unsigned char>& in, size_t& off) {
    const auto n = get<uint64_t>(in, off);
    if (off + n * sizeof(double) > in.size()) throw data_error("adam state: truncated");
    std::vector<double> v(n);
    std::memcpy(v.data(), in.data() + off, n * sizeof(double));
    off += n * sizeof(double);
    return v;
}

}  // namespace

std::vector<unsigned char> serialize_adam(const AdamState& state) {
    std::vector<unsigned char> out;
    put<double>(out, state.lr);
    put<double>(out, state.beta1);
    put<double>(out, state.beta2);
    put<double>(out, state.eps);
    put<double>(out, state.clip_norm);
    put<int64_t>(out, state.t);
    put<uint64_t>(out, state.moments.size());
    for (const auto& [name, mom] : state.moments) {
        put<uint64_t>(out, name.size());
        out.insert(out.end(), name.begin(), name.end());
        put_doubles(out, mom.m);
        put_doubles(out, mom.v);
    }
    return out;
}

AdamState deserialize_adam(const std::vector<unsigned char>& bytes) {
    size_t off = 0;
    AdamState s;
    s.lr = get<double>(bytes, off);
    s.beta1 = get<double>(bytes, off);
    s.beta2 = get<double>(bytes, off);
    s.eps = get<double>(bytes, off);
    s.clip_norm = get<double>(bytes, off);
    s.t = get<int64_t>(bytes, off);
    const auto n = get<uint64_t>(bytes, off);
    for (uint64_t i = 0; i < n; ++i) {
        const auto len = get<uint64_t>(bytes, off);
        if (off + len > bytes.size()) throw data_error("adam state: truncated");
        std::string name(bytes.begin() + off, bytes.begin() + off + len);
        off += len;
        AdamState::Moments mom;
        mom.m = get_doubles(bytes, off);
        mom.v = get_doubles(bytes, off);
        s.moments.emplace(std::move(name), std::move(mom));
    }
    return s;
}

}  // namespace ctn
