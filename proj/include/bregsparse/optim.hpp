#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "bregsparse/error.hpp"
#include "bregsparse/param_store.hpp"
#include "bregsparse/prox.hpp"

namespace bregsparse {

using Rng = std::mt19937_64;

struct ProxSpec {
    Penalty penalty = Penalty::L1;
    double lambda = 0.0;
    double lambda_scale = 1.0;

    double threshold() const noexcept { return lambda * lambda_scale; }
};

/// One regularized tensor's slice of the dual vector.
struct DualSegment {
    std::size_t tensor = 0;
    std::size_t offset = 0;
    std::size_t size = 0;
    Penalty penalty = Penalty::L1;
    Partition groups;  // only filled for GroupNorm
    double lambda_scale = 1.0;

    ProxSpec spec(double lambda) const { return {penalty, lambda, lambda_scale}; }
};

/// Layout of the regularized parameters inside the flat dual vector.
struct DualLayout {
    std::vector<DualSegment> segments;
    std::size_t size = 0;

    static DualLayout from(const ParamStore& store) {
        DualLayout layout;
        for (std::size_t i = 0; i < store.num_tensors(); ++i) {
            const auto& t = store.tensor(i);
            if (!t.regularized) continue;
            DualSegment seg{i, layout.size, t.size(), t.penalty, {}, t.lambda_scale};
            if (t.penalty == Penalty::GroupNorm) seg.groups = groups_of(t);
            layout.size += t.size();
            layout.segments.push_back(std::move(seg));
        }
        return layout;
    }
};

/// How the primal iterate is recovered from the dual.
enum class ProxMode {
    Plain,     // prox of EN_lam: soft-threshold at lam
    Rescaled,  // (1/beta) prox_{beta|.|_1} with beta = lam
};

namespace detail {

template <typename Fn>
void for_each_segment(const DualLayout& layout, std::span<const double> in, std::span<double> out, Fn&& fn) {
    for (const auto& seg : layout.segments) {
        auto src = in.subspan(seg.offset, seg.size);
        auto res = fn(seg, src);
        std::copy(res.begin(), res.end(), out.begin() + static_cast<std::ptrdiff_t>(seg.offset));
    }
}

}  // namespace detail

inline std::vector<double> dual_to_primal(std::span<const double> p, const DualLayout& layout, double lambda,
                                          ProxMode mode = ProxMode::Plain) {
    require(p.size() == layout.size, ErrorCode::ShapeMismatch, "dual length != d_reg");
    require(lambda >= 0.0, ErrorCode::InvalidThreshold, "negative lambda");
    std::vector<double> theta(p.size());
    detail::for_each_segment(layout, p, theta, [&](const DualSegment& seg, std::span<const double> src) {
        const double thr = seg.spec(lambda).threshold();
        if (mode == ProxMode::Rescaled)
            return seg.penalty == Penalty::GroupNorm ? group_prox_rescaled(src, seg.groups, thr)
                                                     : prox_rescaled(src, thr);
        return seg.penalty == Penalty::GroupNorm ? group_soft_threshold(src, seg.groups, thr)
                                                 : soft_threshold(src, thr);
    });
    return theta;
}

/// A dual p0 that maps back to theta under `mode`. For Plain this is a
/// subgradient of EN_lam; for Rescaled it is beta times a subgradient of EN_1.
inline std::vector<double> init_dual(std::span<const double> theta, const DualLayout& layout, double lambda,
                                     ProxMode mode = ProxMode::Plain) {
    require(theta.size() == layout.size, ErrorCode::ShapeMismatch, "primal length != d_reg");
    std::vector<double> p(theta.size());
    detail::for_each_segment(layout, theta, p, [&](const DualSegment& seg, std::span<const double> src) {
        const double thr = seg.spec(lambda).threshold();
        const double inner = mode == ProxMode::Rescaled ? 1.0 : thr;
        auto res = seg.penalty == Penalty::GroupNorm ? group_init_subgradient(src, seg.groups, inner)
                                                     : init_subgradient(src, inner);
        if (mode == ProxMode::Rescaled)
            for (auto& v : res) v *= thr;
        return res;
    });
    return p;
}

inline bool is_dual_feasible(std::span<const double> p, std::span<const double> theta, const DualLayout& layout,
                             double lambda, double tol = kSubgradientTol) {
    if (p.size() != layout.size || theta.size() != layout.size) return false;
    for (const auto& seg : layout.segments) {
        auto ps = p.subspan(seg.offset, seg.size);
        auto ts = theta.subspan(seg.offset, seg.size);
        const double thr = seg.spec(lambda).threshold();
        const bool ok = seg.penalty == Penalty::GroupNorm ? is_group_subgradient(ps, ts, seg.groups, thr, tol)
                                                          : is_subgradient(ps, ts, thr, tol);
        if (!ok) return false;
    }
    return true;
}

/// Applies the subgradient correction segment-wise with the effective
/// (scaled) lambdas.
inline std::vector<double> correct_dual(std::span<const double> p, std::span<const double> theta,
                                        const DualLayout& layout, double lambda_old, double lambda_new) {
    require(p.size() == layout.size && theta.size() == layout.size, ErrorCode::ShapeMismatch,
            "correct_dual: length mismatch");
    std::vector<double> out(p.size());
    for (const auto& seg : layout.segments) {
        auto ps = p.subspan(seg.offset, seg.size);
        auto ts = theta.subspan(seg.offset, seg.size);
        const double lo = seg.spec(lambda_old).threshold();
        const double ln = seg.spec(lambda_new).threshold();
        auto res = seg.penalty == Penalty::GroupNorm ? group_subgradient_correct(ps, ts, seg.groups, lo, ln)
                                                     : subgradient_correct(ps, ts, lo, ln);
        std::copy(res.begin(), res.end(), out.begin() + static_cast<std::ptrdiff_t>(seg.offset));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bregman optimizers

struct LinBregState {
    std::vector<double> p;
    double tau = 0.1;
};

/// p <- p - tau g; theta <- prox_lam(p). Returns the new regularized theta.
inline std::vector<double> linbreg_step(LinBregState& state, std::span<const double> grad, const DualLayout& layout,
                                        double lambda, ProxMode mode = ProxMode::Plain) {
    require(state.p.size() == layout.size && grad.size() == layout.size, ErrorCode::ShapeMismatch,
            "linbreg_step: length mismatch");
    require(state.tau > 0.0, ErrorCode::InvalidArgument, "linbreg_step: tau must be positive");
    for (std::size_t i = 0; i < grad.size(); ++i) state.p[i] -= state.tau * grad[i];
    return dual_to_primal(state.p, layout, lambda, mode);
}

struct AdaBregState {
    std::vector<double> p, m, v;
    std::uint64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_num = 1e-8;
    double tau = 0.01;

    static AdaBregState with_dual(std::vector<double> p0, double tau) {
        AdaBregState s;
        s.m.assign(p0.size(), 0.0);
        s.v.assign(p0.size(), 0.0);
        s.p = std::move(p0);
        s.tau = tau;
        return s;
    }
};

/// Adam-normalized dual step (bias-corrected moments), then the prox.
inline std::vector<double> adabreg_step(AdaBregState& state, std::span<const double> grad, const DualLayout& layout,
                                        double lambda, ProxMode mode = ProxMode::Plain) {
    const std::size_t n = layout.size;
    require(state.p.size() == n && state.m.size() == n && state.v.size() == n && grad.size() == n,
            ErrorCode::ShapeMismatch, "adabreg_step: length mismatch");
    require(state.tau > 0.0, ErrorCode::InvalidArgument, "adabreg_step: tau must be positive");
    ++state.t;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < n; ++i) {
        const double g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        state.p[i] -= state.tau * mhat / (std::sqrt(vhat) + state.eps_num);
    }
    return dual_to_primal(state.p, layout, lambda, mode);
}

// ---------------------------------------------------------------------------
// Dense baselines

struct SgdParams {
    double lr = 0.1;
    double momentum = 0.0;
    double weight_decay = 0.0;
    bool nesterov = false;
};

struct SgdState {
    std::vector<double> buf;
};

/// Momentum SGD with the L2 term added to the gradient; the momentum buffer
/// starts at the first (decayed) gradient.
inline void sgd_step(std::span<double> theta, std::span<const double> grad, const SgdParams& params,
                     SgdState& state) {
    require(params.lr > 0.0, ErrorCode::InvalidArgument, "sgd_step: lr must be positive");
    require(theta.size() == grad.size(), ErrorCode::ShapeMismatch, "sgd_step: length mismatch");
    const bool first = state.buf.empty();
    if (first) state.buf.assign(theta.size(), 0.0);
    require(state.buf.size() == theta.size(), ErrorCode::ShapeMismatch, "sgd_step: buffer length mismatch");
    for (std::size_t i = 0; i < theta.size(); ++i) {
        double d = grad[i] + params.weight_decay * theta[i];
        if (params.momentum != 0.0) {
            state.buf[i] = first ? d : params.momentum * state.buf[i] + d;
            d = params.nesterov ? d + params.momentum * state.buf[i] : state.buf[i];
        }
        theta[i] -= params.lr * d;
    }
}

struct AdamParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

struct AdamState {
    std::vector<double> m, v;
    std::uint64_t t = 0;
};

/// Adam with decoupled weight decay (theta <- theta - lr wd theta first).
inline void adamw_step(std::span<double> theta, std::span<const double> grad, const AdamParams& params,
                       AdamState& state) {
    require(params.lr > 0.0, ErrorCode::InvalidArgument, "adamw_step: lr must be positive");
    require(theta.size() == grad.size(), ErrorCode::ShapeMismatch, "adamw_step: length mismatch");
    if (state.m.empty()) {
        state.m.assign(theta.size(), 0.0);
        state.v.assign(theta.size(), 0.0);
    }
    require(state.m.size() == theta.size(), ErrorCode::ShapeMismatch, "adamw_step: state length mismatch");
    ++state.t;
    const double bc1 = 1.0 - std::pow(params.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(params.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        theta[i] -= params.lr * params.weight_decay * theta[i];
        const double g = grad[i];
        state.m[i] = params.beta1 * state.m[i] + (1.0 - params.beta1) * g;
        state.v[i] = params.beta2 * state.v[i] + (1.0 - params.beta2) * g * g;
        theta[i] -= params.lr * (state.m[i] / bc1) / (std::sqrt(state.v[i] / bc2) + params.eps);
    }
}

// ---------------------------------------------------------------------------
// Magnitude pruning baseline

/// Gradual schedule 1 - (1 - s*)^(i/E), held at s* after epoch E.
inline double prune_schedule_sparsity(std::size_t epoch, std::size_t schedule_epochs, double s_target) {
    require(schedule_epochs > 0, ErrorCode::InvalidArgument, "prune schedule needs E > 0");
    require(s_target > 0.0 && s_target < 1.0, ErrorCode::InvalidArgument, "target sparsity must be in (0,1)");
    if (epoch >= schedule_epochs) return s_target;
    const double e = static_cast<double>(epoch) / static_cast<double>(schedule_epochs);
    return 1.0 - std::pow(1.0 - s_target, e);
}

/// Global magnitude pruning over the regularized parameters: the
/// floor(s * d_reg) smallest magnitudes are masked. Entries masked in
/// `previous` stay masked.
inline Mask magnitude_prune(const ParamStore& store, double s, const Mask* previous = nullptr) {
    require(s >= 0.0 && s < 1.0, ErrorCode::InvalidArgument, "magnitude_prune: sparsity must be in [0,1)");
    if (previous) check_mask_shape(store, *previous);
    struct Entry {
        std::size_t tensor, index;
        bool was_masked;
        double mag;
    };
    std::vector<Entry> entries;
    entries.reserve(store.d_reg());
    for (std::size_t i = 0; i < store.num_tensors(); ++i) {
        const auto& t = store.tensor(i);
        if (!t.regularized) continue;
        for (std::size_t j = 0; j < t.size(); ++j)
            entries.push_back({i, j, previous && !previous->bits[i][j], std::abs(t.values[j])});
    }
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.was_masked != b.was_masked) return a.was_masked;
        return a.mag < b.mag;
    });
    const auto already = static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [](const Entry& e) { return e.was_masked; }));
    const auto quota = static_cast<std::size_t>(std::floor(s * static_cast<double>(store.d_reg())));
    const std::size_t n_prune = std::max(quota, already);

    Mask mask = Mask::ones(store);
    for (std::size_t k = 0; k < n_prune; ++k) mask.bits[entries[k].tensor][entries[k].index] = 0;
    return mask;
}

// ---------------------------------------------------------------------------
// Initialization

/// Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for
/// regularized tensors; excluded tensors (biases) start at zero.
inline void dense_init(ParamStore& store, Rng& rng) {
    for (std::size_t i = 0; i < store.num_tensors(); ++i) {
        auto& t = store.tensor(i);
        if (!t.regularized) {
            std::fill(t.values.begin(), t.values.end(), 0.0);
            continue;
        }
        std::size_t fan_in = 1;
        for (std::size_t a = 1; a < t.shape.size(); ++a) fan_in *= t.shape[a];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : t.values) v = dist(rng);
    }
}

/// Zeroes each regularized entry with probability s_init and rescales the
/// survivors by 1/sqrt(1 - s_init). Returns the sparse store and a matching
/// dual p0 in the subdifferential of EN_lambda0.
inline std::pair<ParamStore, std::vector<double>> sparse_init(ParamStore store, double s_init, double lambda0,
                                                               Rng& rng, ProxMode mode = ProxMode::Plain) {
    require(s_init >= 0.0 && s_init < 1.0, ErrorCode::InvalidArgument, "s_init must be in [0,1)");
    require(lambda0 >= 0.0, ErrorCode::InvalidArgument, "lambda0 must be nonnegative");
    if (s_init > 0.0) {
        std::bernoulli_distribution drop(s_init);
        const double scale = 1.0 / std::sqrt(1.0 - s_init);
        for (std::size_t i = 0; i < store.num_tensors(); ++i) {
            auto& t = store.tensor(i);
            if (!t.regularized) continue;
            for (auto& v : t.values) v = drop(rng) ? 0.0 : v * scale;
        }
    }
    const auto layout = DualLayout::from(store);
    auto p0 = init_dual(gather_regularized(store), layout, lambda0, mode);
    return {std::move(store), std::move(p0)};
}

}  // namespace bregsparse
