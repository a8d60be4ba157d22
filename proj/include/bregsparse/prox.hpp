#pragma once

// Proximal maps and subgradient bookkeeping for the elastic net
//   EN_lam(theta) = 1/2 |theta|_2^2 + lam |theta|_1
// whose conjugate gradient is soft-thresholding at lam. The group variant
// replaces |.|_1 with a sum of per-group Euclidean norms.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "bregsparse/error.hpp"
#include "bregsparse/param_store.hpp"

namespace bregsparse {

/// Absolute slack for subgradient membership tests.
inline constexpr double kSubgradientTol = 1e-9;

inline double sign(double x) noexcept { return (x > 0.0) - (x < 0.0); }

inline double soft_threshold(double p, double thr) noexcept {
    const double a = std::abs(p) - thr;
    return a > 0.0 ? std::copysign(a, p) : 0.0;
}

inline std::vector<double> soft_threshold(std::span<const double> p, double thr) {
    require(thr >= 0.0, ErrorCode::InvalidThreshold, "soft_threshold: negative threshold");
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = soft_threshold(p[i], thr);
    return out;
}

inline void check_partition(const Partition& groups, std::size_t n) {
    require(is_partition(groups, n), ErrorCode::InvalidPartition,
            "groups do not partition the index set");
}

/// Block soft-threshold: each group is scaled by max(1 - thr/|p_g|, 0).
inline std::vector<double> group_soft_threshold(std::span<const double> p, const Partition& groups,
                                                double thr) {
    require(thr >= 0.0, ErrorCode::InvalidThreshold, "group_soft_threshold: negative threshold");
    check_partition(groups, p.size());
    std::vector<double> out(p.size(), 0.0);
    for (const auto& g : groups) {
        double sq = 0.0;
        for (auto i : g) sq += p[i] * p[i];
        const double norm = std::sqrt(sq);
        if (norm <= thr) continue;
        const double scale = 1.0 - thr / norm;
        for (auto i : g) out[i] = scale * p[i];
    }
    return out;
}

/// (1/beta) prox_{beta |.|_1}(z), i.e. the gradient of (beta EN_1)^*.
inline std::vector<double> prox_rescaled(std::span<const double> z, double beta) {
    require(beta > 0.0, ErrorCode::InvalidArgument, "prox_rescaled: beta must be positive");
    auto out = soft_threshold(z, beta);
    for (auto& v : out) v /= beta;
    return out;
}

inline std::vector<double> group_prox_rescaled(std::span<const double> z, const Partition& groups,
                                               double beta) {
    require(beta > 0.0, ErrorCode::InvalidArgument, "prox_rescaled: beta must be positive");
    auto out = group_soft_threshold(z, groups, beta);
    for (auto& v : out) v /= beta;
    return out;
}

/// True iff p is in the subdifferential of EN_lam at theta (up to `tol`).
inline bool is_subgradient(std::span<const double> p, std::span<const double> theta, double lam,
                           double tol = kSubgradientTol) {
    if (p.size() != theta.size()) return false;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (theta[i] != 0.0) {
            if (std::abs(p[i] - theta[i] - lam * sign(theta[i])) > tol) return false;
        } else if (std::abs(p[i]) > lam + tol) {
            return false;
        }
    }
    return true;
}

/// Group analogue: p_g - theta_g = lam theta_g/|theta_g| on active groups, |p_g| <= lam otherwise.
inline bool is_group_subgradient(std::span<const double> p, std::span<const double> theta,
                                 const Partition& groups, double lam, double tol = kSubgradientTol) {
    if (p.size() != theta.size()) return false;
    for (const auto& g : groups) {
        double tn = 0.0, pn = 0.0;
        for (auto i : g) {
            tn += theta[i] * theta[i];
            pn += p[i] * p[i];
        }
        tn = std::sqrt(tn);
        if (tn > 0.0) {
            for (auto i : g)
                if (std::abs(p[i] - theta[i] - lam * theta[i] / tn) > tol) return false;
        } else if (std::sqrt(pn) > lam + tol) {
            return false;
        }
    }
    return true;
}

/// Maps a subgradient of EN_lam at theta to one of EN_lam_new at theta:
/// rescales the l1 part on the support and clips off the support.
inline std::vector<double> subgradient_correct(std::span<const double> p, std::span<const double> theta,
                                               double lam, double lam_new) {
    require(p.size() == theta.size(), ErrorCode::ShapeMismatch, "subgradient_correct: length mismatch");
    require(lam > 0.0 && lam_new > 0.0, ErrorCode::InvalidArgument,
            "subgradient_correct: lambdas must be positive");
    require(is_subgradient(p, theta, lam), ErrorCode::NotASubgradient,
            "subgradient_correct: p is not in the subdifferential of EN_lam(theta)");
    const double r = lam_new / lam;
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (theta[i] != 0.0)
            out[i] = r * p[i] + (1.0 - r) * theta[i];
        else
            out[i] = std::clamp(p[i], -lam_new, lam_new);
    }
    return out;
}

inline std::vector<double> group_subgradient_correct(std::span<const double> p,
                                                     std::span<const double> theta,
                                                     const Partition& groups, double lam,
                                                     double lam_new) {
    require(p.size() == theta.size(), ErrorCode::ShapeMismatch, "subgradient_correct: length mismatch");
    require(lam > 0.0 && lam_new > 0.0, ErrorCode::InvalidArgument,
            "subgradient_correct: lambdas must be positive");
    check_partition(groups, p.size());
    require(is_group_subgradient(p, theta, groups, lam), ErrorCode::NotASubgradient,
            "subgradient_correct: p is not a group subgradient");
    const double r = lam_new / lam;
    std::vector<double> out(p.size());
    for (const auto& g : groups) {
        double tn = 0.0, pn = 0.0;
        for (auto i : g) {
            tn += theta[i] * theta[i];
            pn += p[i] * p[i];
        }
        if (tn > 0.0) {
            for (auto i : g) out[i] = r * p[i] + (1.0 - r) * theta[i];
        } else {
            pn = std::sqrt(pn);
            const double s = pn > lam_new ? lam_new / pn : 1.0;
            for (auto i : g) out[i] = s * p[i];
        }
    }
    return out;
}

/// theta + lam sign(theta), with 0 chosen on zero coordinates.
inline std::vector<double> init_subgradient(std::span<const double> theta, double lam) {
    require(lam >= 0.0, ErrorCode::InvalidArgument, "init_subgradient: negative lambda");
    std::vector<double> out(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i)
        out[i] = theta[i] != 0.0 ? theta[i] + lam * sign(theta[i]) : 0.0;
    return out;
}

inline std::vector<double> group_init_subgradient(std::span<const double> theta, const Partition& groups,
                                                  double lam) {
    require(lam >= 0.0, ErrorCode::InvalidArgument, "init_subgradient: negative lambda");
    check_partition(groups, theta.size());
    std::vector<double> out(theta.size(), 0.0);
    for (const auto& g : groups) {
        double tn = 0.0;
        for (auto i : g) tn += theta[i] * theta[i];
        tn = std::sqrt(tn);
        if (tn == 0.0) continue;
        for (auto i : g) out[i] = theta[i] + lam * theta[i] / tn;
    }
    return out;
}

}  // namespace bregsparse
