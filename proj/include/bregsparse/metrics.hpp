#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bregsparse/error.hpp"
#include "bregsparse/param_store.hpp"
#include "bregsparse/prox.hpp"

namespace bregsparse {

struct TensorSparsity {
    std::string name;
    double sparsity = 0.0;
    std::size_t n_params = 0;
};

struct SparsityReport {
    std::uint64_t step = 0;
    double global = 0.0;
    std::vector<TensorSparsity> per_tensor;
    // aggregate over regularized classifier / non-classifier tensors;
    // NaN-free: 0 when the class is empty
    double classifier = 0.0;
    double backbone = 0.0;
};

/// Exact per-tensor zero counts over the regularized tensors.
inline SparsityReport layerwise_report(const ParamStore& store, std::uint64_t step) {
    SparsityReport rep;
    rep.step = step;
    std::size_t zeros = 0, total = 0;
    std::size_t cls_zeros = 0, cls_total = 0, bb_zeros = 0, bb_total = 0;
    for (const auto& t : store.tensors()) {
        if (!t.regularized) continue;
        const auto z = static_cast<std::size_t>(std::count(t.values.begin(), t.values.end(), 0.0));
        rep.per_tensor.push_back({t.name, static_cast<double>(z) / static_cast<double>(t.size()), t.size()});
        zeros += z;
        total += t.size();
        if (t.is_classifier()) {
            cls_zeros += z;
            cls_total += t.size();
        } else {
            bb_zeros += z;
            bb_total += t.size();
        }
    }
    auto ratio = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
    rep.global = ratio(zeros, total);
    rep.classifier = ratio(cls_zeros, cls_total);
    rep.backbone = ratio(bb_zeros, bb_total);
    return rep;
}

inline nlohmann::json to_json(const SparsityReport& rep) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& t : rep.per_tensor) per.push_back({{"name", t.name}, {"sparsity", t.sparsity}, {"n_params", t.n_params}});
    return {{"step", rep.step},
            {"global", rep.global},
            {"per_tensor", per},
            {"classifier", rep.classifier},
            {"backbone", rep.backbone}};
}

inline SparsityReport sparsity_report_from_json(const nlohmann::json& j) {
    SparsityReport rep;
    rep.step = j.at("step").get<std::uint64_t>();
    rep.global = j.at("global").get<double>();
    rep.classifier = j.at("classifier").get<double>();
    rep.backbone = j.at("backbone").get<double>();
    for (const auto& t : j.at("per_tensor"))
        rep.per_tensor.push_back({t.at("name").get<std::string>(), t.at("sparsity").get<double>(),
                                  t.at("n_params").get<std::size_t>()});
    return rep;
}

inline double frobenius_norm(const ParamStore& store, Scope scope = Scope::All) {
    double sq = 0.0;
    for (const auto& t : store.tensors()) {
        if (!in_scope(t, scope)) continue;
        for (double v : t.values) sq += v * v;
    }
    return std::sqrt(sq);
}

inline double elastic_net(std::span<const double> theta, double lam) {
    double sq = 0.0, l1 = 0.0;
    for (double v : theta) {
        sq += v * v;
        l1 += std::abs(v);
    }
    return 0.5 * sq + lam * l1;
}

/// D^p(theta, theta_ref) = EN(theta) - EN(theta_ref) - <p, theta - theta_ref>.
inline double bregman_divergence_en(std::span<const double> theta, std::span<const double> theta_ref,
                                    std::span<const double> p_ref, double lam) {
    require(theta.size() == theta_ref.size() && theta.size() == p_ref.size(), ErrorCode::ShapeMismatch,
            "bregman_divergence_en: length mismatch");
    require(lam >= 0.0, ErrorCode::InvalidArgument, "bregman_divergence_en: negative lambda");
    require(is_subgradient(p_ref, theta_ref, lam), ErrorCode::NotASubgradient,
            "bregman_divergence_en: p_ref is not a subgradient at theta_ref");
    double inner = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) inner += p_ref[i] * (theta[i] - theta_ref[i]);
    return elastic_net(theta, lam) - elastic_net(theta_ref, lam) - inner;
}

struct Lemma1Record {
    std::uint64_t k = 0;
    double lhs = 0.0;  // L(theta_{k+1}) + (1/tau - L/2)|dtheta|^2 + (dlam/tau)(|theta_{k+1}|_1 - |theta_k|_1)
    double rhs = 0.0;  // L(theta_k)
    double residual = 0.0;
    double tau = 0.0;
    double smoothness = 0.0;
    double lambda_k = 0.0;
    double lambda_km1 = 0.0;
    bool violation = false;
};

/// Evaluates both sides of the one-step loss-decay inequality for the
/// adaptive linearized Bregman iteration. A violation is flagged when the
/// residual rhs - lhs drops below -1e-9 (1 + |L(theta_k)|).
inline Lemma1Record lemma1_check(double prev_loss, double next_loss, std::span<const double> theta_prev,
                                 std::span<const double> theta_next, double tau, double smoothness, double lam_k,
                                 double lam_km1, std::uint64_t k = 0) {
    require(theta_prev.size() == theta_next.size(), ErrorCode::ShapeMismatch, "lemma1_check: length mismatch");
    auto finite = [](double x) { return std::isfinite(x); };
    require(finite(prev_loss) && finite(next_loss) && finite(tau) && finite(smoothness) && finite(lam_k) &&
                finite(lam_km1) && tau > 0.0,
            ErrorCode::InvalidArgument, "lemma1_check: non-finite input");
    double step_sq = 0.0, l1_next = 0.0, l1_prev = 0.0;
    for (std::size_t i = 0; i < theta_prev.size(); ++i) {
        require(finite(theta_prev[i]) && finite(theta_next[i]), ErrorCode::InvalidArgument,
                "lemma1_check: non-finite iterate");
        const double d = theta_next[i] - theta_prev[i];
        step_sq += d * d;
        l1_next += std::abs(theta_next[i]);
        l1_prev += std::abs(theta_prev[i]);
    }
    Lemma1Record rec;
    rec.k = k;
    rec.tau = tau;
    rec.smoothness = smoothness;
    rec.lambda_k = lam_k;
    rec.lambda_km1 = lam_km1;
    rec.lhs = next_loss + (1.0 / tau - smoothness / 2.0) * step_sq + ((lam_k - lam_km1) / tau) * (l1_next - l1_prev);
    rec.rhs = prev_loss;
    rec.residual = rec.rhs - rec.lhs;
    rec.violation = rec.residual < -1e-9 * (1.0 + std::abs(prev_loss));
    return rec;
}

/// F1 score of the nonzero supports; two empty supports score 1.
inline double support_f1(std::span<const double> theta, std::span<const double> theta_true) {
    require(theta.size() == theta_true.size(), ErrorCode::ShapeMismatch, "support_f1: length mismatch");
    std::size_t tp = 0, est = 0, truth = 0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const bool a = theta[i] != 0.0, b = theta_true[i] != 0.0;
        est += a;
        truth += b;
        tp += a && b;
    }
    if (est == 0 && truth == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(est + truth);
}

}  // namespace bregsparse
