#pragma once

// Feedback control of the regularization strength. Every f steps
//   lambda <- lambda * (1 + alpha |eps|)^sgn(eps),   eps = s* - s(theta)
// and once |eps| <= zeta_d the interval f grows by gamma_f and the gain
// alpha shrinks by gamma_alpha (damping).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>

#include "bregsparse/error.hpp"

namespace bregsparse {

/// Adaptation interval meaning "never adapt".
inline constexpr std::uint64_t kNeverAdapt = std::numeric_limits<std::uint64_t>::max();

enum class AdaptVariant { Plain, SubgradCorrect, ProxRescale };

struct ControllerParams {
    double target = 0.9;
    double lambda0 = 0.01;
    std::uint64_t f = 50;
    double alpha = 1.0;
    double zeta = 0.01;
    double zeta_d = 0.005;
    std::uint64_t gamma_f = 2;
    double gamma_alpha = 0.1;
    std::uint64_t f_max = 6400;
    double alpha_min = 1e-3;
    bool stop_on_tolerance = false;

    void validate() const {
        require(target >= 0.0 && target <= 1.0, ErrorCode::InvalidArgument, "target sparsity must be in [0,1]");
        require(lambda0 >= 0.0, ErrorCode::InvalidArgument, "lambda0 must be nonnegative");
        require(f >= 1, ErrorCode::InvalidArgument, "f must be >= 1");
        require(alpha > 0.0, ErrorCode::InvalidArgument, "alpha must be positive");
        require(zeta >= 0.0 && zeta_d >= 0.0, ErrorCode::InvalidArgument, "tolerances must be nonnegative");
        require(gamma_f >= 2, ErrorCode::InvalidArgument, "gamma_f must be >= 2");
        require(gamma_alpha > 0.0, ErrorCode::InvalidArgument, "gamma_alpha must be positive");
        require(f_max >= 1, ErrorCode::InvalidArgument, "f_max must be >= 1");
        require(alpha_min > 0.0, ErrorCode::InvalidArgument, "alpha_min must be positive");
    }
};

struct ControllerState {
    ControllerParams params;
    double lambda = 0.01;
    std::uint64_t f = 50;
    double alpha = 1.0;
    std::uint64_t step = 0;
    double last_eps = 0.0;
    bool frozen = false;

    static ControllerState from(const ControllerParams& p) {
        p.validate();
        ControllerState s;
        s.params = p;
        s.lambda = p.lambda0;
        s.f = p.f;
        s.alpha = p.alpha;
        return s;
    }

    bool fires(std::uint64_t k) const noexcept { return !frozen && f != kNeverAdapt && k % f == 0; }
};

inline double sparsity_defect(double s_target, double s_current) { return s_target - s_current; }

/// |s - s*| <= zeta, with a 1e-12 slack so that rational sparsities such as
/// 0.89 vs 0.90 at zeta = 0.01 are not rejected by rounding.
inline bool within_tolerance(double s, double s_target, double zeta) {
    return std::abs(s - s_target) <= zeta + 1e-12;
}

/// Multiplicative update on adaptation steps; sgn(0) = 0 leaves lambda alone.
inline ControllerState update_lambda(ControllerState state, double eps, std::uint64_t k) {
    if (!state.fires(k) || eps == 0.0) return state;
    const double factor = 1.0 + state.alpha * std::abs(eps);
    state.lambda = eps > 0.0 ? state.lambda * factor : state.lambda / factor;
    return state;
}

inline ControllerState apply_damping(ControllerState state, double eps) {
    if (std::abs(eps) > state.params.zeta_d) return state;
    if (state.f != kNeverAdapt) {
        const std::uint64_t grown =
            state.f > state.params.f_max / state.params.gamma_f ? state.params.f_max : state.f * state.params.gamma_f;
        state.f = std::max(state.f, std::min(grown, state.params.f_max));
    }
    state.alpha = std::max(state.params.gamma_alpha * state.alpha, state.params.alpha_min);
    return state;
}

struct ControllerOutput {
    double eps = 0.0;
    double lambda_before = 0.0;
    double lambda = 0.0;  // value to use from the next step on
    bool fired = false;
    bool damped = false;
    std::uint64_t f_used = 0;
    double alpha_used = 0.0;
    // SubgradCorrect: (lambda_old, lambda_new) to pass to the dual correction
    std::optional<std::pair<double, double>> correction;
    // ProxRescale: scale of the rescaled prox
    std::optional<double> beta;
};

/// One pass of the feedback loop for step k, given the sparsity measured
/// after that step's prox. Damping is evaluated only on adaptation steps.
inline ControllerOutput controller_step(ControllerState& state, double s_current, std::uint64_t k,
                                        AdaptVariant variant = AdaptVariant::Plain) {
    ControllerOutput out;
    out.eps = sparsity_defect(state.params.target, s_current);
    out.lambda_before = state.lambda;
    out.f_used = state.f;
    out.alpha_used = state.alpha;
    state.step = k;
    state.last_eps = out.eps;

    if (state.params.stop_on_tolerance && within_tolerance(s_current, state.params.target, state.params.zeta))
        state.frozen = true;

    if (state.fires(k)) {
        out.fired = true;
        state = update_lambda(state, out.eps, k);
        const auto before_damping = std::make_pair(state.f, state.alpha);
        state = apply_damping(state, out.eps);
        out.damped = before_damping != std::make_pair(state.f, state.alpha);
    }
    out.lambda = state.lambda;

    if (variant == AdaptVariant::SubgradCorrect && out.lambda != out.lambda_before)
        out.correction = std::make_pair(out.lambda_before, out.lambda);
    if (variant == AdaptVariant::ProxRescale) out.beta = out.lambda;
    return out;
}

}  // namespace bregsparse
