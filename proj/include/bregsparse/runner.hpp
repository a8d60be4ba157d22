#pragma once

// Training loop: batch gradient -> optimizer step -> sparsity measurement
// -> controller update, with per-step logging.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bregsparse/config.hpp"
#include "bregsparse/controller.hpp"
#include "bregsparse/metrics.hpp"
#include "bregsparse/models.hpp"
#include "bregsparse/optim.hpp"
#include "bregsparse/param_store.hpp"

namespace bregsparse {

/// One logged step. `f` and `alpha` are the values the controller used at
/// this step (before damping); `lambda` is the value after the update.
struct StepRecord {
    std::uint64_t step = 0;
    std::size_t epoch = 0;
    double loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
    double sparsity_reg = 0.0;
    double sparsity_all = 0.0;
    double lambda = 0.0;
    double eps = 0.0;
    std::uint64_t f = 0;
    double alpha = 0.0;
    double frob_norm = 0.0;
    // not part of the CSV
    double lambda_before = 0.0;
    bool fired = false;
};

struct RunSummary {
    double target_sparsity = 0.0;
    double final_sparsity = 0.0;
    double final_sparsity_all = 0.0;
    bool reached_target = false;
    std::optional<std::uint64_t> steps_to_tolerance;
    double final_loss = 0.0;
    double final_val_acc = 0.0;
    double best_val_acc = 0.0;
    double lambda_final = 0.0;
    std::size_t violations_lemma1 = 0;
    std::size_t dual_checks = 0;
    std::size_t dual_violations = 0;
    std::optional<std::uint64_t> first_dual_violation_step;
    std::size_t corrections = 0;
};

struct RunLog {
    std::vector<StepRecord> rows;
    std::vector<SparsityReport> epochs;
    // only for full-batch plain LinBreg with a known smoothness constant
    std::vector<Lemma1Record> lemma1;
    RunSummary summary;
    ParamStore final_params;
    std::vector<double> final_dual;
};

/// Receives log events as they happen.
class RunSink {
public:
    virtual ~RunSink() = default;
    virtual void on_row(const StepRecord&) {}
    virtual void on_epoch(const SparsityReport&) {}
    virtual void on_finish(const RunSummary&) {}
};

inline constexpr const char* kCsvHeader =
    "step,epoch,loss,train_acc,val_acc,sparsity_reg,sparsity_all,lambda,eps,f,alpha,frob_norm";

/// 9 significant digits, locale independent.
inline std::string format_real(double v) {
    char buf[48];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 9);
    return std::string(buf, res.ptr);
}

inline std::string format_interval(std::uint64_t f) { return f == kNeverAdapt ? "inf" : std::to_string(f); }

inline std::string to_csv_line(const StepRecord& r) {
    std::string s;
    s += std::to_string(r.step) + ',' + std::to_string(r.epoch) + ',';
    for (double v : {r.loss, r.train_acc, r.val_acc, r.sparsity_reg, r.sparsity_all, r.lambda, r.eps})
        s += format_real(v) + ',';
    s += format_interval(r.f) + ',' + format_real(r.alpha) + ',' + format_real(r.frob_norm);
    return s;
}

class CsvSink : public RunSink {
public:
    explicit CsvSink(std::ostream& os) : os_(os) { os_ << kCsvHeader << '\n'; }
    void on_row(const StepRecord& r) override { os_ << to_csv_line(r) << '\n'; }
    void on_finish(const RunSummary&) override { os_.flush(); }

private:
    std::ostream& os_;
};

/// One JSON object per line: {"type":"step",...}, {"type":"epoch",...}, {"type":"summary",...}.
class JsonLinesSink : public RunSink {
public:
    explicit JsonLinesSink(std::ostream& os) : os_(os) {}
    void on_row(const StepRecord& r) override {
        nlohmann::json j = {{"type", "step"},     {"step", r.step},       {"epoch", r.epoch},
                            {"loss", r.loss},     {"train_acc", r.train_acc}, {"val_acc", r.val_acc},
                            {"sparsity_reg", r.sparsity_reg}, {"sparsity_all", r.sparsity_all},
                            {"lambda", r.lambda}, {"eps", r.eps},         {"f", format_interval(r.f)},
                            {"alpha", r.alpha},   {"frob_norm", r.frob_norm}};
        os_ << j.dump() << '\n';
    }
    void on_epoch(const SparsityReport& rep) override {
        auto j = to_json(rep);
        j["type"] = "epoch";
        os_ << j.dump() << '\n';
    }
    void on_finish(const RunSummary& s) override {
        nlohmann::json j = {{"type", "summary"}, {"final_sparsity", s.final_sparsity}, {"reached_target", s.reached_target}};
        os_ << j.dump() << '\n';
        os_.flush();
    }

private:
    std::ostream& os_;
};

inline Dataset make_dataset(const DatasetSpec& spec) {
    if (spec.kind == DatasetKind::SparseRegression)
        return gen_sparse_regression(spec.d, spec.n, spec.k_sparse, spec.noise_sigma, spec.seed).data;
    return gen_blobs(spec.n_per_class, spec.classes, spec.d_in, spec.separation, spec.seed);
}

struct Split {
    std::vector<std::size_t> train, val;
};

/// Shuffles 0..n-1 with `rng`; the last floor(val_fraction n) indices form
/// the validation set.
inline Split split_indices(std::size_t n, double val_fraction, Rng& rng) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));
    Split s;
    s.train.assign(perm.begin(), perm.end() - static_cast<std::ptrdiff_t>(n_val));
    s.val.assign(perm.end() - static_cast<std::ptrdiff_t>(n_val), perm.end());
    require(!s.train.empty(), ErrorCode::InvalidArgument, "training split is empty");
    return s;
}

/// Mini-batches of one epoch in the order they are visited.
inline std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<std::size_t>& train, std::size_t batch_size,
                                                           Rng& rng) {
    std::vector<std::size_t> order = train;
    const std::size_t bs = batch_size == 0 || batch_size >= order.size() ? order.size() : batch_size;
    if (bs < order.size()) std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += bs)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(i + bs, order.size())));
    return out;
}

namespace detail {

inline void check_finite_loss(double loss, std::uint64_t step) {
    if (!std::isfinite(loss)) throw Error(ErrorCode::Diverged, "non-finite loss at step " + std::to_string(step));
}

inline void check_norm(double norm, std::uint64_t step) {
    if (!std::isfinite(norm) || norm > 1e12)
        throw Error(ErrorCode::Diverged, "parameter norm exceeded 1e12 at step " + std::to_string(step));
}

/// Plateau / exponential decay of the step size, evaluated once per epoch.
class LrSchedule {
public:
    explicit LrSchedule(const LrDecay& d) : decay_(d) {}

    double apply(double lr, double monitored) {
        switch (decay_.kind) {
            case LrDecayKind::None: return lr;
            case LrDecayKind::PerEpochExp: return lr * decay_.rate;
            case LrDecayKind::Plateau:
                if (monitored < best_ * (1.0 - 1e-4)) {
                    best_ = monitored;
                    bad_ = 0;
                    return lr;
                }
                if (++bad_ > decay_.patience) {
                    bad_ = 0;
                    return lr * decay_.factor;
                }
                return lr;
        }
        return lr;
    }

private:
    LrDecay decay_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t bad_ = 0;
};

/// Indices of the excluded (non-regularized) entries in the flat layout.
inline std::vector<std::size_t> excluded_indices(const ParamStore& store) {
    std::vector<std::size_t> out;
    std::size_t off = 0;
    for (const auto& t : store.tensors()) {
        if (!t.regularized)
            for (std::size_t i = 0; i < t.size(); ++i) out.push_back(off + i);
        off += t.size();
    }
    return out;
}

}  // namespace detail

/// Runs one training job. Deterministic for a given config.
/// Throws Error(Diverged) on a non-finite loss or exploding parameters.
inline RunLog train(const RunConfig& cfg, RunSink* sink = nullptr) {
    validate(cfg);
    const Dataset data = make_dataset(cfg.dataset);
    Rng rng(cfg.seed);
    const Split split = split_indices(data.size(), cfg.val_fraction, rng);

    ParamStore store = make_store(cfg.model);
    for (std::size_t i = 0; i < store.num_tensors(); ++i)
        if (store.tensor(i).is_classifier()) store.tensor(i).lambda_scale = cfg.classifier_lambda_scale;
    dense_init(store, rng);

    const bool bregman = cfg.is_bregman();
    const bool adaptive = bregman && cfg.adaptive;
    const ProxMode mode = cfg.variant == AdaptVariant::ProxRescale ? ProxMode::Rescaled : ProxMode::Plain;
    double lambda = bregman ? (adaptive ? cfg.lambda0 : *cfg.fixed_lambda) : 0.0;
    double lambda_prev = lambda;  // lambda behind the current dual

    const DualLayout layout = DualLayout::from(store);
    std::vector<double> dual;
    if (bregman) {
        auto [sparse, p0] = sparse_init(std::move(store), cfg.s_init, lambda, rng, mode);
        store = std::move(sparse);
        dual = std::move(p0);
    }

    std::optional<ControllerState> ctrl;
    if (adaptive) ctrl = ControllerState::from(cfg.controller_params());

    LinBregState lin{dual, cfg.tau};
    AdaBregState ada = AdaBregState::with_dual(dual, cfg.tau);
    ada.beta1 = cfg.beta1;
    ada.beta2 = cfg.beta2;
    ada.eps_num = cfg.eps_num;

    const auto excluded = detail::excluded_indices(store);
    SgdState sgd_state;
    AdamState adam_state;
    double lr = cfg.tau;

    Mask mask = Mask::ones(store);

    const bool full_batch = cfg.batch_size == 0 || cfg.batch_size >= split.train.size();
    std::optional<double> smoothness;
    if (cfg.monitor_lemma1) smoothness = smoothness_constant(cfg.model, data, split.train);
    const bool lemma_asserted = smoothness && full_batch && cfg.optimizer == OptimizerKind::LinBreg &&
                                cfg.variant == AdaptVariant::Plain &&
                                cfg.lr_decay.kind == LrDecayKind::None;

    RunLog log;
    std::uint64_t step = 0;
    double val_acc = 0.0;
    auto eval_val = [&]() {
        return split.val.empty() ? Evaluation{} : evaluate(cfg.model, store, data, split.val);
    };

    auto measure = [&](StepRecord& r) {
        r.sparsity_reg = store.d_reg() ? sparsity(store, Scope::RegularizedOnly) : 0.0;
        r.sparsity_all = sparsity(store, Scope::All);
        r.frob_norm = frobenius_norm(store, Scope::All);
        r.eps = sparsity_defect(cfg.target_sparsity, r.sparsity_reg);
    };
    auto note_violation = [&](std::uint64_t at) {
        if (!log.summary.dual_violations++) log.summary.first_dual_violation_step = at;
    };
    auto emit = [&](const StepRecord& r) {
        log.rows.push_back(r);
        if (sink) sink->on_row(r);
        if (!log.summary.steps_to_tolerance &&
            within_tolerance(r.sparsity_reg, cfg.target_sparsity, cfg.controller.zeta))
            log.summary.steps_to_tolerance = r.step;
    };
    auto emit_epoch = [&]() {
        log.epochs.push_back(layerwise_report(store, step));
        if (sink) sink->on_epoch(log.epochs.back());
    };

    {
        StepRecord r;
        const auto tr = evaluate(cfg.model, store, data, split.train);
        const auto va = eval_val();
        val_acc = va.accuracy;
        r.loss = tr.loss;
        r.train_acc = tr.accuracy;
        r.val_acc = val_acc;
        measure(r);
        r.lambda = r.lambda_before = lambda;
        if (ctrl) {
            r.f = ctrl->f;
            r.alpha = ctrl->alpha;
        }
        emit(r);
        emit_epoch();
    }

    detail::LrSchedule schedule(cfg.lr_decay);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (cfg.optimizer == OptimizerKind::Prune) {
            const double s_i = cfg.prune.single_shot
                                   ? cfg.target_sparsity
                                   : prune_schedule_sparsity(epoch - 1, cfg.prune.schedule_epochs, cfg.target_sparsity);
            mask = magnitude_prune(store, s_i, &mask);
            store = apply_mask(std::move(store), mask);
        }

        double epoch_loss = 0.0;
        const auto batches = epoch_batches(split.train, cfg.batch_size, rng);
        for (const auto& batch : batches) {
            auto lg = loss_and_grad(cfg.model, store, data, batch);
            detail::check_finite_loss(lg.loss, step);
            epoch_loss += lg.loss * static_cast<double>(batch.size());

            StepRecord r;
            r.step = step + 1;
            r.epoch = epoch;
            r.loss = lg.loss;
            r.train_acc = data.is_classification()
                              ? static_cast<double>(lg.correct) / static_cast<double>(batch.size())
                              : 0.0;
            r.lambda_before = lambda;

            auto theta = flatten(store);
            const auto theta_prev_reg = lemma_asserted ? gather_regularized(store) : std::vector<double>{};

            if (bregman) {
                const auto grad_reg = gather_regularized(store, lg.grad);
                std::vector<double> theta_reg;
                if (cfg.optimizer == OptimizerKind::LinBreg) {
                    lin.tau = lr;
                    theta_reg = linbreg_step(lin, grad_reg, layout, lambda, mode);
                } else {
                    ada.tau = lr;
                    theta_reg = adabreg_step(ada, grad_reg, layout, lambda, mode);
                }
                std::vector<double> ex_theta(excluded.size()), ex_grad(excluded.size());
                for (std::size_t i = 0; i < excluded.size(); ++i) {
                    ex_theta[i] = theta[excluded[i]];
                    ex_grad[i] = lg.grad[excluded[i]];
                }
                if (!excluded.empty()) {
                    if (cfg.optimizer == OptimizerKind::LinBreg)
                        sgd_step(ex_theta, ex_grad, {lr, cfg.momentum, cfg.weight_decay, cfg.nesterov}, sgd_state);
                    else
                        adamw_step(ex_theta, ex_grad, {lr, cfg.beta1, cfg.beta2, cfg.eps_num, cfg.weight_decay},
                                   adam_state);
                }
                for (std::size_t i = 0; i < excluded.size(); ++i) theta[excluded[i]] = ex_theta[i];
                assign_flat(store, theta);
                scatter_regularized(store, theta_reg);
            } else if (cfg.optimizer == OptimizerKind::AdamW) {
                adamw_step(theta, lg.grad, {lr, cfg.beta1, cfg.beta2, cfg.eps_num, cfg.weight_decay}, adam_state);
                assign_flat(store, theta);
            } else {
                // SGD and pruning; masked weights get zero updates
                if (cfg.optimizer == OptimizerKind::Prune) {
                    std::size_t off = 0;
                    for (std::size_t t = 0; t < store.num_tensors(); ++t) {
                        for (std::size_t i = 0; i < store.tensor(t).size(); ++i)
                            if (!mask.bits[t][i]) {
                                lg.grad[off + i] = 0.0;
                                if (!sgd_state.buf.empty()) sgd_state.buf[off + i] = 0.0;
                            }
                        off += store.tensor(t).size();
                    }
                }
                sgd_step(theta, lg.grad, {lr, cfg.momentum, cfg.weight_decay, cfg.nesterov}, sgd_state);
                assign_flat(store, theta);
            }

            measure(r);
            detail::check_norm(r.frob_norm, step);

            auto& p = cfg.optimizer == OptimizerKind::AdaBreg ? ada.p : lin.p;
            if (bregman && mode == ProxMode::Plain) {
                ++log.summary.dual_checks;
                if (!is_dual_feasible(p, gather_regularized(store), layout, lambda)) note_violation(r.step);
            }

            const double lambda_used = lambda;
            if (ctrl) {
                const auto out = controller_step(*ctrl, r.sparsity_reg, step, cfg.variant);
                r.fired = out.fired;
                r.f = out.f_used;
                r.alpha = out.alpha_used;
                lambda = out.lambda;
                if (out.correction) {
                    const auto theta_reg = gather_regularized(store);
                    p = correct_dual(p, theta_reg, layout, out.correction->first, out.correction->second);
                    ++log.summary.corrections;
                    ++log.summary.dual_checks;
                    if (!is_dual_feasible(p, theta_reg, layout, lambda)) note_violation(r.step);
                }
            }
            r.lambda = lambda;

            if (lemma_asserted) {
                const auto next = evaluate(cfg.model, store, data, split.train);
                auto rec = lemma1_check(lg.loss, next.loss, theta_prev_reg, gather_regularized(store), lr,
                                        *smoothness, lambda_used, lambda_prev, step);
                if (rec.violation) ++log.summary.violations_lemma1;
                log.lemma1.push_back(rec);
            }
            // after a correction the dual belongs to the new lambda
            lambda_prev = cfg.variant == AdaptVariant::SubgradCorrect ? lambda : lambda_used;

            r.val_acc = val_acc;
            emit(r);
            ++step;
        }

        const auto va = eval_val();
        val_acc = va.accuracy;
        if (!log.rows.empty()) log.rows.back().val_acc = val_acc;
        const double monitored = split.val.empty() ? epoch_loss / static_cast<double>(split.train.size()) : va.loss;
        lr = schedule.apply(lr, monitored);
        emit_epoch();
    }

    auto& s = log.summary;
    const auto& last = log.rows.back();
    s.target_sparsity = cfg.target_sparsity;
    s.final_sparsity = last.sparsity_reg;
    s.final_sparsity_all = last.sparsity_all;
    s.reached_target = within_tolerance(last.sparsity_reg, cfg.target_sparsity, cfg.controller.zeta);
    s.final_loss = evaluate(cfg.model, store, data, split.train).loss;
    s.final_val_acc = val_acc;
    s.best_val_acc = 0.0;
    for (const auto& r : log.rows) s.best_val_acc = std::max(s.best_val_acc, r.val_acc);
    s.lambda_final = lambda;
    log.final_params = std::move(store);
    if (bregman) log.final_dual = cfg.optimizer == OptimizerKind::AdaBreg ? ada.p : lin.p;
    if (sink) sink->on_finish(s);
    return log;
}

/// Alias of train() for pruning configs; checks the optimizer kind.
inline RunLog prune_train(const RunConfig& cfg, RunSink* sink = nullptr) {
    require(cfg.optimizer == OptimizerKind::Prune, ErrorCode::ConfigError, "prune_train needs optimizer = prune");
    return train(cfg, sink);
}

struct SweepResult {
    std::string axis;
    std::vector<nlohmann::json> values;
    std::vector<RunConfig> configs;
    std::vector<RunLog> logs;
};

/// Sets `axis` (dotted config path) to each value in turn. Unless the axis
/// is the seed itself, run i uses seed base.seed + i.
inline std::vector<RunConfig> sweep_configs(const RunConfig& base, const std::string& axis,
                                            const std::vector<nlohmann::json>& values) {
    std::vector<RunConfig> out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto j = to_json(base);
        apply_override(j, axis + "=" + values[i].dump());
        auto cfg = run_config_from_json(j);
        if (axis != "seed") cfg.seed = base.seed + i;
        validate(cfg);
        out.push_back(std::move(cfg));
    }
    return out;
}

inline SweepResult sweep(const RunConfig& base, const std::string& axis, const std::vector<nlohmann::json>& values) {
    SweepResult res;
    res.axis = axis;
    res.values = values;
    res.configs = sweep_configs(base, axis, values);
    for (const auto& cfg : res.configs) res.logs.push_back(train(cfg));
    return res;
}

}  // namespace bregsparse
