// Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
// exits nonzero if any criterion fails. Details go to stderr.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "bregsparse/bregsparse.hpp"
#include "bregsparse/cli.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace bregsparse;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// every adaptive run goes through here so criterion 3 sees all of them
std::vector<RunLog> g_adaptive_logs;

RunLog run(const RunConfig& cfg) {
    auto log = train(cfg);
    if (cfg.is_bregman() && cfg.adaptive) g_adaptive_logs.push_back(log);
    return log;
}

RunConfig task_config(const std::string& task, OptimizerKind opt) {
    const bool lin = opt == OptimizerKind::LinBreg;
    return test::sample_config(task + (lin ? "_linbreg.json" : "_adabreg.json"));
}

// 1 ---------------------------------------------------------------------

Outcome prox_oracles() {
    const auto t0 = Clock::now();
    Rng rng(2024);
    std::uniform_real_distribution<double> uz(-3.0, 3.0), ut(0.05, 1.5);
    std::uniform_int_distribution<int> ulen(1, 6), ugroup(1, 3);
    double err_soft = 0.0, err_group = 0.0, err_resc = 0.0;

    for (int inst = 0; inst < 200; ++inst) {
        const int n = ulen(rng);
        std::vector<double> z(n);
        for (auto& v : z) v = uz(rng);
        const double t = ut(rng);
        const auto got = soft_threshold(z, t);
        for (int i = 0; i < n; ++i) {
            const double zi = z[i];
            const auto w = oracle::grid_argmin_nd(
                [&](const std::vector<double>& x) { return 0.5 * (x[0] - zi) * (x[0] - zi) + t * std::abs(x[0]); },
                {0.0}, 4.0, 1e-5, 81);
            err_soft = std::max(err_soft, std::abs(got[i] - w[0]));
        }
    }

    for (int inst = 0; inst < 200; ++inst) {
        Partition groups;
        std::size_t n = 0;
        const int ng = ulen(rng) % 3 + 1;
        for (int g = 0; g < ng; ++g) {
            std::vector<std::size_t> idx;
            for (int k = ugroup(rng); k > 0; --k) idx.push_back(n++);
            groups.push_back(idx);
        }
        std::vector<double> z(n);
        for (auto& v : z) v = uz(rng);
        const double t = ut(rng);
        const auto got = group_soft_threshold(z, groups, t);
        for (const auto& g : groups) {
            std::vector<double> zg;
            for (auto i : g) zg.push_back(z[i]);
            const auto w = oracle::grid_argmin_nd(
                [&](const std::vector<double>& x) {
                    double sq = 0.0, nrm = 0.0;
                    for (std::size_t k = 0; k < x.size(); ++k) {
                        sq += (x[k] - zg[k]) * (x[k] - zg[k]);
                        nrm += x[k] * x[k];
                    }
                    return 0.5 * sq + t * std::sqrt(nrm);
                },
                std::vector<double>(zg.size(), 0.0), 6.0, 1e-5);
            for (std::size_t k = 0; k < g.size(); ++k) err_group = std::max(err_group, std::abs(got[g[k]] - w[k]));
        }
    }

    for (int inst = 0; inst < 200; ++inst) {
        const int n = ulen(rng);
        std::vector<double> z(n);
        for (auto& v : z) v = uz(rng);
        const double beta = ut(rng) + 0.2;
        const auto got = prox_rescaled(z, beta);
        for (int i = 0; i < n; ++i) {
            const double zi = z[i];
            // maximize theta z - beta EN_1(theta)
            const auto w = oracle::grid_argmin_nd(
                [&](const std::vector<double>& x) {
                    return -(x[0] * zi - beta * (0.5 * x[0] * x[0] + std::abs(x[0])));
                },
                {0.0}, 20.0, 1e-5, 81);
            err_resc = std::max(err_resc, std::abs(got[i] - w[0]));
        }
    }

    const double secs = seconds_since(t0);
    const double worst = std::max({err_soft, err_group, err_resc});
    return {worst <= 1e-3 && secs < 10.0,
            fmt("max err soft %.2e group %.2e rescaled %.2e, %.2f s", err_soft, err_group, err_resc, secs)};
}

// 2 ---------------------------------------------------------------------

Outcome lemma_monitor() {
    const auto t0 = Clock::now();
    auto cfg = test::sample_config("lemma_monitor.json");
    const auto data = make_dataset(cfg.dataset);
    std::vector<std::size_t> rows(data.size());
    std::iota(rows.begin(), rows.end(), 0);
    const double l = smoothness_constant(cfg.model, data, rows).value();
    cfg.tau = 1.0 / (2.0 * l);
    cfg.epochs = 1000;
    cfg.monitor_lemma1 = true;
    cfg.lr_decay.kind = LrDecayKind::None;
    const auto log = run(cfg);
    std::size_t fired = 0;
    for (const auto& r : log.rows) fired += r.fired;
    const double secs = seconds_since(t0);
    return {log.lemma1.size() == 1000 && log.summary.violations_lemma1 == 0 && fired > 0 && secs < 30.0,
            fmt("L=%.6g tau=%.6g, %zu checks, %zu violations, %zu lambda updates, %.2f s", l, cfg.tau,
                log.lemma1.size(), log.summary.violations_lemma1, fired, secs)};
}

// 4 and 5 ----------------------------------------------------------------

Outcome target_attainment() {
    std::size_t ok = 0, total = 0;
    double worst_secs = 0.0;
    std::string misses;
    for (const std::string task : {"regression", "blobs"})
        for (auto opt : {OptimizerKind::LinBreg, OptimizerKind::AdaBreg})
            for (double s : {0.75, 0.90, 0.95, 0.99}) {
                auto cfg = task_config(task, opt);
                cfg.target_sparsity = s;
                const auto t0 = Clock::now();
                const auto log = run(cfg);
                const double secs = seconds_since(t0);
                worst_secs = std::max(worst_secs, secs);
                ++total;
                if (log.summary.reached_target && secs < 120.0)
                    ++ok;
                else
                    misses += fmt(" [%s %s s*=%.2f got %.4f]", task.c_str(), to_string(opt).c_str(), s,
                                  log.summary.final_sparsity);
            }
    return {ok == total, fmt("%zu/%zu runs within 0.01 of target, slowest %.2f s", ok, total, worst_secs) + misses};
}

Outcome lambda0_insensitivity() {
    std::size_t ok = 0, total = 0;
    std::string detail;
    for (const std::string task : {"regression", "blobs"})
        for (auto opt : {OptimizerKind::LinBreg, OptimizerKind::AdaBreg})
            for (double s : {0.90, 0.99}) {
                std::string line = fmt(" [%s %s s*=%.2f", task.c_str(), to_string(opt).c_str(), s);
                for (double l0 : {0.01, 1.0}) {
                    auto cfg = task_config(task, opt);
                    cfg.target_sparsity = s;
                    cfg.lambda0 = l0;
                    const auto log = run(cfg);
                    ++total;
                    ok += log.summary.reached_target;
                    line += fmt(" l0=%g->%.4f", l0, log.summary.final_sparsity);
                }
                detail += line + "]";
            }
    return {ok == total, fmt("%zu/%zu runs within 0.01 of target", ok, total) + detail};
}

// 3 ---------------------------------------------------------------------

Outcome bounded_relative_change() {
    std::size_t fired = 0, bad = 0;
    double worst_excess = 0.0;
    for (const auto& log : g_adaptive_logs)
        for (const auto& r : log.rows) {
            if (!r.fired) continue;
            ++fired;
            const double rel = std::abs(r.lambda - r.lambda_before) / r.lambda_before;
            const double bound = r.alpha * std::abs(r.eps);
            const double slack = 1e-12 * (1.0 + bound);
            worst_excess = std::max(worst_excess, rel - bound);
            if (rel > bound + slack) ++bad;
            if (r.eps >= 0.0 && std::abs(rel - bound) > slack) ++bad;
        }
    return {fired > 0 && bad == 0, fmt("%zu fired updates across %zu runs, %zu violations, max(rel - bound) %.2e",
                                       fired, g_adaptive_logs.size(), bad, worst_excess)};
}

// 6 ---------------------------------------------------------------------

bool same_trajectory(const RunLog& a, const RunLog& b) {
    if (a.rows.size() != b.rows.size()) return false;
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        const auto &x = a.rows[i], &y = b.rows[i];
        if (x.step != y.step || x.loss != y.loss || x.train_acc != y.train_acc || x.val_acc != y.val_acc ||
            x.sparsity_reg != y.sparsity_reg || x.sparsity_all != y.sparsity_all || x.lambda != y.lambda ||
            x.frob_norm != y.frob_norm)
            return false;
    }
    return a.final_params == b.final_params && a.final_dual == b.final_dual;
}

Outcome fixed_lambda_equivalence() {
    std::size_t ok = 0, total = 0;
    for (const std::string task : {"regression", "blobs"})
        for (auto opt : {OptimizerKind::LinBreg, OptimizerKind::AdaBreg}) {
            auto never = task_config(task, opt);
            never.epochs = std::min<std::size_t>(never.epochs, 300);
            never.controller.f = kNeverAdapt;
            auto fixed = never;
            fixed.adaptive = false;
            fixed.fixed_lambda = never.lambda0;
            ++total;
            ok += same_trajectory(train(never), train(fixed));
        }
    return {ok == total, fmt("%zu/%zu trajectories bit-identical", ok, total)};
}

// 7 ---------------------------------------------------------------------

Outcome support_recovery() {
    const auto t0 = Clock::now();
    auto cfg = test::sample_config("regression_linbreg.json");
    cfg.dataset.d = 100;
    cfg.dataset.n = 60;
    cfg.dataset.k_sparse = 5;
    cfg.dataset.noise_sigma = 0.0;
    cfg.model.layer_sizes = {100, 1};
    cfg.target_sparsity = 0.95;
    const auto problem = gen_sparse_regression(100, 60, 5, 0.0, cfg.dataset.seed);
    const auto log = run(cfg);
    const auto theta = gather_regularized(log.final_params);
    const double f1 = support_f1(theta, problem.true_theta);

    // reference: lasso by iterative soft-thresholding on the same rows
    std::vector<std::vector<double>> a(problem.data.size());
    std::vector<double> y(problem.data.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& x = problem.data.features;
        a[i].assign(x.data.begin() + static_cast<std::ptrdiff_t>(i * x.cols),
                    x.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * x.cols));
        y[i] = problem.data.labels[i];
    }
    std::vector<std::size_t> rows(a.size());
    std::iota(rows.begin(), rows.end(), 0);
    const double l = smoothness_constant(cfg.model, problem.data, rows).value();
    double lam_max = 0.0;
    for (std::size_t j = 0; j < 100; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i][j] * y[i];
        lam_max = std::max(lam_max, 2.0 * std::abs(s) / static_cast<double>(a.size()));
    }
    const auto ista = oracle::ista_lasso(a, y, 0.05 * lam_max, 1.0 / l, 20000);
    const double f1_ista = support_f1(ista, problem.true_theta);
    const double secs = seconds_since(t0);
    return {f1 >= 0.95 && secs < 30.0,
            fmt("F1 %.4f (final sparsity %.4f), ISTA reference F1 %.4f, %.2f s", f1, log.summary.final_sparsity,
                f1_ista, secs)};
}

// 8 ---------------------------------------------------------------------

Outcome gradient_check() {
    double worst = 0.0;
    std::size_t params = 0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        const auto pb = test::random_problem(seed);
        const auto chk = test::finite_difference_check(pb.spec, pb.store, pb.data, pb.batch);
        worst = std::max(worst, chk.max_rel_err);
        params += chk.n_params;
    }
    return {worst < 1e-5, fmt("50 configurations, %zu parameters, max rel err %.2e", params, worst)};
}

// 9 ---------------------------------------------------------------------

Outcome gradual_vs_single_shot() {
    std::vector<double> gradual, single;
    std::string per_seed;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto cfg = test::sample_config("blobs_prune.json");
        cfg.seed = seed;
        cfg.target_sparsity = 0.9;
        const auto g = prune_train(cfg);
        cfg.prune.single_shot = true;
        const auto s = prune_train(cfg);
        gradual.push_back(g.summary.final_val_acc);
        single.push_back(s.summary.final_val_acc);
        per_seed += fmt(" %.3f/%.3f", g.summary.final_val_acc, s.summary.final_val_acc);
    }
    const double gap = mean(gradual) - mean(single);
    return {gap >= 0.10, fmt("val acc gradual %.4f vs single-shot %.4f (gap %.1f points), per seed:%s",
                             mean(gradual), mean(single), 100.0 * gap, per_seed.c_str())};
}

// 10 --------------------------------------------------------------------

Outcome classifier_bias() {
    bool pass = true;
    std::string detail;
    for (auto opt : {OptimizerKind::LinBreg, OptimizerKind::AdaBreg}) {
        std::vector<double> cls[2], bb[2], bb_tensor_mean[2], val[2];
        for (int k = 0; k < 2; ++k)
            for (std::uint64_t seed = 1; seed <= 5; ++seed) {
                auto cfg = task_config("blobs", opt);
                cfg.dataset.n_per_class = 1000;
                cfg.epochs = 100;
                cfg.lr_decay.rate = 0.95;
                cfg.target_sparsity = 0.99;
                cfg.seed = seed;
                cfg.classifier_lambda_scale = k == 0 ? 1.0 : 2.0;
                const auto log = run(cfg);
                const auto& rep = log.epochs.back();
                cls[k].push_back(rep.classifier);
                bb[k].push_back(rep.backbone);
                std::vector<double> per;
                for (const auto& t : rep.per_tensor)
                    if (t.name != "fc3.weight") per.push_back(t.sparsity);
                bb_tensor_mean[k].push_back(mean(per));
                val[k].push_back(log.summary.final_val_acc);
            }
        const bool bias = mean(cls[0]) < mean(bb[0]) && mean(cls[0]) < mean(bb_tensor_mean[0]);
        const bool denser = mean(cls[1]) > mean(cls[0]);
        const bool keeps_acc = mean(val[1]) >= mean(val[0]);
        pass = pass && bias && denser && keeps_acc;
        detail += fmt(" [%s: classifier %.4f < backbone %.4f (per-tensor mean %.4f) %s; 2x lambda classifier "
                      "%.4f %s; val acc %.4f -> %.4f %s]",
                      to_string(opt).c_str(), mean(cls[0]), mean(bb[0]), mean(bb_tensor_mean[0]), bias ? "ok" : "NO",
                      mean(cls[1]), denser ? "ok" : "NO", mean(val[0]), mean(val[1]), keeps_acc ? "ok" : "NO");
    }
    return {pass, detail.substr(1)};
}

// 11 --------------------------------------------------------------------

Outcome subgradient_correction() {
    std::size_t corrections = 0, checks = 0, violations = 0, runs = 0;
    bool all_fired_corrected = true;
    std::string per_run;
    for (const std::string task : {"regression", "blobs"})
        for (auto opt : {OptimizerKind::LinBreg, OptimizerKind::AdaBreg}) {
            auto cfg = task_config(task, opt);
            cfg.variant = AdaptVariant::SubgradCorrect;
            cfg.epochs = std::min<std::size_t>(cfg.epochs, 500);
            const auto log = run(cfg);
            std::size_t fired = 0;
            for (const auto& r : log.rows) fired += r.fired;
            all_fired_corrected = all_fired_corrected && fired == log.summary.corrections;
            corrections += log.summary.corrections;
            checks += log.summary.dual_checks;
            violations += log.summary.dual_violations;
            ++runs;
            if (const auto at = log.summary.first_dual_violation_step) {
                // spacing of doubles at the size of the dual entries
                const double lam = log.rows[*at].lambda;
                per_run += fmt(" [%s %s: %zu violations, first at step %llu with lambda %.3g, ulp %.2g]",
                               task.c_str(), to_string(opt).c_str(), log.summary.dual_violations,
                               static_cast<unsigned long long>(*at), lam,
                               std::nextafter(lam, INFINITY) - lam);
            }
        }
    return {corrections > 0 && violations == 0 && all_fired_corrected,
            fmt("%zu runs, %zu corrections, %zu membership checks at tol %.0e, %zu violations", runs, corrections,
                checks, kSubgradientTol, violations) +
                per_run};
}

// 12 --------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
    const auto root = fs::temp_directory_path() / "bregsparse_acceptance_determinism";
    fs::remove_all(root);
    std::size_t ok = 0, total = 0;
    for (const char* name : {"regression_linbreg.json", "regression_adabreg.json", "blobs_linbreg.json",
                             "blobs_adabreg.json", "blobs_prune.json", "blobs_sgd.json"}) {
        auto cfg = test::sample_config(name);
        cfg.epochs = std::min<std::size_t>(cfg.epochs, 200);
        run_to_dir(cfg, root / "a");
        run_to_dir(cfg, root / "b");
        const auto a = slurp(root / "a" / "runlog.csv"), b = slurp(root / "b" / "runlog.csv");
        ++total;
        ok += !a.empty() && a == b;
    }
    fs::remove_all(root);
    return {ok == total, fmt("%zu/%zu configurations byte-identical", ok, total)};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"prox oracle equivalence", prox_oracles},
        {"loss decay monitor", lemma_monitor},
        {"target attainment", target_attainment},
        {"lambda0 insensitivity", lambda0_insensitivity},
        // reads the adaptive runs recorded by the others
        {"bounded relative change", bounded_relative_change},
        {"fixed lambda equivalence", fixed_lambda_equivalence},
        {"support recovery", support_recovery},
        {"gradient check", gradient_check},
        {"gradual vs single-shot pruning", gradual_vs_single_shot},
        {"classifier density and 2x lambda", classifier_bias},
        {"subgradient correction validity", subgradient_correction},
        {"determinism", determinism},
    };
    // printed in criterion order
    const std::vector<int> number = {1, 2, 4, 5, 3, 6, 7, 8, 9, 10, 11, 12};
    std::vector<std::string> lines(criteria.size());
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        lines[number[i] - 1] = fmt("%s %2d %s: ", o.pass ? "PASS" : "FAIL", number[i], criteria[i].first.c_str()) +
                               o.detail;
        std::cerr << lines[number[i] - 1] << std::endl;
    }
    std::cout << "---\n";
    for (const auto& l : lines) std::cout << l << '\n';
    std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << std::endl;
    return failed ? 1 : 0;
}
