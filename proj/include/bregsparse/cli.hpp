#pragma once

// Command-line front end. Run directory layout:
//   config.json     resolved configuration
//   runlog.csv      one row per step (see kCsvHeader)
//   lemma1.csv      loss-decay monitor, when applicable
//   params.bin      final parameters and optimizer state (checkpoint.hpp)
//   summary.json    written by emit_report
//   layerwise.json  final SparsityReport, written by emit_report

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bregsparse/checkpoint.hpp"
#include "bregsparse/config.hpp"
#include "bregsparse/error.hpp"
#include "bregsparse/metrics.hpp"
#include "bregsparse/runner.hpp"

namespace bregsparse {

namespace fs = std::filesystem;

enum class Subcommand { Train, Sweep, Prune, Report, ValidateConfig };

struct CliCommand {
    Subcommand subcommand = Subcommand::Train;
    std::string config_path;
    std::string output_dir;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string axis;
    std::vector<std::string> values;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitDiverged = 2;

inline nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::ConfigError, path.string() + " is not valid JSON");
    return j;
}

inline void write_json_file(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

/// Loads a config file, then applies --set overrides and the --seed flag.
inline RunConfig load_config(const CliCommand& cmd) {
    if (cmd.config_path.empty()) throw Error(ErrorCode::ConfigError, "--config is required");
    if (!fs::exists(cmd.config_path)) throw Error(ErrorCode::ConfigError, "config file not found: " + cmd.config_path);
    RunConfig cfg = run_config_from_json(read_json_file(cmd.config_path));
    cfg = with_overrides(cfg, cmd.overrides);
    if (cmd.seed) cfg.seed = *cmd.seed;
    validate(cfg);
    return cfg;
}

inline void write_lemma1_csv(std::ostream& os, const std::vector<Lemma1Record>& recs) {
    os << "k,lhs,rhs,residual,tau,smoothness,lambda_k,lambda_km1,violation\n";
    for (const auto& r : recs)
        os << r.k << ',' << format_real(r.lhs) << ',' << format_real(r.rhs) << ',' << format_real(r.residual) << ','
           << format_real(r.tau) << ',' << format_real(r.smoothness) << ',' << format_real(r.lambda_k) << ','
           << format_real(r.lambda_km1) << ',' << (r.violation ? 1 : 0) << '\n';
}

/// Number of rows a complete runlog.csv has for `cfg`, header excluded.
inline std::size_t expected_rows(const RunConfig& cfg) {
    const Dataset data = make_dataset(cfg.dataset);
    const auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(data.size())));
    const std::size_t n_train = data.size() - n_val;
    const std::size_t bs = cfg.batch_size == 0 || cfg.batch_size >= n_train ? n_train : cfg.batch_size;
    return 1 + cfg.epochs * ((n_train + bs - 1) / bs);
}

namespace detail {

inline double parse_real(const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw Error(ErrorCode::IncompleteLog, "runlog.csv: bad number '" + s + "'");
    return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

}  // namespace detail

/// Parses runlog.csv back into rows. Throws IncompleteLog on a malformed file.
inline std::vector<StepRecord> read_runlog_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kCsvHeader) throw Error(ErrorCode::IncompleteLog, "runlog.csv: missing header");
    std::vector<StepRecord> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto c = detail::split_csv(line);
        if (c.size() != 12) throw Error(ErrorCode::IncompleteLog, "runlog.csv: truncated row");
        StepRecord r;
        r.step = static_cast<std::uint64_t>(detail::parse_real(c[0]));
        r.epoch = static_cast<std::size_t>(detail::parse_real(c[1]));
        r.loss = detail::parse_real(c[2]);
        r.train_acc = detail::parse_real(c[3]);
        r.val_acc = detail::parse_real(c[4]);
        r.sparsity_reg = detail::parse_real(c[5]);
        r.sparsity_all = detail::parse_real(c[6]);
        r.lambda = detail::parse_real(c[7]);
        r.eps = detail::parse_real(c[8]);
        r.f = c[9] == "inf" ? kNeverAdapt : static_cast<std::uint64_t>(detail::parse_real(c[9]));
        r.alpha = detail::parse_real(c[10]);
        r.frob_norm = detail::parse_real(c[11]);
        rows.push_back(r);
    }
    return rows;
}

/// Writes summary.json and layerwise.json from the artifacts in `run_dir`.
/// Throws IncompleteLog when the run directory does not hold a finished run.
inline nlohmann::json emit_report(const fs::path& run_dir) {
    auto need = [&](const char* name) {
        const auto p = run_dir / name;
        if (!fs::exists(p)) throw Error(ErrorCode::IncompleteLog, "missing " + p.string());
        return p;
    };
    const RunConfig cfg = run_config_from_json(read_json_file(need("config.json")));
    std::ifstream csv(need("runlog.csv"));
    const auto rows = read_runlog_csv(csv);
    if (rows.size() != expected_rows(cfg))
        throw Error(ErrorCode::IncompleteLog, "runlog.csv has " + std::to_string(rows.size()) + " rows, expected " +
                                                  std::to_string(expected_rows(cfg)));
    std::ifstream bin(need("params.bin"), std::ios::binary);
    const Checkpoint ck = read_checkpoint(bin);

    std::size_t violations = 0;
    if (fs::exists(run_dir / "lemma1.csv")) {
        std::ifstream lf(run_dir / "lemma1.csv");
        std::string line;
        std::getline(lf, line);
        while (std::getline(lf, line))
            if (!line.empty() && line.back() == '1') ++violations;
    }

    const double zeta = cfg.controller.zeta;
    const auto& last = rows.back();
    nlohmann::json steps_to_tol = nullptr;
    double best_val = 0.0, lam_min = std::numeric_limits<double>::infinity(), lam_max = 0.0;
    std::size_t lam_updates = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (steps_to_tol.is_null() && within_tolerance(r.sparsity_reg, cfg.target_sparsity, zeta)) steps_to_tol = r.step;
        best_val = std::max(best_val, r.val_acc);
        lam_min = std::min(lam_min, r.lambda);
        lam_max = std::max(lam_max, r.lambda);
        if (i > 0 && r.lambda != rows[i - 1].lambda) ++lam_updates;
    }

    nlohmann::json summary = {
        {"config_hash", config_hash(cfg)},
        {"final_sparsity", last.sparsity_reg},
        {"target_sparsity", cfg.target_sparsity},
        {"within_tolerance", within_tolerance(last.sparsity_reg, cfg.target_sparsity, zeta)},
        {"steps_to_tolerance", steps_to_tol},
        {"best_val_acc", best_val},
        {"lambda_final", last.lambda},
        {"violations_lemma1", violations},
        {"lambda_min", lam_min},
        {"lambda_max", lam_max},
        {"lambda_updates", lam_updates},
    };
    write_json_file(run_dir / "summary.json", summary);
    write_json_file(run_dir / "layerwise.json", to_json(layerwise_report(ck.params, last.step)));
    return summary;
}

/// Trains `cfg` and writes all run artifacts to `dir`. Divergence leaves
/// the partial runlog behind and rethrows.
inline nlohmann::json run_to_dir(const RunConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    write_json_file(dir / "config.json", to_json(cfg));
    fs::remove(dir / "summary.json");
    fs::remove(dir / "layerwise.json");
    RunLog log;
    {
        std::ofstream csv(dir / "runlog.csv");
        if (!csv) throw Error(ErrorCode::Io, "cannot write " + (dir / "runlog.csv").string());
        CsvSink sink(csv);
        log = train(cfg, &sink);
    }
    if (!log.lemma1.empty()) {
        std::ofstream lf(dir / "lemma1.csv");
        write_lemma1_csv(lf, log.lemma1);
    }
    {
        std::ofstream bin(dir / "params.bin", std::ios::binary);
        if (cfg.is_bregman()) {
            OptimizerCheckpoint opt;
            opt.lambda = log.summary.lambda_final;
            opt.tau = cfg.tau;
            opt.p = log.final_dual;
            write_checkpoint(bin, log.final_params, &opt);
        } else {
            write_checkpoint(bin, log.final_params);
        }
    }
    return emit_report(dir);
}

inline int run_command(const CliCommand& cmd, std::ostream& out) {
    switch (cmd.subcommand) {
        case Subcommand::ValidateConfig: {
            const auto cfg = load_config(cmd);
            out << "config ok (hash " << config_hash(cfg) << ")\n";
            return kExitOk;
        }
        case Subcommand::Train:
        case Subcommand::Prune: {
            const auto cfg = load_config(cmd);
            if (cmd.subcommand == Subcommand::Prune && cfg.optimizer != OptimizerKind::Prune)
                throw Error(ErrorCode::ConfigError, "prune needs optimizer = prune");
            if (cmd.output_dir.empty()) throw Error(ErrorCode::ConfigError, "--out is required");
            const auto summary = run_to_dir(cfg, cmd.output_dir);
            out << summary.dump(2) << '\n';
            return kExitOk;
        }
        case Subcommand::Sweep: {
            const auto base = load_config(cmd);
            if (cmd.output_dir.empty()) throw Error(ErrorCode::ConfigError, "--out is required");
            if (cmd.axis.empty()) throw Error(ErrorCode::ConfigError, "--axis is required");
            std::vector<nlohmann::json> values;
            for (const auto& v : cmd.values) {
                auto parsed = nlohmann::json::parse(v, nullptr, false);
                values.push_back(parsed.is_discarded() ? nlohmann::json(v) : parsed);
            }
            const auto configs = sweep_configs(base, cmd.axis, values);
            nlohmann::json runs = nlohmann::json::array();
            for (std::size_t i = 0; i < configs.size(); ++i) {
                char name[32];
                std::snprintf(name, sizeof name, "run_%03zu", i);
                auto s = run_to_dir(configs[i], fs::path(cmd.output_dir) / name);
                s["dir"] = name;
                s["value"] = values[i];
                runs.push_back(std::move(s));
            }
            fs::create_directories(cmd.output_dir);
            const nlohmann::json summary = {{"axis", cmd.axis}, {"values", values}, {"runs", runs}};
            write_json_file(fs::path(cmd.output_dir) / "summary.json", summary);
            out << summary.dump(2) << '\n';
            return kExitOk;
        }
        case Subcommand::Report: {
            if (cmd.output_dir.empty()) throw Error(ErrorCode::ConfigError, "--run-dir is required");
            out << emit_report(cmd.output_dir).dump(2) << '\n';
            return kExitOk;
        }
    }
    return kExitError;
}

/// Parses argv and runs the subcommand. Exit codes: 0 success, 1 usage or
/// config error (including incomplete logs), 2 divergence.
inline int parse_and_run(int argc, const char* const* argv, std::ostream& out = std::cout,
                         std::ostream& err = std::cerr) {
    CLI::App app{"Sparse training with adaptive Bregman iterations", "bregsparse"};
    app.require_subcommand(1);
    CliCommand cmd;
    std::uint64_t seed = 0;

    auto add_run_flags = [&](CLI::App* sub) {
        sub->add_option("--config", cmd.config_path, "run configuration (JSON)")->required();
        sub->add_option("--set", cmd.overrides, "override key=value (repeatable)");
        sub->add_option("--seed", seed, "seed override");
    };
    auto* train_cmd = app.add_subcommand("train", "train one configuration");
    add_run_flags(train_cmd);
    train_cmd->add_option("--out", cmd.output_dir, "run directory")->required();
    auto* prune_cmd = app.add_subcommand("prune", "gradual magnitude pruning run");
    add_run_flags(prune_cmd);
    prune_cmd->add_option("--out", cmd.output_dir, "run directory")->required();
    auto* sweep_cmd = app.add_subcommand("sweep", "run a configuration for each value of one key");
    add_run_flags(sweep_cmd);
    sweep_cmd->add_option("--out", cmd.output_dir, "sweep directory")->required();
    sweep_cmd->add_option("--axis", cmd.axis, "dotted config key")->required();
    sweep_cmd->add_option("--values", cmd.values, "comma separated values")->delimiter(',')->required();
    auto* report_cmd = app.add_subcommand("report", "rewrite summary.json and layerwise.json of a run");
    report_cmd->add_option("--run-dir,--out", cmd.output_dir, "run directory")->required();
    auto* validate_cmd = app.add_subcommand("validate-config", "check a configuration");
    add_run_flags(validate_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << e.what() << '\n' << app.help();
        return kExitError;
    }

    if (train_cmd->parsed()) cmd.subcommand = Subcommand::Train;
    if (prune_cmd->parsed()) cmd.subcommand = Subcommand::Prune;
    if (sweep_cmd->parsed()) cmd.subcommand = Subcommand::Sweep;
    if (report_cmd->parsed()) cmd.subcommand = Subcommand::Report;
    if (validate_cmd->parsed()) cmd.subcommand = Subcommand::ValidateConfig;
    for (auto* sub : {train_cmd, prune_cmd, sweep_cmd, validate_cmd})
        if (sub->parsed() && sub->count("--seed")) cmd.seed = seed;

    try {
        return run_command(cmd, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return e.code() == ErrorCode::Diverged ? kExitDiverged : kExitError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitError;
    }
}

}  // namespace bregsparse
