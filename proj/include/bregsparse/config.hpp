#pragma once

// Run configuration and its JSON form. Keys mirror the struct fields in
// snake_case; unknown keys are rejected.

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "bregsparse/controller.hpp"
#include "bregsparse/error.hpp"
#include "bregsparse/models.hpp"

namespace bregsparse {

enum class OptimizerKind { LinBreg, AdaBreg, SGD, AdamW, Prune };
enum class DatasetKind { SparseRegression, Blobs };
enum class LrDecayKind { None, Plateau, PerEpochExp };

struct DatasetSpec {
    DatasetKind kind = DatasetKind::Blobs;
    // sparse regression
    std::size_t d = 200;
    std::size_t n = 120;
    std::size_t k_sparse = 8;
    double noise_sigma = 0.01;
    // blobs
    std::size_t n_per_class = 200;
    std::size_t classes = 3;
    std::size_t d_in = 4;
    double separation = 4.0;
    std::uint64_t seed = 1;
};

struct LrDecay {
    LrDecayKind kind = LrDecayKind::None;
    double factor = 0.25;
    std::size_t patience = 2;
    double rate = 0.95;
};

struct PruneSpec {
    std::size_t schedule_epochs = 10;
    bool single_shot = false;
};

struct RunConfig {
    ModelSpec model{ModelKind::MLP, {4, 32, 32, 3}, Activation::ReLU, LossKind::CrossEntropy, true};
    DatasetSpec dataset;
    OptimizerKind optimizer = OptimizerKind::LinBreg;
    bool adaptive = true;
    std::optional<double> fixed_lambda;
    double lambda0 = 0.01;
    double target_sparsity = 0.9;
    ControllerParams controller;  // target and lambda0 are filled from the fields above
    AdaptVariant variant = AdaptVariant::Plain;
    double tau = 0.1;  // step size for Bregman runs, learning rate otherwise
    double momentum = 0.9;
    bool nesterov = true;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_num = 1e-8;
    LrDecay lr_decay;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;  // 0 = full batch
    std::uint64_t seed = 0;
    double s_init = 0.9;
    double classifier_lambda_scale = 1.0;
    double val_fraction = 0.1;
    PruneSpec prune;
    bool monitor_lemma1 = true;

    bool is_bregman() const { return optimizer == OptimizerKind::LinBreg || optimizer == OptimizerKind::AdaBreg; }

    ControllerParams controller_params() const {
        ControllerParams p = controller;
        p.target = target_sparsity;
        p.lambda0 = lambda0;
        return p;
    }
};

// ---------------------------------------------------------------------------
// enum <-> string

namespace detail {

template <typename E>
struct EnumName {
    E value;
    const char* name;
};

template <typename E, std::size_t N>
std::string enum_to_string(E v, const EnumName<E> (&table)[N]) {
    for (const auto& e : table)
        if (e.value == v) return e.name;
    return "?";
}

template <typename E, std::size_t N>
E enum_from_string(const std::string& s, const EnumName<E> (&table)[N], const char* what) {
    for (const auto& e : table)
        if (s == e.name) return e.value;
    std::string allowed;
    for (const auto& e : table) allowed += std::string(allowed.empty() ? "" : ", ") + e.name;
    throw Error(ErrorCode::ConfigError, std::string("invalid ") + what + " '" + s + "' (expected one of: " + allowed + ")");
}

inline constexpr EnumName<OptimizerKind> kOptimizerNames[] = {{OptimizerKind::LinBreg, "linbreg"},
                                                              {OptimizerKind::AdaBreg, "adabreg"},
                                                              {OptimizerKind::SGD, "sgd"},
                                                              {OptimizerKind::AdamW, "adamw"},
                                                              {OptimizerKind::Prune, "prune"}};
inline constexpr EnumName<AdaptVariant> kVariantNames[] = {{AdaptVariant::Plain, "plain"},
                                                           {AdaptVariant::SubgradCorrect, "subgrad_correct"},
                                                           {AdaptVariant::ProxRescale, "prox_rescale"}};
inline constexpr EnumName<ModelKind> kModelNames[] = {
    {ModelKind::Linear, "linear"}, {ModelKind::Logistic, "logistic"}, {ModelKind::MLP, "mlp"}};
inline constexpr EnumName<Activation> kActivationNames[] = {{Activation::ReLU, "relu"}, {Activation::Tanh, "tanh"}};
inline constexpr EnumName<LossKind> kLossNames[] = {{LossKind::SquaredError, "squared_error"},
                                                    {LossKind::CrossEntropy, "cross_entropy"}};
inline constexpr EnumName<DatasetKind> kDatasetNames[] = {{DatasetKind::SparseRegression, "sparse_regression"},
                                                          {DatasetKind::Blobs, "blobs"}};
inline constexpr EnumName<LrDecayKind> kDecayNames[] = {
    {LrDecayKind::None, "none"}, {LrDecayKind::Plateau, "plateau"}, {LrDecayKind::PerEpochExp, "per_epoch_exp"}};

inline void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known, const std::string& where) {
    if (!j.is_object()) throw Error(ErrorCode::ConfigError, where + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (auto k : known) ok = ok || key == k;
        if (!ok) throw Error(ErrorCode::ConfigError, "unknown key '" + (where.empty() ? "" : where + ".") + key + "'");
    }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError,
                    "bad value for '" + (where.empty() ? "" : where + ".") + key + "': " + e.what());
    }
}

/// Adaptation interval: a positive integer or "inf".
inline nlohmann::json interval_to_json(std::uint64_t f) {
    if (f == kNeverAdapt) return "inf";
    return f;
}

inline std::uint64_t interval_from_json(const nlohmann::json& j, const std::string& key) {
    if (j.is_string() && j.get<std::string>() == "inf") return kNeverAdapt;
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    if (j.is_number_integer() && j.get<std::int64_t>() > 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
    throw Error(ErrorCode::ConfigError, "bad value for '" + key + "': expected a positive integer or \"inf\"");
}

}  // namespace detail

inline std::string to_string(OptimizerKind v) { return detail::enum_to_string(v, detail::kOptimizerNames); }
inline std::string to_string(AdaptVariant v) { return detail::enum_to_string(v, detail::kVariantNames); }

inline nlohmann::json to_json(const RunConfig& c) {
    using nlohmann::json;
    using namespace detail;
    json model = {{"kind", enum_to_string(c.model.kind, kModelNames)},
                  {"layer_sizes", c.model.layer_sizes},
                  {"activation", enum_to_string(c.model.activation, kActivationNames)},
                  {"loss", enum_to_string(c.model.loss, kLossNames)},
                  {"bias", c.model.bias}};
    json dataset = {{"kind", enum_to_string(c.dataset.kind, kDatasetNames)},
                    {"d", c.dataset.d},
                    {"n", c.dataset.n},
                    {"k_sparse", c.dataset.k_sparse},
                    {"noise_sigma", c.dataset.noise_sigma},
                    {"n_per_class", c.dataset.n_per_class},
                    {"classes", c.dataset.classes},
                    {"d_in", c.dataset.d_in},
                    {"separation", c.dataset.separation},
                    {"seed", c.dataset.seed}};
    json controller = {{"f", interval_to_json(c.controller.f)},
                       {"alpha", c.controller.alpha},
                       {"zeta", c.controller.zeta},
                       {"zeta_d", c.controller.zeta_d},
                       {"gamma_f", c.controller.gamma_f},
                       {"gamma_alpha", c.controller.gamma_alpha},
                       {"f_max", interval_to_json(c.controller.f_max)},
                       {"alpha_min", c.controller.alpha_min},
                       {"stop_on_tolerance", c.controller.stop_on_tolerance}};
    json decay = {{"kind", enum_to_string(c.lr_decay.kind, kDecayNames)},
                  {"factor", c.lr_decay.factor},
                  {"patience", c.lr_decay.patience},
                  {"rate", c.lr_decay.rate}};
    json prune = {{"schedule_epochs", c.prune.schedule_epochs}, {"single_shot", c.prune.single_shot}};
    json out = {{"model", model},
                {"dataset", dataset},
                {"optimizer", enum_to_string(c.optimizer, kOptimizerNames)},
                {"adaptive", c.adaptive},
                {"fixed_lambda", c.fixed_lambda ? json(*c.fixed_lambda) : json(nullptr)},
                {"lambda0", c.lambda0},
                {"target_sparsity", c.target_sparsity},
                {"controller", controller},
                {"variant", enum_to_string(c.variant, kVariantNames)},
                {"tau", c.tau},
                {"momentum", c.momentum},
                {"nesterov", c.nesterov},
                {"weight_decay", c.weight_decay},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"eps_num", c.eps_num},
                {"lr_decay", decay},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"seed", c.seed},
                {"s_init", c.s_init},
                {"classifier_lambda_scale", c.classifier_lambda_scale},
                {"val_fraction", c.val_fraction},
                {"prune", prune},
                {"monitor_lemma1", c.monitor_lemma1}};
    return out;
}

/// Strict parse; missing keys keep their defaults.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
    using namespace detail;
    check_keys(j,
               {"model", "dataset", "optimizer", "adaptive", "fixed_lambda", "lambda0", "target_sparsity",
                "controller", "variant", "tau", "momentum", "nesterov", "weight_decay", "beta1", "beta2", "eps_num",
                "lr_decay", "epochs", "batch_size", "seed", "s_init", "classifier_lambda_scale", "val_fraction",
                "prune", "monitor_lemma1"},
               "");
    RunConfig c;
    std::string s;
    if (j.contains("model")) {
        const auto& m = j.at("model");
        check_keys(m, {"kind", "layer_sizes", "activation", "loss", "bias"}, "model");
        if (m.contains("kind")) c.model.kind = enum_from_string(m.at("kind").get<std::string>(), kModelNames, "model.kind");
        read(m, "layer_sizes", c.model.layer_sizes, "model");
        if (m.contains("activation"))
            c.model.activation = enum_from_string(m.at("activation").get<std::string>(), kActivationNames, "model.activation");
        if (m.contains("loss")) c.model.loss = enum_from_string(m.at("loss").get<std::string>(), kLossNames, "model.loss");
        read(m, "bias", c.model.bias, "model");
    }
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        check_keys(d, {"kind", "d", "n", "k_sparse", "noise_sigma", "n_per_class", "classes", "d_in", "separation", "seed"},
                   "dataset");
        if (d.contains("kind"))
            c.dataset.kind = enum_from_string(d.at("kind").get<std::string>(), kDatasetNames, "dataset.kind");
        read(d, "d", c.dataset.d, "dataset");
        read(d, "n", c.dataset.n, "dataset");
        read(d, "k_sparse", c.dataset.k_sparse, "dataset");
        read(d, "noise_sigma", c.dataset.noise_sigma, "dataset");
        read(d, "n_per_class", c.dataset.n_per_class, "dataset");
        read(d, "classes", c.dataset.classes, "dataset");
        read(d, "d_in", c.dataset.d_in, "dataset");
        read(d, "separation", c.dataset.separation, "dataset");
        read(d, "seed", c.dataset.seed, "dataset");
    }
    if (j.contains("optimizer"))
        c.optimizer = enum_from_string(j.at("optimizer").get<std::string>(), kOptimizerNames, "optimizer");
    read(j, "adaptive", c.adaptive, "");
    if (j.contains("fixed_lambda") && !j.at("fixed_lambda").is_null()) {
        double v = 0.0;
        read(j, "fixed_lambda", v, "");
        c.fixed_lambda = v;
    }
    read(j, "lambda0", c.lambda0, "");
    read(j, "target_sparsity", c.target_sparsity, "");
    if (j.contains("controller")) {
        const auto& k = j.at("controller");
        check_keys(k, {"f", "alpha", "zeta", "zeta_d", "gamma_f", "gamma_alpha", "f_max", "alpha_min", "stop_on_tolerance"},
                   "controller");
        if (k.contains("f")) c.controller.f = interval_from_json(k.at("f"), "controller.f");
        if (k.contains("f_max")) c.controller.f_max = interval_from_json(k.at("f_max"), "controller.f_max");
        read(k, "alpha", c.controller.alpha, "controller");
        read(k, "zeta", c.controller.zeta, "controller");
        read(k, "zeta_d", c.controller.zeta_d, "controller");
        read(k, "gamma_f", c.controller.gamma_f, "controller");
        read(k, "gamma_alpha", c.controller.gamma_alpha, "controller");
        read(k, "alpha_min", c.controller.alpha_min, "controller");
        read(k, "stop_on_tolerance", c.controller.stop_on_tolerance, "controller");
    }
    if (j.contains("variant"))
        c.variant = enum_from_string(j.at("variant").get<std::string>(), kVariantNames, "variant");
    read(j, "tau", c.tau, "");
    read(j, "momentum", c.momentum, "");
    read(j, "nesterov", c.nesterov, "");
    read(j, "weight_decay", c.weight_decay, "");
    read(j, "beta1", c.beta1, "");
    read(j, "beta2", c.beta2, "");
    read(j, "eps_num", c.eps_num, "");
    if (j.contains("lr_decay")) {
        const auto& d = j.at("lr_decay");
        check_keys(d, {"kind", "factor", "patience", "rate"}, "lr_decay");
        if (d.contains("kind"))
            c.lr_decay.kind = enum_from_string(d.at("kind").get<std::string>(), kDecayNames, "lr_decay.kind");
        read(d, "factor", c.lr_decay.factor, "lr_decay");
        read(d, "patience", c.lr_decay.patience, "lr_decay");
        read(d, "rate", c.lr_decay.rate, "lr_decay");
    }
    read(j, "epochs", c.epochs, "");
    read(j, "batch_size", c.batch_size, "");
    read(j, "seed", c.seed, "");
    read(j, "s_init", c.s_init, "");
    read(j, "classifier_lambda_scale", c.classifier_lambda_scale, "");
    read(j, "val_fraction", c.val_fraction, "");
    if (j.contains("prune")) {
        const auto& p = j.at("prune");
        check_keys(p, {"schedule_epochs", "single_shot"}, "prune");
        read(p, "schedule_epochs", c.prune.schedule_epochs, "prune");
        read(p, "single_shot", c.prune.single_shot, "prune");
    }
    read(j, "monitor_lemma1", c.monitor_lemma1, "");
    return c;
}

/// Semantic checks beyond parsing. Throws ConfigError naming the offending keys.
inline void validate(const RunConfig& c) {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); };
    try {
        c.model.validate();
    } catch (const Error& e) {
        fail(std::string("model: ") + e.what());
    }
    if (c.dataset.kind == DatasetKind::SparseRegression) {
        if (c.model.layer_sizes.front() != c.dataset.d) fail("model.layer_sizes[0] must equal dataset.d");
        if (c.model.loss != LossKind::SquaredError) fail("sparse_regression needs model.loss = squared_error");
        if (c.dataset.k_sparse > c.dataset.d) fail("dataset.k_sparse must not exceed dataset.d");
    } else {
        if (c.model.layer_sizes.front() != c.dataset.d_in) fail("model.layer_sizes[0] must equal dataset.d_in");
        if (c.model.loss != LossKind::CrossEntropy) fail("blobs needs model.loss = cross_entropy");
        if (c.model.layer_sizes.back() != c.dataset.classes) fail("model output size must equal dataset.classes");
        if (c.dataset.classes < 2) fail("dataset.classes must be >= 2");
        if (c.dataset.n_per_class == 0) fail("dataset.n_per_class must be >= 1");
    }
    if (c.is_bregman()) {
        if (c.adaptive && c.fixed_lambda)
            fail("conflicting keys: 'adaptive' is true and 'fixed_lambda' is set (use exactly one)");
        if (!c.adaptive && !c.fixed_lambda)
            fail("conflicting keys: 'adaptive' is false but 'fixed_lambda' is missing (use exactly one)");
        if (c.fixed_lambda && *c.fixed_lambda < 0.0) fail("fixed_lambda must be nonnegative");
        if (c.adaptive && !(c.target_sparsity > 0.0 && c.target_sparsity < 1.0))
            fail("target_sparsity must be in (0,1) for adaptive runs");
        if (c.s_init < 0.0 || c.s_init >= 1.0) fail("s_init must be in [0,1)");
        if (c.lambda0 < 0.0) fail("lambda0 must be nonnegative");
        if (c.variant != AdaptVariant::Plain) {
            const double lam = c.adaptive ? c.lambda0 : c.fixed_lambda.value_or(0.0);
            if (!(lam > 0.0)) fail("variant '" + to_string(c.variant) + "' needs a positive lambda");
        }
        try {
            c.controller_params().validate();
        } catch (const Error& e) {
            fail(std::string("controller: ") + e.what());
        }
    }
    if (c.optimizer == OptimizerKind::Prune) {
        if (!(c.target_sparsity > 0.0 && c.target_sparsity < 1.0)) fail("target_sparsity must be in (0,1) for pruning");
        if (c.prune.schedule_epochs == 0) fail("prune.schedule_epochs must be positive");
    }
    if (!(c.tau > 0.0)) fail("tau must be positive");
    if (c.momentum < 0.0 || c.momentum >= 1.0) fail("momentum must be in [0,1)");
    if (c.beta1 < 0.0 || c.beta1 >= 1.0 || c.beta2 < 0.0 || c.beta2 >= 1.0) fail("beta1/beta2 must be in [0,1)");
    if (!(c.eps_num > 0.0)) fail("eps_num must be positive");
    if (c.val_fraction < 0.0 || c.val_fraction >= 1.0) fail("val_fraction must be in [0,1)");
    if (!(c.classifier_lambda_scale > 0.0)) fail("classifier_lambda_scale must be positive");
    if (c.lr_decay.kind == LrDecayKind::Plateau && !(c.lr_decay.factor > 0.0 && c.lr_decay.factor < 1.0))
        fail("lr_decay.factor must be in (0,1)");
    if (c.lr_decay.kind == LrDecayKind::PerEpochExp && !(c.lr_decay.rate > 0.0 && c.lr_decay.rate <= 1.0))
        fail("lr_decay.rate must be in (0,1]");
}

/// Applies a dotted-path override such as "controller.f=100" or
/// "target_sparsity=0.9". The value is parsed as JSON when possible and as a
/// string otherwise. The path must name an existing key.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw Error(ErrorCode::ConfigError, "override '" + assignment + "' is not of the form key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    nlohmann::json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(part))
            throw Error(ErrorCode::ConfigError, "override references unknown key '" + key + "'");
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    auto parsed = nlohmann::json::parse(raw, nullptr, false);
    *node = parsed.is_discarded() ? nlohmann::json(raw) : parsed;
}

inline RunConfig with_overrides(const RunConfig& base, const std::vector<std::string>& overrides) {
    auto j = to_json(base);
    for (const auto& o : overrides) apply_override(j, o);
    return run_config_from_json(j);
}

/// FNV-1a over the canonical JSON dump.
inline std::string config_hash(const RunConfig& c) {
    const std::string s = to_json(c).dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = hex[h & 0xF];
        h >>= 4;
    }
    return out;
}

}  // namespace bregsparse
