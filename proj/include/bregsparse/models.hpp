#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bregsparse/error.hpp"
#include "bregsparse/optim.hpp"
#include "bregsparse/param_store.hpp"

namespace bregsparse {

/// Dense row-major matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    bool operator==(const Matrix&) const = default;
};

struct Dataset {
    Matrix features;              // n x d_in
    std::vector<double> labels;   // real targets, or class indices stored as doubles
    std::size_t num_classes = 0;  // 0 for regression
    std::uint64_t seed = 0;

    std::size_t size() const noexcept { return features.rows; }
    std::size_t d_in() const noexcept { return features.cols; }
    bool is_classification() const noexcept { return num_classes > 0; }

    void validate() const {
        require(features.data.size() == features.rows * features.cols, ErrorCode::ShapeMismatch,
                "dataset feature storage mismatch");
        require(labels.size() == features.rows, ErrorCode::ShapeMismatch, "dataset label count mismatch");
    }

    bool operator==(const Dataset&) const = default;
};

enum class ModelKind { Linear, Logistic, MLP };
enum class Activation { ReLU, Tanh };
enum class LossKind { SquaredError, CrossEntropy };

struct ModelSpec {
    ModelKind kind = ModelKind::MLP;
    std::vector<std::size_t> layer_sizes;  // input, hidden..., output
    Activation activation = Activation::ReLU;
    LossKind loss = LossKind::CrossEntropy;
    bool bias = true;

    std::size_t num_layers() const noexcept { return layer_sizes.empty() ? 0 : layer_sizes.size() - 1; }

    void validate() const {
        require(layer_sizes.size() >= 2, ErrorCode::InvalidArgument, "model needs input and output sizes");
        for (auto s : layer_sizes) require(s > 0, ErrorCode::InvalidArgument, "layer sizes must be positive");
        if (kind == ModelKind::MLP)
            require(layer_sizes.size() >= 3, ErrorCode::InvalidArgument, "MLP needs at least one hidden layer");
        else
            require(layer_sizes.size() == 2, ErrorCode::InvalidArgument, "linear models have exactly one layer");
        if (loss == LossKind::SquaredError)
            require(layer_sizes.back() == 1, ErrorCode::InvalidArgument, "squared error expects a scalar output");
        else
            require(layer_sizes.back() >= 2, ErrorCode::InvalidArgument, "cross entropy expects >= 2 classes");
    }
};

/// Builds a zero-valued store: per layer "fc<l>.weight" [out, in]
/// (regularized) and "fc<l>.bias" [out] (excluded). The last layer of a
/// classifier is tagged with the classifier role.
inline ParamStore make_store(const ModelSpec& spec) {
    spec.validate();
    ParamStore store;
    const std::size_t L = spec.num_layers();
    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t in = spec.layer_sizes[l], out = spec.layer_sizes[l + 1];
        ParamTensor w;
        w.name = "fc" + std::to_string(l) + ".weight";
        w.shape = {out, in};
        w.values.assign(out * in, 0.0);
        if (l + 1 == L && spec.loss == LossKind::CrossEntropy) w.role = kClassifierRole;
        store.add(std::move(w));
        if (spec.bias) {
            ParamTensor b;
            b.name = "fc" + std::to_string(l) + ".bias";
            b.shape = {out};
            b.values.assign(out, 0.0);
            b.regularized = false;
            store.add(std::move(b));
        }
    }
    return store;
}

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;  // flat, aligned with the store
    std::size_t correct = 0;   // classification hits in the batch
};

namespace detail {

struct LayerView {
    std::size_t w, b;  // flat offsets; b == npos when no bias
    std::size_t in, out;
};

inline std::vector<LayerView> layer_views(const ModelSpec& spec, const ParamStore& store) {
    const std::size_t L = spec.num_layers();
    const std::size_t expected = spec.bias ? 2 * L : L;
    require(store.num_tensors() == expected, ErrorCode::ShapeMismatch, "store does not match model spec");
    std::vector<LayerView> views;
    std::size_t off = 0, t = 0;
    for (std::size_t l = 0; l < L; ++l) {
        LayerView v{off, std::string::npos, spec.layer_sizes[l], spec.layer_sizes[l + 1]};
        require(store.tensor(t).size() == v.in * v.out, ErrorCode::ShapeMismatch, "weight shape mismatch");
        off += store.tensor(t++).size();
        if (spec.bias) {
            require(store.tensor(t).size() == v.out, ErrorCode::ShapeMismatch, "bias shape mismatch");
            v.b = off;
            off += store.tensor(t++).size();
        }
        views.push_back(v);
    }
    return views;
}

inline double activate(Activation a, double z) { return a == Activation::ReLU ? (z > 0.0 ? z : 0.0) : std::tanh(z); }

/// Derivative expressed through pre-activation z and activation h.
inline double activate_grad(Activation a, double z, double h) {
    return a == Activation::ReLU ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - h * h;
}

}  // namespace detail

/// Mean loss over the batch and its exact gradient by backpropagation.
/// Squared error is (F(x) - y)^2 per sample; cross entropy uses a softmax head.
/// Samples are processed in index order, so results are bit-reproducible.
inline LossGrad loss_and_grad(const ModelSpec& spec, const ParamStore& store, const Dataset& data,
                              std::span<const std::size_t> batch, bool want_grad = true) {
    spec.validate();
    data.validate();
    require(data.d_in() == spec.layer_sizes.front(), ErrorCode::ShapeMismatch, "feature width != model input");
    require(!batch.empty(), ErrorCode::InvalidArgument, "empty batch");
    const auto views = detail::layer_views(spec, store);
    const auto theta = flatten(store);
    const std::size_t L = views.size();

    LossGrad out;
    if (want_grad) out.grad.assign(theta.size(), 0.0);

    std::vector<std::vector<double>> z(L), h(L + 1);
    std::vector<double> delta, prev_delta;
    for (auto idx : batch) {
        require(idx < data.size(), ErrorCode::ShapeMismatch, "batch index out of range");
        auto x = data.features.row(idx);
        h[0].assign(x.begin(), x.end());
        for (std::size_t l = 0; l < L; ++l) {
            const auto& v = views[l];
            z[l].assign(v.out, 0.0);
            for (std::size_t o = 0; o < v.out; ++o) {
                double acc = v.b != std::string::npos ? theta[v.b + o] : 0.0;
                const double* w = theta.data() + v.w + o * v.in;
                for (std::size_t i = 0; i < v.in; ++i) acc += w[i] * h[l][i];
                z[l][o] = acc;
            }
            h[l + 1].resize(v.out);
            for (std::size_t o = 0; o < v.out; ++o)
                h[l + 1][o] = l + 1 < L ? detail::activate(spec.activation, z[l][o]) : z[l][o];
        }

        const auto& logits = z[L - 1];
        delta.assign(logits.size(), 0.0);
        const double y = data.labels[idx];
        if (spec.loss == LossKind::SquaredError) {
            const double r = logits[0] - y;
            out.loss += r * r;
            delta[0] = 2.0 * r;
        } else {
            const auto cls = static_cast<std::size_t>(y);
            require(cls < logits.size(), ErrorCode::ShapeMismatch, "class label out of range");
            const double mx = *std::max_element(logits.begin(), logits.end());
            double denom = 0.0;
            for (double lg : logits) denom += std::exp(lg - mx);
            const double log_denom = std::log(denom);
            out.loss += -(logits[cls] - mx - log_denom);
            const auto argmax = static_cast<std::size_t>(
                std::distance(logits.begin(), std::max_element(logits.begin(), logits.end())));
            if (argmax == cls) ++out.correct;
            for (std::size_t c = 0; c < logits.size(); ++c)
                delta[c] = std::exp(logits[c] - mx - log_denom) - (c == cls ? 1.0 : 0.0);
        }
        if (!want_grad) continue;

        for (std::size_t l = L; l-- > 0;) {
            const auto& v = views[l];
            for (std::size_t o = 0; o < v.out; ++o) {
                double* gw = out.grad.data() + v.w + o * v.in;
                for (std::size_t i = 0; i < v.in; ++i) gw[i] += delta[o] * h[l][i];
                if (v.b != std::string::npos) out.grad[v.b + o] += delta[o];
            }
            if (l == 0) break;
            prev_delta.assign(v.in, 0.0);
            for (std::size_t o = 0; o < v.out; ++o) {
                const double* w = theta.data() + v.w + o * v.in;
                for (std::size_t i = 0; i < v.in; ++i) prev_delta[i] += w[i] * delta[o];
            }
            for (std::size_t i = 0; i < v.in; ++i)
                prev_delta[i] *= detail::activate_grad(spec.activation, z[l - 1][i], h[l][i]);
            std::swap(delta, prev_delta);
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.loss *= inv;
    for (auto& g : out.grad) g *= inv;
    return out;
}

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;  // 0 for regression
};

inline Evaluation evaluate(const ModelSpec& spec, const ParamStore& store, const Dataset& data,
                           std::span<const std::size_t> indices) {
    if (indices.empty()) return {};
    auto r = loss_and_grad(spec, store, data, indices, false);
    Evaluation e{r.loss, 0.0};
    if (data.is_classification()) e.accuracy = static_cast<double>(r.correct) / static_cast<double>(indices.size());
    return e;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SparseRegression {
    Dataset data;
    std::vector<double> true_theta;
};

/// Gaussian design, k-sparse +-1 ground truth on a random support,
/// y = A theta* + sigma * noise.
inline SparseRegression gen_sparse_regression(std::size_t d, std::size_t n, std::size_t k_sparse, double noise_sigma,
                                              std::uint64_t seed) {
    require(d > 0 && n > 0, ErrorCode::InvalidArgument, "sparse regression needs d, n >= 1");
    require(k_sparse <= d, ErrorCode::InvalidArgument, "k_sparse must not exceed d");
    require(noise_sigma >= 0.0, ErrorCode::InvalidArgument, "noise sigma must be nonnegative");
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    SparseRegression out;
    out.data.seed = seed;
    out.data.features = Matrix(n, d);
    for (auto& v : out.data.features.data) v = normal(rng);

    std::vector<std::size_t> perm(d);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    out.true_theta.assign(d, 0.0);
    std::bernoulli_distribution coin(0.5);
    for (std::size_t j = 0; j < k_sparse; ++j) out.true_theta[perm[j]] = coin(rng) ? 1.0 : -1.0;

    out.data.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = out.data.features.row(i);
        double y = std::inner_product(row.begin(), row.end(), out.true_theta.begin(), 0.0);
        out.data.labels[i] = y + noise_sigma * normal(rng);
    }
    return out;
}

/// Unit-variance Gaussian clusters whose centers are `separation` apart.
/// With classes <= d_in the centers form a randomly rotated scaled simplex
/// (all pairwise distances equal); otherwise random centers are scaled so
/// the closest pair is `separation` apart.
inline Dataset gen_blobs(std::size_t n_per_class, std::size_t classes, std::size_t d_in, double separation,
                         std::uint64_t seed) {
    require(classes >= 2, ErrorCode::InvalidArgument, "blobs need at least two classes");
    require(n_per_class >= 1, ErrorCode::InvalidArgument, "blobs need n_per_class >= 1 (empty dataset)");
    require(d_in >= 1, ErrorCode::InvalidArgument, "blobs need d_in >= 1");
    require(separation >= 0.0, ErrorCode::InvalidArgument, "separation must be nonnegative");
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    Matrix centers(classes, d_in);
    if (classes <= d_in) {
        // random orthonormal basis by Gram-Schmidt
        Matrix q(d_in, d_in);
        for (auto& v : q.data) v = normal(rng);
        for (std::size_t r = 0; r < d_in; ++r) {
            for (std::size_t s = 0; s < r; ++s) {
                double dot = 0.0;
                for (std::size_t c = 0; c < d_in; ++c) dot += q(r, c) * q(s, c);
                for (std::size_t c = 0; c < d_in; ++c) q(r, c) -= dot * q(s, c);
            }
            double nrm = 0.0;
            for (std::size_t c = 0; c < d_in; ++c) nrm += q(r, c) * q(r, c);
            nrm = std::sqrt(nrm);
            for (std::size_t c = 0; c < d_in; ++c) q(r, c) /= nrm;
        }
        const double scale = separation / std::sqrt(2.0);
        for (std::size_t k = 0; k < classes; ++k)
            for (std::size_t c = 0; c < d_in; ++c) centers(k, c) = scale * q(k, c);
    } else {
        for (auto& v : centers.data) v = normal(rng);
        double min_dist = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < classes; ++a)
            for (std::size_t b = a + 1; b < classes; ++b) {
                double dd = 0.0;
                for (std::size_t c = 0; c < d_in; ++c) dd += (centers(a, c) - centers(b, c)) * (centers(a, c) - centers(b, c));
                min_dist = std::min(min_dist, std::sqrt(dd));
            }
        for (auto& v : centers.data) v *= separation / min_dist;
    }

    Dataset out;
    out.seed = seed;
    out.num_classes = classes;
    out.features = Matrix(n_per_class * classes, d_in);
    out.labels.resize(n_per_class * classes);
    for (std::size_t i = 0; i < n_per_class * classes; ++i) {
        const std::size_t k = i % classes;
        for (std::size_t c = 0; c < d_in; ++c) out.features(i, c) = centers(k, c) + normal(rng);
        out.labels[i] = static_cast<double>(k);
    }
    return out;
}

/// Largest eigenvalue of A^T A / n by power iteration; n defaults to the
/// number of rows.
inline double lipschitz_constant_quadratic(const Matrix& a, std::optional<double> n = std::nullopt,
                                           double rel_tol = 1e-12, std::size_t max_iter = 100000) {
    require(a.rows > 0 && a.cols > 0, ErrorCode::InvalidArgument, "empty matrix");
    require(!n || *n > 0.0, ErrorCode::InvalidArgument, "normalization n must be positive");
    const double inv_n = 1.0 / n.value_or(static_cast<double>(a.rows));
    std::vector<double> v(a.cols), av(a.rows), w(a.cols);
    Rng rng(0x5eed);
    std::uniform_real_distribution<double> unif(0.5, 1.5);
    for (auto& x : v) x = unif(rng);
    auto normalize = [](std::vector<double>& x) {
        double nrm = std::sqrt(std::inner_product(x.begin(), x.end(), x.begin(), 0.0));
        if (nrm > 0.0)
            for (auto& e : x) e /= nrm;
        return nrm;
    };
    normalize(v);
    double est = 0.0;
    for (std::size_t it = 0; it < max_iter; ++it) {
        for (std::size_t i = 0; i < a.rows; ++i) {
            auto r = a.row(i);
            av[i] = std::inner_product(r.begin(), r.end(), v.begin(), 0.0);
        }
        std::fill(w.begin(), w.end(), 0.0);
        for (std::size_t i = 0; i < a.rows; ++i) {
            auto r = a.row(i);
            for (std::size_t j = 0; j < a.cols; ++j) w[j] += r[j] * av[i];
        }
        for (auto& x : w) x *= inv_n;
        const double rayleigh = std::inner_product(v.begin(), v.end(), w.begin(), 0.0);
        if (normalize(w) == 0.0) return 0.0;
        v.swap(w);
        if (it > 0 && std::abs(rayleigh - est) <= rel_tol * std::abs(rayleigh)) return rayleigh;
        est = rayleigh;
    }
    throw Error(ErrorCode::NonConvergence, "power iteration did not converge");
}

/// Gradient Lipschitz constant of the mean squared-error loss of a linear
/// model without bias on `data`: 2 * lambda_max(A^T A / n). Empty when the
/// model has no closed-form constant.
inline std::optional<double> smoothness_constant(const ModelSpec& spec, const Dataset& data,
                                                 std::span<const std::size_t> rows) {
    if (spec.kind != ModelKind::Linear || spec.loss != LossKind::SquaredError || spec.bias) return std::nullopt;
    Matrix sub(rows.size(), data.d_in());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto r = data.features.row(rows[i]);
        std::copy(r.begin(), r.end(), sub.data.begin() + static_cast<std::ptrdiff_t>(i * sub.cols));
    }
    return 2.0 * lipschitz_constant_quadratic(sub);
}

// ---------------------------------------------------------------------------
// CSV: one row per sample, label in the last column, header row first.

inline void write_dataset_csv(std::ostream& os, const Dataset& data) {
    for (std::size_t c = 0; c < data.d_in(); ++c) os << 'x' << c << ',';
    os << "label\n";
    char buf[64];
    auto put = [&](double v) {
        auto res = std::to_chars(buf, buf + sizeof buf, v);
        os.write(buf, res.ptr - buf);
    };
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t c = 0; c < data.d_in(); ++c) {
            put(data.features(i, c));
            os << ',';
        }
        put(data.labels[i]);
        os << '\n';
    }
}

inline Dataset read_dataset_csv(std::istream& is, std::size_t num_classes = 0) {
    std::string line;
    require(static_cast<bool>(std::getline(is, line)), ErrorCode::Io, "dataset CSV is empty");
    const auto cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    require(cols >= 2, ErrorCode::Io, "dataset CSV needs at least one feature and a label");
    Dataset out;
    out.num_classes = num_classes;
    out.features.cols = cols - 1;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::size_t pos = 0, col = 0;
        while (pos <= line.size()) {
            auto end = line.find(',', pos);
            if (end == std::string::npos) end = line.size();
            double v = 0.0;
            auto res = std::from_chars(line.data() + pos, line.data() + end, v);
            require(res.ec == std::errc(), ErrorCode::Io, "bad number in dataset CSV");
            if (col + 1 < cols)
                out.features.data.push_back(v);
            else
                out.labels.push_back(v);
            ++col;
            pos = end + 1;
        }
        require(col == cols, ErrorCode::Io, "ragged dataset CSV row");
        ++out.features.rows;
    }
    return out;
}

}  // namespace bregsparse
