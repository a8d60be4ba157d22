#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bregsparse/error.hpp"

namespace bregsparse {

enum class Penalty { L1, GroupNorm };
enum class Scope { RegularizedOnly, All };

/// Role tag used by layer-wise reports. Classifier heads are reported
/// separately from the rest of the network ("backbone").
inline constexpr const char* kClassifierRole = "classifier";

struct ParamTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
    // false for biases and normalization parameters: they bypass the prox
    bool regularized = true;
    Penalty penalty = Penalty::L1;
    // GroupNorm: slices along this axis form the groups
    std::optional<std::size_t> group_axis;
    double lambda_scale = 1.0;
    std::string role;

    std::size_t size() const noexcept { return values.size(); }
    bool is_classifier() const noexcept { return role == kClassifierRole; }
    bool operator==(const ParamTensor&) const = default;

    void validate() const {
        std::size_t n = 1;
        for (auto s : shape) {
            require(s > 0, ErrorCode::ShapeMismatch, "tensor '" + name + "' has a zero dimension");
            n *= s;
        }
        require(!shape.empty(), ErrorCode::ShapeMismatch, "tensor '" + name + "' has empty shape");
        require(n == values.size(), ErrorCode::ShapeMismatch,
                "tensor '" + name + "': product(shape) != length(values)");
        require(lambda_scale > 0.0, ErrorCode::InvalidArgument,
                "tensor '" + name + "': lambda_scale must be positive");
        if (penalty == Penalty::GroupNorm) {
            require(group_axis.has_value(), ErrorCode::InvalidPartition,
                    "tensor '" + name + "': GroupNorm penalty needs a group axis");
            require(*group_axis < shape.size(), ErrorCode::InvalidPartition,
                    "tensor '" + name + "': group axis out of range");
        }
    }
};

/// A partition of flat indices into disjoint groups.
using Partition = std::vector<std::vector<std::size_t>>;

/// Groups are slices along the group axis (row-major layout). For a matrix
/// with axis 0 each output row is one group. L1 tensors get singleton groups.
inline Partition groups_of(const ParamTensor& t) {
    Partition groups;
    if (t.penalty != Penalty::GroupNorm) {
        groups.resize(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) groups[i] = {i};
        return groups;
    }
    t.validate();
    const std::size_t axis = *t.group_axis;
    std::size_t inner = 1;
    for (std::size_t a = axis + 1; a < t.shape.size(); ++a) inner *= t.shape[a];
    const std::size_t extent = t.shape[axis];
    groups.resize(extent);
    for (std::size_t i = 0; i < t.size(); ++i) groups[(i / inner) % extent].push_back(i);
    return groups;
}

/// Checks that `groups` covers [0, n) with disjoint, non-empty groups.
inline bool is_partition(const Partition& groups, std::size_t n) {
    std::vector<char> seen(n, 0);
    std::size_t count = 0;
    for (const auto& g : groups) {
        if (g.empty()) return false;
        for (auto i : g) {
            if (i >= n || seen[i]) return false;
            seen[i] = 1;
            ++count;
        }
    }
    return count == n;
}

class ParamStore {
public:
    ParamStore() = default;

    void add(ParamTensor t) {
        t.validate();
        require(!find(t.name).has_value(), ErrorCode::InvalidArgument,
                "duplicate tensor name '" + t.name + "'");
        d_total_ += t.size();
        if (t.regularized) d_reg_ += t.size();
        tensors_.push_back(std::move(t));
    }

    std::size_t num_tensors() const noexcept { return tensors_.size(); }
    const std::vector<ParamTensor>& tensors() const noexcept { return tensors_; }
    const ParamTensor& tensor(std::size_t i) const { return tensors_.at(i); }
    ParamTensor& tensor(std::size_t i) { return tensors_.at(i); }

    std::optional<std::size_t> find(const std::string& name) const {
        for (std::size_t i = 0; i < tensors_.size(); ++i)
            if (tensors_[i].name == name) return i;
        return std::nullopt;
    }

    std::size_t d_reg() const noexcept { return d_reg_; }
    std::size_t d_total() const noexcept { return d_total_; }
    std::size_t d(Scope scope) const noexcept { return scope == Scope::All ? d_total_ : d_reg_; }

    /// Offset of tensor i in the flat all-parameter layout.
    std::size_t offset(std::size_t i) const {
        std::size_t off = 0;
        for (std::size_t j = 0; j < i; ++j) off += tensors_.at(j).size();
        return off;
    }

    bool operator==(const ParamStore&) const = default;

private:
    std::vector<ParamTensor> tensors_;
    std::size_t d_reg_ = 0;
    std::size_t d_total_ = 0;
};

inline bool in_scope(const ParamTensor& t, Scope scope) {
    return scope == Scope::All || t.regularized;
}

inline std::size_t count_nonzero(const ParamStore& store, Scope scope = Scope::RegularizedOnly) {
    std::size_t n = 0;
    for (const auto& t : store.tensors()) {
        if (!in_scope(t, scope)) continue;
        n += static_cast<std::size_t>(
            std::count_if(t.values.begin(), t.values.end(), [](double v) { return v != 0.0; }));
    }
    return n;
}

/// (d - |theta|_0) / d over the scope. Zero test is exact equality.
inline double sparsity(const ParamStore& store, Scope scope = Scope::RegularizedOnly) {
    const std::size_t d = store.d(scope);
    require(d > 0, ErrorCode::EmptyScope, "sparsity of an empty scope");
    return static_cast<double>(d - count_nonzero(store, scope)) / static_cast<double>(d);
}

struct Mask {
    std::vector<std::vector<std::uint8_t>> bits;

    static Mask ones(const ParamStore& store) {
        Mask m;
        for (const auto& t : store.tensors()) m.bits.emplace_back(t.size(), 1);
        return m;
    }

    std::size_t zeros() const {
        std::size_t n = 0;
        for (const auto& b : bits) n += static_cast<std::size_t>(std::count(b.begin(), b.end(), 0));
        return n;
    }

    bool operator==(const Mask&) const = default;
};

inline void check_mask_shape(const ParamStore& store, const Mask& mask) {
    require(mask.bits.size() == store.num_tensors(), ErrorCode::ShapeMismatch,
            "mask tensor count does not match store");
    for (std::size_t i = 0; i < store.num_tensors(); ++i)
        require(mask.bits[i].size() == store.tensor(i).size(), ErrorCode::ShapeMismatch,
                "mask length mismatch for tensor '" + store.tensor(i).name + "'");
}

inline ParamStore apply_mask(ParamStore store, const Mask& mask) {
    check_mask_shape(store, mask);
    for (std::size_t i = 0; i < store.num_tensors(); ++i) {
        auto& vals = store.tensor(i).values;
        for (std::size_t j = 0; j < vals.size(); ++j)
            if (!mask.bits[i][j]) vals[j] = 0.0;
    }
    return store;
}

/// Flat copy of all parameters in store order.
inline std::vector<double> flatten(const ParamStore& store) {
    std::vector<double> out;
    out.reserve(store.d_total());
    for (const auto& t : store.tensors()) out.insert(out.end(), t.values.begin(), t.values.end());
    return out;
}

inline void assign_flat(ParamStore& store, std::span<const double> flat) {
    require(flat.size() == store.d_total(), ErrorCode::ShapeMismatch, "flat vector length != d_total");
    std::size_t off = 0;
    for (std::size_t i = 0; i < store.num_tensors(); ++i) {
        auto& vals = store.tensor(i).values;
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), vals.size(), vals.begin());
        off += vals.size();
    }
}

/// Regularized parameters concatenated in store order (length d_reg).
inline std::vector<double> gather_regularized(const ParamStore& store) {
    std::vector<double> out;
    out.reserve(store.d_reg());
    for (const auto& t : store.tensors())
        if (t.regularized) out.insert(out.end(), t.values.begin(), t.values.end());
    return out;
}

/// Picks the regularized entries out of a flat all-parameter vector.
inline std::vector<double> gather_regularized(const ParamStore& store, std::span<const double> flat_all) {
    require(flat_all.size() == store.d_total(), ErrorCode::ShapeMismatch, "flat vector length != d_total");
    std::vector<double> out;
    out.reserve(store.d_reg());
    std::size_t off = 0;
    for (const auto& t : store.tensors()) {
        if (t.regularized)
            out.insert(out.end(), flat_all.begin() + static_cast<std::ptrdiff_t>(off),
                       flat_all.begin() + static_cast<std::ptrdiff_t>(off + t.size()));
        off += t.size();
    }
    return out;
}

inline void scatter_regularized(ParamStore& store, std::span<const double> reg) {
    require(reg.size() == store.d_reg(), ErrorCode::ShapeMismatch, "regularized vector length != d_reg");
    std::size_t off = 0;
    for (std::size_t i = 0; i < store.num_tensors(); ++i) {
        auto& t = store.tensor(i);
        if (!t.regularized) continue;
        std::copy_n(reg.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.values.begin());
        off += t.size();
    }
}

}  // namespace bregsparse
