#pragma once

// ParamStore checkpoints.
//
// Binary layout (all integers little-endian):
//   magic "BSPK", u32 version (=1), u32 tensor count, then per tensor:
//     str name, u32 rank, u64 dims[rank], u8 regularized, u8 penalty
//     (0 = l1, 1 = group), i32 group_axis (-1 = none), f64 lambda_scale,
//     str role, u64 count, f64 values[count]
//   u8 has_optimizer; if 1:
//     f64 lambda, f64 tau, u64 t, vec p, vec m, vec v
// str = u32 length + bytes; vec = u64 length + f64 values; f64 is the IEEE
// bit pattern written little-endian, so round trips are bit-exact.

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bregsparse/error.hpp"
#include "bregsparse/param_store.hpp"

namespace bregsparse {

struct OptimizerCheckpoint {
    double lambda = 0.0;
    double tau = 0.0;
    std::uint64_t t = 0;
    std::vector<double> p, m, v;

    bool operator==(const OptimizerCheckpoint&) const = default;
};

struct Checkpoint {
    ParamStore params;
    std::optional<OptimizerCheckpoint> optimizer;
};

namespace detail {

inline constexpr std::array<char, 4> kMagic{'B', 'S', 'P', 'K'};
inline constexpr std::uint32_t kFormatVersion = 1;

class Writer {
public:
    explicit Writer(std::ostream& os) : os_(os) {}
    template <class U>
    void uint(U x) {
        for (std::size_t i = 0; i < sizeof(U); ++i) os_.put(static_cast<char>((x >> (8 * i)) & 0xFF));
    }
    void u8(std::uint8_t x) { uint(x); }
    void u32(std::uint32_t x) { uint(x); }
    void u64(std::uint64_t x) { uint(x); }
    void f64(double x) { uint(std::bit_cast<std::uint64_t>(x)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        os_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void vec(const std::vector<double>& v) {
        u64(v.size());
        for (double x : v) f64(x);
    }

private:
    std::ostream& os_;
};

class Reader {
public:
    explicit Reader(std::istream& is) : is_(is) {}
    template <class U>
    U uint() {
        U x = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            const int c = is_.get();
            if (c == std::char_traits<char>::eof()) throw Error(ErrorCode::Io, "checkpoint: unexpected end of data");
            x |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(c)) << (8 * i));
        }
        return x;
    }
    std::uint8_t u8() { return uint<std::uint8_t>(); }
    std::uint32_t u32() { return uint<std::uint32_t>(); }
    std::uint64_t u64() { return uint<std::uint64_t>(); }
    double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
    std::string str() {
        const auto n = u32();
        std::string s(n, '\0');
        if (!is_.read(s.data(), n)) throw Error(ErrorCode::Io, "checkpoint: unexpected end of data");
        return s;
    }
    std::vector<double> vec() {
        const auto n = u64();
        std::vector<double> v;
        v.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n, 1u << 20)));
        for (std::uint64_t i = 0; i < n; ++i) v.push_back(f64());
        return v;
    }

private:
    std::istream& is_;
};

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const ParamStore& store,
                             const OptimizerCheckpoint* opt = nullptr) {
    detail::Writer w(os);
    os.write(detail::kMagic.data(), 4);
    w.u32(detail::kFormatVersion);
    w.u32(static_cast<std::uint32_t>(store.num_tensors()));
    for (const auto& t : store.tensors()) {
        w.str(t.name);
        w.u32(static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) w.u64(d);
        w.u8(t.regularized ? 1 : 0);
        w.u8(t.penalty == Penalty::GroupNorm ? 1 : 0);
        w.uint(static_cast<std::uint32_t>(t.group_axis ? static_cast<std::int32_t>(*t.group_axis) : -1));
        w.f64(t.lambda_scale);
        w.str(t.role);
        w.vec(t.values);
    }
    w.u8(opt ? 1 : 0);
    if (opt) {
        w.f64(opt->lambda);
        w.f64(opt->tau);
        w.u64(opt->t);
        w.vec(opt->p);
        w.vec(opt->m);
        w.vec(opt->v);
    }
    if (!os) throw Error(ErrorCode::Io, "checkpoint: write failed");
}

inline Checkpoint read_checkpoint(std::istream& is) {
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), 4) || magic != detail::kMagic)
        throw Error(ErrorCode::Io, "checkpoint: bad magic");
    detail::Reader r(is);
    const auto version = r.u32();
    require(version == detail::kFormatVersion, ErrorCode::Io, "checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        ParamTensor t;
        t.name = r.str();
        const auto rank = r.u32();
        for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(static_cast<std::size_t>(r.u64()));
        t.regularized = r.u8() != 0;
        t.penalty = r.u8() ? Penalty::GroupNorm : Penalty::L1;
        const auto axis = static_cast<std::int32_t>(r.u32());
        if (axis >= 0) t.group_axis = static_cast<std::size_t>(axis);
        t.lambda_scale = r.f64();
        t.role = r.str();
        t.values = r.vec();
        ck.params.add(std::move(t));
    }
    if (r.u8()) {
        OptimizerCheckpoint o;
        o.lambda = r.f64();
        o.tau = r.f64();
        o.t = r.u64();
        o.p = r.vec();
        o.m = r.vec();
        o.v = r.vec();
        ck.optimizer = std::move(o);
    }
    return ck;
}

/// JSON checkpoint: {"tensors": [{name, shape, regularized, penalty,
/// group_axis, lambda_scale, role, values}], "optimizer": {...} | null}.
/// Values go through the JSON number printer, which round-trips doubles.
inline nlohmann::json checkpoint_to_json(const ParamStore& store, const OptimizerCheckpoint* opt = nullptr) {
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& t : store.tensors()) {
        tensors.push_back({{"name", t.name},
                           {"shape", t.shape},
                           {"regularized", t.regularized},
                           {"penalty", t.penalty == Penalty::GroupNorm ? "group" : "l1"},
                           {"group_axis", t.group_axis ? nlohmann::json(*t.group_axis) : nlohmann::json()},
                           {"lambda_scale", t.lambda_scale},
                           {"role", t.role},
                           {"values", t.values}});
    }
    nlohmann::json j = {{"tensors", tensors}, {"optimizer", nullptr}};
    if (opt)
        j["optimizer"] = {{"lambda", opt->lambda}, {"tau", opt->tau}, {"t", opt->t},
                          {"p", opt->p},           {"m", opt->m},     {"v", opt->v}};
    return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    Checkpoint ck;
    try {
        for (const auto& e : j.at("tensors")) {
            ParamTensor t;
            t.name = e.at("name").get<std::string>();
            t.shape = e.at("shape").get<std::vector<std::size_t>>();
            t.regularized = e.at("regularized").get<bool>();
            const auto pen = e.at("penalty").get<std::string>();
            require(pen == "l1" || pen == "group", ErrorCode::Io, "checkpoint: unknown penalty '" + pen + "'");
            t.penalty = pen == "group" ? Penalty::GroupNorm : Penalty::L1;
            if (!e.at("group_axis").is_null()) t.group_axis = e.at("group_axis").get<std::size_t>();
            t.lambda_scale = e.at("lambda_scale").get<double>();
            t.role = e.at("role").get<std::string>();
            t.values = e.at("values").get<std::vector<double>>();
            ck.params.add(std::move(t));
        }
        const auto& o = j.at("optimizer");
        if (!o.is_null())
            ck.optimizer = OptimizerCheckpoint{o.at("lambda").get<double>(), o.at("tau").get<double>(),
                                               o.at("t").get<std::uint64_t>(), o.at("p").get<std::vector<double>>(),
                                               o.at("m").get<std::vector<double>>(), o.at("v").get<std::vector<double>>()};
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::Io, std::string("checkpoint: ") + ex.what());
    }
    return ck;
}

}  // namespace bregsparse
