// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "metaseg/errors.hpp"
#include "metaseg/tensor.hpp"

namespace metaseg {

// Named, ordered collection of parameter tensors. Two ParamSets are
// congruent iff names, order, and shapes match elementwise.
template <typename T>
struct ParamSet {
    std::vector<std::pair<std::string, Tensor<T>>> entries;

    void add(std::string name, Tensor<T> t) {
        if (index_of(name) >= 0)
            throw ContractError("duplicate parameter name '" + name + "'");
        entries.emplace_back(std::move(name), std::move(t));
    }

    int64_t index_of(std::string_view name) const {
        for (size_t i = 0; i < entries.size(); ++i)
            if (entries[i].first == name) return static_cast<int64_t>(i);
        return -1;
    }

    Tensor<T>& at(std::string_view name) {
        int64_t i = index_of(name);
        if (i < 0) throw ContractError("no parameter named '" + std::string(name) + "'");
        return entries[static_cast<size_t>(i)].second;
    }
    const Tensor<T>& at(std::string_view name) const {
        int64_t i = index_of(name);
        if (i < 0) throw ContractError("no parameter named '" + std::string(name) + "'");
        return entries[static_cast<size_t>(i)].second;
    }

    size_t size() const { return entries.size(); }
    int64_t total_scalars() const {
        int64_t n = 0;
        for (const auto& [_, t] : entries) n += t.numel();
        return n;
    }
};

// Gradients share the structure of the ParamSet they were computed against.
template <typename T>
using GradSet = ParamSet<T>;

template <typename T>
bool congruent(const ParamSet<T>& a, const ParamSet<T>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a.entries[i].first != b.entries[i].first) return false;
        if (a.entries[i].second.shape != b.entries[i].second.shape) return false;
    }
    return true;
}

template <typename T>
void require_congruent(const ParamSet<T>& a, const ParamSet<T>& b, const std::string& context) {
    if (!congruent(a, b))
        throw ContractError("incongruent parameter sets in " + context);
}

template <typename T>
GradSet<T> zeros_like(const ParamSet<T>& p) {
    GradSet<T> g;
    for (const auto& [name, t] : p.entries)
        g.add(name, Tensor<T>(t.shape));
    return g;
}

// dst += a * src, entrywise over congruent sets
template <typename T>
void axpy(ParamSet<T>& dst, T a, const ParamSet<T>& src) {
    require_congruent(dst, src, "axpy");
    for (size_t i = 0; i < dst.size(); ++i) {
        auto& d = dst.entries[i].second.data;
        const auto& s = src.entries[i].second.data;
        for (size_t j = 0; j < d.size(); ++j) d[j] += a * s[j];
    }
}

template <typename T>
void scale(ParamSet<T>& p, T a) {
    for (auto& [_, t] : p.entries)
        for (T& v : t.data) v *= a;
}

template <typename T>
T max_abs(const ParamSet<T>& p) {
    T m = 0;
    for (const auto& [_, t] : p.entries)
        for (const T& v : t.data) m = std::max(m, std::abs(v));
    return m;
}

template <typename T>
bool bitwise_equal(const ParamSet<T>& a, const ParamSet<T>& b) {
    if (!congruent(a, b)) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        const auto& x = a.entries[i].second.data;
        const auto& y = b.entries[i].second.data;
        if (std::memcmp(x.data(), y.data(), x.size() * sizeof(T)) != 0) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Checkpoint file: magic "MCKPT1\0", u32 entry count, per entry
// (u32 name length, name bytes, u32 dtype code 0=f32/1=f64, u32 rank,
// rank x u32 extents), then raw element buffers in manifest order.
// All integers and elements little-endian.
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr char kCheckpointMagic[7] = {'M', 'C', 'K', 'P', 'T', '1', '\0'};

inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("truncated file while reading " + what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

} // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ParamSet<T>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IOError("cannot open checkpoint for writing: " + path);
    os.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
    detail::write_u32(os, static_cast<uint32_t>(params.size()));
    for (const auto& [name, t] : params.entries) {
        detail::write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u32(os, dtype_code<T>());
        detail::write_u32(os, static_cast<uint32_t>(t.shape.size()));
        for (int64_t e : t.shape) {
            if (e > 0xffffffffll) throw ContractError("extent too large for checkpoint format");
            detail::write_u32(os, static_cast<uint32_t>(e));
        }
    }
    for (const auto& [_, t] : params.entries)
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    if (!os) throw IOError("failed writing checkpoint: " + path);
}

template <typename T>
ParamSet<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IOError("cannot open checkpoint: " + path);
    char magic[sizeof(detail::kCheckpointMagic)];
    if (!is.read(magic, sizeof(magic)) ||
        std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0)
        throw FormatError("bad checkpoint magic: " + path);
    const uint32_t count = detail::read_u32(is, "entry count");
    ParamSet<T> params;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = detail::read_u32(is, "name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw FormatError("truncated checkpoint name");
        const uint32_t dc = detail::read_u32(is, "dtype code");
        if (dc != dtype_code<T>())
            throw ContractError("checkpoint dtype code " + std::to_string(dc) +
                                " does not match requested element type");
        const uint32_t rank = detail::read_u32(is, "rank");
        Shape shape(rank);
        for (uint32_t r = 0; r < rank; ++r)
            shape[r] = static_cast<int64_t>(detail::read_u32(is, "extent"));
        params.add(std::move(name), Tensor<T>(std::move(shape)));
    }
    for (auto& [_, t] : params.entries) {
        if (!is.read(reinterpret_cast<char*>(t.data.data()),
                     static_cast<std::streamsize>(t.data.size() * sizeof(T))))
            throw FormatError("truncated checkpoint data: " + path);
    }
    return params;
}

} // namespace metaseg
