// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "metaseg/errors.hpp"

namespace metaseg {

// Row-major shape, last axis fastest. An empty shape denotes a scalar.
using Shape = std::vector<int64_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) {
        if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
        n *= e;
    }
    return n;
}

// Dense n-dimensional array. The element type is the dtype: float (f32)
// for training, double (f64) for oracle and verification paths.
template <typename T>
struct Tensor {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);

    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0))
        : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), fill) {}

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    bool is_scalar() const { return data.size() == 1 && shape.empty(); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    static Tensor scalar(T v) {
        Tensor t{Shape{}};
        t.data[0] = v;
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

template <typename T>
constexpr uint32_t dtype_code() {
    return std::is_same_v<T, float> ? 0u : 1u;
}

template <typename T>
void ensure_finite(const Tensor<T>& t, const std::string& context) {
    for (const T& v : t.data) {
        if (!std::isfinite(v))
            throw NumericsError("non-finite value in " + context);
    }
}

} // namespace metaseg
