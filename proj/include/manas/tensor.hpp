// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major CPU tensors.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace manas {

using ShapeVec = std::vector<int>;

inline std::size_t numel_of(const ShapeVec& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const ShapeVec& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

template <typename T>
struct Tensor {
    ShapeVec shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(ShapeVec s) : shape(std::move(s)), v(numel_of(shape), T(0)) {}
    Tensor(ShapeVec s, T fill) : shape(std::move(s)), v(numel_of(shape), fill) {}

    static Tensor zeros(ShapeVec s) { return Tensor(std::move(s)); }
    static Tensor full(ShapeVec s, T value) { return Tensor(std::move(s), value); }
    static Tensor scalar(T value) { return Tensor({1}, value); }

    std::size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    T& operator[](std::size_t i) { return v[i]; }
    const T& operator[](std::size_t i) const { return v[i]; }

    // [C,H,W] accessors
    T& at3(int c, int y, int x) {
        return v[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    const T& at3(int c, int y, int x) const {
        return v[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }

    // [O,I,KH,KW] accessor
    T& at4(int o, int i, int ky, int kx) {
        return v[((static_cast<std::size_t>(o) * shape[1] + i) * shape[2] + ky) * shape[3] + kx];
    }
    const T& at4(int o, int i, int ky, int kx) const {
        return v[((static_cast<std::size_t>(o) * shape[1] + i) * shape[2] + ky) * shape[3] + kx];
    }

    void fill(T value) { std::fill(v.begin(), v.end(), value); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

template <typename T>
inline T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    T m = T(0);
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
    return m;
}

}  // namespace manas
