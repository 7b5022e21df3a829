// SPDX-License-Identifier: Apache-2.0
//
// Dense n-dimensional double tensor, the universal value type of the pipeline.
// Data is contiguous row-major and shared between copies; ops always allocate
// fresh outputs, so a tensor is treated as immutable once it has been handed on.

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace stereomamba {

using Shape = std::vector<int64_t>;

inline int64_t shape_count(const Shape& shape) {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        validate_shape(shape_);
        data_ = std::make_shared<std::vector<double>>(shape_count(shape_), 0.0);
    }

    Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
        validate_shape(shape_);
        if (shape_count(shape_) != static_cast<int64_t>(values.size()))
            throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                        " does not match shape " + shape_str(shape_));
        data_ = std::make_shared<std::vector<double>>(std::move(values));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_->begin(), t.data_->end(), v);
        return t;
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    bool defined() const { return static_cast<bool>(data_); }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

    double* data() { return data_->data(); }
    const double* data() const { return data_->data(); }

    double& operator[](int64_t i) { return (*data_)[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

    double& at(int64_t i, int64_t j) { return (*data_)[static_cast<size_t>(i * dim(1) + j)]; }
    double at(int64_t i, int64_t j) const { return (*data_)[static_cast<size_t>(i * dim(1) + j)]; }
    double& at(int64_t i, int64_t j, int64_t k) {
        return (*data_)[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
    }
    double at(int64_t i, int64_t j, int64_t k) const {
        return (*data_)[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
    }
    double& at(int64_t i, int64_t j, int64_t k, int64_t l) {
        return (*data_)[static_cast<size_t>(((i * dim(1) + j) * dim(2) + k) * dim(3) + l)];
    }
    double at(int64_t i, int64_t j, int64_t k, int64_t l) const {
        return (*data_)[static_cast<size_t>(((i * dim(1) + j) * dim(2) + k) * dim(3) + l)];
    }

    // Deep copy; plain copy construction shares storage.
    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<double>>(*data_);
        return t;
    }

    // Same storage, new shape (element count must match).
    Tensor reshaped(Shape shape) const {
        validate_shape(shape);
        if (shape_count(shape) != size())
            throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    void fill(double v) { std::fill(data_->begin(), data_->end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : *data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double sum() const {
        double s = 0.0;
        for (double v : *data_) s += v;
        return s;
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : *data_) m = std::max(m, std::abs(v));
        return m;
    }

private:
    static void validate_shape(const Shape& shape) {
        if (shape.empty()) throw std::invalid_argument("tensor shape must have rank >= 1");
        for (int64_t e : shape)
            if (e < 1) throw std::invalid_argument("tensor extents must be >= 1, got " + shape_str(shape));
    }

    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double m = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (int64_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

// splitmix64, used both as a stream generator and as a stateless mixer so that
// training-time randomness can be derived from (seed, epoch, index) counters.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0) {
    return mix64(mix64(seed ^ 0x6a09e667f3bcc909ull) ^ mix64(a) ^ (mix64(b) << 1));
}

// FNV-1a; keys per-parameter init streams and checkpoint config fingerprints
inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t x = state_;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
    }

    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        cached_ = r * std::sin(2.0 * M_PI * u2);
        have_cached_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    Tensor uniform_tensor(Shape shape, double lo, double hi) {
        Tensor t(std::move(shape));
        for (int64_t i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
        return t;
    }

private:
    uint64_t state_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace stereomamba
