#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "veil/core/error.hpp"
#include "veil/core/rng.hpp"

namespace veil::nn {

// Dense row-major tensor. Rank is dynamic but everything in this library is
// rank 0..4; batches of images are NCHW.
template <typename T>
class Tensor {
public:
    using scalar_type = T;

    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(numel_of(shape_), T(0));
    }

    Tensor(std::vector<int> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check(data_.size() == numel_of(shape_), "tensor: data size ", data_.size(),
              " does not match shape numel ", numel_of(shape_));
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, T v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    static Tensor scalar(T v) { return Tensor({}, {v}); }

    static Tensor randn(std::vector<int> shape, Rng& rng, T stddev = T(1), T mean = T(0)) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = static_cast<T>(rng.normal(mean, stddev));
        return t;
    }

    static Tensor rand_uniform(std::vector<int> shape, Rng& rng, T lo = T(0), T hi = T(1)) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }

    std::size_t numel() const { return data_.size(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // NCHW access
    T& at(int n, int c, int h, int w) {
        return data_[offset4(n, c, h, w)];
    }
    const T& at(int n, int c, int h, int w) const {
        return data_[offset4(n, c, h, w)];
    }

    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(T v) {
        for (auto& x : data_) x = v;
    }

    Tensor reshaped(std::vector<int> new_shape) const {
        check(numel_of(new_shape) == data_.size(), "tensor: reshape numel mismatch");
        return Tensor(std::move(new_shape), data_);
    }

    bool all_finite() const {
        for (const T x : data_)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

    static std::size_t numel_of(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (const int d : shape) {
            check(d >= 0, "tensor: negative dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

private:
    std::size_t offset4(int n, int c, int h, int w) const {
        const int C = shape_[1], H = shape_[2], W = shape_[3];
        return static_cast<std::size_t>(((n * C + c) * H + h) * W + w);
    }

    std::vector<int> shape_;
    std::vector<T> data_;
};

} // namespace veil::nn
