#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gtea/common.hpp"

namespace gtea::numerics {

/// Dense row-major tensor. The scalar type selects the precision:
/// float for training, double for verification oracles and gradient checks.
/// Rank 0 (shape {}) is a scalar holding one value; in practice everything
/// in this codebase is rank 0, 1 or 2.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    Tensor(std::vector<std::size_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (element_count(shape_) != data_.size()) {
            throw ShapeError("tensor: shape " + shape_string(shape_) + " requires " +
                             std::to_string(element_count(shape_)) + " values, got " +
                             std::to_string(data_.size()));
        }
    }

    static Tensor scalar(T value) { return Tensor({}, {value}); }

    static Tensor vector(std::vector<T> values) {
        std::size_t n = values.size();
        return Tensor({n}, std::move(values));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values) {
        return Tensor({rows, cols}, std::move(values));
    }

    static Tensor zeros(std::vector<std::size_t> shape) {
        std::size_t n = element_count(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(0)));
    }

    static Tensor full(std::vector<std::size_t> shape, T value) {
        std::size_t n = element_count(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value));
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? 1 : 0); }
    std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    /// Value of a one-element tensor (scalar or singleton).
    T item() const {
        if (data_.size() != 1) {
            throw ShapeError("item: tensor of shape " + shape_string(shape_) +
                             " is not a scalar");
        }
        return data_[0];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (T v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    Tensor<double> to_double() const {
        std::vector<double> out(data_.begin(), data_.end());
        return Tensor<double>(std::vector<std::size_t>(shape_), std::move(out));
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(std::vector<std::size_t>(shape_), std::move(out));
    }

    static std::size_t element_count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }

    static std::string shape_string(const std::vector<std::size_t>& shape) {
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) os << 'x';
            os << shape[i];
        }
        os << ')';
        return os.str();
    }

    std::string shape_string() const { return shape_string(shape_); }

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

}  // namespace gtea::numerics
