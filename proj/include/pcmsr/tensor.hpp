#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace pcmsr {

/// Dense row-major array of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (element_count(shape_) != data_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string());
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
        return Tensor({rows, cols}, fill);
    }

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return rank() < 2 ? 1 : size() / std::max<std::size_t>(rows(), 1); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }
    std::span<double> flat() noexcept { return data_; }
    std::span<const double> flat() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

    /// Row `r` of the leading dimension, i.e. one sample of a batch.
    std::span<const double> row(std::size_t r) const {
        const std::size_t w = cols();
        return std::span<const double>(data_).subspan(r * w, w);
    }
    std::span<double> row(std::size_t r) {
        const std::size_t w = cols();
        return std::span<double>(data_).subspan(r * w, w);
    }

    bool all_finite() const noexcept {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_string() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape_.size(); ++i) s += (i ? ", " : "") + std::to_string(shape_[i]);
        return s + ")";
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    static std::size_t element_count(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// Row-major integer matrix; holds the multiple matrices of a decomposed layer.
struct IntMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<int> data;

    IntMatrix() = default;
    IntMatrix(std::size_t r, std::size_t c, int fill = 0) : rows(r), cols(c), data(r * c, fill) {}

    int& operator()(std::size_t r, std::size_t c) noexcept { return data[r * cols + c]; }
    int operator()(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }
    std::size_t size() const noexcept { return data.size(); }

    friend bool operator==(const IntMatrix&, const IntMatrix&) = default;
};

} // namespace pcmsr
