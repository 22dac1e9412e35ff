#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "arc/common.hpp"

namespace arc {

/// Dense n-dimensional array of doubles in row-major order. Rank 0 is a
/// scalar (one element). Shapes are validated on construction; an element
/// count mismatch is a ShapeError.
class Tensor {
  public:
    Tensor() : shape_{}, data_(1, 0.0) {}  // rank-0 zero scalar

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(check_shape(shape_), 0.0);
    }

    Tensor(std::vector<int> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (check_shape(shape_) != data_.size())
            throw ShapeError("shape " + shape_str(shape_) + " does not match " +
                             std::to_string(data_.size()) + " elements");
    }

    static Tensor scalar(double v) {
        Tensor t;
        t.data_[0] = v;
        return t;
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = v;
        return t;
    }

    static Tensor vector(std::vector<double> data) {
        int n = static_cast<int>(data.size());
        return Tensor({n}, std::move(data));
    }

    static Tensor uniform(std::vector<int> shape, double lo, double hi, Rng& rng) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = rng.uniform(lo, hi);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
    std::size_t numel() const { return data_.size(); }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    double item() const {
        if (numel() != 1)
            throw ShapeError("item() on non-scalar tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-D accessors
    double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * dim(1) + j]; }
    double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * dim(1) + j]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    static std::string shape_str(const std::vector<int>& shape) {
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) os << ", ";
            os << shape[i];
        }
        os << ')';
        return os.str();
    }

    std::string shape_str() const { return shape_str(shape_); }

  private:
    static std::size_t check_shape(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

}  // namespace arc
