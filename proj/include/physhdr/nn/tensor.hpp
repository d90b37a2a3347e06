#pragma once

#include <cstddef>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace physhdr::nn {

using Shape = std::vector<int>;

std::string to_string(const Shape& shape);
std::size_t numel(const Shape& shape);

/// Dense row-major double tensor with value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }
    static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
    static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi);

    const Shape& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i < 0 ? i + rank() : i)); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// Element of a rank-4 tensor.
    double& at(int n, int c, int y, int x) { return data_[offset4(n, c, y, x)]; }
    double at(int n, int c, int y, int x) const { return data_[offset4(n, c, y, x)]; }

    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
    Tensor reshaped(Shape shape) const;

    void fill(double v);
    /// this += other (same shape).
    void add_(const Tensor& other);

    bool operator==(const Tensor& other) const = default;

private:
    std::size_t offset4(int n, int c, int y, int x) const noexcept {
        return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
    }

    Shape shape_;
    std::vector<double> data_;
};

} // namespace physhdr::nn
