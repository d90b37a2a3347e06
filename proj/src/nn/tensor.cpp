#include "physhdr/nn/tensor.hpp"

#include "physhdr/error.hpp"

namespace physhdr::nn {

std::string to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension in " + to_string(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(nn::numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != nn::numel(shape_)) {
        throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                         to_string(shape_));
    }
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.data_) v = dist(rng);
    return t;
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data_) v = dist(rng);
    return t;
}

Tensor Tensor::reshaped(Shape shape) const {
    if (nn::numel(shape) != numel()) {
        throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

void Tensor::add_(const Tensor& other) {
    if (!same_shape(other)) {
        throw ShapeError("add_: shape " + to_string(shape_) + " vs " + to_string(other.shape_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

} // namespace physhdr::nn
