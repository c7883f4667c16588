#include "pamdn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pamdn/error.hpp"

namespace pamdn {

Shape::Shape(std::initializer_list<std::size_t> dims)
    : Shape(std::span<const std::size_t>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const std::size_t> dims) {
    if (dims.size() > kMaxRank) {
        throw DimensionError("tensor rank " + std::to_string(dims.size()) + " exceeds 4");
    }
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (dims[i] == 0) {
            throw DimensionError("tensor extent on axis " + std::to_string(i) + " is zero");
        }
        dims_[i] = dims[i];
    }
    rank_ = dims.size();
}

std::size_t Shape::operator[](std::size_t axis) const {
    if (axis >= rank_) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + str());
    }
    return dims_[axis];
}

std::size_t Shape::numel() const {
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
}

std::string Shape::str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < rank_; ++i) {
        if (i) os << "x";
        os << dims_[i];
    }
    os << ')';
    return os.str();
}

bool operator==(const Shape& a, const Shape& b) {
    return a.rank_ == b.rank_ && std::equal(a.dims_.begin(), a.dims_.begin() + a.rank_, b.dims_.begin());
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::span<const double> data) : shape_(shape), data_(data.begin(), data.end()) {
    if (data_.size() != shape_.numel()) {
        throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_.str());
    }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

double& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

std::span<double> Tensor::grad() {
    if (grad_.empty()) grad_.assign(data_.size(), 0.0);
    return grad_;
}

void Tensor::zero_grad() {
    if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), 0.0);
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape.numel() != data_.size()) {
        throw DimensionError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor(shape, data_);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace pamdn
