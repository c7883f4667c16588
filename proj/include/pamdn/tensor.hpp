#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace pamdn {

/// Up to four extents, outermost first. Image tensors are (N, C, H, W).
class Shape {
public:
    static constexpr std::size_t kMaxRank = 4;

    Shape() = default;
    Shape(std::initializer_list<std::size_t> dims);
    explicit Shape(std::span<const std::size_t> dims);

    std::size_t rank() const { return rank_; }
    std::size_t operator[](std::size_t axis) const;
    std::size_t numel() const;
    std::span<const std::size_t> dims() const { return {dims_.data(), rank_}; }

    std::string str() const;

    friend bool operator==(const Shape& a, const Shape& b);

private:
    std::array<std::size_t, kMaxRank> dims_{};
    std::size_t rank_ = 0;
};

// Storage aligned to a cache line. Vectorized kernels choose their peeling
// from the runtime address, so a fixed alignment is what makes results
// bit-identical from run to run.
template <class T, std::size_t Align = 64>
struct AlignedAllocator {
    using value_type = T;
    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U, Align>&) {}
    template <class U>
    struct rebind {
        using other = AlignedAllocator<U, Align>;
    };
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align))); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, std::align_val_t(Align)); }
    template <class U>
    bool operator==(const AlignedAllocator<U, Align>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major array of doubles with an optional gradient buffer.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::span<const double> data);
    Tensor(Shape shape, const std::vector<double>& data) : Tensor(shape, std::span<const double>(data)) {}
    Tensor(Shape shape, std::initializer_list<double> data) : Tensor(shape, std::span<const double>(data.begin(), data.size())) {}

    static Tensor scalar(double value);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // NCHW element access; requires rank 4.
    double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
    double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on) { requires_grad_ = on; }

    bool has_grad() const { return !grad_.empty(); }
    // Allocates a zeroed gradient buffer on first use.
    std::span<double> grad();
    std::span<const double> grad() const { return grad_; }
    void zero_grad();
    void drop_grad() { grad_.clear(); }

    Tensor reshaped(Shape shape) const;
    bool all_finite() const;

private:
    Shape shape_;
    Buffer data_;
    bool requires_grad_ = false;
    Buffer grad_;
};

}  // namespace pamdn
