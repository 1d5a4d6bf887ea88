#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mricascade {

// Keeps every tensor buffer on the same 64-byte alignment so vectorized
// kernels take identical code paths run after run; heap address variation
// would otherwise leak 1-ulp differences into "bit-identical" contracts.
template <typename T, std::size_t Align>
struct AlignedAllocator {
    using value_type = T;
    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U, Align>&) {}
    template <typename U>
    struct rebind {
        using other = AlignedAllocator<U, Align>;
    };
    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
    }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t(Align)); }
    bool operator==(const AlignedAllocator&) const { return true; }
    bool operator!=(const AlignedAllocator&) const { return false; }
};

using DoubleVec = std::vector<double, AlignedAllocator<double, 64>>;

// Dense row-major tensor of doubles, rank 1..4. All network activations,
// weights and images live in this type; 64-bit floats throughout so analytic
// gradients can be checked against central differences at 1e-4.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        v_.assign(count(shape_), 0.0);
    }

    Tensor(std::vector<int> shape, DoubleVec values)
        : shape_(std::move(shape)), v_(std::move(values)) {
        if (v_.size() != count(shape_)) throw std::invalid_argument("tensor: shape/data size mismatch");
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, double value) {
        Tensor t(std::move(shape));
        for (auto& x : t.v_) x = value;
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t numel() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    DoubleVec& values() { return v_; }
    const DoubleVec& values() const { return v_; }

    double& operator[](std::size_t i) { return v_[i]; }
    double operator[](std::size_t i) const { return v_[i]; }

    // 2-D access (h, w)
    double& at(int r, int c) { return v_[static_cast<std::size_t>(r) * shape_[1] + c]; }
    double at(int r, int c) const { return v_[static_cast<std::size_t>(r) * shape_[1] + c]; }

    // 3-D access (c, h, w)
    double& at(int ch, int r, int c) {
        return v_[(static_cast<std::size_t>(ch) * shape_[1] + r) * shape_[2] + c];
    }
    double at(int ch, int r, int c) const {
        return v_[(static_cast<std::size_t>(ch) * shape_[1] + r) * shape_[2] + c];
    }

    // 4-D access (n, c, h, w)
    double& at(int n, int ch, int r, int c) {
        return v_[((static_cast<std::size_t>(n) * shape_[1] + ch) * shape_[2] + r) * shape_[3] + c];
    }
    double at(int n, int ch, int r, int c) const {
        return v_[((static_cast<std::size_t>(n) * shape_[1] + ch) * shape_[2] + r) * shape_[3] + c];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
        os << ")";
        return os.str();
    }

private:
    static std::size_t count(const std::vector<int>& shape) {
        std::size_t n = shape.empty() ? 0 : 1;
        for (int d : shape) {
            if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::vector<int> shape_;
    DoubleVec v_;
};

// Binary mask paired with a slice; values are strictly 0 or 1.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> v;

    Mask() = default;
    Mask(int h, int w) : height(h), width(w), v(static_cast<std::size_t>(h) * w, 0) {}

    std::uint8_t& at(int r, int c) { return v[static_cast<std::size_t>(r) * width + c]; }
    std::uint8_t at(int r, int c) const { return v[static_cast<std::size_t>(r) * width + c]; }
    std::size_t numel() const { return v.size(); }

    std::size_t area() const {
        std::size_t n = 0;
        for (auto x : v) n += x;
        return n;
    }

    bool operator==(const Mask& o) const {
        return height == o.height && width == o.width && v == o.v;
    }
};

}  // namespace mricascade
