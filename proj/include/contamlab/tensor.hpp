#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "contamlab/common.hpp"
#include "contamlab/rng.hpp"

namespace contamlab {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        if (d < 0) throw ValidationError("negative tensor extent");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Dense row-major tensor. T = float is the training precision, T = double the
// wide precision used by oracles and gradient checks.
template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
            throw ValidationError("tensor data size does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0) {
        Tensor t(shape);
        for (auto& x : t.data_) x = static_cast<T>(rng.normal() * stddev);
        return t;
    }

    static Tensor truncated_normal(const Shape& shape, Rng& rng, double stddev) {
        Tensor t(shape);
        for (auto& x : t.data_) x = static_cast<T>(rng.truncated_normal(stddev));
        return t;
    }

    const Shape& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i >= 0 ? i : rank() + i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    T operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    T item() const {
        if (numel() != 1) throw ValidationError("item() on tensor with numel " + std::to_string(numel()));
        return data_[0];
    }

    bool all_finite() const {
        for (T x : data_)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    Tensor<double> to_wide() const {
        Tensor<double> out;
        out.reshape_raw(shape_);
        out.vec().assign(data_.begin(), data_.end());
        return out;
    }

    Tensor<float> to_standard() const {
        Tensor<float> out;
        out.reshape_raw(shape_);
        out.vec().assign(data_.begin(), data_.end());
        return out;
    }

    // Reinterprets the shape without touching data; caller guarantees numel.
    void reshape_raw(Shape s) {
        shape_ = std::move(s);
        data_.resize(static_cast<size_t>(shape_numel(shape_)));
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace contamlab
