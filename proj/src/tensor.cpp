#include "dclseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dclseg/errors.hpp"

namespace dclseg {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ')';
    return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_size(shape_))
        throw ValidationError("tensor value count " + std::to_string(data_.size()) +
                              " does not match shape " + shape_string(shape_));
}

std::span<double> Tensor::image(std::size_t n) {
    const std::size_t stride = data_.size() / shape_[0];
    return {data_.data() + n * stride, stride};
}

std::span<const double> Tensor::image(std::size_t n) const {
    const std::size_t stride = data_.size() / shape_[0];
    return {data_.data() + n * stride, stride};
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

Tensor& Tensor::operator+=(const Tensor& other) {
    if (!same_shape(other))
        throw ValidationError("cannot add " + shape_string(other.shape_) + " to " + shape_string(shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double scale) {
    for (double& v : data_) v *= scale;
    return *this;
}

Tensor concat_batch(const std::vector<const Tensor*>& parts) {
    if (parts.empty()) throw ValidationError("concat_batch: no inputs");
    Shape shape = parts.front()->shape();
    std::size_t n = 0;
    for (const Tensor* p : parts) {
        if (p->rank() != 4 || !std::equal(shape.begin() + 1, shape.end(), p->shape().begin() + 1))
            throw ValidationError("concat_batch: incompatible shape " + shape_string(p->shape()));
        n += p->dim(0);
    }
    shape[0] = n;
    Tensor out(shape);
    double* dst = out.data();
    for (const Tensor* p : parts) dst = std::copy(p->data(), p->data() + p->size(), dst);
    return out;
}

Tensor slice_batch(const Tensor& t, std::size_t begin, std::size_t end) {
    if (begin > end || end > t.dim(0)) throw ValidationError("slice_batch: range out of bounds");
    Shape shape = t.shape();
    shape[0] = end - begin;
    const std::size_t stride = t.size() / t.dim(0);
    std::vector<double> values(t.data() + begin * stride, t.data() + end * stride);
    return Tensor(shape, std::move(values));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw ValidationError("concat_channels: incompatible shapes " + shape_string(a.shape()) + " and " +
                              shape_string(b.shape()));
    const std::size_t n = a.dim(0);
    const std::size_t plane = a.dim(2) * a.dim(3);
    const std::size_t ca = a.dim(1) * plane;
    const std::size_t cb = b.dim(1) * plane;
    Tensor out({n, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
    double* dst = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        dst = std::copy(a.data() + i * ca, a.data() + (i + 1) * ca, dst);
        dst = std::copy(b.data() + i * cb, b.data() + (i + 1) * cb, dst);
    }
    return out;
}

void split_channels(const Tensor& t, std::size_t first_channels, Tensor& a, Tensor& b) {
    const std::size_t n = t.dim(0);
    const std::size_t plane = t.dim(2) * t.dim(3);
    a = Tensor({n, first_channels, t.dim(2), t.dim(3)});
    b = Tensor({n, t.dim(1) - first_channels, t.dim(2), t.dim(3)});
    const std::size_t ca = first_channels * plane;
    const std::size_t cb = b.dim(1) * plane;
    const double* src = t.data();
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(src, src + ca, a.data() + i * ca);
        src += ca;
        std::copy(src, src + cb, b.data() + i * cb);
        src += cb;
    }
}

double max_abs_difference(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ValidationError("max_abs_difference: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace dclseg
