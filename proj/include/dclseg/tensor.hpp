#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dclseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float64 array. Rank-4 tensors use NCHW layout.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    // Contiguous view of image n of a rank-4 tensor (C*H*W values).
    std::span<double> image(std::size_t n);
    std::span<const double> image(std::size_t n) const;

    void fill(double value);
    void zero() { fill(0.0); }
    bool all_finite() const;
    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

    // Same data, new shape; element count must match.
    Tensor reshaped(Shape shape) const;

    Tensor& operator+=(const Tensor& other);
    Tensor& operator*=(double scale);

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Rank-4 helpers over the batch and channel axes.
Tensor concat_batch(const std::vector<const Tensor*>& parts);
Tensor slice_batch(const Tensor& t, std::size_t begin, std::size_t end);
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& t, std::size_t first_channels, Tensor& a, Tensor& b);

double max_abs_difference(const Tensor& a, const Tensor& b);

}  // namespace dclseg
