#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dclseg/rng.hpp"
#include "dclseg/tensor.hpp"

namespace dclseg::nn {

/// Trainable tensor with its accumulated gradient.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(shape) {}
};

using ParameterList = std::vector<Parameter*>;

void zero_grad(const ParameterList& params);

// Layers cache what backward() needs during forward(); backward() must follow
// the matching forward() and accumulates into parameter gradients.

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(const std::string& name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
           std::size_t stride = 1, std::size_t padding = 0);

    // He-normal weights, zero bias.
    void init(Rng& rng, double gain = 1.0);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out);
    void collect(ParameterList& out) { out.push_back(&weight_); out.push_back(&bias_); }

    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }
    std::size_t out_channels() const { return out_channels_; }

private:
    std::size_t in_channels_ = 0;
    std::size_t out_channels_ = 0;
    std::size_t kernel_ = 1;
    std::size_t stride_ = 1;
    std::size_t padding_ = 0;
    Parameter weight_;  // out x in x k x k
    Parameter bias_;    // out
    Shape input_shape_;
    std::vector<Tensor> cols_;
};

/// Fractionally strided convolution: out = (in - 1) * stride + kernel - 2 * padding.
class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(const std::string& name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                    std::size_t stride, std::size_t padding = 0);

    void init(Rng& rng);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out);
    void collect(ParameterList& out) { out.push_back(&weight_); out.push_back(&bias_); }

private:
    std::size_t in_channels_ = 0;
    std::size_t out_channels_ = 0;
    std::size_t kernel_ = 2;
    std::size_t stride_ = 2;
    std::size_t padding_ = 0;
    Parameter weight_;  // in x out x k x k
    Parameter bias_;    // out
    Tensor input_;
};

/// 2x bilinear upsampling with half-pixel centers (align_corners = false).
class BilinearUpsample2x {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out) const;

private:
    Shape input_shape_;
};

class Relu {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out) const;

private:
    Tensor output_;
};

/// Fully connected layer over rank-2 (batch x features) input.
class Linear {
public:
    Linear() = default;
    Linear(const std::string& name, std::size_t in_features, std::size_t out_features);

    void init(Rng& rng, double gain = 2.0);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out);
    void collect(ParameterList& out) { out.push_back(&weight_); out.push_back(&bias_); }

    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }

private:
    std::size_t in_ = 0;
    std::size_t out_ = 0;
    Parameter weight_;  // out x in
    Parameter bias_;
    Tensor input_;
};

Tensor sigmoid(const Tensor& logits);

}  // namespace dclseg::nn
