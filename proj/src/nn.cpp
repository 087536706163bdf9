#include "dclseg/nn.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "dclseg/errors.hpp"

namespace dclseg::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
    std::size_t channels, height, width, kernel, stride, padding, out_h, out_w;
};

std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
    if (in + 2 * padding < kernel) throw ValidationError("convolution input smaller than kernel");
    return (in + 2 * padding - kernel) / stride + 1;
}

// col: (channels * k * k) x (out_h * out_w)
void im2col(const double* img, const ConvGeometry& g, double* col) {
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                double* row = col + ((c * g.kernel + ki) * g.kernel + kj) * plane;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                             static_cast<std::ptrdiff_t>(g.padding);
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                                 static_cast<std::ptrdiff_t>(g.padding);
                        const bool inside = y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(g.height) &&
                                            x < static_cast<std::ptrdiff_t>(g.width);
                        row[oy * g.out_w + ox] =
                            inside ? img[(c * g.height + static_cast<std::size_t>(y)) * g.width + static_cast<std::size_t>(x)]
                                   : 0.0;
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: accumulates col back into img.
void col2im(const double* col, const ConvGeometry& g, double* img) {
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                const double* row = col + ((c * g.kernel + ki) * g.kernel + kj) * plane;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                             static_cast<std::ptrdiff_t>(g.padding);
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                                 static_cast<std::ptrdiff_t>(g.padding);
                        if (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) continue;
                        img[(c * g.height + static_cast<std::size_t>(y)) * g.width + static_cast<std::size_t>(x)] +=
                            row[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

void require_rank4(const Tensor& x, std::size_t channels, const char* layer) {
    if (x.rank() != 4 || x.dim(1) != channels)
        throw ValidationError(std::string(layer) + ": expected N x " + std::to_string(channels) +
                              " x H x W input, got " + shape_string(x.shape()));
}

void he_normal(Tensor& t, Rng& rng, double fan_in, double gain) {
    const double sd = std::sqrt(2.0 / fan_in) * gain;
    for (double& v : t.values()) v = sd * rng.normal();
}

}  // namespace

void zero_grad(const ParameterList& params) {
    for (Parameter* p : params) p->grad.zero();
}

Conv2d::Conv2d(const std::string& name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride, std::size_t padding)
    : in_channels_(in_channels), out_channels_(out_channels), kernel_(kernel), stride_(stride), padding_(padding),
      weight_(name + ".weight", {out_channels, in_channels, kernel, kernel}),
      bias_(name + ".bias", {out_channels}) {
    if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0)
        throw ValidationError("conv layer " + name + " has a zero dimension");
}

void Conv2d::init(Rng& rng, double gain) {
    he_normal(weight_.value, rng, static_cast<double>(in_channels_ * kernel_ * kernel_), gain);
    bias_.value.zero();
}

Tensor Conv2d::forward(const Tensor& x) {
    require_rank4(x, in_channels_, "conv2d");
    const ConvGeometry g{in_channels_, x.dim(2), x.dim(3), kernel_, stride_, padding_,
                         conv_out(x.dim(2), kernel_, stride_, padding_), conv_out(x.dim(3), kernel_, stride_, padding_)};
    const std::size_t n = x.dim(0);
    const std::size_t k = in_channels_ * kernel_ * kernel_;
    const std::size_t plane = g.out_h * g.out_w;
    input_shape_ = x.shape();
    cols_.assign(n, Tensor({k, plane}));
    Tensor y({n, out_channels_, g.out_h, g.out_w});
    ConstMatrixMap w(weight_.value.data(), static_cast<Eigen::Index>(out_channels_), static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < n; ++i) {
        im2col(x.image(i).data(), g, cols_[i].data());
        ConstMatrixMap col(cols_[i].data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(plane));
        MatrixMap out(y.image(i).data(), static_cast<Eigen::Index>(out_channels_), static_cast<Eigen::Index>(plane));
        out.noalias() = w * col;
        for (std::size_t c = 0; c < out_channels_; ++c) out.row(static_cast<Eigen::Index>(c)).array() += bias_.value[c];
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
    const std::size_t n = input_shape_.at(0);
    const ConvGeometry g{in_channels_, input_shape_[2], input_shape_[3], kernel_, stride_, padding_,
                         grad_out.dim(2), grad_out.dim(3)};
    const std::size_t k = in_channels_ * kernel_ * kernel_;
    const std::size_t plane = g.out_h * g.out_w;
    Tensor grad_in(input_shape_);
    Tensor dcol({k, plane});
    ConstMatrixMap w(weight_.value.data(), static_cast<Eigen::Index>(out_channels_), static_cast<Eigen::Index>(k));
    MatrixMap dw(weight_.grad.data(), static_cast<Eigen::Index>(out_channels_), static_cast<Eigen::Index>(k));
    MatrixMap dc(dcol.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(plane));
    for (std::size_t i = 0; i < n; ++i) {
        ConstMatrixMap dy(grad_out.image(i).data(), static_cast<Eigen::Index>(out_channels_),
                          static_cast<Eigen::Index>(plane));
        ConstMatrixMap col(cols_[i].data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(plane));
        dw.noalias() += dy * col.transpose();
        for (std::size_t c = 0; c < out_channels_; ++c) bias_.grad[c] += dy.row(static_cast<Eigen::Index>(c)).sum();
        dc.noalias() = w.transpose() * dy;
        col2im(dcol.data(), g, grad_in.image(i).data());
    }
    return grad_in;
}

ConvTranspose2d::ConvTranspose2d(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                                 std::size_t kernel, std::size_t stride, std::size_t padding)
    : in_channels_(in_channels), out_channels_(out_channels), kernel_(kernel), stride_(stride), padding_(padding),
      weight_(name + ".weight", {in_channels, out_channels, kernel, kernel}),
      bias_(name + ".bias", {out_channels}) {
    if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0)
        throw ValidationError("transposed conv layer " + name + " has a zero dimension");
}

void ConvTranspose2d::init(Rng& rng) {
    const double fan_in = static_cast<double>(in_channels_ * kernel_ * kernel_) / static_cast<double>(stride_ * stride_);
    he_normal(weight_.value, rng, std::max(fan_in, 1.0), 1.0);
    bias_.value.zero();
}

Tensor ConvTranspose2d::forward(const Tensor& x) {
    require_rank4(x, in_channels_, "conv_transpose2d");
    const std::size_t n = x.dim(0);
    const std::size_t h = x.dim(2);
    const std::size_t w = x.dim(3);
    if ((h - 1) * stride_ + kernel_ < 2 * padding_ + 1) throw ValidationError("conv_transpose2d: empty output");
    const std::size_t oh = (h - 1) * stride_ + kernel_ - 2 * padding_;
    const std::size_t ow = (w - 1) * stride_ + kernel_ - 2 * padding_;
    // The forward pass is the adjoint of a convolution mapping oh x ow -> h x w.
    const ConvGeometry g{out_channels_, oh, ow, kernel_, stride_, padding_, h, w};
    const std::size_t k = out_channels_ * kernel_ * kernel_;
    input_ = x;
    Tensor y({n, out_channels_, oh, ow});
    Tensor col({k, h * w});
    ConstMatrixMap wt(weight_.value.data(), static_cast<Eigen::Index>(in_channels_), static_cast<Eigen::Index>(k));
    MatrixMap cm(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(h * w));
    for (std::size_t i = 0; i < n; ++i) {
        ConstMatrixMap xi(x.image(i).data(), static_cast<Eigen::Index>(in_channels_), static_cast<Eigen::Index>(h * w));
        cm.noalias() = wt.transpose() * xi;
        double* out = y.image(i).data();
        col2im(col.data(), g, out);
        for (std::size_t c = 0; c < out_channels_; ++c)
            for (std::size_t p = 0; p < oh * ow; ++p) out[c * oh * ow + p] += bias_.value[c];
    }
    return y;
}

Tensor ConvTranspose2d::backward(const Tensor& grad_out) {
    const std::size_t n = input_.dim(0);
    const std::size_t h = input_.dim(2);
    const std::size_t w = input_.dim(3);
    const std::size_t oh = grad_out.dim(2);
    const std::size_t ow = grad_out.dim(3);
    const ConvGeometry g{out_channels_, oh, ow, kernel_, stride_, padding_, h, w};
    const std::size_t k = out_channels_ * kernel_ * kernel_;
    Tensor grad_in(input_.shape());
    Tensor col({k, h * w});
    ConstMatrixMap wt(weight_.value.data(), static_cast<Eigen::Index>(in_channels_), static_cast<Eigen::Index>(k));
    MatrixMap dw(weight_.grad.data(), static_cast<Eigen::Index>(in_channels_), static_cast<Eigen::Index>(k));
    ConstMatrixMap cm(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(h * w));
    for (std::size_t i = 0; i < n; ++i) {
        const double* dy = grad_out.image(i).data();
        im2col(dy, g, col.data());
        ConstMatrixMap xi(input_.image(i).data(), static_cast<Eigen::Index>(in_channels_),
                          static_cast<Eigen::Index>(h * w));
        MatrixMap dx(grad_in.image(i).data(), static_cast<Eigen::Index>(in_channels_), static_cast<Eigen::Index>(h * w));
        dx.noalias() = wt * cm;
        dw.noalias() += xi * cm.transpose();
        for (std::size_t c = 0; c < out_channels_; ++c) {
            double s = 0.0;
            for (std::size_t p = 0; p < oh * ow; ++p) s += dy[c * oh * ow + p];
            bias_.grad[c] += s;
        }
    }
    return grad_in;
}

namespace {

struct Tap {
    std::size_t lo, hi;
    double frac;
};

Tap bilinear_tap(std::size_t dst, std::size_t in_size) {
    double src = (static_cast<double>(dst) + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    const auto lo = static_cast<std::size_t>(src);
    const std::size_t hi = std::min(lo + 1, in_size - 1);
    return {lo, hi, src - static_cast<double>(lo)};
}

}  // namespace

Tensor BilinearUpsample2x::forward(const Tensor& x) {
    if (x.rank() != 4) throw ValidationError("bilinear upsample expects NCHW input");
    input_shape_ = x.shape();
    const std::size_t h = x.dim(2);
    const std::size_t w = x.dim(3);
    Tensor y({x.dim(0), x.dim(1), 2 * h, 2 * w});
    for (std::size_t n = 0; n < x.dim(0); ++n) {
        for (std::size_t c = 0; c < x.dim(1); ++c) {
            for (std::size_t i = 0; i < 2 * h; ++i) {
                const Tap ty = bilinear_tap(i, h);
                for (std::size_t j = 0; j < 2 * w; ++j) {
                    const Tap tx = bilinear_tap(j, w);
                    y.at(n, c, i, j) = (1 - ty.frac) * ((1 - tx.frac) * x.at(n, c, ty.lo, tx.lo) + tx.frac * x.at(n, c, ty.lo, tx.hi)) +
                                       ty.frac * ((1 - tx.frac) * x.at(n, c, ty.hi, tx.lo) + tx.frac * x.at(n, c, ty.hi, tx.hi));
                }
            }
        }
    }
    return y;
}

Tensor BilinearUpsample2x::backward(const Tensor& grad_out) const {
    Tensor gx(input_shape_);
    const std::size_t h = input_shape_[2];
    const std::size_t w = input_shape_[3];
    for (std::size_t n = 0; n < input_shape_[0]; ++n) {
        for (std::size_t c = 0; c < input_shape_[1]; ++c) {
            for (std::size_t i = 0; i < 2 * h; ++i) {
                const Tap ty = bilinear_tap(i, h);
                for (std::size_t j = 0; j < 2 * w; ++j) {
                    const Tap tx = bilinear_tap(j, w);
                    const double g = grad_out.at(n, c, i, j);
                    gx.at(n, c, ty.lo, tx.lo) += g * (1 - ty.frac) * (1 - tx.frac);
                    gx.at(n, c, ty.lo, tx.hi) += g * (1 - ty.frac) * tx.frac;
                    gx.at(n, c, ty.hi, tx.lo) += g * ty.frac * (1 - tx.frac);
                    gx.at(n, c, ty.hi, tx.hi) += g * ty.frac * tx.frac;
                }
            }
        }
    }
    return gx;
}

Tensor Relu::forward(const Tensor& x) {
    output_ = x;
    for (double& v : output_.values()) v = v > 0 ? v : 0.0;
    return output_;
}

Tensor Relu::backward(const Tensor& grad_out) const {
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!(output_[i] > 0)) g[i] = 0.0;
    return g;
}

Linear::Linear(const std::string& name, std::size_t in_features, std::size_t out_features)
    : in_(in_features), out_(out_features), weight_(name + ".weight", {out_features, in_features}),
      bias_(name + ".bias", {out_features}) {
    if (in_features == 0 || out_features == 0) throw ValidationError("linear layer " + name + " has a zero dimension");
}

void Linear::init(Rng& rng, double gain) {
    const double sd = std::sqrt(gain / static_cast<double>(in_));
    for (double& v : weight_.value.values()) v = sd * rng.normal();
    bias_.value.zero();
}

Tensor Linear::forward(const Tensor& x) {
    if (x.rank() != 2 || x.dim(1) != in_)
        throw ValidationError("linear: expected N x " + std::to_string(in_) + " input, got " + shape_string(x.shape()));
    input_ = x;
    const auto n = static_cast<Eigen::Index>(x.dim(0));
    Tensor y({x.dim(0), out_});
    ConstMatrixMap xm(x.data(), n, static_cast<Eigen::Index>(in_));
    ConstMatrixMap wm(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    MatrixMap ym(y.data(), n, static_cast<Eigen::Index>(out_));
    ym.noalias() = xm * wm.transpose();
    for (Eigen::Index i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_; ++o) ym(i, static_cast<Eigen::Index>(o)) += bias_.value[o];
    return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
    const auto n = static_cast<Eigen::Index>(input_.dim(0));
    Tensor gx(input_.shape());
    ConstMatrixMap dy(grad_out.data(), n, static_cast<Eigen::Index>(out_));
    ConstMatrixMap xm(input_.data(), n, static_cast<Eigen::Index>(in_));
    ConstMatrixMap wm(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    MatrixMap dw(weight_.grad.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    MatrixMap dx(gx.data(), n, static_cast<Eigen::Index>(in_));
    dw.noalias() += dy.transpose() * xm;
    dx.noalias() = dy * wm;
    for (Eigen::Index i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_; ++o) bias_.grad[o] += dy(i, static_cast<Eigen::Index>(o));
    return gx;
}

Tensor sigmoid(const Tensor& logits) {
    Tensor p = logits;
    for (double& v : p.values()) v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return p;
}

}  // namespace dclseg::nn
