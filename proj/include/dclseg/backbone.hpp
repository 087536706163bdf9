#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dclseg/image.hpp"
#include "dclseg/nn.hpp"
#include "dclseg/transform.hpp"

namespace dclseg {

enum class EncoderPreset { tiny_cnn, resnet50_like };

std::string to_string(EncoderPreset preset);
EncoderPreset parse_encoder_preset(const std::string& text);

/// Encoder layout. tiny-cnn: one full-resolution conv stage followed by
/// stride-2 conv stages. resnet50-like: a stem conv followed by stages of
/// bottleneck residual blocks, each stage halving the resolution.
struct EncoderConfig {
    EncoderPreset preset = EncoderPreset::tiny_cnn;
    std::size_t in_channels = 1;
    // Output channels of the stem/first stage followed by each downsampling stage.
    std::vector<std::size_t> widths{16, 32, 64, 64};
    // Bottleneck blocks per downsampling stage; resnet50-like only.
    std::vector<std::size_t> blocks;

    static EncoderConfig tiny_cnn();
    static EncoderConfig resnet50_like();

    std::size_t stride() const;
    std::size_t downsampling_stages() const { return widths.size() - 1; }
    std::size_t feature_channels() const { return widths.back(); }
    // Channels of the intermediate maps handed to the decoder, shallow first.
    std::vector<std::size_t> skip_channels() const;
    void validate() const;
};

/// Encoder output: the deepest map plus the intermediate maps at strides
/// 1, 2, 4, ... used by the decoders' skip connections.
struct FeatureMap {
    Tensor values;  // N x C_f x D_h x D_w
    std::size_t stride = 1;
    std::vector<Tensor> skips;

    GridDims grid() const { return {values.dim(2), values.dim(3)}; }
};

/// Gradient with respect to a FeatureMap. Empty skip tensors count as zero.
struct FeatureGrad {
    Tensor values;
    std::vector<Tensor> skips;
};

class Encoder {
public:
    Encoder() = default;
    explicit Encoder(const EncoderConfig& cfg, const std::string& prefix = "encoder");

    void init(Rng& rng);
    // images: N x in_channels x H x W with H, W divisible by the stride.
    FeatureMap forward(const Tensor& images);
    Tensor backward(const FeatureGrad& grad);
    void collect(nn::ParameterList& out);

    const EncoderConfig& config() const noexcept { return cfg_; }

private:
    struct ConvStage {
        nn::Conv2d conv;
        nn::Relu relu;
    };
    struct Bottleneck {
        nn::Conv2d reduce, conv, expand;
        std::optional<nn::Conv2d> shortcut;
        nn::Relu relu1, relu2, relu_out;
        Tensor forward(const Tensor& x);
        Tensor backward(const Tensor& g);
    };

    Tensor run_stage(std::size_t stage, const Tensor& x);
    Tensor backprop_stage(std::size_t stage, const Tensor& g);

    EncoderConfig cfg_;
    std::vector<ConvStage> conv_stages_;
    std::vector<std::vector<Bottleneck>> res_stages_;
};

/// Single-image convenience wrapper around Encoder::forward.
FeatureMap encode(const SliceImage& image, Encoder& encoder);

constexpr double kNormEpsilon = 1e-8;

/// Per-position embeddings of one image, each column unit length.
struct DenseProjection {
    Tensor vectors;  // C_p x D_h x D_w

    std::size_t dim() const { return vectors.dim(0); }
    GridDims grid() const { return {vectors.dim(1), vectors.dim(2)}; }
    std::size_t positions() const { return vectors.dim(1) * vectors.dim(2); }
    // Embedding at row-major grid position p.
    std::vector<double> at(std::size_t position) const;
};

/// 1x1 convolution followed by per-position L2 normalization,
/// y = z / (|z| + 1e-8).
class DenseProjectionHead {
public:
    DenseProjectionHead() = default;
    DenseProjectionHead(std::size_t in_channels, std::size_t embed_dim, const std::string& name = "projection");

    void init(Rng& rng);
    Tensor forward(const Tensor& features);
    Tensor backward(const Tensor& grad);
    void collect(nn::ParameterList& out) { conv_.collect(out); }

    nn::Conv2d& conv() { return conv_; }

private:
    nn::Conv2d conv_;
    Tensor pre_;
    Tensor norms_;
};

/// Projects every image of fm; one DenseProjection per batch entry.
std::vector<DenseProjection> project_dense(const FeatureMap& fm, DenseProjectionHead& head);
std::vector<DenseProjection> split_projections(const Tensor& batched);

/// Global-average-pool head: GAP -> linear [-> ReLU -> linear] -> L2 norm.
/// hidden == 0 drops the hidden layer (a single linear map).
class GlobalProjectionHead {
public:
    GlobalProjectionHead() = default;
    GlobalProjectionHead(std::size_t in_channels, std::size_t hidden, std::size_t embed_dim,
                         const std::string& name = "global_head");

    void init(Rng& rng);
    // N x C x H x W -> N x embed_dim
    Tensor forward(const Tensor& features);
    Tensor backward(const Tensor& grad);
    void collect(nn::ParameterList& out);

    nn::Linear& first() { return first_; }
    nn::Linear& second() { return second_; }
    bool has_hidden() const noexcept { return hidden_ > 0; }

private:
    std::size_t hidden_ = 0;
    nn::Linear first_;
    nn::Relu relu_;
    nn::Linear second_;
    Shape feature_shape_;
    Tensor pre_;
    Tensor norms_;
};

/// Unit vector for one image from a FeatureMap holding a single image.
std::vector<double> project_global(const FeatureMap& fm, GlobalProjectionHead& head);

// Row-wise L2 normalization shared by both heads; norms receives |z|.
Tensor l2_normalize_rows(const Tensor& rows, Tensor& norms);
Tensor l2_normalize_rows_backward(const Tensor& rows, const Tensor& norms, const Tensor& grad);

}  // namespace dclseg
