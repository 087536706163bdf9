#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dclseg/backbone.hpp"
#include "dclseg/image.hpp"
#include "dclseg/nn.hpp"

namespace dclseg {

enum class UpscaleMode { transposed_conv, bilinear };

std::string to_string(UpscaleMode mode);
UpscaleMode parse_upscale_mode(const std::string& text);

struct DecoderConfig {
    UpscaleMode mode = UpscaleMode::transposed_conv;
    // Number of 2x upscaling stages; must equal log2 of the encoder stride.
    std::size_t stages = 3;
    // Output channels per stage, deepest first.
    std::vector<std::size_t> channels{32, 16, 8};
    // Foreground classes; one sigmoid channel each.
    std::size_t num_classes = 1;
    std::uint64_t init_seed = 1;
    // Zero the final 1x1 classifier at init.
    bool zero_init_head = false;

    void validate() const;
};

/// U-Net style decoder. Each stage doubles the resolution (trainable
/// transposed convolution, or fixed bilinear interpolation), concatenates the
/// encoder skip map of matching stride and applies conv3x3 + ReLU. A final
/// 1x1 convolution produces per-class logits.
class Decoder {
public:
    Decoder() = default;
    Decoder(const DecoderConfig& cfg, const EncoderConfig& encoder, const std::string& name);

    // Initializes from cfg.init_seed.
    void init();
    Tensor forward(const FeatureMap& fm);
    FeatureGrad backward(const Tensor& grad_logits);
    void collect(nn::ParameterList& out);

    const DecoderConfig& config() const noexcept { return cfg_; }
    nn::Conv2d& head() { return head_; }

private:
    struct Stage {
        nn::ConvTranspose2d up_conv;
        nn::BilinearUpsample2x up_bilinear;
        nn::Conv2d conv;
        nn::Relu relu;
        std::size_t up_channels = 0;
    };

    DecoderConfig cfg_;
    std::vector<Stage> stages_;
    nn::Conv2d head_;
};

Tensor decode(const FeatureMap& fm, Decoder& decoder);

constexpr double kProbClamp = 1e-7;

/// Per-class sigmoid probabilities, any layout (C x H x W or N x C x H x W).
struct ProbMap {
    Tensor probs;
};

/// Thresholded one-hot target. Holds plain values only, so no gradient can
/// flow back into the map it came from.
struct PseudoLabel {
    Tensor onehot;
    static constexpr bool gradient_isolated = true;
};

/// onehot = 1 where p >= threshold. threshold must lie in (0, 1).
PseudoLabel pseudo_label(const ProbMap& p, double threshold = 0.5);

/// Planar mask -> C x H x W one-hot over foreground classes 1..C
/// (background is all-zero).
Tensor one_hot(const LabelMask& mask);
/// N planar masks -> N x C x H x W.
Tensor one_hot_batch(const std::vector<const LabelMask*>& masks);

/// Mean binary cross-entropy with p clamped to [1e-7, 1 - 1e-7].
double binary_cross_entropy(const Tensor& p, const Tensor& target);

struct SsfResult {
    double loss = 0.0;
    Tensor grad_p1;
    Tensor grad_p2;
};

/// Labeled (target given): BCE(p1, m) + BCE(p2, m).
/// Unlabeled: BCE(p1, y2) + BCE(p2, y1) with y_j = pseudo_label(p_j).
/// Gradients are taken with the pseudo-labels held constant.
SsfResult ssf_loss_with_grad(const ProbMap& p1, const ProbMap& p2, const Tensor* target_onehot, double threshold = 0.5);
double ssf_loss(const ProbMap& p1, const ProbMap& p2, const LabelMask* target, double threshold = 0.5);

}  // namespace dclseg
