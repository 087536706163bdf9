#include "dclseg/dual_decoder.hpp"

#include <algorithm>
#include <cmath>

#include "dclseg/errors.hpp"

namespace dclseg {

std::string to_string(UpscaleMode mode) {
    return mode == UpscaleMode::transposed_conv ? "transposed-conv" : "bilinear";
}

UpscaleMode parse_upscale_mode(const std::string& text) {
    if (text == "transposed-conv") return UpscaleMode::transposed_conv;
    if (text == "bilinear") return UpscaleMode::bilinear;
    throw ValidationError("unknown upscale mode '" + text + "'");
}

void DecoderConfig::validate() const {
    if (stages == 0) throw ValidationError("decoder.stages must be >= 1");
    if (channels.size() != stages)
        throw ValidationError("decoder.channels lists " + std::to_string(channels.size()) + " widths for " +
                              std::to_string(stages) + " stages");
    for (std::size_t c : channels)
        if (c == 0) throw ValidationError("decoder channel widths must be positive");
    if (num_classes == 0) throw ValidationError("decoder needs at least one class");
}

Decoder::Decoder(const DecoderConfig& cfg, const EncoderConfig& encoder, const std::string& name) : cfg_(cfg) {
    cfg_.validate();
    if (encoder.downsampling_stages() != cfg_.stages)
        throw ValidationError("decoder has " + std::to_string(cfg_.stages) + " stages but the encoder stride is " +
                              std::to_string(encoder.stride()));
    const auto skips = encoder.skip_channels();
    std::size_t in = encoder.feature_channels();
    for (std::size_t j = 0; j < cfg_.stages; ++j) {
        const std::string prefix = name + ".stage" + std::to_string(j);
        const std::size_t out = cfg_.channels[j];
        const std::size_t skip = skips[cfg_.stages - 1 - j];
        Stage s;
        if (cfg_.mode == UpscaleMode::transposed_conv) {
            s.up_conv = nn::ConvTranspose2d(prefix + ".up", in, out, 2, 2);
            s.up_channels = out;
        } else {
            s.up_channels = in;
        }
        s.conv = nn::Conv2d(prefix + ".conv", s.up_channels + skip, out, 3, 1, 1);
        stages_.push_back(std::move(s));
        in = out;
    }
    head_ = nn::Conv2d(name + ".head", in, cfg_.num_classes, 1);
}

void Decoder::init() {
    Rng rng(cfg_.init_seed);
    for (Stage& s : stages_) {
        if (cfg_.mode == UpscaleMode::transposed_conv) s.up_conv.init(rng);
        s.conv.init(rng);
    }
    head_.init(rng, 0.5);
    if (cfg_.zero_init_head) head_.weight().value.zero();
}

Tensor Decoder::forward(const FeatureMap& fm) {
    if (fm.stride != (std::size_t{1} << cfg_.stages) || fm.skips.size() != cfg_.stages)
        throw ValidationError("feature stride " + std::to_string(fm.stride) + " does not match " +
                              std::to_string(cfg_.stages) + " decoder stages");
    Tensor h = fm.values;
    for (std::size_t j = 0; j < stages_.size(); ++j) {
        Stage& s = stages_[j];
        Tensor up = cfg_.mode == UpscaleMode::transposed_conv ? s.up_conv.forward(h) : s.up_bilinear.forward(h);
        h = s.relu.forward(s.conv.forward(concat_channels(up, fm.skips[cfg_.stages - 1 - j])));
    }
    return head_.forward(h);
}

FeatureGrad Decoder::backward(const Tensor& grad_logits) {
    FeatureGrad out;
    out.skips.resize(cfg_.stages);
    Tensor g = head_.backward(grad_logits);
    for (std::size_t j = stages_.size(); j-- > 0;) {
        Stage& s = stages_[j];
        Tensor g_up, g_skip;
        split_channels(s.conv.backward(s.relu.backward(g)), s.up_channels, g_up, g_skip);
        out.skips[cfg_.stages - 1 - j] = std::move(g_skip);
        g = cfg_.mode == UpscaleMode::transposed_conv ? s.up_conv.backward(g_up) : s.up_bilinear.backward(g_up);
    }
    out.values = std::move(g);
    return out;
}

void Decoder::collect(nn::ParameterList& out) {
    for (Stage& s : stages_) {
        if (cfg_.mode == UpscaleMode::transposed_conv) s.up_conv.collect(out);
        s.conv.collect(out);
    }
    head_.collect(out);
}

Tensor decode(const FeatureMap& fm, Decoder& decoder) { return decoder.forward(fm); }

namespace {

void require_probabilities(const Tensor& p, const char* what) {
    for (double v : p.values())
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(std::string(what) + " must hold probabilities in [0, 1]");
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

// Accumulates mean BCE(p, y) into loss and its derivative into grad.
void bce_accumulate(const Tensor& p, const Tensor& y, double& loss, Tensor& grad) {
    const double inv_n = 1.0 / static_cast<double>(p.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pc = clamp_prob(p[i]);
        sum += -(y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc));
        const bool clamped = p[i] < kProbClamp || p[i] > 1.0 - kProbClamp;
        grad[i] += clamped ? 0.0 : inv_n * (-y[i] / pc + (1.0 - y[i]) / (1.0 - pc));
    }
    loss += sum * inv_n;
}

}  // namespace

PseudoLabel pseudo_label(const ProbMap& p, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("pseudo-label threshold must lie in (0, 1)");
    require_probabilities(p.probs, "probability map");
    PseudoLabel y{Tensor(p.probs.shape())};
    for (std::size_t i = 0; i < p.probs.size(); ++i) y.onehot[i] = p.probs[i] >= threshold ? 1.0 : 0.0;
    return y;
}

Tensor one_hot(const LabelMask& mask) {
    if (mask.depth() != 1) throw ValidationError("one_hot expects a single slice");
    const std::size_t c = mask.num_classes(), plane = mask.height() * mask.width();
    Tensor out({c, mask.height(), mask.width()});
    for (std::size_t p = 0; p < plane; ++p) {
        const std::uint8_t v = mask.labels()[p];
        if (v > 0) out[(v - 1u) * plane + p] = 1.0;
    }
    return out;
}

Tensor one_hot_batch(const std::vector<const LabelMask*>& masks) {
    if (masks.empty()) throw ValidationError("one_hot_batch: no masks");
    std::vector<Tensor> parts;
    std::vector<const Tensor*> ptrs;
    parts.reserve(masks.size());
    for (const LabelMask* m : masks) {
        Tensor t = one_hot(*m);
        parts.push_back(t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)}));
    }
    for (const Tensor& t : parts) ptrs.push_back(&t);
    return concat_batch(ptrs);
}

double binary_cross_entropy(const Tensor& p, const Tensor& target) {
    if (!p.same_shape(target)) throw ValidationError("BCE shape mismatch");
    Tensor scratch(p.shape());
    double loss = 0.0;
    bce_accumulate(p, target, loss, scratch);
    return loss;
}

SsfResult ssf_loss_with_grad(const ProbMap& p1, const ProbMap& p2, const Tensor* target_onehot, double threshold) {
    if (!p1.probs.same_shape(p2.probs))
        throw ValidationError("probability maps differ in shape: " + shape_string(p1.probs.shape()) + " vs " +
                              shape_string(p2.probs.shape()));
    if (p1.probs.empty()) throw ValidationError("empty probability map");
    require_probabilities(p1.probs, "p1");
    require_probabilities(p2.probs, "p2");
    SsfResult r{0.0, Tensor(p1.probs.shape()), Tensor(p2.probs.shape())};
    if (target_onehot) {
        if (!target_onehot->same_shape(p1.probs))
            throw ValidationError("target shape " + shape_string(target_onehot->shape()) +
                                  " does not match prediction shape " + shape_string(p1.probs.shape()));
        bce_accumulate(p1.probs, *target_onehot, r.loss, r.grad_p1);
        bce_accumulate(p2.probs, *target_onehot, r.loss, r.grad_p2);
        return r;
    }
    const PseudoLabel y1 = pseudo_label(p1, threshold);
    const PseudoLabel y2 = pseudo_label(p2, threshold);
    bce_accumulate(p1.probs, y2.onehot, r.loss, r.grad_p1);
    bce_accumulate(p2.probs, y1.onehot, r.loss, r.grad_p2);
    return r;
}

double ssf_loss(const ProbMap& p1, const ProbMap& p2, const LabelMask* target, double threshold) {
    if (!target) return ssf_loss_with_grad(p1, p2, nullptr, threshold).loss;
    const Tensor t = one_hot(*target);
    return ssf_loss_with_grad(p1, p2, &t, threshold).loss;
}

}  // namespace dclseg
