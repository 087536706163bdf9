#include "dclseg/backbone.hpp"

#include <cmath>

#include "dclseg/errors.hpp"

namespace dclseg {

namespace {

// N x C x H x W -> (N*H*W) x C
Tensor to_rows(const Tensor& t) {
    const std::size_t n = t.dim(0), c = t.dim(1), plane = t.dim(2) * t.dim(3);
    Tensor rows({n * plane, c});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < plane; ++p) rows[(i * plane + p) * c + ch] = t[(i * c + ch) * plane + p];
    return rows;
}

Tensor from_rows(const Tensor& rows, const Shape& shape) {
    const std::size_t n = shape[0], c = shape[1], plane = shape[2] * shape[3];
    Tensor t(shape);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < plane; ++p) t[(i * c + ch) * plane + p] = rows[(i * plane + p) * c + ch];
    return t;
}

}  // namespace

std::string to_string(EncoderPreset preset) {
    return preset == EncoderPreset::tiny_cnn ? "tiny-cnn" : "resnet50-like";
}

EncoderPreset parse_encoder_preset(const std::string& text) {
    if (text == "tiny-cnn") return EncoderPreset::tiny_cnn;
    if (text == "resnet50-like") return EncoderPreset::resnet50_like;
    throw ValidationError("unknown model preset '" + text + "' (expected tiny-cnn or resnet50-like)");
}

EncoderConfig EncoderConfig::tiny_cnn() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::resnet50_like() {
    EncoderConfig cfg;
    cfg.preset = EncoderPreset::resnet50_like;
    cfg.widths = {16, 32, 64, 128, 256};
    cfg.blocks = {3, 4, 6, 3};
    return cfg;
}

std::size_t EncoderConfig::stride() const { return std::size_t{1} << downsampling_stages(); }

std::vector<std::size_t> EncoderConfig::skip_channels() const {
    return {widths.begin(), widths.end() - 1};
}

void EncoderConfig::validate() const {
    if (widths.size() < 2) throw ValidationError("encoder needs at least one downsampling stage");
    for (std::size_t w : widths)
        if (w == 0) throw ValidationError("encoder widths must be positive");
    if (in_channels == 0) throw ValidationError("encoder input channels must be positive");
    if (preset == EncoderPreset::resnet50_like) {
        if (blocks.size() != downsampling_stages())
            throw ValidationError("resnet50-like needs one block count per downsampling stage");
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            if (blocks[i] == 0) throw ValidationError("block counts must be positive");
            if (widths[i + 1] % 4 != 0) throw ValidationError("bottleneck widths must be divisible by 4");
        }
    }
}

Tensor Encoder::Bottleneck::forward(const Tensor& x) {
    Tensor main = expand.forward(relu2.forward(conv.forward(relu1.forward(reduce.forward(x)))));
    main += shortcut ? shortcut->forward(x) : x;
    return relu_out.forward(main);
}

Tensor Encoder::Bottleneck::backward(const Tensor& g) {
    const Tensor gs = relu_out.backward(g);
    Tensor gx = reduce.backward(relu1.backward(conv.backward(relu2.backward(expand.backward(gs)))));
    gx += shortcut ? shortcut->backward(gs) : gs;
    return gx;
}

Encoder::Encoder(const EncoderConfig& cfg, const std::string& prefix) : cfg_(cfg) {
    cfg_.validate();
    const auto& w = cfg_.widths;
    if (cfg_.preset == EncoderPreset::tiny_cnn) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            const std::size_t in = i == 0 ? cfg_.in_channels : w[i - 1];
            conv_stages_.push_back({nn::Conv2d(prefix + ".stage" + std::to_string(i) + ".conv", in, w[i], 3,
                                               i == 0 ? 1 : 2, 1),
                                    {}});
        }
        return;
    }
    conv_stages_.push_back({nn::Conv2d(prefix + ".stem.conv", cfg_.in_channels, w[0], 3, 1, 1), {}});
    for (std::size_t s = 0; s < cfg_.blocks.size(); ++s) {
        std::vector<Bottleneck> stage;
        for (std::size_t b = 0; b < cfg_.blocks[s]; ++b) {
            const std::string name = prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
            const std::size_t in = b == 0 ? w[s] : w[s + 1];
            const std::size_t out = w[s + 1];
            const std::size_t mid = out / 4;
            const std::size_t stride = b == 0 ? 2 : 1;
            Bottleneck block{nn::Conv2d(name + ".reduce", in, mid, 1),
                             nn::Conv2d(name + ".conv", mid, mid, 3, stride, 1),
                             nn::Conv2d(name + ".expand", mid, out, 1),
                             std::nullopt,
                             {}, {}, {}};
            if (stride != 1 || in != out) block.shortcut = nn::Conv2d(name + ".shortcut", in, out, 1, stride, 0);
            stage.push_back(std::move(block));
        }
        res_stages_.push_back(std::move(stage));
    }
}

void Encoder::init(Rng& rng) {
    for (auto& s : conv_stages_) s.conv.init(rng);
    for (auto& stage : res_stages_) {
        for (auto& b : stage) {
            b.reduce.init(rng);
            b.conv.init(rng);
            // Small residual branch keeps deep stacks near identity at init.
            b.expand.init(rng, 0.25);
            if (b.shortcut) b.shortcut->init(rng);
        }
    }
}

Tensor Encoder::run_stage(std::size_t stage, const Tensor& x) {
    if (cfg_.preset == EncoderPreset::tiny_cnn || stage == 0) {
        auto& s = conv_stages_[stage];
        return s.relu.forward(s.conv.forward(x));
    }
    Tensor h = x;
    for (auto& b : res_stages_[stage - 1]) h = b.forward(h);
    return h;
}

Tensor Encoder::backprop_stage(std::size_t stage, const Tensor& g) {
    if (cfg_.preset == EncoderPreset::tiny_cnn || stage == 0) {
        auto& s = conv_stages_[stage];
        return s.conv.backward(s.relu.backward(g));
    }
    Tensor h = g;
    auto& blocks = res_stages_[stage - 1];
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) h = it->backward(h);
    return h;
}

FeatureMap Encoder::forward(const Tensor& images) {
    const std::size_t stride = cfg_.stride();
    if (images.rank() != 4 || images.dim(1) != cfg_.in_channels || images.dim(2) % stride != 0 ||
        images.dim(3) % stride != 0 || images.dim(2) == 0 || images.dim(3) == 0)
        throw ValidationError("encoder input " + shape_string(images.shape()) +
                              " must be N x C x H x W with H and W divisible by " + std::to_string(stride));
    FeatureMap fm;
    fm.stride = stride;
    Tensor h = images;
    const std::size_t stages = cfg_.widths.size();
    for (std::size_t i = 0; i < stages; ++i) {
        h = run_stage(i, h);
        if (i + 1 < stages) fm.skips.push_back(h);
    }
    fm.values = std::move(h);
    return fm;
}

Tensor Encoder::backward(const FeatureGrad& grad) {
    Tensor g = grad.values;
    for (std::size_t i = cfg_.widths.size(); i-- > 0;) {
        g = backprop_stage(i, g);
        if (i > 0 && i - 1 < grad.skips.size() && !grad.skips[i - 1].empty()) g += grad.skips[i - 1];
    }
    return g;
}

void Encoder::collect(nn::ParameterList& out) {
    for (auto& s : conv_stages_) s.conv.collect(out);
    for (auto& stage : res_stages_) {
        for (auto& b : stage) {
            b.reduce.collect(out);
            b.conv.collect(out);
            b.expand.collect(out);
            if (b.shortcut) b.shortcut->collect(out);
        }
    }
}

FeatureMap encode(const SliceImage& image, Encoder& encoder) {
    Tensor x({1, 1, image.height, image.width}, image.pixels);
    return encoder.forward(x);
}

std::vector<double> DenseProjection::at(std::size_t position) const {
    const std::size_t plane = positions();
    std::vector<double> v(dim());
    for (std::size_t c = 0; c < v.size(); ++c) v[c] = vectors[c * plane + position];
    return v;
}

Tensor l2_normalize_rows(const Tensor& rows, Tensor& norms) {
    const std::size_t n = rows.dim(0), d = rows.dim(1);
    norms = Tensor({n});
    Tensor out(rows.shape());
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += rows[i * d + k] * rows[i * d + k];
        const double norm = std::sqrt(s);
        norms[i] = norm;
        for (std::size_t k = 0; k < d; ++k) out[i * d + k] = rows[i * d + k] / (norm + kNormEpsilon);
    }
    return out;
}

Tensor l2_normalize_rows_backward(const Tensor& rows, const Tensor& norms, const Tensor& grad) {
    const std::size_t n = rows.dim(0), d = rows.dim(1);
    Tensor out(rows.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double norm = norms[i];
        const double denom = norm + kNormEpsilon;
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += rows[i * d + k] * grad[i * d + k];
        // d/dz [z / (|z| + eps)] = I / (|z| + eps) - z z^T / (|z| (|z| + eps)^2)
        const double coef = norm > 0 ? dot / (norm * denom * denom) : 0.0;
        for (std::size_t k = 0; k < d; ++k) out[i * d + k] = grad[i * d + k] / denom - coef * rows[i * d + k];
    }
    return out;
}

DenseProjectionHead::DenseProjectionHead(std::size_t in_channels, std::size_t embed_dim, const std::string& name)
    : conv_(name + ".conv", in_channels, embed_dim, 1) {}

void DenseProjectionHead::init(Rng& rng) { conv_.init(rng); }

Tensor DenseProjectionHead::forward(const Tensor& features) {
    const Tensor z = conv_.forward(features);
    pre_ = to_rows(z);
    return from_rows(l2_normalize_rows(pre_, norms_), z.shape());
}

Tensor DenseProjectionHead::backward(const Tensor& grad) {
    const Tensor g_rows = l2_normalize_rows_backward(pre_, norms_, to_rows(grad));
    return conv_.backward(from_rows(g_rows, grad.shape()));
}

std::vector<DenseProjection> split_projections(const Tensor& batched) {
    std::vector<DenseProjection> out;
    for (std::size_t i = 0; i < batched.dim(0); ++i) {
        const auto img = batched.image(i);
        out.push_back({Tensor({batched.dim(1), batched.dim(2), batched.dim(3)},
                              std::vector<double>(img.begin(), img.end()))});
    }
    return out;
}

std::vector<DenseProjection> project_dense(const FeatureMap& fm, DenseProjectionHead& head) {
    return split_projections(head.forward(fm.values));
}

GlobalProjectionHead::GlobalProjectionHead(std::size_t in_channels, std::size_t hidden, std::size_t embed_dim,
                                           const std::string& name)
    : hidden_(hidden),
      first_(name + ".fc1", in_channels, hidden > 0 ? hidden : embed_dim),
      second_(hidden > 0 ? nn::Linear(name + ".fc2", hidden, embed_dim) : nn::Linear()) {}

void GlobalProjectionHead::init(Rng& rng) {
    first_.init(rng);
    if (hidden_ > 0) second_.init(rng, 1.0);
}

Tensor GlobalProjectionHead::forward(const Tensor& features) {
    feature_shape_ = features.shape();
    const std::size_t n = features.dim(0), c = features.dim(1), plane = features.dim(2) * features.dim(3);
    Tensor pooled({n, c});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (std::size_t p = 0; p < plane; ++p) s += features[(i * c + ch) * plane + p];
            pooled[i * c + ch] = s / static_cast<double>(plane);
        }
    Tensor z = first_.forward(pooled);
    if (hidden_ > 0) z = second_.forward(relu_.forward(z));
    pre_ = z;
    return l2_normalize_rows(pre_, norms_);
}

Tensor GlobalProjectionHead::backward(const Tensor& grad) {
    Tensor g = l2_normalize_rows_backward(pre_, norms_, grad);
    if (hidden_ > 0) g = relu_.backward(second_.backward(g));
    const Tensor gp = first_.backward(g);
    Tensor out(feature_shape_);
    const std::size_t n = feature_shape_[0], c = feature_shape_[1], plane = feature_shape_[2] * feature_shape_[3];
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < plane; ++p)
                out[(i * c + ch) * plane + p] = gp[i * c + ch] / static_cast<double>(plane);
    return out;
}

void GlobalProjectionHead::collect(nn::ParameterList& out) {
    first_.collect(out);
    if (hidden_ > 0) second_.collect(out);
}

std::vector<double> project_global(const FeatureMap& fm, GlobalProjectionHead& head) {
    if (fm.values.dim(0) != 1) throw ValidationError("project_global expects a single-image feature map");
    const Tensor v = head.forward(fm.values);
    return {v.data(), v.data() + v.size()};
}

}  // namespace dclseg
