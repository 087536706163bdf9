#include <gtest/gtest.h>

#include <cmath>

#include "dclseg/dual_decoder.hpp"
#include "dclseg/errors.hpp"
#include "test_support.hpp"

using namespace dclseg;

namespace {

DecoderConfig tiny_decoder(UpscaleMode mode, std::uint64_t seed, std::size_t classes = 2) {
    DecoderConfig cfg;
    cfg.mode = mode;
    cfg.init_seed = seed;
    cfg.num_classes = classes;
    return cfg;
}

FeatureMap random_features(const EncoderConfig& enc, std::size_t n, std::size_t h, std::size_t w, Rng& rng) {
    FeatureMap fm;
    fm.stride = enc.stride();
    fm.values = Tensor({n, enc.feature_channels(), h / fm.stride, w / fm.stride});
    support::fill_normal(fm.values, rng);
    const auto skips = enc.skip_channels();
    for (std::size_t s = 0; s < skips.size(); ++s) {
        Tensor t({n, skips[s], h >> s, w >> s});
        support::fill_normal(t, rng);
        fm.skips.push_back(t);
    }
    return fm;
}

double clamp(double p) { return std::min(std::max(p, 1e-7), 1 - 1e-7); }

// Mean BCE written out directly.
double bce_oracle(const Tensor& p, const std::vector<double>& y) {
    long double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pc = clamp(p[i]);
        s += -(y[i] * std::log(pc) + (1 - y[i]) * std::log(1 - pc));
    }
    return static_cast<double>(s / p.size());
}

std::vector<double> threshold_oracle(const Tensor& p, double t) {
    std::vector<double> y(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) y[i] = p[i] >= t ? 1.0 : 0.0;
    return y;
}

// Uniform in (0, 1) but at least margin away from 0.5.
Tensor random_probs(Shape shape, Rng& rng, double margin = 0.0) {
    Tensor p(std::move(shape));
    for (double& v : p.values()) {
        do v = rng.uniform(0.01, 0.99);
        while (std::abs(v - 0.5) < margin);
    }
    return p;
}

}  // namespace

TEST(Decoder, TinyPresetRestoresInputSize) {
    const auto enc = EncoderConfig::tiny_cnn();
    Rng rng(1);
    for (UpscaleMode mode : {UpscaleMode::transposed_conv, UpscaleMode::bilinear}) {
        Decoder dec(tiny_decoder(mode, 3), enc, "d");
        dec.init();
        const FeatureMap fm = random_features(enc, 2, 32, 32, rng);
        EXPECT_EQ(fm.values.dim(2), 4u);
        EXPECT_EQ(decode(fm, dec).shape(), (Shape{2, 2, 32, 32}));
    }
}

TEST(Decoder, ZeroHeadGivesHalfProbabilities) {
    const auto enc = EncoderConfig::tiny_cnn();
    DecoderConfig cfg = tiny_decoder(UpscaleMode::bilinear, 4);
    cfg.zero_init_head = true;
    Decoder dec(cfg, enc, "d");
    dec.init();
    Rng rng(2);
    FeatureMap fm = random_features(enc, 1, 16, 16, rng);
    fm.values.zero();
    for (Tensor& s : fm.skips) s.zero();
    const Tensor logits = dec.forward(fm);
    for (double v : logits.values()) EXPECT_EQ(v, 0.0);
    const Tensor probs = nn::sigmoid(logits);
    for (double v : probs.values()) EXPECT_EQ(v, 0.5);
}

TEST(Decoder, UpscaleModesDiffer) {
    const auto enc = EncoderConfig::tiny_cnn();
    Decoder a(tiny_decoder(UpscaleMode::transposed_conv, 5), enc, "d");
    Decoder b(tiny_decoder(UpscaleMode::bilinear, 5), enc, "d");
    a.init();
    b.init();
    Rng rng(3);
    const FeatureMap fm = random_features(enc, 1, 32, 32, rng);
    EXPECT_GT(max_abs_difference(a.forward(fm), b.forward(fm)), 0.0);
}

TEST(Decoder, RejectsStrideMismatch) {
    const auto enc = EncoderConfig::tiny_cnn();
    DecoderConfig cfg = tiny_decoder(UpscaleMode::bilinear, 1);
    cfg.stages = 2;
    cfg.channels = {8, 8};
    EXPECT_THROW(Decoder(cfg, enc, "d"), ValidationError);
    Decoder ok(tiny_decoder(UpscaleMode::bilinear, 1), enc, "d");
    ok.init();
    Rng rng(1);
    FeatureMap fm = random_features(enc, 1, 16, 16, rng);
    fm.stride = 4;
    EXPECT_THROW(ok.forward(fm), ValidationError);
}

TEST(Decoder, GradientMatchesFiniteDifferences) {
    EncoderConfig enc;
    enc.widths = {2, 3, 4};
    Rng rng(6);
    for (UpscaleMode mode : {UpscaleMode::transposed_conv, UpscaleMode::bilinear}) {
        DecoderConfig cfg = tiny_decoder(mode, 9);
        cfg.stages = 2;
        cfg.channels = {3, 2};
        Decoder dec(cfg, enc, "d");
        dec.init();
        FeatureMap fm = random_features(enc, 1, 8, 8, rng);
        const Tensor y = dec.forward(fm);
        Tensor r(y.shape());
        support::fill_normal(r, rng);
        nn::ParameterList params;
        dec.collect(params);
        nn::zero_grad(params);
        const FeatureGrad g = dec.backward(r);
        auto loss = [&] { return support::weighted_sum(dec.forward(fm), r); };
        std::vector<support::GradProbe> probes;
        for (nn::Parameter* p : params)
            for (std::size_t i = 0; i < p->value.size(); ++i) probes.push_back({&p->value[i], p->grad[i]});
        for (std::size_t i = 0; i < fm.values.size(); ++i) probes.push_back({&fm.values[i], g.values[i]});
        for (std::size_t s = 0; s < fm.skips.size(); ++s)
            for (std::size_t i = 0; i < fm.skips[s].size(); i += 2) probes.push_back({&fm.skips[s][i], g.skips[s][i]});
        EXPECT_LT(support::max_gradient_error(loss, probes), 1e-4) << to_string(mode);
    }
}

TEST(PseudoLabel, BoundaryIsInclusive) {
    EXPECT_EQ(pseudo_label({Tensor({2, 2, 2}, 0.5)}, 0.5).onehot, Tensor({2, 2, 2}, 1.0));
    EXPECT_EQ(pseudo_label({Tensor({1, 1, 1}, 0.49)}, 0.5).onehot, Tensor({1, 1, 1}, 0.0));
    EXPECT_TRUE(PseudoLabel::gradient_isolated);
}

TEST(PseudoLabel, MatchesElementwiseComparison) {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const double t = rng.uniform(0.05, 0.95);
        const Tensor p = random_probs({2, 3, 5, 5}, rng);
        EXPECT_EQ(pseudo_label({p}, t).onehot.values().size(), p.size());
        const auto y = threshold_oracle(p, t);
        const Tensor got = pseudo_label({p}, t).onehot;
        for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(got[i], y[i]);
    }
}

TEST(PseudoLabel, RejectsThresholdOutsideUnitInterval) {
    EXPECT_THROW(pseudo_label({Tensor({1}, 0.3)}, 0.0), ValidationError);
    EXPECT_THROW(pseudo_label({Tensor({1}, 0.3)}, 1.0), ValidationError);
}

TEST(OneHot, ForegroundChannels) {
    const LabelMask m = LabelMask::planar(1, 3, 2, {0, 1, 2});
    const Tensor t = one_hot(m);
    EXPECT_EQ(t, Tensor({2, 1, 3}, std::vector<double>{0, 1, 0, 0, 0, 1}));
}

TEST(Ssf, PerfectLabeledPredictionIsNearZero) {
    const LabelMask m = LabelMask::planar(2, 2, 2, {0, 1, 2, 1});
    const Tensor oh = one_hot(m);
    const double loss = ssf_loss({oh}, {oh}, &m);
    EXPECT_LE(loss, 2 * -std::log(1 - 1e-7) + 1e-15);
    EXPECT_GE(loss, 0.0);
}

TEST(Ssf, LabeledLossPositiveWhenPredictionDiffers) {
    const LabelMask m = LabelMask::planar(2, 2, 2, {0, 1, 2, 1});
    Tensor p = one_hot(m);
    p[0] = 0.3;
    EXPECT_GT(ssf_loss({p}, {one_hot(m)}, &m), 1e-3);
}

TEST(Ssf, UnlabeledHalfProbabilities) {
    const Tensor half({2, 4, 4}, 0.5);
    EXPECT_NEAR(ssf_loss({half}, {half}, nullptr), 2 * std::log(2.0), 1e-12);
    EXPECT_NEAR(ssf_loss({half}, {half}, nullptr), 1.386294, 1e-6);
}

TEST(Ssf, UnlabeledMatchesTermOracle) {
    Rng rng(14);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor p1 = random_probs({2, 4, 4}, rng), p2 = random_probs({2, 4, 4}, rng);
        const double expect = bce_oracle(p1, threshold_oracle(p2, 0.5)) + bce_oracle(p2, threshold_oracle(p1, 0.5));
        EXPECT_NEAR(ssf_loss({p1}, {p2}, nullptr), expect, 1e-12);
        EXPECT_NEAR(ssf_loss({p2}, {p1}, nullptr), ssf_loss({p1}, {p2}, nullptr), 1e-15);
    }
}

TEST(Ssf, LabeledMatchesTermOracle) {
    Rng rng(15);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::uint8_t> labels(16);
        for (auto& l : labels) l = static_cast<std::uint8_t>(rng.uniform_index(3));
        const LabelMask m = LabelMask::planar(4, 4, 2, labels);
        const Tensor oh = one_hot(m);
        const std::vector<double> y(oh.values().begin(), oh.values().end());
        const Tensor p1 = random_probs({2, 4, 4}, rng), p2 = random_probs({2, 4, 4}, rng);
        EXPECT_NEAR(ssf_loss({p1}, {p2}, &m), bce_oracle(p1, y) + bce_oracle(p2, y), 1e-12);
    }
}

TEST(Ssf, GradientMatchesFiniteDifferences) {
    Rng rng(16);
    for (bool labeled : {false, true}) {
        Tensor p1 = random_probs({2, 4, 4}, rng, 1e-3), p2 = random_probs({2, 4, 4}, rng, 1e-3);
        const LabelMask m = LabelMask::planar(4, 4, 2, std::vector<std::uint8_t>{0, 1, 2, 1, 1, 1, 0, 0, 2, 2, 0, 1, 0, 0, 0, 2});
        const Tensor oh = one_hot(m);
        const Tensor* target = labeled ? &oh : nullptr;
        const SsfResult r = ssf_loss_with_grad({p1}, {p2}, target);
        std::vector<support::GradProbe> probes;
        for (std::size_t i = 0; i < p1.size(); ++i) {
            probes.push_back({&p1[i], r.grad_p1[i]});
            probes.push_back({&p2[i], r.grad_p2[i]});
        }
        auto loss = [&] { return ssf_loss_with_grad({p1}, {p2}, target).loss; };
        EXPECT_LT(support::max_gradient_error(loss, probes), 1e-4);
    }
}

TEST(Ssf, PseudoLabelPathCarriesNoGradient) {
    // The gradient for p2 must be that of BCE(p2, y1) alone: the y2 = 1[p2 >= t]
    // term seen by p1 contributes nothing.
    Rng rng(17);
    const Tensor p1 = random_probs({1, 3, 3}, rng, 1e-3), p2 = random_probs({1, 3, 3}, rng, 1e-3);
    const SsfResult r = ssf_loss_with_grad({p1}, {p2}, nullptr);
    const auto y1 = threshold_oracle(p1, 0.5);
    for (std::size_t i = 0; i < p2.size(); ++i) {
        const double expect = (-y1[i] / p2[i] + (1 - y1[i]) / (1 - p2[i])) / static_cast<double>(p2.size());
        EXPECT_NEAR(r.grad_p2[i], expect, 1e-12);
    }
}

TEST(Ssf, ShapeMismatchIsAnError) {
    EXPECT_THROW(ssf_loss({Tensor({1, 2, 2}, 0.5)}, {Tensor({1, 2, 3}, 0.5)}, nullptr), ValidationError);
    const LabelMask m = LabelMask::planar(3, 3, 1, std::vector<std::uint8_t>(9, 0));
    EXPECT_THROW(ssf_loss({Tensor({1, 2, 2}, 0.5)}, {Tensor({1, 2, 2}, 0.5)}, &m), ValidationError);
}
