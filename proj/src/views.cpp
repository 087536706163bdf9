#include "dclseg/views.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dclseg/errors.hpp"

namespace dclseg {

namespace {

void validate(const AugConfig& cfg, std::size_t height, std::size_t width) {
    if (cfg.feature_stride == 0 || height % cfg.feature_stride != 0 || width % cfg.feature_stride != 0)
        throw ValidationError("slice " + std::to_string(height) + "x" + std::to_string(width) +
                              " is not divisible by the feature stride " + std::to_string(cfg.feature_stride));
    if (cfg.flip_p < 0 || cfg.flip_p > 1 || cfg.rotate_p < 0 || cfg.rotate_p > 1)
        throw ValidationError("augmentation probabilities must lie in [0, 1]");
    if (!(cfg.crop_scale_min > 0 && cfg.crop_scale_min <= 1))
        throw ValidationError("aug.crop_scale_min must lie in (0, 1]");
    const std::size_t cells = std::min(height, width) / cfg.feature_stride;
    if (cfg.max_translate_cells >= cells)
        throw ValidationError("aug.max_translate_cells exceeds slice bounds (" + std::to_string(cells) +
                              " cells per side)");
    if (cfg.intensity_jitter < 0 || cfg.intensity_jitter >= 1)
        throw ValidationError("aug.intensity_jitter must lie in [0, 1)");
    if (cfg.noise_std < 0) throw ValidationError("aug.noise_std must be >= 0");
}

SliceImage photometric(SliceImage view, std::uint64_t seed, const AugConfig& cfg) {
    Rng rng(seed);
    const double gain = 1.0 + cfg.intensity_jitter * (2.0 * rng.uniform() - 1.0);
    const double shift = cfg.intensity_jitter * (2.0 * rng.uniform() - 1.0);
    for (double& v : view.pixels) {
        v = gain * v + shift;
        if (cfg.noise_std > 0) v += cfg.noise_std * rng.normal();
    }
    return view;
}

}  // namespace

AugConfig AugConfig::identity_only(std::size_t stride) {
    AugConfig cfg;
    cfg.flip_p = 0;
    cfg.rotate_p = 0;
    cfg.max_translate_cells = 0;
    cfg.crop_scale_min = 1;
    cfg.intensity_jitter = 0;
    cfg.noise_std = 0;
    cfg.feature_stride = stride;
    return cfg;
}

GeometricTransform sample_transform(std::size_t height, std::size_t width, Rng& rng, const AugConfig& cfg) {
    validate(cfg, height, width);
    const std::size_t stride = cfg.feature_stride;
    const auto m = static_cast<std::int64_t>(cfg.max_translate_cells);
    const auto s = static_cast<std::int64_t>(stride);

    GeometricTransform t = GeometricTransform::identity(height, width);
    if (m > 0) t = GeometricTransform::translation(height, width, rng.uniform_int(-m, m) * s, rng.uniform_int(-m, m) * s);
    if (rng.bernoulli(cfg.flip_p)) t = t.then(GeometricTransform::flip_h(height, width));
    if (rng.bernoulli(cfg.flip_p)) t = t.then(GeometricTransform::flip_v(height, width));
    if (height == width && rng.bernoulli(cfg.rotate_p))
        t = t.then(GeometricTransform::rotation_90k(height, width, static_cast<int>(rng.uniform_int(1, 3))));

    // Integer zooms whose crop side is a whole number of feature cells and
    // whose magnified cells still cover whole source pixels.
    const std::size_t rows = height / stride;
    const std::size_t cols = width / stride;
    std::vector<std::size_t> zooms;
    for (std::size_t z = 1; z <= std::min(rows, cols); ++z)
        if (1.0 / static_cast<double>(z) >= cfg.crop_scale_min && rows % z == 0 && cols % z == 0 &&
            stride % z == 0)
            zooms.push_back(z);
    const std::size_t zoom = zooms[rng.uniform_index(zooms.size())];
    if (zoom > 1) {
        const std::size_t ch = height / zoom;
        const std::size_t cw = width / zoom;
        const std::size_t y0 = rng.uniform_index((height - ch) / stride + 1) * stride;
        const std::size_t x0 = rng.uniform_index((width - cw) / stride + 1) * stride;
        t = t.then(GeometricTransform::crop_resize(height, width, y0, x0, ch, cw));
    }
    return t;
}

ViewPair sample_view_pair(const SliceImage& slice, Rng& rng, const AugConfig& cfg) {
    for (double v : slice.pixels)
        if (!std::isfinite(v)) throw ValidationError("slice contains non-finite values");
    GeometricTransform t_q = sample_transform(slice.height, slice.width, rng, cfg);
    GeometricTransform t_k = sample_transform(slice.height, slice.width, rng, cfg);
    const std::uint64_t seed = rng.next_u64();
    Rng seeds(seed);
    const std::uint64_t seed_q = seeds.next_u64();
    const std::uint64_t seed_k = seeds.next_u64();
    ViewPair pair{photometric(warp(slice, t_q), seed_q, cfg), photometric(warp(slice, t_k), seed_k, cfg),
                  std::move(t_q), std::move(t_k), seed};
    return pair;
}

}  // namespace dclseg
