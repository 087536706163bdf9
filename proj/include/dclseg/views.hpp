#pragma once

#include <cstdint>

#include "dclseg/image.hpp"
#include "dclseg/rng.hpp"
#include "dclseg/transform.hpp"

namespace dclseg {

/// Augmentation parameters. Geometric moves are aligned to the encoder's
/// feature stride so every feature cell maps onto whole cells of the other
/// view.
struct AugConfig {
    double flip_p = 0.5;
    double rotate_p = 0.25;
    std::size_t max_translate_cells = 1;
    // Smallest crop side as a fraction of the slice side; crops use integer
    // zoom factors z with 1/z >= crop_scale_min.
    double crop_scale_min = 0.5;
    double intensity_jitter = 0.1;
    double noise_std = 0.05;
    std::size_t feature_stride = 8;

    static AugConfig identity_only(std::size_t stride);
};

struct ViewPair {
    SliceImage view_q;
    SliceImage view_k;
    GeometricTransform t_q;
    GeometricTransform t_k;
    std::uint64_t photometric_seed = 0;
};

/// Draws a geometric transform (translation, flips, rotation, aligned
/// crop-resize) plus photometric jitter for each view. Deterministic in rng.
ViewPair sample_view_pair(const SliceImage& slice, Rng& rng, const AugConfig& cfg);

// Exposed for tests: the geometric part of one view.
GeometricTransform sample_transform(std::size_t height, std::size_t width, Rng& rng, const AugConfig& cfg);

}  // namespace dclseg
