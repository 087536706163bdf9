#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace dclseg {

/// Physical voxel size in mm along (z, y, x).
struct Spacing {
    double z = 1.0;
    double y = 1.0;
    double x = 1.0;
    friend bool operator==(const Spacing&, const Spacing&) = default;
};

struct SliceImage;

/// 3D scalar volume, depth x height x width, row-major.
class Volume {
public:
    Volume() = default;
    Volume(std::size_t depth, std::size_t height, std::size_t width,
           std::vector<double> voxels, Spacing spacing = {});

    std::size_t depth() const noexcept { return depth_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    const Spacing& spacing() const noexcept { return spacing_; }
    const std::vector<double>& voxels() const noexcept { return voxels_; }

    double at(std::size_t z, std::size_t y, std::size_t x) const {
        return voxels_[(z * height_ + y) * width_ + x];
    }

    SliceImage slice(std::size_t z, std::string volume_id = {}) const;

    friend bool operator==(const Volume&, const Volume&) = default;

private:
    std::size_t depth_ = 0;
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> voxels_;
    Spacing spacing_;
};

struct SliceSource {
    std::string volume_id;
    std::size_t index = 0;
    friend bool operator==(const SliceSource&, const SliceSource&) = default;
};

/// 2D scalar image, height x width, row-major.
struct SliceImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;
    SliceSource source;

    SliceImage() = default;
    SliceImage(std::size_t h, std::size_t w, std::vector<double> values, SliceSource src = {});

    double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
    double& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }

    friend bool operator==(const SliceImage&, const SliceImage&) = default;
};

/// Integer class map with values in {0, ..., num_classes}; 0 is background.
/// Rank 2 masks have depth 1 and use 4-neighbourhoods in surface metrics.
class LabelMask {
public:
    LabelMask() = default;
    LabelMask(std::size_t depth, std::size_t height, std::size_t width,
              std::size_t num_classes, std::vector<std::uint8_t> labels, bool volumetric = true);
    static LabelMask planar(std::size_t height, std::size_t width, std::size_t num_classes,
                            std::vector<std::uint8_t> labels);

    std::size_t depth() const noexcept { return depth_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t num_classes() const noexcept { return num_classes_; }
    bool volumetric() const noexcept { return volumetric_; }
    const std::vector<std::uint8_t>& labels() const noexcept { return labels_; }

    std::uint8_t at(std::size_t z, std::size_t y, std::size_t x) const {
        return labels_[(z * height_ + y) * width_ + x];
    }

    LabelMask slice(std::size_t z) const;
    static LabelMask stack(const std::vector<LabelMask>& slices);

    friend bool operator==(const LabelMask&, const LabelMask&) = default;

private:
    std::size_t depth_ = 0;
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::size_t num_classes_ = 0;
    bool volumetric_ = true;
    std::vector<std::uint8_t> labels_;
};

/// Per-slice z-score with population standard deviation. A constant slice
/// maps to all zeros. Throws ValidationError on non-finite input.
SliceImage normalize_slice(const SliceImage& raw);

}  // namespace dclseg
