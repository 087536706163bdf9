#include "dclseg/image.hpp"

#include <cmath>

#include "dclseg/errors.hpp"

namespace dclseg {

namespace {

void require_finite(const std::vector<double>& values, const char* what) {
    for (double v : values)
        if (!std::isfinite(v)) throw ValidationError(std::string(what) + " contains non-finite values");
}

}  // namespace

Volume::Volume(std::size_t depth, std::size_t height, std::size_t width, std::vector<double> voxels, Spacing spacing)
    : depth_(depth), height_(height), width_(width), voxels_(std::move(voxels)), spacing_(spacing) {
    if (depth == 0 || height == 0 || width == 0) throw ValidationError("volume dimensions must be >= 1");
    if (voxels_.size() != depth * height * width) throw ValidationError("volume voxel count does not match dims");
    if (!(spacing.z > 0 && spacing.y > 0 && spacing.x > 0)) throw ValidationError("volume spacing must be positive");
    require_finite(voxels_, "volume");
}

SliceImage Volume::slice(std::size_t z, std::string volume_id) const {
    if (z >= depth_) throw ValidationError("slice index out of range");
    const auto begin = voxels_.begin() + static_cast<std::ptrdiff_t>(z * height_ * width_);
    return SliceImage(height_, width_, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(height_ * width_)),
                      SliceSource{std::move(volume_id), z});
}

SliceImage::SliceImage(std::size_t h, std::size_t w, std::vector<double> values, SliceSource src)
    : height(h), width(w), pixels(std::move(values)), source(std::move(src)) {
    if (h == 0 || w == 0) throw ValidationError("slice dimensions must be >= 1");
    if (pixels.size() != h * w) throw ValidationError("slice pixel count does not match dims");
}

LabelMask::LabelMask(std::size_t depth, std::size_t height, std::size_t width, std::size_t num_classes,
                     std::vector<std::uint8_t> labels, bool volumetric)
    : depth_(depth), height_(height), width_(width), num_classes_(num_classes), volumetric_(volumetric),
      labels_(std::move(labels)) {
    if (depth == 0 || height == 0 || width == 0) throw ValidationError("label dimensions must be >= 1");
    if (!volumetric && depth != 1) throw ValidationError("planar label mask must have depth 1");
    if (num_classes < 1 || num_classes > 254) throw ValidationError("label class count must be in [1, 254]");
    if (labels_.size() != depth * height * width) throw ValidationError("label count does not match dims");
    for (std::uint8_t v : labels_)
        if (v > num_classes)
            throw ValidationError("label value " + std::to_string(v) + " exceeds class count " +
                                  std::to_string(num_classes));
}

LabelMask LabelMask::planar(std::size_t height, std::size_t width, std::size_t num_classes,
                            std::vector<std::uint8_t> labels) {
    return LabelMask(1, height, width, num_classes, std::move(labels), false);
}

LabelMask LabelMask::slice(std::size_t z) const {
    if (z >= depth_) throw ValidationError("label slice index out of range");
    const auto begin = labels_.begin() + static_cast<std::ptrdiff_t>(z * height_ * width_);
    return planar(height_, width_, num_classes_,
                  std::vector<std::uint8_t>(begin, begin + static_cast<std::ptrdiff_t>(height_ * width_)));
}

LabelMask LabelMask::stack(const std::vector<LabelMask>& slices) {
    if (slices.empty()) throw ValidationError("cannot stack zero label slices");
    const LabelMask& first = slices.front();
    std::vector<std::uint8_t> labels;
    labels.reserve(slices.size() * first.height_ * first.width_);
    for (const LabelMask& s : slices) {
        if (s.depth_ != 1 || s.height_ != first.height_ || s.width_ != first.width_ ||
            s.num_classes_ != first.num_classes_)
            throw ValidationError("label slices disagree in shape or class count");
        labels.insert(labels.end(), s.labels_.begin(), s.labels_.end());
    }
    return LabelMask(slices.size(), first.height_, first.width_, first.num_classes_, std::move(labels), true);
}

SliceImage normalize_slice(const SliceImage& raw) {
    require_finite(raw.pixels, "slice");
    const double n = static_cast<double>(raw.pixels.size());
    double mean = 0.0;
    for (double v : raw.pixels) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : raw.pixels) var += (v - mean) * (v - mean);
    var /= n;
    SliceImage out = raw;
    const double sd = std::sqrt(var);
    if (!(sd > 0.0)) {
        std::fill(out.pixels.begin(), out.pixels.end(), 0.0);
        return out;
    }
    for (double& v : out.pixels) v = (v - mean) / sd;
    return out;
}

}  // namespace dclseg
