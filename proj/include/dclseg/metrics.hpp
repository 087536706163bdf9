#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dclseg/image.hpp"

namespace dclseg {

/// Binary mask over a 2D (planar) or 3D grid. Planar masks use
/// 4-neighbourhoods, volumetric masks 6-neighbourhoods.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(std::size_t depth, std::size_t height, std::size_t width, std::vector<std::uint8_t> bits,
               bool volumetric = true);
    static BinaryMask planar(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits);
    // Voxels equal to label.
    static BinaryMask from_labels(const LabelMask& labels, std::uint8_t label);

    std::size_t depth() const noexcept { return depth_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    bool volumetric() const noexcept { return volumetric_; }
    const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

    bool at(std::size_t z, std::size_t y, std::size_t x) const { return bits_[(z * height_ + y) * width_ + x] != 0; }
    std::size_t count() const;
    bool same_grid(const BinaryMask& other) const;

private:
    std::size_t depth_ = 0, height_ = 0, width_ = 0;
    bool volumetric_ = true;
    std::vector<std::uint8_t> bits_;
};

struct Voxel {
    std::size_t z = 0, y = 0, x = 0;
    friend auto operator<=>(const Voxel&, const Voxel&) = default;
};

/// 2|P & G| / (|P| + |G|); 1.0 when both are empty.
double dice(const BinaryMask& pred, const BinaryMask& gt);

/// Foreground voxels with at least one background neighbour; voxels outside
/// the grid count as background. Sorted in raster order.
std::vector<Voxel> boundary(const BinaryMask& mask);

/// Distance from each boundary voxel of `from` to the nearest boundary voxel
/// of `to`, in physical units, via an exact Euclidean distance transform.
/// Empty when either boundary is empty.
std::vector<double> directed_surface_distances(const BinaryMask& from, const BinaryMask& to, const Spacing& spacing);

/// Mean of the two directed mean surface distances; undefined when either
/// boundary is empty.
std::optional<double> assd(const BinaryMask& pred, const BinaryMask& gt, const Spacing& spacing);

/// Max of the two directed percentiles of nearest-surface distances
/// (linear interpolation between order statistics; 100 is the classic HD).
std::optional<double> hausdorff(const BinaryMask& pred, const BinaryMask& gt, const Spacing& spacing,
                                double percentile = 100.0);

double percentile_of(std::vector<double> values, double percentile);

struct ClassMetrics {
    std::size_t label = 0;
    double dsc = 0.0;
    std::optional<double> asd;
    std::optional<double> hd;
    bool empty_pred = false;
    bool empty_gt = false;
};

struct SegReport {
    std::vector<ClassMetrics> classes;
    double mean_dsc = 0.0;
    std::optional<double> mean_asd;
    std::optional<double> mean_hd;
    std::size_t undefined_count = 0;
    std::vector<std::string> flags;
    double hd_percentile = 100.0;
};

/// Per-foreground-class DSC/ASD/HD; undefined distances are excluded from the
/// means and listed in flags.
SegReport evaluate_volume(const LabelMask& pred, const LabelMask& gt, const Spacing& spacing,
                          double hd_percentile = 100.0);

nlohmann::json to_json(const SegReport& report);

}  // namespace dclseg
