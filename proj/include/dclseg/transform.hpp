#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <boost/rational.hpp>

#include "dclseg/image.hpp"

namespace dclseg {

using Rational = boost::rational<std::int64_t>;

/// Continuous image coordinates; pixel (r, c) covers [r, r+1) x [c, c+1)
/// and has its center at (r + 1/2, c + 1/2).
struct Point {
    Rational y;
    Rational x;
    friend bool operator==(const Point&, const Point&) = default;
};

enum class TransformKind { identity, translation, flip_h, flip_v, rotation_90k, crop_resize, composite };

std::string to_string(TransformKind kind);

/// Exactly invertible map from source-slice coordinates to view coordinates:
///
///     view = scale * R * src + offset
///
/// with R a signed 2x2 permutation (the symmetries of the square), scale a
/// positive rational and offset a rational vector. Source and view share the
/// same height x width.
class GeometricTransform {
public:
    static GeometricTransform identity(std::size_t height, std::size_t width);
    // Content moves by (dy, dx) pixels; uncovered view pixels are zero.
    static GeometricTransform translation(std::size_t height, std::size_t width, std::int64_t dy, std::int64_t dx);
    static GeometricTransform flip_h(std::size_t height, std::size_t width);
    static GeometricTransform flip_v(std::size_t height, std::size_t width);
    // k quarter turns about the image center (np.rot90 direction). Square only.
    static GeometricTransform rotation_90k(std::size_t height, std::size_t width, int k);
    // Crop [y0, y0+crop_h) x [x0, x0+crop_w) and resize by an integer factor
    // back to height x width.
    static GeometricTransform crop_resize(std::size_t height, std::size_t width, std::size_t y0, std::size_t x0,
                                          std::size_t crop_h, std::size_t crop_w);

    // Apply *this first, then next.
    GeometricTransform then(const GeometricTransform& next) const;
    GeometricTransform inverse() const;

    Point apply(const Point& src) const;
    Point apply_inverse(const Point& view) const;

    TransformKind kind() const noexcept { return kind_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    const Rational& scale() const noexcept { return scale_; }

    // Same mapping (kind tags are ignored).
    bool same_mapping(const GeometricTransform& other) const;

private:
    GeometricTransform(TransformKind kind, std::size_t height, std::size_t width);

    TransformKind kind_ = TransformKind::identity;
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    // Row-major R.
    int r_[4] = {1, 0, 0, 1};
    Rational scale_{1};
    Point offset_{Rational{0}, Rational{0}};
};

/// Nearest-neighbour resampling of src through t; view pixels whose center
/// maps outside the source are zero.
SliceImage warp(const SliceImage& src, const GeometricTransform& t);

struct GridDims {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t count() const noexcept { return rows * cols; }
    friend bool operator==(const GridDims&, const GridDims&) = default;
};

/// Positions matched across the two feature grids, sorted by query index.
struct CorrespondenceMap {
    GridDims query_dims;
    GridDims key_dims;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;

    bool empty() const noexcept { return pairs.empty(); }
    friend bool operator==(const CorrespondenceMap&, const CorrespondenceMap&) = default;
};

/// Query position i is matched to key position j when the source point under
/// i's cell center (mapped back through t_q) lies inside the source slice and,
/// mapped forward through t_k, inside key cell j. Points on cell borders go to
/// the candidate with the nearest center, then the lowest index.
CorrespondenceMap correspondence_map(const GeometricTransform& t_q, const GeometricTransform& t_k,
                                     GridDims feature_dims, std::size_t image_height, std::size_t image_width);

}  // namespace dclseg
