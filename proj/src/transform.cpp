#include "dclseg/transform.hpp"

#include <algorithm>
#include <array>
#include <limits>

#include "dclseg/errors.hpp"

namespace dclseg {

namespace {

Rational floor_of(const Rational& r) {
    std::int64_t q = r.numerator() / r.denominator();
    if (r.numerator() % r.denominator() != 0 && r.numerator() < 0) --q;
    return Rational(q);
}

bool is_integer(const Rational& r) { return r.denominator() == 1; }

std::int64_t as_int(std::size_t v) { return static_cast<std::int64_t>(v); }

// Cells of one axis whose closed extent contains v, or none when v is
// outside [0, cells * stride].
std::vector<std::size_t> axis_candidates(const Rational& v, std::size_t cells, std::size_t stride) {
    std::vector<std::size_t> out;
    if (v < 0 || v > Rational(as_int(cells * stride))) return out;
    const Rational q = v / Rational(as_int(stride));
    const std::int64_t f = floor_of(q).numerator();
    if (is_integer(q)) {
        if (f - 1 >= 0) out.push_back(static_cast<std::size_t>(f - 1));
        if (f < as_int(cells)) out.push_back(static_cast<std::size_t>(f));
    } else {
        out.push_back(static_cast<std::size_t>(f));
    }
    return out;
}

}  // namespace

std::string to_string(TransformKind kind) {
    switch (kind) {
        case TransformKind::identity: return "identity";
        case TransformKind::translation: return "translation";
        case TransformKind::flip_h: return "flip-h";
        case TransformKind::flip_v: return "flip-v";
        case TransformKind::rotation_90k: return "rotation-90k";
        case TransformKind::crop_resize: return "crop-resize";
        case TransformKind::composite: return "composite";
    }
    return "unknown";
}

GeometricTransform::GeometricTransform(TransformKind kind, std::size_t height, std::size_t width)
    : kind_(kind), height_(height), width_(width) {
    if (height == 0 || width == 0) throw ValidationError("transform dimensions must be >= 1");
}

GeometricTransform GeometricTransform::identity(std::size_t height, std::size_t width) {
    return GeometricTransform(TransformKind::identity, height, width);
}

GeometricTransform GeometricTransform::translation(std::size_t height, std::size_t width, std::int64_t dy,
                                                   std::int64_t dx) {
    GeometricTransform t(TransformKind::translation, height, width);
    t.offset_ = {Rational(dy), Rational(dx)};
    return t;
}

GeometricTransform GeometricTransform::flip_h(std::size_t height, std::size_t width) {
    GeometricTransform t(TransformKind::flip_h, height, width);
    t.r_[3] = -1;
    t.offset_ = {Rational(0), Rational(as_int(width))};
    return t;
}

GeometricTransform GeometricTransform::flip_v(std::size_t height, std::size_t width) {
    GeometricTransform t(TransformKind::flip_v, height, width);
    t.r_[0] = -1;
    t.offset_ = {Rational(as_int(height)), Rational(0)};
    return t;
}

GeometricTransform GeometricTransform::rotation_90k(std::size_t height, std::size_t width, int k) {
    if (height != width) throw ValidationError("rotation requires a square slice");
    GeometricTransform quarter(TransformKind::rotation_90k, height, width);
    // view_y = W - src_x, view_x = src_y
    quarter.r_[0] = 0;
    quarter.r_[1] = -1;
    quarter.r_[2] = 1;
    quarter.r_[3] = 0;
    quarter.offset_ = {Rational(as_int(width)), Rational(0)};
    GeometricTransform t(TransformKind::rotation_90k, height, width);
    for (int i = 0; i < ((k % 4) + 4) % 4; ++i) t = t.then(quarter);
    t.kind_ = TransformKind::rotation_90k;
    return t;
}

GeometricTransform GeometricTransform::crop_resize(std::size_t height, std::size_t width, std::size_t y0,
                                                   std::size_t x0, std::size_t crop_h, std::size_t crop_w) {
    if (crop_h == 0 || crop_w == 0 || y0 + crop_h > height || x0 + crop_w > width)
        throw ValidationError("crop [" + std::to_string(y0) + "+" + std::to_string(crop_h) + ", " +
                              std::to_string(x0) + "+" + std::to_string(crop_w) + "] exceeds slice bounds " +
                              std::to_string(height) + "x" + std::to_string(width));
    if (height % crop_h != 0 || width % crop_w != 0 || height / crop_h != width / crop_w)
        throw ValidationError("crop size must resize by one integer factor on both axes");
    GeometricTransform t(TransformKind::crop_resize, height, width);
    const std::int64_t zoom = as_int(height / crop_h);
    t.scale_ = Rational(zoom);
    t.offset_ = {Rational(-zoom * as_int(y0)), Rational(-zoom * as_int(x0))};
    return t;
}

GeometricTransform GeometricTransform::then(const GeometricTransform& next) const {
    if (next.height_ != height_ || next.width_ != width_)
        throw ValidationError("cannot compose transforms over different slice sizes");
    GeometricTransform out(TransformKind::composite, height_, width_);
    out.r_[0] = next.r_[0] * r_[0] + next.r_[1] * r_[2];
    out.r_[1] = next.r_[0] * r_[1] + next.r_[1] * r_[3];
    out.r_[2] = next.r_[2] * r_[0] + next.r_[3] * r_[2];
    out.r_[3] = next.r_[2] * r_[1] + next.r_[3] * r_[3];
    out.scale_ = next.scale_ * scale_;
    out.offset_ = next.apply(offset_);
    if (kind_ == TransformKind::identity) out.kind_ = next.kind_;
    else if (next.kind_ == TransformKind::identity) out.kind_ = kind_;
    return out;
}

GeometricTransform GeometricTransform::inverse() const {
    if (scale_ <= 0) throw ValidationError("transform is not invertible (non-positive scale)");
    GeometricTransform out(kind_ == TransformKind::identity ? kind_ : TransformKind::composite, height_, width_);
    out.r_[0] = r_[0];
    out.r_[1] = r_[2];
    out.r_[2] = r_[1];
    out.r_[3] = r_[3];
    out.scale_ = Rational(1) / scale_;
    const Point neg{-offset_.y, -offset_.x};
    out.offset_ = {out.scale_ * (out.r_[0] * neg.y + out.r_[1] * neg.x),
                   out.scale_ * (out.r_[2] * neg.y + out.r_[3] * neg.x)};
    return out;
}

Point GeometricTransform::apply(const Point& src) const {
    return {scale_ * (r_[0] * src.y + r_[1] * src.x) + offset_.y, scale_ * (r_[2] * src.y + r_[3] * src.x) + offset_.x};
}

Point GeometricTransform::apply_inverse(const Point& view) const {
    if (scale_ <= 0) throw ValidationError("transform is not invertible (non-positive scale)");
    const Rational dy = view.y - offset_.y;
    const Rational dx = view.x - offset_.x;
    // R is orthogonal, so its inverse is the transpose.
    return {(r_[0] * dy + r_[2] * dx) / scale_, (r_[1] * dy + r_[3] * dx) / scale_};
}

bool GeometricTransform::same_mapping(const GeometricTransform& other) const {
    return height_ == other.height_ && width_ == other.width_ && std::equal(r_, r_ + 4, other.r_) &&
           scale_ == other.scale_ && offset_ == other.offset_;
}

SliceImage warp(const SliceImage& src, const GeometricTransform& t) {
    if (src.height != t.height() || src.width != t.width())
        throw ValidationError("transform size does not match slice size");
    SliceImage out = src;
    const Rational half(1, 2);
    const Rational h(as_int(src.height));
    const Rational w(as_int(src.width));
    for (std::size_t r = 0; r < src.height; ++r) {
        for (std::size_t c = 0; c < src.width; ++c) {
            const Point p = t.apply_inverse({Rational(as_int(r)) + half, Rational(as_int(c)) + half});
            if (p.y < 0 || p.y >= h || p.x < 0 || p.x >= w) {
                out.at(r, c) = 0.0;
                continue;
            }
            out.at(r, c) = src.at(static_cast<std::size_t>(floor_of(p.y).numerator()),
                                  static_cast<std::size_t>(floor_of(p.x).numerator()));
        }
    }
    return out;
}

CorrespondenceMap correspondence_map(const GeometricTransform& t_q, const GeometricTransform& t_k,
                                     GridDims feature_dims, std::size_t image_height, std::size_t image_width) {
    if (feature_dims.rows == 0 || feature_dims.cols == 0 || image_height % feature_dims.rows != 0 ||
        image_width % feature_dims.cols != 0)
        throw ValidationError("feature grid must divide the image dimensions");
    if (t_q.height() != image_height || t_q.width() != image_width || t_k.height() != image_height ||
        t_k.width() != image_width)
        throw ValidationError("transform size does not match image size");
    if (t_q.scale() <= 0 || t_k.scale() <= 0) throw ValidationError("transform is not invertible");

    const std::size_t sh = image_height / feature_dims.rows;
    const std::size_t sw = image_width / feature_dims.cols;
    const Rational h(as_int(image_height));
    const Rational w(as_int(image_width));
    const Rational half(1, 2);

    CorrespondenceMap map{feature_dims, feature_dims, {}};
    for (std::size_t r = 0; r < feature_dims.rows; ++r) {
        for (std::size_t c = 0; c < feature_dims.cols; ++c) {
            const Point center{(Rational(as_int(r)) + half) * as_int(sh), (Rational(as_int(c)) + half) * as_int(sw)};
            const Point src = t_q.apply_inverse(center);
            if (src.y < 0 || src.y > h || src.x < 0 || src.x > w) continue;
            const Point k = t_k.apply(src);
            const auto rows = axis_candidates(k.y, feature_dims.rows, sh);
            const auto cols = axis_candidates(k.x, feature_dims.cols, sw);
            if (rows.empty() || cols.empty()) continue;

            std::size_t best = 0;
            Rational best_dist(-1);
            for (std::size_t kr : rows) {
                for (std::size_t kc : cols) {
                    const Rational dy = k.y - (Rational(as_int(kr)) + half) * as_int(sh);
                    const Rational dx = k.x - (Rational(as_int(kc)) + half) * as_int(sw);
                    const Rational d = dy * dy + dx * dx;
                    const std::size_t idx = kr * feature_dims.cols + kc;
                    // Candidates come in increasing index order, so strict < keeps the lowest on ties.
                    if (best_dist < 0 || d < best_dist) {
                        best_dist = d;
                        best = idx;
                    }
                }
            }
            map.pairs.emplace_back(r * feature_dims.cols + c, best);
        }
    }
    return map;
}

}  // namespace dclseg
