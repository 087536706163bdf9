#include "dclseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dclseg/errors.hpp"

namespace dclseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas w*(q - p)^2 + f(p) (Felzenszwalb & Huttenlocher),
// restricted to sites with finite f. Writes the minimum back into f.
void edt_1d(double* f, std::size_t n, std::size_t step, double w, std::vector<double>& buf,
            std::vector<std::size_t>& sites, std::vector<double>& bounds) {
    buf.resize(n);
    for (std::size_t i = 0; i < n; ++i) buf[i] = f[i * step];
    sites.clear();
    bounds.clear();
    for (std::size_t q = 0; q < n; ++q) {
        if (!std::isfinite(buf[q])) continue;
        const double fq = buf[q] + w * static_cast<double>(q) * static_cast<double>(q);
        while (!sites.empty()) {
            const std::size_t p = sites.back();
            const double fp = buf[p] + w * static_cast<double>(p) * static_cast<double>(p);
            const double s = (fq - fp) / (2.0 * w * static_cast<double>(q - p));
            if (s <= bounds.back()) {
                sites.pop_back();
                bounds.pop_back();
            } else {
                sites.push_back(q);
                bounds.push_back(s);
                break;
            }
        }
        if (sites.empty()) {
            sites.push_back(q);
            bounds.push_back(-kInf);
        }
    }
    if (sites.empty()) return;
    std::size_t k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        while (k + 1 < sites.size() && bounds[k + 1] < static_cast<double>(q)) ++k;
        // Sites around the switch point can tie; take the exact minimum.
        double best = kInf;
        for (std::size_t c = (k > 0 ? k - 1 : 0); c <= std::min(k + 1, sites.size() - 1); ++c) {
            const double d = static_cast<double>(q) - static_cast<double>(sites[c]);
            best = std::min(best, w * d * d + buf[sites[c]]);
        }
        f[q * step] = best;
    }
}

// Squared physical distance from every voxel to the nearest voxel in points.
std::vector<double> squared_distance_field(const BinaryMask& grid, const std::vector<Voxel>& points,
                                           const Spacing& spacing) {
    const std::size_t d = grid.depth(), h = grid.height(), w = grid.width();
    std::vector<double> f(d * h * w, kInf);
    for (const Voxel& v : points) f[(v.z * h + v.y) * w + v.x] = 0.0;
    std::vector<double> buf, bounds;
    std::vector<std::size_t> sites;
    for (std::size_t z = 0; z < d; ++z)
        for (std::size_t y = 0; y < h; ++y) edt_1d(&f[(z * h + y) * w], w, 1, spacing.x * spacing.x, buf, sites, bounds);
    for (std::size_t z = 0; z < d; ++z)
        for (std::size_t x = 0; x < w; ++x) edt_1d(&f[z * h * w + x], h, w, spacing.y * spacing.y, buf, sites, bounds);
    if (grid.volumetric())
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                edt_1d(&f[y * w + x], d, h * w, spacing.z * spacing.z, buf, sites, bounds);
    return f;
}

void require_same_grid(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_grid(b)) throw ValidationError("masks differ in shape");
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

BinaryMask::BinaryMask(std::size_t depth, std::size_t height, std::size_t width, std::vector<std::uint8_t> bits,
                       bool volumetric)
    : depth_(depth), height_(height), width_(width), volumetric_(volumetric), bits_(std::move(bits)) {
    if (depth == 0 || height == 0 || width == 0) throw ValidationError("mask dimensions must be >= 1");
    if (!volumetric && depth != 1) throw ValidationError("planar mask must have depth 1");
    if (bits_.size() != depth * height * width) throw ValidationError("mask size does not match dims");
    for (auto& b : bits_) b = b ? 1 : 0;
}

BinaryMask BinaryMask::planar(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits) {
    return BinaryMask(1, height, width, std::move(bits), false);
}

BinaryMask BinaryMask::from_labels(const LabelMask& labels, std::uint8_t label) {
    std::vector<std::uint8_t> bits(labels.labels().size());
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = labels.labels()[i] == label ? 1 : 0;
    return BinaryMask(labels.depth(), labels.height(), labels.width(), std::move(bits), labels.volumetric());
}

std::size_t BinaryMask::count() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1)); }

bool BinaryMask::same_grid(const BinaryMask& other) const {
    return depth_ == other.depth_ && height_ == other.height_ && width_ == other.width_ &&
           volumetric_ == other.volumetric_;
}

double dice(const BinaryMask& pred, const BinaryMask& gt) {
    require_same_grid(pred, gt);
    std::size_t inter = 0, p = 0, g = 0;
    for (std::size_t i = 0; i < pred.bits().size(); ++i) {
        p += pred.bits()[i];
        g += gt.bits()[i];
        inter += pred.bits()[i] & gt.bits()[i];
    }
    if (p + g == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

std::vector<Voxel> boundary(const BinaryMask& mask) {
    std::vector<Voxel> out;
    const std::size_t d = mask.depth(), h = mask.height(), w = mask.width();
    auto background = [&](std::ptrdiff_t z, std::ptrdiff_t y, std::ptrdiff_t x) {
        if (z < 0 || y < 0 || x < 0 || z >= static_cast<std::ptrdiff_t>(d) || y >= static_cast<std::ptrdiff_t>(h) ||
            x >= static_cast<std::ptrdiff_t>(w))
            return true;
        return !mask.at(static_cast<std::size_t>(z), static_cast<std::size_t>(y), static_cast<std::size_t>(x));
    };
    for (std::size_t z = 0; z < d; ++z) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                if (!mask.at(z, y, x)) continue;
                const auto zi = static_cast<std::ptrdiff_t>(z), yi = static_cast<std::ptrdiff_t>(y),
                           xi = static_cast<std::ptrdiff_t>(x);
                bool edge = background(zi, yi - 1, xi) || background(zi, yi + 1, xi) || background(zi, yi, xi - 1) ||
                            background(zi, yi, xi + 1);
                if (mask.volumetric()) edge = edge || background(zi - 1, yi, xi) || background(zi + 1, yi, xi);
                if (edge) out.push_back({z, y, x});
            }
        }
    }
    return out;
}

std::vector<double> directed_surface_distances(const BinaryMask& from, const BinaryMask& to, const Spacing& spacing) {
    require_same_grid(from, to);
    const auto src = boundary(from);
    const auto dst = boundary(to);
    if (src.empty() || dst.empty()) return {};
    const auto field = squared_distance_field(to, dst, spacing);
    std::vector<double> out;
    out.reserve(src.size());
    for (const Voxel& v : src) out.push_back(std::sqrt(field[(v.z * to.height() + v.y) * to.width() + v.x]));
    return out;
}

double percentile_of(std::vector<double> values, double percentile) {
    if (values.empty()) throw ValidationError("percentile of an empty set");
    if (!(percentile > 0.0 && percentile <= 100.0)) throw ValidationError("percentile must lie in (0, 100]");
    std::sort(values.begin(), values.end());
    const double rank = percentile / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return frac == 0.0 ? values[lo] : values[lo] + frac * (values[hi] - values[lo]);
}

std::optional<double> assd(const BinaryMask& pred, const BinaryMask& gt, const Spacing& spacing) {
    require_same_grid(pred, gt);
    const auto ab = directed_surface_distances(pred, gt, spacing);
    const auto ba = directed_surface_distances(gt, pred, spacing);
    if (ab.empty() || ba.empty()) return std::nullopt;
    return 0.5 * (mean_of(ab) + mean_of(ba));
}

std::optional<double> hausdorff(const BinaryMask& pred, const BinaryMask& gt, const Spacing& spacing,
                                double percentile) {
    require_same_grid(pred, gt);
    if (!(percentile > 0.0 && percentile <= 100.0)) throw ValidationError("percentile must lie in (0, 100]");
    const auto ab = directed_surface_distances(pred, gt, spacing);
    const auto ba = directed_surface_distances(gt, pred, spacing);
    if (ab.empty() || ba.empty()) return std::nullopt;
    return std::max(percentile_of(ab, percentile), percentile_of(ba, percentile));
}

SegReport evaluate_volume(const LabelMask& pred, const LabelMask& gt, const Spacing& spacing, double hd_percentile) {
    if (pred.num_classes() != gt.num_classes())
        throw ValidationError("class-count mismatch: prediction has " + std::to_string(pred.num_classes()) +
                              ", ground truth has " + std::to_string(gt.num_classes()));
    if (pred.depth() != gt.depth() || pred.height() != gt.height() || pred.width() != gt.width() ||
        pred.volumetric() != gt.volumetric())
        throw ValidationError("prediction and ground truth differ in shape");
    if (!(hd_percentile > 0.0 && hd_percentile <= 100.0)) throw ValidationError("percentile must lie in (0, 100]");

    SegReport report;
    report.hd_percentile = hd_percentile;
    double dsc_sum = 0.0, asd_sum = 0.0, hd_sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t c = 1; c <= gt.num_classes(); ++c) {
        const auto label = static_cast<std::uint8_t>(c);
        const BinaryMask p = BinaryMask::from_labels(pred, label);
        const BinaryMask g = BinaryMask::from_labels(gt, label);
        ClassMetrics m;
        m.label = c;
        m.dsc = dice(p, g);
        m.empty_pred = p.count() == 0;
        m.empty_gt = g.count() == 0;
        m.asd = assd(p, g, spacing);
        m.hd = hausdorff(p, g, spacing, hd_percentile);
        dsc_sum += m.dsc;
        if (m.asd && m.hd) {
            asd_sum += *m.asd;
            hd_sum += *m.hd;
            ++defined;
        } else {
            ++report.undefined_count;
            std::string why = m.empty_pred && m.empty_gt ? "absent from prediction and ground truth"
                              : m.empty_pred             ? "absent from prediction"
                                                         : "absent from ground truth";
            report.flags.push_back("class " + std::to_string(c) + " " + why + "; surface distances undefined");
        }
        report.classes.push_back(m);
    }
    report.mean_dsc = dsc_sum / static_cast<double>(gt.num_classes());
    if (defined > 0) {
        report.mean_asd = asd_sum / static_cast<double>(defined);
        report.mean_hd = hd_sum / static_cast<double>(defined);
    }
    return report;
}

nlohmann::json to_json(const SegReport& report) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json classes = nlohmann::json::array();
    for (const ClassMetrics& m : report.classes)
        classes.push_back({{"class", m.label},
                           {"dsc", m.dsc},
                           {"asd", opt(m.asd)},
                           {"hd", opt(m.hd)},
                           {"empty_pred", m.empty_pred},
                           {"empty_gt", m.empty_gt}});
    return {{"classes", classes},
            {"mean_dsc", report.mean_dsc},
            {"mean_asd", opt(report.mean_asd)},
            {"mean_hd", opt(report.mean_hd)},
            {"undefined_count", report.undefined_count},
            {"flags", report.flags},
            {"hd_percentile", report.hd_percentile}};
}

}  // namespace dclseg
