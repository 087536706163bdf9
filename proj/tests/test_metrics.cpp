#include <gtest/gtest.h>

#include "dclseg/errors.hpp"
#include "dclseg/metrics.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace dclseg;

namespace {

BinaryMask planar_from(std::size_t h, std::size_t w, std::initializer_list<std::pair<std::size_t, std::size_t>> on) {
    std::vector<std::uint8_t> bits(h * w, 0);
    for (auto [y, x] : on) bits[y * w + x] = 1;
    return BinaryMask::planar(h, w, bits);
}

oracle::Mask to_oracle(const BinaryMask& m) { return {m.depth(), m.height(), m.width(), m.bits()}; }

BinaryMask random_mask(std::size_t d, std::size_t h, std::size_t w, double density, Rng& rng, bool volumetric) {
    std::vector<std::uint8_t> bits(d * h * w);
    for (auto& b : bits) b = rng.uniform() < density;
    return BinaryMask(d, h, w, bits, volumetric);
}

BinaryMask shifted(const BinaryMask& m, std::size_t dy, std::size_t dx) {
    std::vector<std::uint8_t> bits(m.bits().size(), 0);
    for (std::size_t y = 0; y + dy < m.height(); ++y)
        for (std::size_t x = 0; x + dx < m.width(); ++x) bits[(y + dy) * m.width() + x + dx] = m.at(0, y, x);
    return BinaryMask::planar(m.height(), m.width(), bits);
}

}  // namespace

TEST(Dice, Examples) {
    const auto a = planar_from(4, 4, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
    EXPECT_EQ(dice(a, a), 1.0);
    EXPECT_EQ(dice(a, planar_from(4, 4, {{3, 3}})), 0.0);
    EXPECT_EQ(dice(a, planar_from(4, 4, {{0, 0}, {0, 1}, {2, 2}, {3, 3}})), 0.5);
    EXPECT_EQ(dice(planar_from(2, 2, {}), planar_from(2, 2, {})), 1.0);
    EXPECT_EQ(dice(a, planar_from(4, 4, {})), 0.0);
    EXPECT_THROW(dice(a, planar_from(3, 4, {})), ValidationError);
}

TEST(Boundary, Examples) {
    const auto single = boundary(planar_from(5, 5, {{2, 3}}));
    ASSERT_EQ(single.size(), 1u);
    EXPECT_EQ(single[0], (Voxel{0, 2, 3}));
    EXPECT_TRUE(boundary(planar_from(3, 3, {})).empty());

    std::vector<std::uint8_t> bits(25, 0);
    for (std::size_t y = 1; y <= 3; ++y)
        for (std::size_t x = 1; x <= 3; ++x) bits[y * 5 + x] = 1;
    const auto square = boundary(BinaryMask::planar(5, 5, bits));
    EXPECT_EQ(square.size(), 8u);
    for (const Voxel& v : square) EXPECT_FALSE(v.y == 2 && v.x == 2);
}

TEST(Boundary, GridEdgeCountsAsBackground) {
    EXPECT_EQ(boundary(BinaryMask::planar(2, 2, {1, 1, 1, 1})).size(), 4u);
    // 3x3x3 solid cube: only the center voxel is interior.
    EXPECT_EQ(boundary(BinaryMask(3, 3, 3, std::vector<std::uint8_t>(27, 1))).size(), 26u);
}

TEST(Distances, Examples) {
    const auto a = planar_from(8, 8, {{1, 1}});
    const auto b = planar_from(8, 8, {{1, 4}});
    EXPECT_DOUBLE_EQ(*assd(a, b, {}), 3.0);
    EXPECT_DOUBLE_EQ(*hausdorff(a, b, {}), 3.0);
    const auto c = planar_from(8, 8, {{1, 1}, {2, 2}});
    EXPECT_DOUBLE_EQ(*assd(c, c, {}), 0.0);
    EXPECT_DOUBLE_EQ(*hausdorff(c, c, {}), 0.0);
    EXPECT_DOUBLE_EQ(*hausdorff(planar_from(8, 8, {{0, 0}}), planar_from(8, 8, {{3, 4}}), {}), 5.0);
    EXPECT_FALSE(assd(a, planar_from(8, 8, {}), {}).has_value());
    EXPECT_FALSE(hausdorff(planar_from(8, 8, {}), a, {}).has_value());
}

TEST(Distances, SpacingScalesAxes) {
    const BinaryMask a(3, 1, 1, {1, 0, 0});
    const BinaryMask b(3, 1, 1, {0, 0, 1});
    EXPECT_DOUBLE_EQ(*hausdorff(a, b, Spacing{2.5, 1, 1}), 5.0);
}

TEST(Distances, Hd95UsesLinearInterpolation) {
    EXPECT_DOUBLE_EQ(percentile_of({0, 10}, 95), 9.5);
    EXPECT_DOUBLE_EQ(percentile_of({3, 1, 2}, 50), 2.0);
    EXPECT_THROW(percentile_of({1}, 0), ValidationError);
}

TEST(Metrics, SymmetryOrderingAndTranslation) {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const auto a = random_mask(1, 10, 10, 0.3, rng, false);
        const auto b = random_mask(1, 10, 10, 0.3, rng, false);
        EXPECT_EQ(dice(a, b), dice(b, a));
        const auto ab = assd(a, b, {}), ba = assd(b, a, {});
        if (!ab) continue;
        EXPECT_NEAR(*ab, *ba, 1e-12);
        EXPECT_EQ(*hausdorff(a, b, {}), *hausdorff(b, a, {}));
        EXPECT_GE(*hausdorff(a, b, {}), *ab);
        EXPECT_GE(*ab, 0.0);
    }
    for (int trial = 0; trial < 50; ++trial) {
        // Masks inside rows/cols 1..5 of a 12x12 grid stay clear of the edge
        // after shifts of up to 5.
        std::vector<std::uint8_t> ba(144, 0), bb(144, 0);
        for (std::size_t y = 1; y <= 5; ++y)
            for (std::size_t x = 1; x <= 5; ++x) {
                ba[y * 12 + x] = rng.uniform() < 0.4;
                bb[y * 12 + x] = rng.uniform() < 0.4;
            }
        const auto a = BinaryMask::planar(12, 12, ba), b = BinaryMask::planar(12, 12, bb);
        const std::size_t dy = rng.uniform_index(6), dx = rng.uniform_index(6);
        const auto sa = shifted(a, dy, dx), sb = shifted(b, dy, dx);
        EXPECT_EQ(dice(a, b), dice(sa, sb));
        const auto d1 = assd(a, b, {}), d2 = assd(sa, sb, {});
        ASSERT_EQ(d1.has_value(), d2.has_value());
        if (d1) {
            EXPECT_NEAR(*d1, *d2, 1e-12);
            EXPECT_NEAR(*hausdorff(a, b, {}), *hausdorff(sa, sb, {}), 1e-12);
        }
    }
}

TEST(Metrics, MatchBruteForceOracle) {
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const bool volumetric = trial % 4 == 3;
        const std::size_t d = volumetric ? 1 + rng.uniform_index(4) : 1;
        const std::size_t h = 1 + rng.uniform_index(16), w = 1 + rng.uniform_index(16);
        const double density = rng.uniform(0.05, 0.7);
        const auto a = random_mask(d, h, w, density, rng, volumetric);
        const auto b = random_mask(d, h, w, density, rng, volumetric);
        const Spacing sp{rng.uniform(0.5, 3), rng.uniform(0.5, 2), rng.uniform(0.5, 2)};
        const auto oa = to_oracle(a), ob = to_oracle(b);
        EXPECT_EQ(dice(a, b), oracle::dice(oa, ob));
        const auto got_assd = assd(a, b, sp);
        const auto want_assd = oracle::assd(oa, ob, volumetric, sp.z, sp.y, sp.x);
        ASSERT_EQ(got_assd.has_value(), want_assd.has_value());
        if (!got_assd) continue;
        EXPECT_NEAR(*got_assd, *want_assd, 1e-9);
        EXPECT_NEAR(*hausdorff(a, b, sp), *oracle::hausdorff(oa, ob, volumetric, sp.z, sp.y, sp.x), 1e-9);
        EXPECT_NEAR(*hausdorff(a, b, sp, 95), *oracle::hausdorff(oa, ob, volumetric, sp.z, sp.y, sp.x, 95), 1e-9);
    }
}

TEST(EvaluateVolume, PerfectPrediction) {
    const LabelMask m(2, 3, 3, 2, {0, 1, 1, 0, 1, 1, 2, 2, 0, 0, 1, 1, 0, 1, 1, 2, 2, 0});
    const SegReport r = evaluate_volume(m, m, {});
    ASSERT_EQ(r.classes.size(), 2u);
    for (const auto& c : r.classes) {
        EXPECT_EQ(c.dsc, 1.0);
        EXPECT_EQ(*c.asd, 0.0);
        EXPECT_EQ(*c.hd, 0.0);
    }
    EXPECT_EQ(r.mean_dsc, 1.0);
    EXPECT_EQ(r.undefined_count, 0u);
}

TEST(EvaluateVolume, AbsentClassIsFlagged) {
    const LabelMask m(1, 2, 2, 2, {0, 1, 1, 0});
    const SegReport r = evaluate_volume(m, m, {});
    EXPECT_EQ(r.classes[1].dsc, 1.0);
    EXPECT_FALSE(r.classes[1].asd.has_value());
    EXPECT_FALSE(r.classes[1].hd.has_value());
    EXPECT_TRUE(r.classes[1].empty_gt && r.classes[1].empty_pred);
    EXPECT_EQ(r.undefined_count, 1u);
    EXPECT_FALSE(r.flags.empty());
    EXPECT_EQ(*r.mean_asd, 0.0);
}

TEST(EvaluateVolume, CraftedTwoClassCase) {
    // 8x8 planar: class 1 gt is a 2x4 block, prediction a shifted 2x4 block;
    // class 2 gt is a single pixel predicted 3 columns away.
    std::vector<std::uint8_t> gt(64, 0), pred(64, 0);
    for (std::size_t y = 1; y <= 2; ++y)
        for (std::size_t x = 1; x <= 4; ++x) gt[y * 8 + x] = 1;
    for (std::size_t y = 1; y <= 2; ++y)
        for (std::size_t x = 2; x <= 5; ++x) pred[y * 8 + x] = 1;
    gt[6 * 8 + 1] = 2;
    pred[6 * 8 + 4] = 2;
    const auto g = LabelMask::planar(8, 8, 2, gt), p = LabelMask::planar(8, 8, 2, pred);
    const SegReport r = evaluate_volume(p, g, {});

    // class 1: overlap 6 of 8 + 8 -> 0.75; every block voxel is boundary;
    // gt (y, 1) is 1 from pred, others 0 -> mean 2/8; symmetric -> ASSD 0.25, HD 1.
    EXPECT_DOUBLE_EQ(r.classes[0].dsc, 0.75);
    EXPECT_DOUBLE_EQ(*r.classes[0].asd, 0.25);
    EXPECT_DOUBLE_EQ(*r.classes[0].hd, 1.0);
    EXPECT_DOUBLE_EQ(r.classes[1].dsc, 0.0);
    EXPECT_DOUBLE_EQ(*r.classes[1].asd, 3.0);
    EXPECT_DOUBLE_EQ(*r.classes[1].hd, 3.0);
    EXPECT_DOUBLE_EQ(r.mean_dsc, 0.375);
    EXPECT_DOUBLE_EQ(*r.mean_asd, 1.625);
    EXPECT_DOUBLE_EQ(*r.mean_hd, 2.0);
}

TEST(EvaluateVolume, Errors) {
    const LabelMask a(1, 2, 2, 2, {0, 1, 1, 0});
    const LabelMask b(1, 2, 2, 1, {0, 1, 1, 0});
    EXPECT_THROW(evaluate_volume(a, b, {}), ValidationError);
    EXPECT_THROW(evaluate_volume(a, a, {}, 0), ValidationError);
}

TEST(EvaluateVolume, JsonCarriesPercentileAndNulls) {
    const LabelMask m(1, 2, 2, 2, {0, 1, 1, 0});
    const auto j = to_json(evaluate_volume(m, m, {}, 95));
    EXPECT_EQ(j.at("hd_percentile").get<double>(), 95.0);
    EXPECT_TRUE(j.at("classes").at(1).at("asd").is_null());
}
