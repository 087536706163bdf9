#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <cmath>

#include <unistd.h>

#include "dclseg/data_io.hpp"
#include "dclseg/errors.hpp"
#include "test_support.hpp"

using namespace dclseg;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("dclseg_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    return out;
}

DatasetManifest plain_manifest(std::size_t n) {
    DatasetManifest m;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string id = "v" + std::to_string(i);
        m.entries.push_back({id, "volumes/" + id + ".vol", "labels/" + id + ".lbl", Split::unassigned, true});
    }
    return m;
}

std::size_t count(const DatasetManifest& m, Split s, bool labeled) {
    std::size_t n = 0;
    for (const auto& e : m.entries) n += e.split == s && e.labeled == labeled;
    return n;
}

}  // namespace

TEST(RawFormat, VolumeRoundTrip) {
    const fs::path dir = scratch("vol");
    Rng rng(1);
    std::vector<double> v(2 * 3 * 4);
    for (double& x : v) x = rng.normal();
    const Volume vol(2, 3, 4, v, Spacing{2.5, 0.7, 1.25});
    write_volume(dir / "a.vol", vol);
    EXPECT_EQ(read_volume(dir / "a.vol"), vol);
    write_volume(dir / "b.vol", vol, VoxelType::f32);
    const Volume f = read_volume(dir / "b.vol");
    EXPECT_EQ(f.spacing(), vol.spacing());
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(f.voxels()[i], static_cast<double>(static_cast<float>(v[i])));
    fs::remove_all(dir);
}

TEST(RawFormat, LabelRoundTripAndValidation) {
    const fs::path dir = scratch("lbl");
    const LabelMask m(1, 2, 3, 2, {0, 1, 2, 2, 1, 0});
    write_labels(dir / "a.lbl", m);
    EXPECT_EQ(read_labels(dir / "a.lbl"), m);
    EXPECT_THROW(read_labels(dir / "a.lbl", 1), ValidationError);
    // Corrupt one label byte to an out-of-range class.
    std::string bytes = slurp(dir / "a.lbl");
    bytes.back() = 7;
    std::ofstream(dir / "bad.lbl", std::ios::binary) << bytes;
    EXPECT_THROW(read_labels(dir / "bad.lbl"), ValidationError);
    fs::remove_all(dir);
}

TEST(RawFormat, RejectsCorruptFiles) {
    const fs::path dir = scratch("corrupt");
    write_volume(dir / "a.vol", Volume(1, 2, 2, {1, 2, 3, 4}));
    const std::string good = slurp(dir / "a.vol");
    std::ofstream(dir / "magic.vol", std::ios::binary) << "XXXX" << good.substr(4);
    EXPECT_THROW(read_volume(dir / "magic.vol"), FormatError);
    std::ofstream(dir / "short.vol", std::ios::binary) << good.substr(0, good.size() - 3);
    EXPECT_THROW(read_volume(dir / "short.vol"), FormatError);
    std::ofstream(dir / "long.vol", std::ios::binary) << good << "x";
    EXPECT_THROW(read_volume(dir / "long.vol"), FormatError);
    std::string ver = good;
    ver[4] = 9;
    std::ofstream(dir / "ver.vol", std::ios::binary) << ver;
    EXPECT_THROW(read_volume(dir / "ver.vol"), FormatError);
    EXPECT_THROW(read_volume(dir / "missing.vol"), IoError);
    fs::remove_all(dir);
}

TEST(LoadVolume, UnknownExtensionNamesRegistry) {
    const fs::path dir = scratch("ext");
    std::ofstream(dir / "x.nii") << "data";
    try {
        load_volume(dir / "x.nii");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find(".vol"), std::string::npos);
    }
    fs::remove_all(dir);
}

TEST(LoadVolume, ChecksLabelShapeAndClasses) {
    const fs::path dir = scratch("load");
    write_volume(dir / "a.vol", Volume(1, 2, 2, {1, 2, 3, 4}));
    write_labels(dir / "a.lbl", LabelMask(1, 2, 2, 2, {0, 1, 2, 0}));
    write_labels(dir / "b.lbl", LabelMask(1, 2, 3, 2, {0, 1, 2, 0, 0, 0}));
    EXPECT_TRUE(load_volume(dir / "a.vol", dir / "a.lbl", 2).labels.has_value());
    EXPECT_THROW(load_volume(dir / "a.vol", dir / "a.lbl", 1), ValidationError);
    EXPECT_THROW(load_volume(dir / "a.vol", dir / "b.lbl"), ValidationError);
    fs::remove_all(dir);
}

TEST(Manifest, RoundTrip) {
    const fs::path dir = scratch("manifest");
    DatasetManifest m = plain_manifest(4);
    m.seed = 7;
    m.num_classes = 2;
    m.entries[1].label.reset();
    m.entries[1].labeled = false;
    m.entries[1].split = Split::test;
    m.entries[0].split = Split::train;
    write_manifest(dir / "manifest.tsv", m);
    EXPECT_EQ(read_manifest(dir / "manifest.tsv"), m);
    fs::remove_all(dir);
}

TEST(Manifest, ValidationErrors) {
    DatasetManifest dup = plain_manifest(2);
    dup.entries[1].id = dup.entries[0].id;
    EXPECT_THROW(dup.validate(), ValidationError);
    DatasetManifest nolabel = plain_manifest(2);
    nolabel.entries[0].label.reset();
    EXPECT_THROW(nolabel.validate(), ValidationError);

    const fs::path dir = scratch("badmanifest");
    std::ofstream(dir / "m.tsv") << "# dclseg-manifest v1\nid\timage\tlabel\tsplit\tlabeled\nonly\ttwo\n";
    EXPECT_THROW(read_manifest(dir / "m.tsv"), FormatError);
    std::ofstream(dir / "v.tsv") << "# dclseg-manifest v9\nid\timage\tlabel\tsplit\tlabeled\n";
    EXPECT_THROW(read_manifest(dir / "v.tsv"), FormatError);
    fs::remove_all(dir);
}

TEST(Splits, TenPercentOfEightyIsEight) {
    const DatasetManifest m = make_splits(plain_manifest(80), {0.0, 0.0}, 0.1, 3);
    EXPECT_EQ(count(m, Split::train, true), 8u);
    EXPECT_EQ(count(m, Split::train, false), 72u);
}

TEST(Splits, FullLabelingLeavesNoUnlabeled) {
    const DatasetManifest m = make_splits(plain_manifest(20), {0.2, 0.1}, 1.0, 3);
    EXPECT_EQ(count(m, Split::test, true), 4u);
    EXPECT_EQ(count(m, Split::val, true), 2u);
    EXPECT_EQ(count(m, Split::train, true), 14u);
    EXPECT_EQ(count(m, Split::train, false), 0u);
}

TEST(Splits, SeededAndDisjoint) {
    const DatasetManifest a = make_splits(plain_manifest(30), {0.2, 0.1}, 0.25, 11);
    const DatasetManifest b = make_splits(plain_manifest(30), {0.2, 0.1}, 0.25, 11);
    EXPECT_EQ(a, b);
    const DatasetManifest c = make_splits(plain_manifest(30), {0.2, 0.1}, 0.25, 12);
    EXPECT_NE(a.ids(Split::test), c.ids(Split::test));
    std::set<std::string> seen;
    for (Split s : {Split::train, Split::val, Split::test})
        for (const auto& id : a.ids(s)) EXPECT_TRUE(seen.insert(id).second);
    EXPECT_EQ(seen.size(), 30u);
}

TEST(Splits, ZeroLabeledNamesMinimum) {
    try {
        make_splits(plain_manifest(10), {0.0, 0.0}, 0.01, 1);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("0.05"), std::string::npos) << e.what();
    }
    EXPECT_EQ(std::llround(minimum_labeled_fraction(10) * 10), 1);
    EXPECT_LT(minimum_labeled_fraction(10), 0.051);
}

TEST(ToyData, SameSeedByteIdentical) {
    const fs::path a = scratch("toy_a"), b = scratch("toy_b");
    ToyConfig cfg;
    cfg.n_volumes = 4;
    cfg.seed = 7;
    const DatasetManifest ma = generate_toy_dataset(cfg, a);
    generate_toy_dataset(cfg, b);
    EXPECT_EQ(tree(a), tree(b));
    EXPECT_EQ(ma.entries.size(), 4u);
    cfg.seed = 8;
    const fs::path c = scratch("toy_c");
    generate_toy_dataset(cfg, c);
    EXPECT_NE(tree(a), tree(c));
    for (const auto& p : {a, b, c}) fs::remove_all(p);
}

TEST(ToyData, TwentyVolumesAllLabeled) {
    const fs::path dir = scratch("toy20");
    ToyConfig cfg;
    cfg.n_volumes = 20;
    const DatasetManifest m = generate_toy_dataset(cfg, dir);
    EXPECT_EQ(read_manifest(dir / "manifest.tsv"), m);
    ASSERT_EQ(m.entries.size(), 20u);
    for (const auto& e : m.entries) {
        EXPECT_TRUE(e.labeled);
        const LoadedVolume v = load_volume(dir / e.image, dir / *e.label, 2);
        EXPECT_EQ(v.volume.depth(), 8u);
        EXPECT_EQ(v.volume.height(), 32u);
    }
    fs::remove_all(dir);
}

TEST(ToyData, NoiselessMaskIsIntensitySupport) {
    for (ShapeFamily family : {ShapeFamily::ellipses, ShapeFamily::rectangles, ShapeFamily::rings}) {
        ToyConfig cfg;
        cfg.num_classes = 1;
        cfg.noise_std = 0;
        cfg.family = family;
        for (std::size_t i = 0; i < 5; ++i) {
            const LoadedVolume v = generate_toy_volume(cfg, i);
            std::size_t fg = 0;
            for (std::size_t k = 0; k < v.volume.voxels().size(); ++k) {
                EXPECT_EQ(v.labels->labels()[k], v.volume.voxels()[k] > 0 ? 1 : 0);
                fg += v.labels->labels()[k];
            }
            EXPECT_GT(fg, 0u) << to_string(family);
        }
    }
}

TEST(ToyData, LoadSlicesNormalizesAndKeepsLabels) {
    const fs::path dir = scratch("slices");
    ToyConfig cfg;
    cfg.n_volumes = 2;
    cfg.depth = 3;
    const DatasetManifest m = generate_toy_dataset(cfg, dir);
    const SliceDataset ds = load_slices(dir, m, {"toy000", "toy001"}, true);
    ASSERT_EQ(ds.size(), 6u);
    ASSERT_TRUE(ds.has_labels());
    EXPECT_EQ(ds.volume_ids[3], "toy001");
    double mean = 0;
    for (double v : ds.images[0].pixels) mean += v;
    EXPECT_NEAR(mean / ds.images[0].pixels.size(), 0.0, 1e-9);
    fs::remove_all(dir);
}
