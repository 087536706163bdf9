#include "dclseg/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "dclseg/errors.hpp"
#include "dclseg/rng.hpp"
#include "binary_io.hpp"

namespace dclseg {

namespace {

using detail::ByteReader;
using detail::ByteWriter;

constexpr char kVolumeMagic[4] = {'D', 'C', 'L', 'V'};
constexpr char kLabelMagic[4] = {'D', 'C', 'L', 'L'};

std::vector<char> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

std::size_t checked_dim(std::uint64_t v, const std::string& source) {
    if (v == 0 || v > (1u << 20)) throw FormatError(source + ": implausible dimension " + std::to_string(v));
    return static_cast<std::size_t>(v);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, '\t')) out.push_back(field);
    return out;
}

}  // namespace

void write_volume(const fs::path& path, const Volume& volume, VoxelType dtype) {
    ByteWriter w;
    w.raw(kVolumeMagic, 4);
    w.u32(kRawFormatVersion);
    w.u8(static_cast<std::uint8_t>(dtype));
    w.u8(0);
    w.u8(0);
    w.u8(0);
    w.u64(volume.depth());
    w.u64(volume.height());
    w.u64(volume.width());
    w.f64(volume.spacing().z);
    w.f64(volume.spacing().y);
    w.f64(volume.spacing().x);
    for (double v : volume.voxels()) {
        if (dtype == VoxelType::f64) w.f64(v);
        else w.f32(static_cast<float>(v));
    }
    write_file(path, w.bytes());
}

Volume read_volume(const fs::path& path) {
    ByteReader r(read_file(path), path.string());
    if (!r.magic(kVolumeMagic)) throw FormatError(path.string() + ": not a raw volume file");
    const std::uint32_t version = r.u32();
    if (version != kRawFormatVersion)
        throw FormatError(path.string() + ": unsupported volume format version " + std::to_string(version));
    const std::uint8_t dtype = r.u8();
    r.u8();
    r.u8();
    r.u8();
    if (dtype != 1 && dtype != 2) throw FormatError(path.string() + ": unknown dtype " + std::to_string(dtype));
    const std::size_t d = checked_dim(r.u64(), path.string());
    const std::size_t h = checked_dim(r.u64(), path.string());
    const std::size_t w = checked_dim(r.u64(), path.string());
    Spacing spacing;
    spacing.z = r.f64();
    spacing.y = r.f64();
    spacing.x = r.f64();
    const std::size_t n = d * h * w;
    r.need(n * (dtype == 2 ? 8 : 4));
    std::vector<double> voxels(n);
    for (double& v : voxels) v = dtype == 2 ? r.f64() : static_cast<double>(r.f32());
    if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes");
    return Volume(d, h, w, std::move(voxels), spacing);
}

void write_labels(const fs::path& path, const LabelMask& labels) {
    ByteWriter w;
    w.raw(kLabelMagic, 4);
    w.u32(kRawFormatVersion);
    w.u32(static_cast<std::uint32_t>(labels.num_classes()));
    w.u32(0);
    w.u64(labels.depth());
    w.u64(labels.height());
    w.u64(labels.width());
    for (std::uint8_t v : labels.labels()) w.u8(v);
    write_file(path, w.bytes());
}

LabelMask read_labels(const fs::path& path, std::optional<std::size_t> expected_classes) {
    ByteReader r(read_file(path), path.string());
    if (!r.magic(kLabelMagic)) throw FormatError(path.string() + ": not a raw label file");
    const std::uint32_t version = r.u32();
    if (version != kRawFormatVersion)
        throw FormatError(path.string() + ": unsupported label format version " + std::to_string(version));
    const std::size_t classes = r.u32();
    r.u32();
    if (expected_classes && *expected_classes != classes)
        throw ValidationError(path.string() + ": label file has " + std::to_string(classes) + " classes, expected " +
                              std::to_string(*expected_classes));
    const std::size_t d = checked_dim(r.u64(), path.string());
    const std::size_t h = checked_dim(r.u64(), path.string());
    const std::size_t w = checked_dim(r.u64(), path.string());
    r.need(d * h * w);
    std::vector<std::uint8_t> labels(d * h * w);
    for (auto& v : labels) v = r.u8();
    if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes");
    try {
        return LabelMask(d, h, w, classes, std::move(labels));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

AdapterRegistry::AdapterRegistry() { readers_[".vol"] = [](const fs::path& p) { return read_volume(p); }; }

AdapterRegistry& AdapterRegistry::instance() {
    static AdapterRegistry registry;
    return registry;
}

void AdapterRegistry::register_reader(const std::string& extension, Reader reader) {
    readers_[extension] = std::move(reader);
}

const AdapterRegistry::Reader* AdapterRegistry::find(const std::string& extension) const {
    const auto it = readers_.find(extension);
    return it == readers_.end() ? nullptr : &it->second;
}

std::vector<std::string> AdapterRegistry::extensions() const {
    std::vector<std::string> out;
    for (const auto& [ext, _] : readers_) out.push_back(ext);
    return out;
}

LoadedVolume load_volume(const fs::path& image_path, const std::optional<fs::path>& label_path,
                         std::optional<std::size_t> num_classes) {
    const auto& registry = AdapterRegistry::instance();
    const auto* reader = registry.find(image_path.extension().string());
    if (!reader) {
        std::string known;
        for (const auto& ext : registry.extensions()) known += (known.empty() ? "" : ", ") + ext;
        throw FormatError("no adapter registered for '" + image_path.extension().string() + "' (" +
                          image_path.string() + "); adapter registry has: " + known);
    }
    LoadedVolume out{(*reader)(image_path), std::nullopt};
    if (label_path) {
        LabelMask labels = read_labels(*label_path, num_classes);
        if (labels.depth() != out.volume.depth() || labels.height() != out.volume.height() ||
            labels.width() != out.volume.width())
            throw ValidationError(label_path->string() + ": label dims do not match " + image_path.string());
        out.labels = std::move(labels);
    }
    return out;
}

std::string to_string(Split split) {
    switch (split) {
        case Split::unassigned: return "unassigned";
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "unassigned";
}

Split parse_split(const std::string& text) {
    if (text == "unassigned") return Split::unassigned;
    if (text == "train") return Split::train;
    if (text == "val") return Split::val;
    if (text == "test") return Split::test;
    throw FormatError("unknown split tag '" + text + "'");
}

void DatasetManifest::validate() const {
    if (version != 1) throw FormatError("unsupported manifest version " + std::to_string(version));
    if (num_classes < 1) throw ValidationError("manifest class count must be >= 1");
    std::set<std::string> seen;
    for (const auto& e : entries) {
        if (e.id.empty()) throw ValidationError("manifest entry with empty id");
        if (!seen.insert(e.id).second) throw ValidationError("duplicate manifest id '" + e.id + "'");
        if (e.labeled && !e.label) throw ValidationError("entry '" + e.id + "' is flagged labeled but has no label path");
    }
}

std::vector<std::string> DatasetManifest::ids(Split split) const {
    std::vector<std::string> out;
    for (const auto& e : entries)
        if (e.split == split) out.push_back(e.id);
    return out;
}

const ManifestEntry& DatasetManifest::entry(const std::string& id) const {
    for (const auto& e : entries)
        if (e.id == id) return e;
    throw ValidationError("unknown volume id '" + id + "'");
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
    manifest.validate();
    std::ostringstream out;
    out << "# dclseg-manifest v" << manifest.version;
    if (manifest.seed) out << " seed=" << *manifest.seed;
    out << " classes=" << manifest.num_classes << '\n';
    out << "id\timage\tlabel\tsplit\tlabeled\n";
    for (const auto& e : manifest.entries)
        out << e.id << '\t' << e.image << '\t' << (e.label ? *e.label : "-") << '\t' << to_string(e.split) << '\t'
            << (e.labeled ? 1 : 0) << '\n';
    const std::string text = out.str();
    write_file(path, std::vector<char>(text.begin(), text.end()));
}

DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    DatasetManifest m;
    std::string line;
    if (!std::getline(in, line) || line.rfind("# dclseg-manifest v", 0) != 0)
        throw FormatError(path.string() + ": missing manifest header");
    std::istringstream header(line.substr(19));
    std::string token;
    header >> m.version;
    while (header >> token) {
        if (token.rfind("seed=", 0) == 0) m.seed = std::stoull(token.substr(5));
        else if (token.rfind("classes=", 0) == 0) m.num_classes = std::stoul(token.substr(8));
    }
    if (!std::getline(in, line) || line != "id\timage\tlabel\tsplit\tlabeled")
        throw FormatError(path.string() + ": missing column header");
    std::size_t lineno = 2;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_tabs(line);
        if (f.size() != 5 || (f[4] != "0" && f[4] != "1"))
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed manifest row");
        m.entries.push_back({f[0], f[1], f[2] == "-" ? std::nullopt : std::optional<std::string>(f[2]),
                             parse_split(f[3]), f[4] == "1"});
    }
    m.validate();
    return m;
}

double minimum_labeled_fraction(std::size_t n_train) {
    if (n_train == 0) return 1.0;
    double l = 0.5 / static_cast<double>(n_train);
    while (std::llround(l * static_cast<double>(n_train)) < 1) l = std::nextafter(l, 2.0);
    return l;
}

DatasetManifest assign_labeled(const DatasetManifest& manifest, double labeled_fraction, std::uint64_t seed) {
    if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
        throw ValidationError("labeled fraction must lie in (0, 1]");
    DatasetManifest out = manifest;
    std::vector<std::size_t> train, candidates;
    for (std::size_t i = 0; i < out.entries.size(); ++i) {
        auto& e = out.entries[i];
        if (e.split != Split::train) {
            e.labeled = e.label.has_value();
            continue;
        }
        train.push_back(i);
        e.labeled = false;
        if (e.label) candidates.push_back(i);
    }
    if (train.empty()) throw ValidationError("manifest has no training volumes");
    const auto n_labeled = static_cast<std::size_t>(std::llround(labeled_fraction * static_cast<double>(train.size())));
    if (n_labeled == 0) {
        std::ostringstream msg;
        msg << "labeled fraction " << labeled_fraction << " yields zero labeled volumes out of " << train.size()
            << "; minimum feasible L is " << minimum_labeled_fraction(train.size());
        throw ValidationError(msg.str());
    }
    if (n_labeled > candidates.size())
        throw ValidationError("only " + std::to_string(candidates.size()) + " training volumes have labels, " +
                              std::to_string(n_labeled) + " requested");
    Rng rng(mix_seed(seed, 0xA55A));
    for (std::size_t i = 0; i < n_labeled; ++i)
        std::swap(candidates[i], candidates[i + rng.uniform_index(candidates.size() - i)]);
    for (std::size_t i = 0; i < n_labeled; ++i) out.entries[candidates[i]].labeled = true;
    return out;
}

DatasetManifest make_splits(const DatasetManifest& manifest, SplitFractions fractions, double labeled_fraction,
                            std::uint64_t seed) {
    manifest.validate();
    if (fractions.test < 0 || fractions.val < 0 || fractions.test + fractions.val >= 1)
        throw ValidationError("split fractions must be >= 0 and sum to less than 1");
    const std::size_t n = manifest.entries.size();
    const auto n_test = static_cast<std::size_t>(std::llround(fractions.test * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::llround(fractions.val * static_cast<double>(n)));
    if (n_test + n_val >= n)
        throw ValidationError("split fractions leave no training volumes out of " + std::to_string(n));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return manifest.entries[a].id < manifest.entries[b].id; });
    Rng rng(mix_seed(seed, 0x5EED));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);

    DatasetManifest out = manifest;
    for (std::size_t k = 0; k < n; ++k)
        out.entries[order[k]].split = k < n_test ? Split::test : k < n_test + n_val ? Split::val : Split::train;
    return assign_labeled(out, labeled_fraction, seed);
}

std::string to_string(ShapeFamily family) {
    switch (family) {
        case ShapeFamily::ellipses: return "ellipses";
        case ShapeFamily::rectangles: return "rectangles";
        case ShapeFamily::rings: return "rings";
    }
    return "ellipses";
}

ShapeFamily parse_shape_family(const std::string& text) {
    if (text == "ellipses") return ShapeFamily::ellipses;
    if (text == "rectangles") return ShapeFamily::rectangles;
    if (text == "rings") return ShapeFamily::rings;
    throw ValidationError("unknown shape family '" + text + "'");
}

void ToyConfig::validate() const {
    if (n_volumes == 0) throw ValidationError("toy dataset needs at least one volume");
    if (depth == 0 || height == 0 || width == 0) throw ValidationError("toy dims must be >= 1");
    if (height < 8 || width < 8) throw ValidationError("toy slices must be at least 8x8 for shapes to fit");
    if (num_classes < 1 || num_classes > 8) throw ValidationError("toy class count must lie in [1, 8]");
    if (!(noise_std >= 0)) throw ValidationError("toy noise_std must be >= 0");
}

LoadedVolume generate_toy_volume(const ToyConfig& cfg, std::size_t index) {
    cfg.validate();
    Rng rng(mix_seed(cfg.seed, index));
    const std::size_t d = cfg.depth, h = cfg.height, w = cfg.width;
    std::vector<std::uint8_t> labels(d * h * w, 0);
    std::vector<double> intensity(cfg.num_classes + 1, 0.0);

    for (std::size_t c = 1; c <= cfg.num_classes; ++c) {
        intensity[c] = 0.6 + 0.8 * static_cast<double>(c - 1) + rng.uniform(-0.15, 0.15);
        const double ry = rng.uniform(0.15, 0.28) * static_cast<double>(h);
        const double rx = rng.uniform(0.15, 0.28) * static_cast<double>(w);
        const double rz = rng.uniform(0.6, 1.0) * static_cast<double>(d);
        const double cy = rng.uniform(ry + 1.0, static_cast<double>(h) - ry - 1.0);
        const double cx = rng.uniform(rx + 1.0, static_cast<double>(w) - rx - 1.0);
        const double cz = rng.uniform(0.35, 0.65) * static_cast<double>(d);
        const double inner = rng.uniform(0.45, 0.6);
        for (std::size_t z = 0; z < d; ++z) {
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    const double dz = (static_cast<double>(z) + 0.5 - cz) / rz;
                    const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
                    const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
                    const double s = dz * dz + dy * dy + dx * dx;
                    bool inside = false;
                    switch (cfg.family) {
                        case ShapeFamily::ellipses: inside = s <= 1.0; break;
                        case ShapeFamily::rectangles:
                            inside = std::abs(dz) <= 1.0 && std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
                            break;
                        case ShapeFamily::rings: inside = s <= 1.0 && s >= inner * inner; break;
                    }
                    if (inside) labels[(z * h + y) * w + x] = static_cast<std::uint8_t>(c);
                }
            }
        }
    }

    std::vector<double> voxels(d * h * w);
    for (std::size_t i = 0; i < voxels.size(); ++i) {
        voxels[i] = intensity[labels[i]];
        if (cfg.noise_std > 0) voxels[i] += cfg.noise_std * rng.normal();
    }
    return {Volume(d, h, w, std::move(voxels), Spacing{2.0, 1.0, 1.0}),
            LabelMask(d, h, w, cfg.num_classes, std::move(labels))};
}

DatasetManifest generate_toy_dataset(const ToyConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(out_dir / "volumes", ec);
    if (!ec) fs::create_directories(out_dir / "labels", ec);
    if (ec) throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());

    DatasetManifest manifest;
    manifest.seed = cfg.seed;
    manifest.num_classes = cfg.num_classes;
    for (std::size_t i = 0; i < cfg.n_volumes; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "toy%03zu", i);
        const LoadedVolume v = generate_toy_volume(cfg, i);
        const std::string image = std::string("volumes/") + id + ".vol";
        const std::string label = std::string("labels/") + id + ".lbl";
        write_volume(out_dir / image, v.volume);
        write_labels(out_dir / label, *v.labels);
        manifest.entries.push_back({id, image, label, Split::unassigned, true});
    }
    write_manifest(out_dir / "manifest.tsv", manifest);
    return manifest;
}

SliceDataset load_slices(const fs::path& dataset_dir, const DatasetManifest& manifest,
                         const std::vector<std::string>& ids, bool with_labels) {
    SliceDataset out;
    for (const std::string& id : ids) {
        const ManifestEntry& e = manifest.entry(id);
        if (with_labels && !e.label) throw ValidationError("volume '" + id + "' has no label file");
        const LoadedVolume v = load_volume(dataset_dir / e.image,
                                           with_labels ? std::optional<fs::path>(dataset_dir / *e.label) : std::nullopt,
                                           manifest.num_classes);
        for (std::size_t z = 0; z < v.volume.depth(); ++z) {
            out.images.push_back(normalize_slice(v.volume.slice(z, id)));
            out.volume_ids.push_back(id);
            if (with_labels) out.labels.push_back(v.labels->slice(z));
        }
    }
    return out;
}

}  // namespace dclseg
