#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dclseg/image.hpp"

namespace dclseg {

namespace fs = std::filesystem;

// ---- raw formats ---------------------------------------------------------
//
// Volume (.vol), little-endian:
//   char[4] "DCLV" | u32 version | u8 dtype (1 = f32, 2 = f64) | u8[3] pad
//   u64 depth | u64 height | u64 width | f64 spacing z, y, x | voxels row-major
// Label (.lbl):
//   char[4] "DCLL" | u32 version | u32 num_classes | u32 pad
//   u64 depth | u64 height | u64 width | u8 labels row-major

constexpr std::uint32_t kRawFormatVersion = 1;

enum class VoxelType : std::uint8_t { f32 = 1, f64 = 2 };

void write_volume(const fs::path& path, const Volume& volume, VoxelType dtype = VoxelType::f64);
Volume read_volume(const fs::path& path);
void write_labels(const fs::path& path, const LabelMask& labels);
// Validates every value against the stored class count and, when given, the expected one.
LabelMask read_labels(const fs::path& path, std::optional<std::size_t> expected_classes = std::nullopt);

struct LoadedVolume {
    Volume volume;
    std::optional<LabelMask> labels;
};

/// Maps file extensions to volume readers so external formats can plug in.
/// The raw ".vol" reader is always registered.
class AdapterRegistry {
public:
    using Reader = std::function<Volume(const fs::path&)>;

    static AdapterRegistry& instance();
    void register_reader(const std::string& extension, Reader reader);
    const Reader* find(const std::string& extension) const;
    std::vector<std::string> extensions() const;

private:
    AdapterRegistry();
    std::map<std::string, Reader> readers_;
};

LoadedVolume load_volume(const fs::path& image_path, const std::optional<fs::path>& label_path = std::nullopt,
                         std::optional<std::size_t> num_classes = std::nullopt);

// ---- manifest ------------------------------------------------------------

enum class Split { unassigned, train, val, test };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct ManifestEntry {
    std::string id;
    std::string image;                 // relative to the dataset directory
    std::optional<std::string> label;  // relative to the dataset directory
    Split split = Split::unassigned;
    bool labeled = false;
    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Tab-separated manifest:
///   # dclseg-manifest v1 [seed=<n>] [classes=<n>]
///   id  image  label  split  labeled
///   <rows; label "-" when absent>
struct DatasetManifest {
    std::uint32_t version = 1;
    std::optional<std::uint64_t> seed;
    std::size_t num_classes = 1;
    std::vector<ManifestEntry> entries;

    void validate() const;
    std::vector<std::string> ids(Split split) const;
    const ManifestEntry& entry(const std::string& id) const;
    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

void write_manifest(const fs::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const fs::path& path);

struct SplitFractions {
    double test = 0.2;
    double val = 0.1;
};

/// Seeded volume-level split. test and val counts are round(fraction * n);
/// round(L * n_train) training volumes are labeled. Throws ValidationError
/// naming the minimum feasible L when that count would be zero.
DatasetManifest make_splits(const DatasetManifest& manifest, SplitFractions fractions, double labeled_fraction,
                            std::uint64_t seed);

/// Re-draws only the labeled flags of the training volumes.
DatasetManifest assign_labeled(const DatasetManifest& manifest, double labeled_fraction, std::uint64_t seed);

/// Smallest L giving at least one labeled volume out of n_train.
double minimum_labeled_fraction(std::size_t n_train);

// ---- toy data --------------------------------------------------------------

enum class ShapeFamily { ellipses, rectangles, rings };

std::string to_string(ShapeFamily family);
ShapeFamily parse_shape_family(const std::string& text);

struct ToyConfig {
    std::size_t n_volumes = 20;
    std::size_t depth = 8;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t num_classes = 2;
    ShapeFamily family = ShapeFamily::ellipses;
    double noise_std = 0.1;
    std::uint64_t seed = 7;

    void validate() const;
};

/// One synthetic volume and its exact labels.
LoadedVolume generate_toy_volume(const ToyConfig& cfg, std::size_t index);

/// Writes volumes/<id>.vol, labels/<id>.lbl and manifest.tsv under out_dir.
/// Every entry is labeled and unassigned. Byte-identical for a fixed seed.
DatasetManifest generate_toy_dataset(const ToyConfig& cfg, const fs::path& out_dir);

// ---- slice datasets --------------------------------------------------------

/// Normalized 2D slices (plus labels when requested) of a set of volumes.
struct SliceDataset {
    std::vector<SliceImage> images;
    std::vector<LabelMask> labels;  // empty or parallel to images
    std::vector<std::string> volume_ids;

    std::size_t size() const noexcept { return images.size(); }
    bool has_labels() const noexcept { return !labels.empty(); }
};

SliceDataset load_slices(const fs::path& dataset_dir, const DatasetManifest& manifest,
                         const std::vector<std::string>& ids, bool with_labels);

}  // namespace dclseg
