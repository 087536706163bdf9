#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dclseg/data_io.hpp"
#include "dclseg/metrics.hpp"
#include "dclseg/training.hpp"

namespace dclseg {

struct VolumeResult {
    std::string id;
    SegReport report;
};

struct EvaluationResult {
    std::vector<VolumeResult> volumes;
    // Mean over volumes of each volume's mean foreground DSC.
    double mean_dsc = 0.0;
    std::optional<double> mean_asd;
    std::optional<double> mean_hd;
    double hd_percentile = 100.0;

    nlohmann::json to_json() const;
    // volume, class, dsc, asd, hd, percentile; "nan" marks undefined distances.
    std::string to_tsv() const;
};

/// Predicts each volume with the model, or reads <id>.lbl from
/// predictions_dir when given, and scores it against its ground truth.
EvaluationResult evaluate_volumes(ModelState* model, const std::optional<std::filesystem::path>& predictions_dir,
                                  const std::filesystem::path& dataset_dir, const DatasetManifest& manifest,
                                  const std::vector<std::string>& ids, double threshold, double hd_percentile);

}  // namespace dclseg
