#include "dclseg/evaluation.hpp"

#include <cstdio>
#include <sstream>

#include "dclseg/errors.hpp"

namespace dclseg {

namespace {

std::string fmt(const std::optional<double>& v) {
    if (!v) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    return buf;
}

}  // namespace

nlohmann::json EvaluationResult::to_json() const {
    nlohmann::json j;
    j["hd_percentile"] = hd_percentile;
    j["volumes"] = nlohmann::json::array();
    for (const auto& v : volumes) {
        nlohmann::json row = dclseg::to_json(v.report);
        row["id"] = v.id;
        j["volumes"].push_back(row);
    }
    j["aggregate"] = {{"mean_dsc", mean_dsc},
                      {"mean_asd", mean_asd ? nlohmann::json(*mean_asd) : nlohmann::json(nullptr)},
                      {"mean_hd", mean_hd ? nlohmann::json(*mean_hd) : nlohmann::json(nullptr)},
                      {"n_volumes", volumes.size()}};
    return j;
}

std::string EvaluationResult::to_tsv() const {
    std::ostringstream out;
    out << "volume\tclass\tdsc\tasd\thd\thd_percentile\n";
    for (const auto& v : volumes)
        for (const auto& c : v.report.classes)
            out << v.id << '\t' << c.label << '\t' << fmt(c.dsc) << '\t' << fmt(c.asd) << '\t' << fmt(c.hd) << '\t'
                << fmt(hd_percentile) << '\n';
    return out.str();
}

EvaluationResult evaluate_volumes(ModelState* model, const std::optional<std::filesystem::path>& predictions_dir,
                                  const std::filesystem::path& dataset_dir, const DatasetManifest& manifest,
                                  const std::vector<std::string>& ids, double threshold, double hd_percentile) {
    if (ids.empty()) throw ValidationError("no volumes to evaluate");
    if (!model && !predictions_dir) throw ValidationError("evaluation needs a model or a predictions directory");
    EvaluationResult result;
    result.hd_percentile = hd_percentile;
    double asd_sum = 0.0, hd_sum = 0.0;
    std::size_t asd_n = 0, hd_n = 0;
    for (const auto& id : ids) {
        const ManifestEntry& e = manifest.entry(id);
        if (!e.label) throw ValidationError("volume '" + id + "' has no ground-truth labels");
        const LoadedVolume v = load_volume(dataset_dir / e.image, dataset_dir / *e.label, manifest.num_classes);
        const LabelMask pred = predictions_dir
                                   ? read_labels(*predictions_dir / (id + ".lbl"), manifest.num_classes)
                                   : predict_volume(*model, v.volume, threshold);
        SegReport report = evaluate_volume(pred, *v.labels, v.volume.spacing(), hd_percentile);
        result.mean_dsc += report.mean_dsc;
        if (report.mean_asd) {
            asd_sum += *report.mean_asd;
            ++asd_n;
        }
        if (report.mean_hd) {
            hd_sum += *report.mean_hd;
            ++hd_n;
        }
        result.volumes.push_back({id, std::move(report)});
    }
    result.mean_dsc /= static_cast<double>(ids.size());
    if (asd_n) result.mean_asd = asd_sum / static_cast<double>(asd_n);
    if (hd_n) result.mean_hd = hd_sum / static_cast<double>(hd_n);
    return result;
}

}  // namespace dclseg
