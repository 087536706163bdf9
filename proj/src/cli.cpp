#include "dclseg/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <regex>
#include <set>
#include <sstream>

#include "dclseg/checkpoint.hpp"
#include "dclseg/config.hpp"
#include "dclseg/data_io.hpp"
#include "dclseg/errors.hpp"
#include "dclseg/evaluation.hpp"
#include "dclseg/training.hpp"

#ifndef DCLSEG_GIT_STAMP
#define DCLSEG_GIT_STAMP "unknown"
#endif
#ifndef DCLSEG_VERSION
#define DCLSEG_VERSION "0.0.0"
#endif

namespace dclseg::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
    std::string out_dir = "out";
    bool dump_config = false;
    std::vector<std::string> sets;
};

struct DataArgs {
    std::string data;
    std::string name = "toy";
};

struct GenArgs {
    std::size_t n = 20;
    std::string dims = "8x32x32";
    std::size_t classes = 2;
    std::string family = "ellipses";
    double noise = 0.1;
    double labeled_fraction = 1.0;
};

struct TrainArgs {
    std::optional<std::size_t> steps, epochs, batch, checkpoint_every;
    std::optional<double> lr;
    std::optional<std::string> schedule;
    std::string resume;
};

struct PretrainArgs {
    TrainArgs train;
    std::optional<std::string> loss, preset;
};

struct FinetuneArgs {
    TrainArgs train;
    std::string init;
    bool from_scratch = false;
    std::optional<double> labeled_fraction, threshold;
    std::optional<std::size_t> seeds;
    std::optional<std::string> encoder_mode, preset;
};

struct EvalArgs {
    std::string checkpoint;
    std::string predictions;
    std::string split = "test";
    std::optional<double> hd_percentile, threshold;
};

std::string number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

fs::path dataset_dir(const DataArgs& d) {
    if (!d.data.empty()) return d.data;
    if (const char* root = std::getenv("DCLSEG_DATA_DIR"); root && *root) return fs::path(root) / d.name;
    return fs::path("data") / d.name;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

void write_atomic(const fs::path& path, const std::string& text) {
    fs::path tmp = path;
    tmp += ".tmp";
    write_text(tmp, text);
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string join(const std::set<std::string>& items) {
    std::string out;
    for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
    return out;
}

std::set<std::string> split_ids(const std::string& text) {
    std::set<std::string> out;
    std::istringstream in(text);
    std::string id;
    while (std::getline(in, id, ','))
        if (!id.empty()) out.insert(id);
    return out;
}

void set_key(Config& c, const std::string& key, const std::string& value) {
    try {
        c.set(key, value);
    } catch (const ValidationError& e) {
        throw UsageError(e.what());
    }
}

Config build_config(const Globals& g) {
    Config c = Config::defaults();
    if (!g.config_path.empty()) {
        try {
            c.load_file(g.config_path);
        } catch (const ValidationError& e) {
            throw UsageError(e.what());
        } catch (const IoError& e) {
            throw UsageError(e.what());
        }
    }
    for (const auto& kv : g.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        set_key(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (g.seed) set_key(c, "run.seed", std::to_string(*g.seed));
    return c;
}

void apply_train_args(Config& c, const std::string& stage, const TrainArgs& t) {
    if (t.steps) set_key(c, stage + ".steps", std::to_string(*t.steps));
    if (t.epochs) set_key(c, stage + ".epochs", std::to_string(*t.epochs));
    if (t.batch) set_key(c, stage + ".batch_size", std::to_string(*t.batch));
    if (t.checkpoint_every) set_key(c, stage + ".checkpoint_every", std::to_string(*t.checkpoint_every));
    if (t.lr) set_key(c, stage + ".learning_rate", number(*t.lr));
    if (t.schedule) set_key(c, stage + ".schedule", *t.schedule);
}

// Validates config values that do not depend on data, so bad settings are usage errors.
template <typename F>
auto usage_checked(F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ValidationError& e) {
        throw UsageError(e.what());
    }
}

json run_record(const std::string& stage, const Config& c, const std::vector<std::uint64_t>& seeds,
                const json& outputs, double wall_seconds, const json& final_metrics, bool deterministic) {
    json r;
    r["stage"] = stage;
    r["version"] = DCLSEG_VERSION;
    r["git"] = DCLSEG_GIT_STAMP;
    r["config"] = c.values();
    r["seeds"] = seeds;
    r["deterministic"] = deterministic;
    r["outputs"] = outputs;
    r["timing"] = deterministic ? json(nullptr) : json{{"wall_seconds", wall_seconds}};
    r["final_metrics"] = final_metrics;
    return r;
}

DatasetManifest load_manifest(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.tsv")) throw IoError("no dataset at " + dir.string() + " (manifest.tsv missing)");
    return read_manifest(dir / "manifest.tsv");
}

std::set<std::string> id_set(const DatasetManifest& m, Split split) {
    const auto ids = m.ids(split);
    return {ids.begin(), ids.end()};
}

std::vector<std::string> labeled_ids(const DatasetManifest& m, bool labeled) {
    std::vector<std::string> out;
    for (const auto& e : m.entries)
        if (e.split == Split::train && e.labeled == labeled) out.push_back(e.id);
    return out;
}

void fill_meta(ModelState& model, const Config& c, const std::string& stage, const DatasetManifest& m,
               const std::set<std::string>& train_ids) {
    model.meta = c.values();
    model.meta["stage"] = stage;
    model.meta["data.num_classes"] = std::to_string(m.num_classes);
    model.meta["data.train_ids"] = join(train_ids);
}

std::string curve_header(Stage stage) {
    return stage == Stage::pretrain ? "step\tloss_loc\n" : "step\tloss\tloss_labeled\tloss_unlabeled\n";
}

std::string curve_row(Stage stage, const StepRecord& s) {
    std::string row = std::to_string(s.step) + '\t' + number(s.loss);
    if (stage == Stage::finetune) row += '\t' + number(s.loss_labeled) + '\t' + number(s.loss_unlabeled);
    return row + '\n';
}

// Keeps rows of an earlier curve up to the resume step, then appends new rows.
void write_curve(const fs::path& path, Stage stage, const std::vector<StepRecord>& steps,
                 std::optional<std::uint64_t> resumed_from) {
    std::string text = curve_header(stage);
    if (resumed_from && fs::exists(path)) {
        std::ifstream in(path);
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (std::stoull(line.substr(0, line.find('\t'))) <= *resumed_from) text += line + '\n';
        }
    }
    for (const auto& s : steps) text += curve_row(stage, s);
    write_text(path, text);
}

TrainHooks checkpoint_hooks(const fs::path& out_dir, Stage stage) {
    TrainHooks hooks;
    hooks.on_checkpoint = [out_dir, stage](ModelState& m) {
        ensure_dir(out_dir / "checkpoints");
        save_checkpoint(m, out_dir / "checkpoints" / (to_string(stage) + "_step" + std::to_string(m.step) + ".ckpt"));
    };
    return hooks;
}

// ---- gen-data ----------------------------------------------------------------

int cmd_gen_data(const Globals& g, const DataArgs& d, const GenArgs& a, std::ostream& out) {
    Config c = build_config(g);
    std::smatch match;
    static const std::regex dims_re(R"((\d+)x(\d+)x(\d+))");
    if (!std::regex_match(a.dims, match, dims_re)) throw UsageError("--dims must look like DxHxW, got '" + a.dims + "'");
    ToyConfig tc;
    tc.n_volumes = a.n;
    tc.depth = std::stoul(match[1]);
    tc.height = std::stoul(match[2]);
    tc.width = std::stoul(match[3]);
    if (tc.depth == 0 || tc.height == 0 || tc.width == 0)
        throw UsageError("--dims must have positive sizes, got '" + a.dims + "'");
    tc.num_classes = a.classes;
    tc.noise_std = a.noise;
    tc.seed = c.get_u64("run.seed");
    usage_checked([&] {
        tc.family = parse_shape_family(a.family);
        tc.validate();
        return 0;
    });
    const SplitFractions fractions{c.get_double("data.test_fraction"), c.get_double("data.val_fraction")};

    const fs::path dir = dataset_dir(d);
    const DatasetManifest generated = generate_toy_dataset(tc, dir);
    const DatasetManifest split = make_splits(generated, fractions, a.labeled_fraction, tc.seed);
    write_manifest(dir / "manifest.tsv", split);

    std::size_t labeled = 0;
    for (const auto& e : split.entries) labeled += (e.split == Split::train && e.labeled) ? 1 : 0;
    out << "dataset " << dir.string() << ": " << split.entries.size() << " volumes (train "
        << split.ids(Split::train).size() << ", val " << split.ids(Split::val).size() << ", test "
        << split.ids(Split::test).size() << "), " << labeled << " labeled, " << tc.num_classes << " classes, dims "
        << tc.depth << 'x' << tc.height << 'x' << tc.width << ", family " << to_string(tc.family) << ", seed "
        << tc.seed << '\n';
    return 0;
}

// ---- pretrain ----------------------------------------------------------------

int cmd_pretrain(const Globals& g, const DataArgs& d, const PretrainArgs& a, std::ostream& out, std::ostream& err) {
    Config c = build_config(g);
    apply_train_args(c, "pretrain", a.train);
    if (a.loss) set_key(c, "loss.kind", *a.loss);
    if (a.preset) set_key(c, "model.preset", *a.preset);
    TrainConfig tcfg = usage_checked([&] { return TrainConfig::from_config(c, Stage::pretrain); });

    const fs::path dir = dataset_dir(d);
    const DatasetManifest manifest = load_manifest(dir);
    tcfg.excluded_ids = id_set(manifest, Split::test);
    std::set<std::string> pool = id_set(manifest, Split::train);
    for (const auto& id : manifest.ids(Split::val)) pool.insert(id);
    if (pool.empty()) throw ValidationError("pre-training pool (train + val) is empty");
    const SliceDataset ds = load_slices(dir, manifest, {pool.begin(), pool.end()}, false);

    ModelState model;
    std::optional<std::uint64_t> resumed_from;
    if (!a.train.resume.empty()) {
        model = load_checkpoint(a.train.resume);
        if (model.meta.count("stage") && model.meta.at("stage") != "pretrain")
            throw ValidationError("cannot resume pretraining from a " + model.meta.at("stage") + " checkpoint");
        resumed_from = model.step;
    } else {
        model = ModelState(usage_checked([&] { return ModelConfig::from_config(c, manifest.num_classes); }));
        model.initialize();
    }
    fill_meta(model, c, "pretrain", manifest, pool);

    const fs::path out_dir = g.out_dir;
    ensure_dir(out_dir);
    TrainHooks hooks = checkpoint_hooks(out_dir, Stage::pretrain);
    hooks.on_epoch_end = [&err](std::size_t epoch, ModelState& m) {
        err << "pretrain epoch " << epoch << " step " << m.step << '\n';
    };
    const TrainStats stats = pretrain(ds, model, tcfg, hooks);
    for (const auto& w : stats.warnings) err << "warning: " << w << '\n';

    write_curve(out_dir / "pretrain_curve.tsv", Stage::pretrain, stats.steps, resumed_from);
    save_checkpoint(model, out_dir / "pretrain.ckpt");
    const double final_loss = stats.steps.empty() ? std::nan("") : stats.steps.back().loss;
    json metrics = {{"final_loss", stats.steps.empty() ? json(nullptr) : json(final_loss)}, {"step", model.step}};
    json outputs = {{"checkpoint", (out_dir / "pretrain.ckpt").string()},
                    {"curve", (out_dir / "pretrain_curve.tsv").string()}};
    write_atomic(out_dir / "run_record.json",
                 run_record("pretrain", c, {tcfg.seed}, outputs, stats.wall_seconds, metrics, g.deterministic).dump(2) +
                     "\n");
    out << "pretrain finished at step " << model.step << ", final loss " << number(final_loss) << '\n';
    return 0;
}

// ---- finetune ----------------------------------------------------------------

struct FinetuneOutcome {
    double test_dsc = 0.0;
};

FinetuneOutcome finetune_one(const Globals& g, Config c, const FinetuneArgs& a, const fs::path& dir,
                             const DatasetManifest& base, const fs::path& out_dir, std::size_t offset,
                             bool score_test, std::ostream& out, std::ostream& err) {
    if (offset > 0) {
        for (const char* key : {"model.seed", "decoder.seed1", "decoder.seed2"})
            set_key(c, key, std::to_string(c.get_u64(key) + offset));
        set_key(c, "run.seed", std::to_string(c.get_u64("run.seed") + offset));
    }
    TrainConfig tcfg = usage_checked([&] { return TrainConfig::from_config(c, Stage::finetune); });
    tcfg.excluded_ids = id_set(base, Split::test);
    const double hdp = c.get_double("eval.hd_percentile");

    const DatasetManifest manifest = assign_labeled(base, tcfg.labeled_fraction, tcfg.seed);
    const auto lab = labeled_ids(manifest, true);
    const auto unlab = labeled_ids(manifest, false);
    const SliceDataset labeled = load_slices(dir, manifest, lab, true);
    const SliceDataset unlabeled = load_slices(dir, manifest, unlab, false);
    const auto val_ids = manifest.ids(Split::val);

    std::set<std::string> used(lab.begin(), lab.end());
    used.insert(unlab.begin(), unlab.end());
    ModelState model;
    std::optional<std::uint64_t> resumed_from;
    if (!a.train.resume.empty()) {
        model = load_checkpoint(a.train.resume);
        if (model.meta.count("stage") && model.meta.at("stage") != "finetune")
            throw ValidationError("cannot resume fine-tuning from a " + model.meta.at("stage") + " checkpoint");
        for (const auto& id : split_ids(model.meta.count("data.train_ids") ? model.meta.at("data.train_ids") : ""))
            used.insert(id);
        resumed_from = model.step;
    } else {
        model = ModelState(usage_checked([&] { return ModelConfig::from_config(c, manifest.num_classes); }));
        model.initialize();
        if (!a.from_scratch) {
            ModelState pre = load_checkpoint(a.init);
            model.load_encoder_from(pre);
            for (const auto& id : split_ids(pre.meta.count("data.train_ids") ? pre.meta.at("data.train_ids") : ""))
                used.insert(id);
        }
    }
    for (const auto& id : used)
        if (tcfg.excluded_ids.count(id))
            throw ValidationError("split leakage: test volume '" + id + "' was used to train the initial encoder");
    fill_meta(model, c, "finetune", manifest, used);
    model.meta["finetune.labeled_fraction"] = number(tcfg.labeled_fraction);
    model.meta["init"] = a.from_scratch ? "scratch" : a.init;

    ensure_dir(out_dir);
    const fs::path val_path = out_dir / "val_reports.jsonl";
    std::string val_lines;
    if (resumed_from && fs::exists(val_path)) {
        std::ifstream in(val_path);
        std::string line;
        while (std::getline(in, line))
            if (!line.empty() && json::parse(line).value("step", std::uint64_t{0}) <= *resumed_from)
                val_lines += line + '\n';
    }
    json last_val = nullptr;
    TrainHooks hooks = checkpoint_hooks(out_dir, Stage::finetune);
    hooks.on_epoch_end = [&](std::size_t epoch, ModelState& m) {
        json row = {{"epoch", epoch}, {"step", m.step}};
        if (!val_ids.empty()) {
            const EvaluationResult r =
                evaluate_volumes(&m, std::nullopt, dir, manifest, val_ids, tcfg.threshold, hdp);
            row["report"] = r.to_json();
            last_val = row;
            err << "finetune epoch " << epoch << " step " << m.step << " val DSC " << number(r.mean_dsc) << '\n';
        }
        val_lines += row.dump() + '\n';
    };
    const TrainStats stats = finetune(labeled, unlabeled, model, tcfg, hooks);
    for (const auto& w : stats.warnings) err << "warning: " << w << '\n';

    write_curve(out_dir / "finetune_curve.tsv", Stage::finetune, stats.steps, resumed_from);
    write_text(val_path, val_lines);
    save_checkpoint(model, out_dir / "finetune.ckpt");

    FinetuneOutcome outcome;
    json metrics = {{"step", model.step},
                    {"labeled_fraction", tcfg.labeled_fraction},
                    {"n_labeled", lab.size()},
                    {"n_unlabeled", unlab.size()},
                    {"final_loss", stats.steps.empty() ? json(nullptr) : json(stats.steps.back().loss)},
                    {"validation", last_val}};
    json outputs = {{"checkpoint", (out_dir / "finetune.ckpt").string()},
                    {"curve", (out_dir / "finetune_curve.tsv").string()},
                    {"val_reports", val_path.string()}};
    if (score_test) {
        const auto test_ids = manifest.ids(Split::test);
        if (test_ids.empty()) throw ValidationError("test split is empty");
        const EvaluationResult r = evaluate_volumes(&model, std::nullopt, dir, manifest, test_ids, tcfg.threshold, hdp);
        write_text(out_dir / "test_report.json", r.to_json().dump(2) + "\n");
        outcome.test_dsc = r.mean_dsc;
        metrics["test_mean_dsc"] = r.mean_dsc;
        outputs["test_report"] = (out_dir / "test_report.json").string();
    }
    write_atomic(out_dir / "run_record.json",
                 run_record("finetune", c, {tcfg.seed}, outputs, stats.wall_seconds, metrics, g.deterministic).dump(2) +
                     "\n");
    out << "finetune seed " << tcfg.seed << " finished at step " << model.step << " (" << lab.size() << " labeled, "
        << unlab.size() << " unlabeled volumes)";
    if (score_test) out << ", test DSC " << number(outcome.test_dsc);
    out << '\n';
    return outcome;
}

int cmd_finetune(const Globals& g, const DataArgs& d, const FinetuneArgs& a, std::ostream& out, std::ostream& err) {
    Config c = build_config(g);
    apply_train_args(c, "finetune", a.train);
    if (a.labeled_fraction) set_key(c, "finetune.labeled_fraction", number(*a.labeled_fraction));
    if (a.threshold) set_key(c, "finetune.threshold", number(*a.threshold));
    if (a.encoder_mode) set_key(c, "finetune.encoder_mode", *a.encoder_mode);
    if (a.preset) set_key(c, "model.preset", *a.preset);
    usage_checked([&] { return TrainConfig::from_config(c, Stage::finetune); });
    if (a.train.resume.empty() && a.init.empty() && !a.from_scratch)
        throw UsageError("finetune needs --init <checkpoint>, --from-scratch or --resume <checkpoint>");
    if (!a.init.empty() && a.from_scratch) throw UsageError("--init and --from-scratch are mutually exclusive");
    if (a.seeds && *a.seeds == 0) throw UsageError("--seeds must be >= 1");
    if (a.seeds && *a.seeds > 1 && !a.train.resume.empty()) throw UsageError("--resume cannot be combined with --seeds");

    const fs::path dir = dataset_dir(d);
    const DatasetManifest manifest = load_manifest(dir);
    const fs::path out_dir = g.out_dir;
    ensure_dir(out_dir);
    const std::size_t k = a.seeds.value_or(1);
    const std::uint64_t base_seed = c.get_u64("run.seed");
    std::vector<double> scores;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < k; ++i) {
        const fs::path run_dir = k > 1 ? out_dir / ("seed_" + std::to_string(base_seed + i)) : out_dir;
        scores.push_back(finetune_one(g, c, a, dir, manifest, run_dir, i, a.seeds.has_value(), out, err).test_dsc);
        seeds.push_back(base_seed + i);
    }
    if (a.seeds) {
        double mean = 0.0;
        for (double s : scores) mean += s;
        mean /= static_cast<double>(k);
        double var = 0.0;
        for (double s : scores) var += (s - mean) * (s - mean);
        const double sd = k > 1 ? std::sqrt(var / static_cast<double>(k - 1)) : 0.0;
        json summary = {{"seeds", seeds},
                        {"test_mean_dsc", scores},
                        {"mean", mean},
                        {"std", sd},
                        {"labeled_fraction", c.get_double("finetune.labeled_fraction")},
                        {"init", a.from_scratch ? "scratch" : a.init}};
        write_atomic(out_dir / "summary.json", summary.dump(2) + "\n");
        out << "test DSC over " << k << " seeds: " << number(mean) << " +- " << number(sd) << '\n';
    }
    return 0;
}

// ---- evaluate ----------------------------------------------------------------

int cmd_evaluate(const Globals& g, const DataArgs& d, const EvalArgs& a, std::ostream& out) {
    Config c = build_config(g);
    if (a.hd_percentile) set_key(c, "eval.hd_percentile", number(*a.hd_percentile));
    if (a.threshold) set_key(c, "finetune.threshold", number(*a.threshold));
    const double hdp = c.get_double("eval.hd_percentile");
    if (!(hdp > 0.0 && hdp <= 100.0)) throw UsageError("--hd-percentile must lie in (0, 100]");
    if (a.checkpoint.empty() == a.predictions.empty())
        throw UsageError("evaluate needs exactly one of --checkpoint or --predictions");
    const Split split = usage_checked([&] {
        try {
            return parse_split(a.split);
        } catch (const FormatError& e) {
            throw ValidationError(e.what());
        }
    });
    if (split == Split::train) throw ValidationError("split leakage: refusing to evaluate training volumes");

    const fs::path dir = dataset_dir(d);
    const DatasetManifest manifest = load_manifest(dir);
    const auto ids = manifest.ids(split);
    if (ids.empty()) throw ValidationError("the " + to_string(split) + " split is empty");

    std::optional<ModelState> model;
    if (!a.checkpoint.empty()) {
        model = load_checkpoint(a.checkpoint);
        const auto trained = split_ids(model->meta.count("data.train_ids") ? model->meta.at("data.train_ids") : "");
        for (const auto& id : ids)
            if (trained.count(id))
                throw ValidationError("split leakage: volume '" + id + "' was used in training this checkpoint");
    }
    const EvaluationResult r =
        evaluate_volumes(model ? &*model : nullptr,
                         a.predictions.empty() ? std::nullopt : std::optional<fs::path>(a.predictions), dir, manifest,
                         ids, c.get_double("finetune.threshold"), hdp);

    const fs::path out_dir = g.out_dir;
    ensure_dir(out_dir);
    write_text(out_dir / "eval_report.json", r.to_json().dump(2) + "\n");
    write_text(out_dir / "eval_volumes.tsv", r.to_tsv());
    json outputs = {{"report", (out_dir / "eval_report.json").string()},
                    {"volumes", (out_dir / "eval_volumes.tsv").string()}};
    json metrics = r.to_json()["aggregate"];
    write_atomic(out_dir / "run_record.json",
                 run_record("evaluate", c, {c.get_u64("run.seed")}, outputs, 0.0, metrics, g.deterministic).dump(2) +
                     "\n");
    out << "evaluated " << ids.size() << " " << to_string(split) << " volumes: mean DSC " << number(r.mean_dsc);
    if (r.mean_asd) out << ", ASD " << number(*r.mean_asd);
    if (r.mean_hd) out << ", HD" << (hdp == 100.0 ? "" : number(hdp)) << ' ' << number(*r.mean_hd);
    out << '\n';
    return 0;
}

void add_train_options(CLI::App* cmd, TrainArgs& t) {
    cmd->add_option("--steps", t.steps, "Optimizer steps (overrides epochs)");
    cmd->add_option("--epochs", t.epochs, "Epochs over the training slices");
    cmd->add_option("--batch", t.batch, "Mini-batch size");
    cmd->add_option("--lr", t.lr, "Learning rate");
    cmd->add_option("--schedule", t.schedule, "constant or cosine")->check(CLI::IsMember({"constant", "cosine"}));
    cmd->add_option("--checkpoint-every", t.checkpoint_every, "Save a checkpoint every N steps");
    cmd->add_option("--resume", t.resume, "Continue from a checkpoint's stored step");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dense contrastive pre-training and dual-decoder semi-supervised segmentation", "dclseg"};
    app.fallthrough();
    Globals g;
    DataArgs data;
    app.add_option("--config", g.config_path, "Flat section.key = value config file");
    app.add_option("--seed", g.seed, "Run seed");
    app.add_flag("--deterministic", g.deterministic, "Omit timing so report files are byte-identical");
    app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();
    app.add_flag("--dump-config", g.dump_config, "Print the effective configuration and exit");
    app.add_option("--set", g.sets, "Override a config key (key=value); repeatable");
    app.add_option("--data", data.data, "Dataset directory (default $DCLSEG_DATA_DIR/<name> or data/<name>)");
    app.add_option("--name", data.name, "Dataset name under the data root")->capture_default_str();

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic toy dataset and its splits");
    gen_cmd->add_option("--n", gen.n, "Number of volumes")->capture_default_str();
    gen_cmd->add_option("--dims", gen.dims, "Volume dims DxHxW")->capture_default_str();
    gen_cmd->add_option("--classes", gen.classes, "Foreground classes")->capture_default_str();
    gen_cmd->add_option("--family", gen.family, "ellipses, rectangles or rings")->capture_default_str();
    gen_cmd->add_option("--noise", gen.noise, "Gaussian noise std")->capture_default_str();
    gen_cmd->add_option("--labeled-fraction", gen.labeled_fraction, "Labeled share of training volumes")
        ->capture_default_str();

    PretrainArgs pre;
    auto* pre_cmd = app.add_subcommand("pretrain", "Contrastive pre-training of the encoder");
    add_train_options(pre_cmd, pre.train);
    pre_cmd->add_option("--loss", pre.loss, "local (dense) or global")->check(CLI::IsMember({"local", "global"}));
    pre_cmd->add_option("--preset", pre.preset, "tiny-cnn or resnet50-like");

    FinetuneArgs fine;
    auto* fine_cmd = app.add_subcommand("finetune", "Dual-decoder semi-supervised fine-tuning");
    add_train_options(fine_cmd, fine.train);
    fine_cmd->add_option("--init", fine.init, "Pre-trained checkpoint providing the encoder");
    fine_cmd->add_flag("--from-scratch", fine.from_scratch, "Start from a randomly initialized encoder");
    fine_cmd->add_option("--labeled-fraction", fine.labeled_fraction, "Labeled share L of training volumes");
    fine_cmd->add_option("--threshold", fine.threshold, "Pseudo-label threshold");
    fine_cmd->add_option("--seeds", fine.seeds, "Run K seeds and report test DSC mean and std");
    fine_cmd->add_option("--encoder-mode", fine.encoder_mode, "shared or twin")
        ->check(CLI::IsMember({"shared", "twin"}));
    fine_cmd->add_option("--preset", fine.preset, "tiny-cnn or resnet50-like");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("evaluate", "Score test volumes (DSC, ASD, HD)");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "Fine-tuned checkpoint");
    eval_cmd->add_option("--predictions", ev.predictions, "Directory of <id>.lbl predictions to score instead");
    eval_cmd->add_option("--split", ev.split, "Split to evaluate")->capture_default_str();
    eval_cmd->add_option("--hd-percentile", ev.hd_percentile, "Hausdorff percentile (100 = classic HD)");
    eval_cmd->add_option("--threshold", ev.threshold, "Prediction threshold");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n' << "run 'dclseg --help' for usage\n";
        return 2;
    }

    try {
        if (g.dump_config) {
            Config c = build_config(g);
            if (pre_cmd->parsed()) {
                apply_train_args(c, "pretrain", pre.train);
                if (pre.loss) set_key(c, "loss.kind", *pre.loss);
                if (pre.preset) set_key(c, "model.preset", *pre.preset);
            }
            if (fine_cmd->parsed()) {
                apply_train_args(c, "finetune", fine.train);
                if (fine.labeled_fraction) set_key(c, "finetune.labeled_fraction", number(*fine.labeled_fraction));
                if (fine.threshold) set_key(c, "finetune.threshold", number(*fine.threshold));
                if (fine.encoder_mode) set_key(c, "finetune.encoder_mode", *fine.encoder_mode);
                if (fine.preset) set_key(c, "model.preset", *fine.preset);
            }
            out << c.dump();
            return 0;
        }
        if (gen_cmd->parsed()) return cmd_gen_data(g, data, gen, out);
        if (pre_cmd->parsed()) return cmd_pretrain(g, data, pre, out, err);
        if (fine_cmd->parsed()) return cmd_finetune(g, data, fine, out, err);
        if (eval_cmd->parsed()) return cmd_evaluate(g, data, ev, out);
        err << "usage error: a subcommand is required (gen-data, pretrain, finetune, evaluate)\n";
        return 2;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace dclseg::cli
