#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "dclseg/cli.hpp"
#include "dclseg/data_io.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "dclseg");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = dclseg::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        root = fs::temp_directory_path() /
               ("dclseg_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "_" +
                std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root);
        data = (root / "data").string();
    }
    void TearDown() override { fs::remove_all(root); }

    Result gen(std::vector<std::string> extra = {}) {
        std::vector<std::string> args{"--seed", "7", "--data", data};
        args.insert(args.end(), extra.begin(), extra.end());
        args.insert(args.end(), {"gen-data", "--n", "10", "--dims", "2x16x16"});
        return run(args);
    }

    fs::path root;
    std::string data;
};

}  // namespace

TEST_F(CliTest, GenDataWritesManifest) {
    const Result r = gen();
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("10 volumes"), std::string::npos) << r.out;
    const auto m = dclseg::read_manifest(fs::path(data) / "manifest.tsv");
    EXPECT_EQ(m.entries.size(), 10u);
    const std::string first = slurp(fs::path(data) / "manifest.tsv");
    const Result again = gen();
    EXPECT_EQ(again.code, 0);
    EXPECT_EQ(again.out, r.out);
    EXPECT_EQ(slurp(fs::path(data) / "manifest.tsv"), first);
}

TEST_F(CliTest, UsageErrorsExitTwo) {
    EXPECT_EQ(run({"--data", data, "gen-data", "--dims", "0x0x0"}).code, 2);
    EXPECT_EQ(run({"--data", data, "gen-data", "--dims", "banana"}).code, 2);
    EXPECT_EQ(run({"--no-such-flag"}).code, 2);
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"--set", "bogus.key=1", "--data", data, "gen-data"}).code, 2);
    EXPECT_EQ(run({"--data", data, "finetune"}).code, 2);
    EXPECT_EQ(run({"--data", data, "evaluate"}).code, 2);
    EXPECT_EQ(run({"--data", data, "pretrain", "--loss", "sideways"}).code, 2);
}

TEST_F(CliTest, RuntimeErrorsExitOne) {
    EXPECT_EQ(run({"--data", (root / "missing").string(), "pretrain", "--steps", "1"}).code, 1);
    ASSERT_EQ(gen().code, 0);
    EXPECT_EQ(run({"--data", data, "evaluate", "--predictions", data, "--split", "train"}).code, 1);
    EXPECT_EQ(run({"--data", data, "--out-dir", (root / "o").string(), "finetune", "--from-scratch",
                   "--labeled-fraction", "0.01", "--steps", "1"})
                  .code,
              1);
}

TEST_F(CliTest, DumpConfigAppliesPrecedence) {
    const fs::path cfg = root / "c.cfg";
    std::ofstream(cfg) << "loss.temperature = 0.3\npretrain.batch_size = 5\nrun.seed = 3\n";
    const Result r = run({"--config", cfg.string(), "--set", "pretrain.batch_size=6", "--seed", "9", "--dump-config",
                          "pretrain", "--batch", "7"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("loss.temperature = 0.3"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("pretrain.batch_size = 7"), std::string::npos);
    EXPECT_NE(r.out.find("run.seed = 9"), std::string::npos);
    EXPECT_NE(r.out.find("aug.flip_p"), std::string::npos);
}

TEST_F(CliTest, EvaluateGroundTruthFixture) {
    ASSERT_EQ(gen().code, 0);
    const auto m = dclseg::read_manifest(fs::path(data) / "manifest.tsv");
    const fs::path preds = root / "preds";
    fs::create_directories(preds);
    for (const auto& e : m.entries) fs::copy_file(fs::path(data) / *e.label, preds / (e.id + ".lbl"));
    const fs::path out = root / "eval";
    const Result r = run({"--data", data, "--out-dir", out.string(), "--deterministic", "evaluate", "--predictions",
                          preds.string(), "--hd-percentile", "95"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto report = nlohmann::json::parse(slurp(out / "eval_report.json"));
    EXPECT_EQ(report.at("aggregate").at("mean_dsc").get<double>(), 1.0);
    for (const auto& v : report.at("volumes"))
        for (const auto& c : v.at("classes")) EXPECT_EQ(c.at("dsc").get<double>(), 1.0);
    EXPECT_EQ(report.at("hd_percentile").get<double>(), 95.0);
    const std::string tsv = slurp(out / "eval_volumes.tsv");
    EXPECT_NE(tsv.find("\t95\n"), std::string::npos) << tsv;
    const auto record = nlohmann::json::parse(slurp(out / "run_record.json"));
    EXPECT_TRUE(record.at("timing").is_null());
    EXPECT_EQ(record.at("stage").get<std::string>(), "evaluate");
}

TEST_F(CliTest, EmptyTestSplitExitsOne) {
    ASSERT_EQ(gen({"--set", "data.test_fraction=0"}).code, 0);
    const Result r = run({"--data", data, "--out-dir", (root / "o").string(), "evaluate", "--predictions", data});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("empty"), std::string::npos) << r.err;
}

TEST_F(CliTest, PretrainFinetuneEvaluatePipeline) {
    ASSERT_EQ(gen().code, 0);
    const fs::path pre = root / "pre", fine = root / "fine", ev = root / "ev";
    Result r = run({"--seed", "1", "--data", data, "--out-dir", pre.string(), "--deterministic", "pretrain", "--steps",
                    "4", "--batch", "4", "--lr", "1e-3", "--checkpoint-every", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(pre / "pretrain.ckpt"));
    EXPECT_TRUE(fs::exists(pre / "checkpoints" / "pretrain_step2.ckpt"));
    std::istringstream curve(slurp(pre / "pretrain_curve.tsv"));
    std::string line;
    std::size_t rows = 0;
    while (std::getline(curve, line)) ++rows;
    EXPECT_EQ(rows, 5u);

    r = run({"--seed", "1", "--data", data, "--out-dir", fine.string(), "--deterministic", "finetune", "--init",
             (pre / "pretrain.ckpt").string(), "--labeled-fraction", "0.5", "--steps", "3", "--batch", "2", "--lr",
             "1e-3"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto record = nlohmann::json::parse(slurp(fine / "run_record.json"));
    EXPECT_EQ(record.at("config").at("finetune.labeled_fraction").get<std::string>(), "0.5");
    EXPECT_TRUE(fs::exists(fine / "val_reports.jsonl"));

    r = run({"--data", data, "--out-dir", ev.string(), "evaluate", "--checkpoint", (fine / "finetune.ckpt").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    r = run({"--data", data, "--out-dir", ev.string(), "evaluate", "--checkpoint", (fine / "finetune.ckpt").string(),
             "--split", "val"});
    ASSERT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("leakage"), std::string::npos) << r.err;
}
