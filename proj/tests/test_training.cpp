#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include <unistd.h>

#include "dclseg/checkpoint.hpp"
#include "dclseg/config.hpp"
#include "dclseg/errors.hpp"
#include "dclseg/training.hpp"
#include "test_support.hpp"

using namespace dclseg;

namespace {

ToyConfig toy(std::size_t depth = 4) {
    ToyConfig cfg;
    cfg.depth = depth;
    cfg.seed = 7;
    return cfg;
}

TrainConfig pretrain_cfg(std::size_t steps, double lr = 1e-3, std::size_t batch = 4) {
    TrainConfig c = TrainConfig::from_config(Config::defaults(), Stage::pretrain);
    c.steps = steps;
    c.learning_rate = lr;
    c.batch_size = batch;
    c.seed = 5;
    return c;
}

TrainConfig finetune_cfg(std::size_t steps, double lr = 1e-3, std::size_t batch = 4) {
    TrainConfig c = TrainConfig::from_config(Config::defaults(), Stage::finetune);
    c.steps = steps;
    c.learning_rate = lr;
    c.batch_size = batch;
    c.seed = 6;
    return c;
}

ModelState fresh_model() {
    ModelState m(support::default_model(2));
    m.initialize();
    return m;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("dclseg_train_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

double mean_loss(const TrainStats& s, std::size_t begin, std::size_t end) {
    double sum = 0;
    for (std::size_t i = begin; i < end; ++i) sum += s.steps[i].loss;
    return sum / static_cast<double>(end - begin);
}

}  // namespace

TEST(Adam, FirstStepOnQuadratic) {
    nn::Parameter w("w", {1});
    w.value[0] = 1.0;
    Adam adam;
    w.grad[0] = w.value[0];
    adam.step({&w}, 0.1);
    // m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
    EXPECT_NEAR(w.value[0], 1.0 - 0.1 * 1.0 / (1.0 + 1e-8), 1e-15);
    EXPECT_NEAR(w.value[0], 0.9, 1e-6);
    // Second step by hand.
    const double g2 = w.value[0];
    w.grad[0] = g2;
    adam.step({&w}, 0.1);
    const double m = 0.9 * 0.1 * 1.0 + 0.1 * g2;
    const double v = 0.999 * 0.001 * 1.0 + 0.001 * g2 * g2;
    const double expect = 0.9 - 1e-9 * 0 - 0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
    EXPECT_NEAR(w.value[0], expect, 1e-8);
    EXPECT_EQ(adam.slots().at("w").t, 2u);
}

TEST(Config, DefaultsParseAndOverride) {
    Config c = Config::defaults();
    EXPECT_EQ(c.get("model.preset"), "tiny-cnn");
    EXPECT_EQ(c.get_double("loss.temperature"), 0.1);
    EXPECT_EQ(c.get_double("pretrain.learning_rate"), 1e-5);
    c.load_text("# comment\nloss.temperature = 0.2\n\npretrain.batch_size=3  # trailing\n");
    EXPECT_EQ(c.get_double("loss.temperature"), 0.2);
    EXPECT_EQ(c.get_size("pretrain.batch_size"), 3u);
    EXPECT_FALSE(c.get_optional_size("loss.negative_subsample").has_value());
    EXPECT_THROW(c.load_text("nope.key = 1\n"), ValidationError);
    EXPECT_THROW(c.load_text("just text\n"), ValidationError);
    EXPECT_THROW(c.get("missing.key"), ValidationError);
    c.set("loss.symmetric", "maybe");
    EXPECT_THROW(c.get_bool("loss.symmetric"), ValidationError);
    Config d = Config::defaults();
    d.set("loss.temperature", "0.25");
    d.set("model.preset", "resnet50-like");
    Config e = Config::defaults();
    EXPECT_NE(d, e);
    e.load_text(d.dump());
    EXPECT_EQ(d, e);
}

TEST(Config, ModelConfigResolvesAuto) {
    const ModelConfig tiny = support::default_model(2);
    EXPECT_EQ(tiny.encoder.stride(), 8u);
    EXPECT_EQ(tiny.decoder1.stages, 3u);
    EXPECT_EQ(tiny.decoder1.channels, (std::vector<std::size_t>{32, 16, 8}));
    EXPECT_NE(tiny.decoder1.mode, tiny.decoder2.mode);
    EXPECT_NE(tiny.decoder1.init_seed, tiny.decoder2.init_seed);
    Config c = Config::defaults();
    c.set("model.preset", "resnet50-like");
    const ModelConfig res = ModelConfig::from_config(c, 2);
    EXPECT_EQ(res.decoder1.stages, 4u);
    c.set("decoder.mode2", "transposed-conv");
    EXPECT_THROW(ModelConfig::from_config(c, 2).validate(), ValidationError);
}

TEST(TrainConfig, Validation) {
    TrainConfig c = pretrain_cfg(1);
    c.batch_size = 1;
    EXPECT_THROW(c.validate(), ValidationError);
    c = finetune_cfg(1);
    c.labeled_fraction = 0;
    EXPECT_THROW(c.validate(), ValidationError);
    c = finetune_cfg(1);
    c.learning_rate = -1;
    EXPECT_THROW(c.validate(), ValidationError);
    c = pretrain_cfg(0);
    c.epochs = 2;
    c.batch_size = 4;
    EXPECT_EQ(c.total_steps(10), 6u);
    c.schedule = Schedule::cosine;
    EXPECT_DOUBLE_EQ(c.lr_at(0, 10), c.learning_rate);
    EXPECT_NEAR(c.lr_at(5, 10), 0.5 * c.learning_rate, 1e-15);
    EXPECT_NEAR(c.lr_at(10, 10), 0.0, 1e-15);
}

TEST(Pretrain, ZeroLearningRateLeavesParameters) {
    const SliceDataset ds = support::toy_slices(toy(), 0, 2);
    ModelState m = fresh_model();
    const auto before = support::snapshot(m.parameters());
    const TrainStats s = pretrain(ds, m, pretrain_cfg(5, 0.0));
    EXPECT_EQ(s.steps.size(), 5u);
    EXPECT_EQ(support::snapshot(m.parameters()), before);
}

TEST(Pretrain, LossDecreasesAndDecodersUntouched) {
    const SliceDataset ds = support::toy_slices(toy(8), 0, 6);
    ModelState m = fresh_model();
    nn::ParameterList dec;
    m.decoder1.collect(dec);
    m.decoder2.collect(dec);
    m.global_head.collect(dec);
    const auto dec_before = support::snapshot(dec);
    const auto enc_before = support::snapshot(m.encoder_parameters());
    const TrainStats s = pretrain(ds, m, pretrain_cfg(200, 1e-3, 8));
    ASSERT_EQ(s.steps.size(), 200u);
    EXPECT_LT(mean_loss(s, 180, 200), mean_loss(s, 0, 20));
    EXPECT_EQ(support::snapshot(dec), dec_before);
    EXPECT_NE(support::snapshot(m.encoder_parameters()), enc_before);
    EXPECT_EQ(m.step, 200u);
}

TEST(Pretrain, SameSeedSameTrajectory) {
    const SliceDataset ds = support::toy_slices(toy(), 0, 3);
    ModelState a = fresh_model(), b = fresh_model();
    const TrainStats sa = pretrain(ds, a, pretrain_cfg(50));
    const TrainStats sb = pretrain(ds, b, pretrain_cfg(50));
    ASSERT_EQ(sa.steps.size(), 50u);
    for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(sa.steps[i].loss, sb.steps[i].loss) << i;
    EXPECT_EQ(serialize_model(a), serialize_model(b));
}

TEST(Pretrain, GlobalLossAndSymmetricModesTrain) {
    const SliceDataset ds = support::toy_slices(toy(), 0, 2);
    for (LossKind kind : {LossKind::global, LossKind::local}) {
        ModelState m = fresh_model();
        TrainConfig c = pretrain_cfg(3);
        c.loss_kind = kind;
        c.loss.symmetric = true;
        c.loss.negative_subsample = 5;
        const TrainStats s = pretrain(ds, m, c);
        ASSERT_EQ(s.steps.size(), 3u);
        for (const auto& r : s.steps) EXPECT_TRUE(std::isfinite(r.loss) && r.loss > 0);
    }
}

TEST(Pretrain, RefusesExcludedVolumes) {
    const SliceDataset ds = support::toy_slices(toy(), 0, 2);
    ModelState m = fresh_model();
    TrainConfig c = pretrain_cfg(2);
    c.excluded_ids = {"toy1"};
    EXPECT_THROW(pretrain(ds, m, c), ValidationError);
}

TEST(Pretrain, ResumeMatchesUninterruptedRun) {
    const SliceDataset ds = support::toy_slices(toy(), 0, 3);
    ModelState full = fresh_model();
    const TrainStats sf = pretrain(ds, full, pretrain_cfg(30));

    ModelState part = fresh_model();
    TrainHooks stop;
    stop.stop_after = 12;
    pretrain(ds, part, pretrain_cfg(30), stop);
    EXPECT_EQ(part.step, 12u);
    ModelState resumed = deserialize_model(serialize_model(part));
    const TrainStats sr = pretrain(ds, resumed, pretrain_cfg(30));
    ASSERT_EQ(sr.steps.size(), 18u);
    EXPECT_EQ(sr.steps.back().loss, sf.steps.back().loss);
    EXPECT_EQ(serialize_model(resumed), serialize_model(full));
}

TEST(Finetune, ProjectionUntouchedAndDecodersTrained) {
    const SliceDataset lab = support::toy_slices(toy(), 0, 2);
    const SliceDataset unl = support::toy_slices(toy(), 2, 1);
    ModelState m = fresh_model();
    nn::ParameterList proj;
    m.projection.collect(proj);
    m.global_head.collect(proj);
    nn::ParameterList dec;
    m.decoder1.collect(dec);
    m.decoder2.collect(dec);
    const auto proj_before = support::snapshot(proj);
    const auto dec_before = support::snapshot(dec);
    const TrainStats s = finetune(lab, unl, m, finetune_cfg(3));
    ASSERT_EQ(s.steps.size(), 3u);
    EXPECT_EQ(support::snapshot(proj), proj_before);
    EXPECT_NE(support::snapshot(dec), dec_before);
    for (const auto& r : s.steps) EXPECT_NEAR(r.loss, r.loss_labeled + r.loss_unlabeled, 1e-12);
    for (const auto* p : proj) EXPECT_EQ(m.optimizer.slots().count(p->name), 0u);
}

TEST(Finetune, EmptySets) {
    const SliceDataset lab = support::toy_slices(toy(), 0, 1);
    ModelState m = fresh_model();
    EXPECT_THROW(finetune(SliceDataset{}, lab, m, finetune_cfg(1)), ValidationError);
    const TrainStats s = finetune(lab, SliceDataset{}, m, finetune_cfg(2));
    ASSERT_FALSE(s.warnings.empty());
    for (const auto& r : s.steps) EXPECT_EQ(r.loss_unlabeled, 0.0);
}

TEST(Finetune, TwinEncodersAndResume) {
    const SliceDataset lab = support::toy_slices(toy(), 0, 2);
    const SliceDataset unl = support::toy_slices(toy(), 2, 1);
    ModelConfig cfg = support::default_model(2);
    cfg.encoder_mode = EncoderMode::twin;
    ModelState full(cfg);
    full.initialize();
    ASSERT_TRUE(full.encoder2.has_value());
    const TrainStats sf = finetune(lab, unl, full, finetune_cfg(8));
    ModelState part(cfg);
    part.initialize();
    TrainHooks stop;
    stop.stop_after = 3;
    finetune(lab, unl, part, finetune_cfg(8), stop);
    ModelState resumed = deserialize_model(serialize_model(part));
    const TrainStats sr = finetune(lab, unl, resumed, finetune_cfg(8));
    EXPECT_EQ(sr.steps.back().loss, sf.steps.back().loss);
    EXPECT_EQ(serialize_model(resumed), serialize_model(full));
}

TEST(Finetune, EncoderTransferCopiesWeights) {
    ModelState pre = fresh_model();
    Rng rng(3);
    for (auto* p : pre.encoder_parameters()) support::fill_normal(p->value, rng);
    ModelConfig twin = support::default_model(2);
    twin.encoder_mode = EncoderMode::twin;
    ModelState m(twin);
    m.initialize();
    m.load_encoder_from(pre);
    const auto a = pre.encoder_parameters();
    nn::ParameterList b, c;
    m.encoder.collect(b);
    m.encoder2->collect(c);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i]->value, b[i]->value);
        EXPECT_EQ(a[i]->value, c[i]->value);
    }
}

TEST(Inference, PredictionShapeAndRange) {
    const SliceDataset ds = support::toy_slices(toy(), 0, 1);
    ModelState m = fresh_model();
    const LabelMask p = predict_slice(m, ds.images[0]);
    EXPECT_EQ(p.height(), 32u);
    EXPECT_EQ(p.num_classes(), 2u);
    for (auto v : p.labels()) EXPECT_LE(v, 2);
    const auto vol = generate_toy_volume(toy(), 0);
    const LabelMask pv = predict_volume(m, vol.volume);
    EXPECT_EQ(pv.depth(), 4u);
    EXPECT_TRUE(pv.volumetric());
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    const fs::path dir = scratch("ckpt");
    const SliceDataset ds = support::toy_slices(toy(), 0, 2);
    ModelState m = fresh_model();
    pretrain(ds, m, pretrain_cfg(2));
    m.meta["note"] = "hello";
    save_checkpoint(m, dir / "a.ckpt");
    const ModelState loaded = load_checkpoint(dir / "a.ckpt");
    save_checkpoint(loaded, dir / "b.ckpt");
    EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
    EXPECT_EQ(loaded.step, 2u);
    EXPECT_EQ(loaded.meta.at("note"), "hello");
    EXPECT_EQ(loaded.rng, m.rng);
    fs::remove_all(dir);
}

TEST(Checkpoint, TruncationIsAChecksumError) {
    ModelState m = fresh_model();
    const std::string bytes = serialize_model(m);
    for (std::size_t len : {std::size_t{0}, std::size_t{5}, std::size_t{8}, std::size_t{15}, std::size_t{20},
                            std::size_t{100}, bytes.size() / 2, bytes.size() - 5, bytes.size() - 1})
        EXPECT_THROW(deserialize_model(bytes.substr(0, len)), ChecksumError) << len;
    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    EXPECT_THROW(deserialize_model(flipped), ChecksumError);
}

TEST(Checkpoint, VersionAndMagicMismatchAreFormatErrors) {
    ModelState m = fresh_model();
    std::string bytes = serialize_model(m);
    std::string ver = bytes;
    ver[8] = 2;
    try {
        deserialize_model(ver);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
    }
    std::string magic = bytes;
    magic[0] = 'X';
    EXPECT_THROW(deserialize_model(magic), FormatError);
    EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.ckpt"), IoError);
}
