#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dclseg/backbone.hpp"
#include "dclseg/config.hpp"
#include "dclseg/contrastive.hpp"
#include "dclseg/data_io.hpp"
#include "dclseg/dual_decoder.hpp"
#include "dclseg/metrics.hpp"
#include "dclseg/rng.hpp"
#include "dclseg/views.hpp"

namespace dclseg {

enum class EncoderMode { shared, twin };
enum class LossKind { local, global };
enum class Stage { pretrain, finetune };
enum class Schedule { constant, cosine };

std::string to_string(EncoderMode mode);
std::string to_string(LossKind kind);
std::string to_string(Stage stage);
std::string to_string(Schedule schedule);

struct ModelConfig {
    EncoderConfig encoder;
    std::size_t embed_dim = 32;
    std::size_t global_hidden = 64;
    std::uint64_t init_seed = 1;
    DecoderConfig decoder1;
    DecoderConfig decoder2;
    EncoderMode encoder_mode = EncoderMode::shared;

    // Resolves "auto" stride/stage/channel settings from the preset.
    static ModelConfig from_config(const Config& cfg, std::size_t num_classes);
    void validate() const;
};

// ---- optimizer -------------------------------------------------------------

struct AdamSlot {
    Tensor m;
    Tensor v;
    std::uint64_t t = 0;
    friend bool operator==(const AdamSlot&, const AdamSlot&) = default;
};

/// Adaptive-moment optimizer with bias correction. Moments and step counts
/// are kept per parameter name.
class Adam {
public:
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void step(const nn::ParameterList& params, double lr);
    void reset() { slots_.clear(); }

    std::map<std::string, AdamSlot>& slots() { return slots_; }
    const std::map<std::string, AdamSlot>& slots() const { return slots_; }

private:
    std::map<std::string, AdamSlot> slots_;
};

// ---- model -----------------------------------------------------------------

/// Every trainable part of the pipeline plus optimizer and RNG state.
/// Parameter pointers are fetched per call so copies stay independent.
class ModelState {
public:
    ModelState() = default;
    explicit ModelState(const ModelConfig& cfg);

    // Seeds encoder and heads from cfg.init_seed and decoders from their own seeds.
    void initialize();

    const ModelConfig& config() const noexcept { return cfg_; }

    Encoder encoder;
    std::optional<Encoder> encoder2;  // twin mode only
    DenseProjectionHead projection;
    GlobalProjectionHead global_head;
    Decoder decoder1;
    Decoder decoder2;
    Adam optimizer;
    Rng rng;
    std::uint64_t step = 0;
    // Config snapshot and run metadata carried through checkpoints.
    std::map<std::string, std::string> meta;

    nn::ParameterList parameters();
    nn::ParameterList encoder_parameters();
    nn::ParameterList pretrain_parameters(LossKind kind);
    nn::ParameterList finetune_parameters();

    // Copies encoder weights (by name) from a pre-trained model. The twin
    // encoder, when present, receives the same weights.
    void load_encoder_from(ModelState& source);

    Encoder& encoder_for_decoder(int which) { return which == 2 && encoder2 ? *encoder2 : encoder; }

private:
    ModelConfig cfg_;
};

// ---- training --------------------------------------------------------------

struct TrainConfig {
    Stage stage = Stage::pretrain;
    double learning_rate = 1e-5;
    std::size_t batch_size = 8;
    std::size_t epochs = 50;
    // When > 0, overrides epochs.
    std::size_t steps = 0;
    Schedule schedule = Schedule::constant;
    std::size_t checkpoint_every = 0;
    std::uint64_t seed = 0;
    double labeled_fraction = 1.0;
    double threshold = 0.5;
    LossKind loss_kind = LossKind::local;
    LossConfig loss;
    AugConfig aug;
    // Volume ids that must never enter a batch (the test split).
    std::set<std::string> excluded_ids;

    static TrainConfig from_config(const Config& cfg, Stage stage);
    void validate() const;
    // Total optimizer steps for a dataset of n slices.
    std::size_t total_steps(std::size_t n_slices) const;
    double lr_at(std::size_t step_index, std::size_t total) const;
};

struct StepRecord {
    std::uint64_t step = 0;
    double loss = 0.0;
    double loss_labeled = 0.0;
    double loss_unlabeled = 0.0;
    double learning_rate = 0.0;
};

struct TrainStats {
    std::vector<StepRecord> steps;
    std::vector<double> epoch_means;
    double wall_seconds = 0.0;
    std::optional<SegReport> final_metrics;
    std::vector<std::string> warnings;
};

struct TrainHooks {
    // Called after each completed epoch (1-based).
    std::function<void(std::size_t epoch, ModelState&)> on_epoch_end;
    std::function<void(ModelState&)> on_checkpoint;
    // Stop after this many steps in this call even if more remain (for
    // interrupt/resume tests); the schedule still uses the full length.
    std::optional<std::size_t> stop_after;
};

/// Minimizes the contrastive loss over seeded view pairs. Updates encoder and
/// the active projection head only. Resumes from model.step.
TrainStats pretrain(const SliceDataset& dataset, ModelState& model, const TrainConfig& cfg,
                    const TrainHooks& hooks = {});

/// Each step draws a labeled and an unlabeled mini-batch, sums the two
/// cross-consistency branches and updates the encoder(s) and both decoders.
TrainStats finetune(const SliceDataset& labeled, const SliceDataset& unlabeled, ModelState& model,
                    const TrainConfig& cfg, const TrainHooks& hooks = {});

// ---- inference -------------------------------------------------------------

/// Averages both decoders' probabilities; a pixel takes the most probable
/// class if it reaches the threshold, else background.
LabelMask predict_slice(ModelState& model, const SliceImage& normalized, double threshold = 0.5);
LabelMask predict_volume(ModelState& model, const Volume& volume, double threshold = 0.5);

}  // namespace dclseg
