#include "dclseg/training.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "dclseg/errors.hpp"

namespace dclseg {

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::string strip_prefix(const std::string& name) { return name.substr(name.find('.')); }

// Up to k distinct indices out of n, by partial Fisher-Yates.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    k = std::min(k, n);
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.uniform_index(n - i)]);
    idx.resize(k);
    return idx;
}

void check_uniform_size(const SliceDataset& ds, const char* what) {
    for (const auto& img : ds.images)
        if (img.height != ds.images.front().height || img.width != ds.images.front().width)
            throw ValidationError(std::string(what) + " slices differ in size; batching needs one slice size");
}

void check_leakage(const SliceDataset& ds, const TrainConfig& cfg) {
    for (const auto& id : ds.volume_ids)
        if (cfg.excluded_ids.count(id))
            throw ValidationError("split leakage: test volume '" + id + "' reached a training batch");
}

Tensor stack_images(const std::vector<const SliceImage*>& images) {
    const std::size_t h = images.front()->height, w = images.front()->width;
    Tensor x({images.size(), 1, h, w});
    for (std::size_t i = 0; i < images.size(); ++i)
        std::copy(images[i]->pixels.begin(), images[i]->pixels.end(), x.data() + i * h * w);
    return x;
}

void add_feature_grad(FeatureGrad& into, const FeatureGrad& g) {
    into.values += g.values;
    for (std::size_t i = 0; i < g.skips.size(); ++i) {
        if (g.skips[i].empty()) continue;
        if (into.skips[i].empty()) into.skips[i] = g.skips[i];
        else into.skips[i] += g.skips[i];
    }
}

Tensor sigmoid_backward(const Tensor& grad_p, const Tensor& p) {
    Tensor out(p.shape());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = grad_p[i] * p[i] * (1.0 - p[i]);
    return out;
}

// Scatters pooled-row gradients back onto the 2B-image projection batch.
// Query views occupy images [0, B), key views [B, 2B); swapped flips the roles.
void scatter_rows(const PairSet& pairs, const Tensor& grad, std::size_t b, bool swapped, double scale, Tensor& out) {
    const std::size_t dim = pairs.dim();
    const bool per_position = out.rank() == 4;
    const std::size_t plane = per_position ? out.dim(2) * out.dim(3) : 1;
    for (std::size_t r = 0; r < pairs.refs.size(); ++r) {
        const VectorRef& ref = pairs.refs[r];
        const bool key = ref.key_view != swapped;
        const std::size_t n = key ? b + ref.entry : ref.entry;
        for (std::size_t c = 0; c < dim; ++c)
            out[(n * dim + c) * plane + ref.position] += scale * grad[r * dim + c];
    }
}

struct StepClock {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

void finish_epochs(TrainStats& stats, std::size_t steps_per_epoch, std::size_t done_in_call, ModelState& model,
                   const TrainHooks& hooks) {
    if (model.step % steps_per_epoch != 0 || done_in_call == 0) return;
    const std::size_t count = std::min(steps_per_epoch, stats.steps.size());
    double sum = 0.0;
    for (std::size_t i = stats.steps.size() - count; i < stats.steps.size(); ++i) sum += stats.steps[i].loss;
    stats.epoch_means.push_back(sum / static_cast<double>(count));
    if (hooks.on_epoch_end) hooks.on_epoch_end(model.step / steps_per_epoch, model);
}

}  // namespace

std::string to_string(EncoderMode mode) { return mode == EncoderMode::shared ? "shared" : "twin"; }
std::string to_string(LossKind kind) { return kind == LossKind::local ? "local" : "global"; }
std::string to_string(Stage stage) { return stage == Stage::pretrain ? "pretrain" : "finetune"; }
std::string to_string(Schedule schedule) { return schedule == Schedule::constant ? "constant" : "cosine"; }

ModelConfig ModelConfig::from_config(const Config& c, std::size_t num_classes) {
    ModelConfig m;
    const EncoderPreset preset = parse_encoder_preset(c.get("model.preset"));
    m.encoder = preset == EncoderPreset::tiny_cnn ? EncoderConfig::tiny_cnn() : EncoderConfig::resnet50_like();
    if (c.get("model.feature_stride") != "auto" && c.get_size("model.feature_stride") != m.encoder.stride())
        throw ValidationError("model.feature_stride " + c.get("model.feature_stride") + " does not match the " +
                              c.get("model.preset") + " stride " + std::to_string(m.encoder.stride()));
    m.embed_dim = c.get_size("model.embed_dim");
    m.global_hidden = c.get_size("model.global_hidden");
    m.init_seed = c.get_u64("model.seed");

    DecoderConfig d;
    d.num_classes = num_classes;
    d.stages = c.get("decoder.stages") == "auto" ? m.encoder.downsampling_stages() : c.get_size("decoder.stages");
    if (c.get("decoder.channels") == "auto") {
        const auto skips = m.encoder.skip_channels();
        d.channels.clear();
        for (std::size_t j = 0; j < d.stages && j < skips.size(); ++j)
            d.channels.push_back(std::max<std::size_t>(8, skips[skips.size() - 1 - j] / 2));
    } else {
        d.channels = c.get_size_list("decoder.channels");
    }
    m.decoder1 = d;
    m.decoder1.mode = parse_upscale_mode(c.get("decoder.mode1"));
    m.decoder1.init_seed = c.get_u64("decoder.seed1");
    m.decoder2 = d;
    m.decoder2.mode = parse_upscale_mode(c.get("decoder.mode2"));
    m.decoder2.init_seed = c.get_u64("decoder.seed2");

    const std::string& mode = c.get("finetune.encoder_mode");
    if (mode == "shared") m.encoder_mode = EncoderMode::shared;
    else if (mode == "twin") m.encoder_mode = EncoderMode::twin;
    else throw ValidationError("finetune.encoder_mode must be shared or twin");
    m.validate();
    return m;
}

void ModelConfig::validate() const {
    encoder.validate();
    decoder1.validate();
    decoder2.validate();
    if (embed_dim == 0) throw ValidationError("model.embed_dim must be >= 1");
    if (decoder1.stages != encoder.downsampling_stages() || decoder2.stages != encoder.downsampling_stages())
        throw ValidationError("decoder stages must equal log2 of the encoder stride (" +
                              std::to_string(encoder.downsampling_stages()) + ")");
    if (decoder1.mode == decoder2.mode) throw ValidationError("the two decoders need distinct upscale modes");
    if (decoder1.init_seed == decoder2.init_seed) throw ValidationError("the two decoders need distinct init seeds");
    if (decoder1.num_classes != decoder2.num_classes) throw ValidationError("decoders disagree on class count");
}

void Adam::step(const nn::ParameterList& params, double lr) {
    for (nn::Parameter* p : params) {
        AdamSlot& s = slots_[p->name];
        if (s.m.empty()) {
            s.m = Tensor(p->value.shape());
            s.v = Tensor(p->value.shape());
        }
        ++s.t;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(s.t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(s.t));
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad[i];
            s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * g;
            s.v[i] = beta2 * s.v[i] + (1.0 - beta2) * g * g;
            p->value[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps);
        }
    }
}

ModelState::ModelState(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    encoder = Encoder(cfg_.encoder, "encoder");
    if (cfg_.encoder_mode == EncoderMode::twin) encoder2 = Encoder(cfg_.encoder, "encoder2");
    projection = DenseProjectionHead(cfg_.encoder.feature_channels(), cfg_.embed_dim, "projection");
    global_head = GlobalProjectionHead(cfg_.encoder.feature_channels(), cfg_.global_hidden, cfg_.embed_dim,
                                       "global_head");
    decoder1 = Decoder(cfg_.decoder1, cfg_.encoder, "decoder1");
    decoder2 = Decoder(cfg_.decoder2, cfg_.encoder, "decoder2");
}

void ModelState::initialize() {
    Rng rng(cfg_.init_seed);
    encoder.init(rng);
    if (encoder2) {
        Rng twin(cfg_.init_seed);
        encoder2->init(twin);
    }
    projection.init(rng);
    global_head.init(rng);
    decoder1.init();
    decoder2.init();
    optimizer.reset();
    this->rng = Rng(cfg_.init_seed);
    step = 0;
}

nn::ParameterList ModelState::encoder_parameters() {
    nn::ParameterList out;
    encoder.collect(out);
    if (encoder2) encoder2->collect(out);
    return out;
}

nn::ParameterList ModelState::parameters() {
    nn::ParameterList out = encoder_parameters();
    projection.collect(out);
    global_head.collect(out);
    decoder1.collect(out);
    decoder2.collect(out);
    return out;
}

nn::ParameterList ModelState::pretrain_parameters(LossKind kind) {
    nn::ParameterList out;
    encoder.collect(out);
    if (kind == LossKind::local) projection.collect(out);
    else global_head.collect(out);
    return out;
}

nn::ParameterList ModelState::finetune_parameters() {
    nn::ParameterList out = encoder_parameters();
    decoder1.collect(out);
    decoder2.collect(out);
    return out;
}

void ModelState::load_encoder_from(ModelState& source) {
    std::map<std::string, const nn::Parameter*> by_suffix;
    nn::ParameterList src;
    source.encoder.collect(src);
    for (const nn::Parameter* p : src) by_suffix[strip_prefix(p->name)] = p;
    for (nn::Parameter* p : encoder_parameters()) {
        const auto it = by_suffix.find(strip_prefix(p->name));
        if (it == by_suffix.end() || !it->second->value.same_shape(p->value))
            throw ValidationError("pre-trained encoder does not match this model at " + p->name);
        p->value = it->second->value;
    }
}

TrainConfig TrainConfig::from_config(const Config& c, Stage stage) {
    TrainConfig t;
    t.stage = stage;
    const std::string s = to_string(stage) + ".";
    t.learning_rate = c.get_double(s + "learning_rate");
    t.batch_size = c.get_size(s + "batch_size");
    t.epochs = c.get_size(s + "epochs");
    t.steps = c.get_size(s + "steps");
    const std::string& schedule = c.get(s + "schedule");
    if (schedule == "constant") t.schedule = Schedule::constant;
    else if (schedule == "cosine") t.schedule = Schedule::cosine;
    else throw ValidationError(s + "schedule must be constant or cosine");
    t.checkpoint_every = c.get_size(s + "checkpoint_every");
    t.seed = c.get_u64("run.seed");
    t.labeled_fraction = c.get_double("finetune.labeled_fraction");
    t.threshold = c.get_double("finetune.threshold");
    const std::string& kind = c.get("loss.kind");
    if (kind == "local") t.loss_kind = LossKind::local;
    else if (kind == "global") t.loss_kind = LossKind::global;
    else throw ValidationError("loss.kind must be local or global");
    t.loss.temperature = c.get_double("loss.temperature");
    t.loss.negative_subsample = c.get_optional_size("loss.negative_subsample");
    t.loss.symmetric = c.get_bool("loss.symmetric");
    t.aug.flip_p = c.get_double("aug.flip_p");
    t.aug.rotate_p = c.get_double("aug.rotate_p");
    t.aug.max_translate_cells = c.get_size("aug.max_translate_cells");
    t.aug.crop_scale_min = c.get_double("aug.crop_scale_min");
    t.aug.intensity_jitter = c.get_double("aug.intensity_jitter");
    t.aug.noise_std = c.get_double("aug.noise_std");
    t.validate();
    return t;
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ValidationError("learning rate must be finite and >= 0");
    if (batch_size == 0) throw ValidationError("batch_size must be >= 1");
    if (stage == Stage::pretrain && batch_size < 2)
        throw ValidationError("pretrain batch_size must be >= 2: a single image has no negative source");
    if (steps == 0 && epochs == 0) throw ValidationError("need epochs > 0 or steps > 0");
    if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
        throw ValidationError("labeled fraction must lie in (0, 1]");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("threshold must lie in (0, 1)");
    loss.validate();
}

std::size_t TrainConfig::total_steps(std::size_t n_slices) const {
    if (steps > 0) return steps;
    return epochs * ((n_slices + batch_size - 1) / batch_size);
}

double TrainConfig::lr_at(std::size_t step_index, std::size_t total) const {
    if (schedule == Schedule::constant || total == 0) return learning_rate;
    const double frac = std::min(1.0, static_cast<double>(step_index) / static_cast<double>(total));
    return learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

TrainStats pretrain(const SliceDataset& dataset, ModelState& model, const TrainConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    if (cfg.stage != Stage::pretrain) throw ValidationError("pretrain needs a pretrain-stage config");
    if (dataset.size() < 2) throw ValidationError("pretrain needs at least 2 images: no negative source");
    check_uniform_size(dataset, "pretrain");
    check_leakage(dataset, cfg);

    AugConfig aug = cfg.aug;
    aug.feature_stride = model.config().encoder.stride();
    const std::size_t n = dataset.size();
    const std::size_t h = dataset.images.front().height, w = dataset.images.front().width;
    const GridDims grid{h / aug.feature_stride, w / aug.feature_stride};
    const std::size_t total = cfg.total_steps(n);
    const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    if (model.step == 0) model.rng = Rng(mix(cfg.seed, 0x50524554));

    TrainStats stats;
    StepClock clock;
    std::size_t done = 0;
    while (model.step < total && (!hooks.stop_after || done < *hooks.stop_after)) {
        Rng step_rng = model.rng.fork();
        const auto idx = sample_indices(n, cfg.batch_size, step_rng);
        const std::size_t b = idx.size();

        std::vector<ViewPair> views;
        std::vector<CorrespondenceMap> maps, maps_rev;
        for (int attempt = 0;; ++attempt) {
            views.clear();
            maps.clear();
            maps_rev.clear();
            std::size_t matched = 0;
            for (std::size_t i : idx) {
                views.push_back(sample_view_pair(dataset.images[i], step_rng, aug));
                maps.push_back(correspondence_map(views.back().t_q, views.back().t_k, grid, h, w));
                if (cfg.loss.symmetric)
                    maps_rev.push_back(correspondence_map(views.back().t_k, views.back().t_q, grid, h, w));
                matched += maps.back().pairs.size();
            }
            if (cfg.loss_kind == LossKind::global || matched > 0) break;
            if (attempt == 16) throw ValidationError("no correspondences in batch after 16 view draws");
        }

        std::vector<const SliceImage*> imgs;
        for (const auto& v : views) imgs.push_back(&v.view_q);
        for (const auto& v : views) imgs.push_back(&v.view_k);
        const Tensor x = stack_images(imgs);

        const nn::ParameterList params = model.pretrain_parameters(cfg.loss_kind);
        nn::zero_grad(params);
        const FeatureMap fm = model.encoder.forward(x);
        std::vector<std::size_t> ids(idx.begin(), idx.end());
        double loss = 0.0;
        Tensor grad_features;
        const double scale = cfg.loss.symmetric ? 0.5 : 1.0;
        if (cfg.loss_kind == LossKind::local) {
            const Tensor z = model.projection.forward(fm.values);
            const auto projs = split_projections(z);
            Tensor grad_z(z.shape());
            std::vector<PairSource> batch;
            for (std::size_t i = 0; i < b; ++i) batch.push_back({ids[i], &projs[i], &projs[b + i], &maps[i]});
            const PairSet pairs = build_pairs(batch, cfg.loss, &step_rng);
            const LossWithGrad lg = local_info_nce_with_grad(pairs, cfg.loss);
            loss += scale * lg.loss;
            scatter_rows(pairs, lg.grad, b, false, scale, grad_z);
            if (cfg.loss.symmetric) {
                std::vector<PairSource> rev;
                for (std::size_t i = 0; i < b; ++i) rev.push_back({ids[i], &projs[b + i], &projs[i], &maps_rev[i]});
                const PairSet pairs_rev = build_pairs(rev, cfg.loss, &step_rng);
                const LossWithGrad lr = local_info_nce_with_grad(pairs_rev, cfg.loss);
                loss += scale * lr.loss;
                scatter_rows(pairs_rev, lr.grad, b, true, scale, grad_z);
            }
            grad_features = model.projection.backward(grad_z);
        } else {
            const Tensor g = model.global_head.forward(fm.values);
            const Tensor q = slice_batch(g, 0, b), k = slice_batch(g, b, 2 * b);
            Tensor grad_g(g.shape());
            const PairSet pairs = build_global_pairs(q, k, ids, cfg.loss, &step_rng);
            const LossWithGrad lg = local_info_nce_with_grad(pairs, cfg.loss);
            loss += scale * lg.loss;
            scatter_rows(pairs, lg.grad, b, false, scale, grad_g);
            if (cfg.loss.symmetric) {
                const PairSet pairs_rev = build_global_pairs(k, q, ids, cfg.loss, &step_rng);
                const LossWithGrad lr = local_info_nce_with_grad(pairs_rev, cfg.loss);
                loss += scale * lr.loss;
                scatter_rows(pairs_rev, lr.grad, b, true, scale, grad_g);
            }
            grad_features = model.global_head.backward(grad_g);
        }
        if (!std::isfinite(loss))
            throw std::runtime_error("non-finite pretrain loss at step " + std::to_string(model.step + 1));
        model.encoder.backward(FeatureGrad{grad_features, {}});
        const double lr = cfg.lr_at(model.step, total);
        model.optimizer.step(params, lr);
        ++model.step;
        ++done;
        stats.steps.push_back({model.step, loss, 0.0, 0.0, lr});
        if (cfg.checkpoint_every > 0 && model.step % cfg.checkpoint_every == 0 && hooks.on_checkpoint)
            hooks.on_checkpoint(model);
        finish_epochs(stats, per_epoch, done, model, hooks);
    }
    stats.wall_seconds = clock.seconds();
    return stats;
}

TrainStats finetune(const SliceDataset& labeled, const SliceDataset& unlabeled, ModelState& model,
                    const TrainConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    if (cfg.stage != Stage::finetune) throw ValidationError("finetune needs a finetune-stage config");
    if (labeled.size() == 0) throw ValidationError("labeled set is empty");
    if (!labeled.has_labels()) throw ValidationError("labeled set carries no label masks");
    check_uniform_size(labeled, "labeled");
    check_uniform_size(unlabeled, "unlabeled");
    check_leakage(labeled, cfg);
    check_leakage(unlabeled, cfg);
    if (unlabeled.size() > 0 && (unlabeled.images.front().height != labeled.images.front().height ||
                                 unlabeled.images.front().width != labeled.images.front().width))
        throw ValidationError("labeled and unlabeled slices differ in size");

    TrainStats stats;
    if (unlabeled.size() == 0) stats.warnings.push_back("unlabeled set is empty; training supervised-only");
    const std::size_t h = labeled.images.front().height, w = labeled.images.front().width;
    const std::size_t total = cfg.total_steps(labeled.size());
    const std::size_t per_epoch = (labeled.size() + cfg.batch_size - 1) / cfg.batch_size;
    if (model.step == 0) model.rng = Rng(mix(cfg.seed, 0x46494E45));
    const bool twin = model.encoder2.has_value();

    StepClock clock;
    std::size_t done = 0;
    while (model.step < total && (!hooks.stop_after || done < *hooks.stop_after)) {
        Rng step_rng = model.rng.fork();
        const auto li = sample_indices(labeled.size(), cfg.batch_size, step_rng);
        const auto ui = unlabeled.size() > 0 ? sample_indices(unlabeled.size(), cfg.batch_size, step_rng)
                                             : std::vector<std::size_t>{};
        std::vector<SliceImage> weak;
        for (std::size_t i : ui) {
            GeometricTransform t = GeometricTransform::identity(h, w);
            if (step_rng.bernoulli(0.5)) t = t.then(GeometricTransform::flip_h(h, w));
            if (step_rng.bernoulli(0.5)) t = t.then(GeometricTransform::flip_v(h, w));
            weak.push_back(warp(unlabeled.images[i], t));
        }
        std::vector<const SliceImage*> imgs;
        std::vector<const LabelMask*> masks;
        for (std::size_t i : li) {
            imgs.push_back(&labeled.images[i]);
            masks.push_back(&labeled.labels[i]);
        }
        for (const auto& img : weak) imgs.push_back(&img);
        const std::size_t nl = li.size(), nu = ui.size();
        const Tensor x = stack_images(imgs);

        const nn::ParameterList params = model.finetune_parameters();
        nn::zero_grad(params);
        const FeatureMap fm1 = model.encoder.forward(x);
        const FeatureMap fm2 = twin ? model.encoder2->forward(x) : FeatureMap{};
        const Tensor p1 = nn::sigmoid(model.decoder1.forward(fm1));
        const Tensor p2 = nn::sigmoid(model.decoder2.forward(twin ? fm2 : fm1));

        const Tensor target = one_hot_batch(masks);
        const SsfResult rl = ssf_loss_with_grad({slice_batch(p1, 0, nl)}, {slice_batch(p2, 0, nl)}, &target,
                                                cfg.threshold);
        Tensor g1 = rl.grad_p1, g2 = rl.grad_p2;
        double loss_u = 0.0;
        if (nu > 0) {
            const SsfResult ru = ssf_loss_with_grad({slice_batch(p1, nl, nl + nu)}, {slice_batch(p2, nl, nl + nu)},
                                                    nullptr, cfg.threshold);
            loss_u = ru.loss;
            g1 = concat_batch({&rl.grad_p1, &ru.grad_p1});
            g2 = concat_batch({&rl.grad_p2, &ru.grad_p2});
        }
        const double loss = rl.loss + loss_u;
        if (!std::isfinite(loss))
            throw std::runtime_error("non-finite finetune loss at step " + std::to_string(model.step + 1));

        FeatureGrad fg1 = model.decoder1.backward(sigmoid_backward(g1, p1));
        const FeatureGrad fg2 = model.decoder2.backward(sigmoid_backward(g2, p2));
        if (twin) {
            model.encoder.backward(fg1);
            model.encoder2->backward(fg2);
        } else {
            add_feature_grad(fg1, fg2);
            model.encoder.backward(fg1);
        }
        const double lr = cfg.lr_at(model.step, total);
        model.optimizer.step(params, lr);
        ++model.step;
        ++done;
        stats.steps.push_back({model.step, loss, rl.loss, loss_u, lr});
        if (cfg.checkpoint_every > 0 && model.step % cfg.checkpoint_every == 0 && hooks.on_checkpoint)
            hooks.on_checkpoint(model);
        finish_epochs(stats, per_epoch, done, model, hooks);
    }
    stats.wall_seconds = clock.seconds();
    return stats;
}

LabelMask predict_slice(ModelState& model, const SliceImage& normalized, double threshold) {
    const Tensor x({1, 1, normalized.height, normalized.width}, normalized.pixels);
    const FeatureMap fm1 = model.encoder.forward(x);
    const Tensor p1 = nn::sigmoid(model.decoder1.forward(fm1));
    const Tensor p2 = nn::sigmoid(model.decoder2.forward(model.encoder2 ? model.encoder2->forward(x) : fm1));
    const std::size_t classes = p1.dim(1), plane = normalized.height * normalized.width;
    std::vector<std::uint8_t> labels(plane, 0);
    for (std::size_t i = 0; i < plane; ++i) {
        double best = -1.0;
        std::size_t best_c = 0;
        for (std::size_t c = 0; c < classes; ++c) {
            const double p = 0.5 * (p1[c * plane + i] + p2[c * plane + i]);
            if (p > best) {
                best = p;
                best_c = c;
            }
        }
        if (best >= threshold) labels[i] = static_cast<std::uint8_t>(best_c + 1);
    }
    return LabelMask::planar(normalized.height, normalized.width, classes, std::move(labels));
}

LabelMask predict_volume(ModelState& model, const Volume& volume, double threshold) {
    std::vector<LabelMask> slices;
    for (std::size_t z = 0; z < volume.depth(); ++z)
        slices.push_back(predict_slice(model, normalize_slice(volume.slice(z)), threshold));
    return LabelMask::stack(slices);
}

}  // namespace dclseg
