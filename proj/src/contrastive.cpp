#include "dclseg/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dclseg/errors.hpp"

namespace dclseg {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Stable -log softmax_0 over logits {l_pos, l_neg...}; weights receives the
// softmax probabilities (positive first) when non-null.
double info_nce_from_logits(double l_pos, const std::vector<double>& l_neg, std::vector<double>* weights) {
    double m = l_pos;
    for (double l : l_neg) m = std::max(m, l);
    double z = std::exp(l_pos - m);
    for (double l : l_neg) z += std::exp(l - m);
    if (weights) {
        weights->resize(l_neg.size() + 1);
        (*weights)[0] = std::exp(l_pos - m) / z;
        for (std::size_t j = 0; j < l_neg.size(); ++j) (*weights)[j + 1] = std::exp(l_neg[j] - m) / z;
    }
    if (m == l_pos) {
        double tail = 0.0;
        for (double l : l_neg) tail += std::exp(l - l_pos);
        return std::log1p(tail);
    }
    return std::log(z) + m - l_pos;
}

void append_rows(Tensor& pool, std::size_t& row, const DenseProjection& p) {
    const std::size_t d = p.dim();
    const std::size_t plane = p.positions();
    for (std::size_t pos = 0; pos < plane; ++pos, ++row)
        for (std::size_t c = 0; c < d; ++c) pool[row * d + c] = p.vectors[c * plane + pos];
}

std::vector<std::size_t> maybe_subsample(std::vector<std::size_t> candidates, const LossConfig& cfg, Rng* rng) {
    if (!cfg.negative_subsample || *cfg.negative_subsample >= candidates.size()) return candidates;
    if (!rng) throw ValidationError("negative subsampling requires an rng");
    const std::size_t cap = *cfg.negative_subsample;
    for (std::size_t i = 0; i < cap; ++i) std::swap(candidates[i], candidates[i + rng->uniform_index(candidates.size() - i)]);
    candidates.resize(cap);
    return candidates;
}

}  // namespace

void LossConfig::validate() const {
    if (!(temperature > 0) || !std::isfinite(temperature)) throw ValidationError("loss.temperature must be > 0");
    if (negative_subsample && *negative_subsample == 0)
        throw ValidationError("loss.negative_subsample must be positive when set");
}

double global_info_nce(std::span<const double> q, std::span<const double> k_pos,
                       const std::vector<std::vector<double>>& k_negs, const LossConfig& cfg) {
    cfg.validate();
    if (k_negs.empty()) throw ValidationError("global_info_nce needs at least one negative");
    if (q.size() != k_pos.size() || q.empty()) throw ValidationError("query and positive key dimensions differ");
    std::vector<double> l_neg;
    l_neg.reserve(k_negs.size());
    for (const auto& k : k_negs) {
        if (k.size() != q.size()) throw ValidationError("negative key dimension differs from query");
        l_neg.push_back(dot(q, k) / cfg.temperature);
    }
    return info_nce_from_logits(dot(q, k_pos) / cfg.temperature, l_neg, nullptr);
}

PairSet build_pairs(const std::vector<PairSource>& batch, const LossConfig& cfg, Rng* rng) {
    cfg.validate();
    if (batch.size() < 2) throw ValidationError("no negative source: batch needs at least 2 images");
    const std::size_t d = batch.front().query->dim();
    std::size_t rows = 0;
    for (const PairSource& s : batch) {
        if (!s.query || !s.key || !s.map) throw ValidationError("pair source is incomplete");
        if (s.query->dim() != d || s.key->dim() != d) throw ValidationError("projection dimensions differ in batch");
        if (s.map->query_dims != s.query->grid() || s.map->key_dims != s.key->grid())
            throw ValidationError("correspondence grid does not match projection grid");
        rows += s.query->positions() + s.key->positions();
    }

    PairSet set;
    set.vectors = Tensor({rows, d});
    std::vector<std::size_t> query_offset(batch.size()), key_offset(batch.size());
    std::size_t row = 0;
    for (std::size_t e = 0; e < batch.size(); ++e) {
        query_offset[e] = row;
        append_rows(set.vectors, row, *batch[e].query);
        for (std::size_t p = 0; p < batch[e].query->positions(); ++p) set.refs.push_back({e, false, p});
        key_offset[e] = row;
        append_rows(set.vectors, row, *batch[e].key);
        for (std::size_t p = 0; p < batch[e].key->positions(); ++p) set.refs.push_back({e, true, p});
    }

    for (std::size_t e = 0; e < batch.size(); ++e) {
        const PairSource& s = batch[e];
        std::vector<std::size_t> negatives;
        for (std::size_t o = 0; o < batch.size(); ++o) {
            if (batch[o].image_id == s.image_id) continue;
            for (std::size_t p = 0; p < batch[o].key->positions(); ++p) negatives.push_back(key_offset[o] + p);
        }
        if (negatives.empty())
            throw ValidationError("no negative source: every batch entry shares image id " + std::to_string(s.image_id));
        for (const auto& [i, j] : s.map->pairs) {
            if (i >= s.query->positions() || j >= s.key->positions())
                throw ValidationError("correspondence index out of range");
            set.anchors.push_back({s.image_id, i, query_offset[e] + i, key_offset[e] + j,
                                   maybe_subsample(negatives, cfg, rng)});
        }
    }
    return set;
}

PairSet build_global_pairs(const Tensor& q, const Tensor& k, const std::vector<std::size_t>& image_ids,
                           const LossConfig& cfg, Rng* rng) {
    cfg.validate();
    if (q.rank() != 2 || !q.same_shape(k) || q.dim(0) != image_ids.size())
        throw ValidationError("global pairs need matching N x dim query and key matrices");
    const std::size_t n = q.dim(0), d = q.dim(1);
    if (n < 2) throw ValidationError("no negative source: batch needs at least 2 images");
    PairSet set;
    set.vectors = Tensor({2 * n, d});
    std::copy(q.data(), q.data() + q.size(), set.vectors.data());
    std::copy(k.data(), k.data() + k.size(), set.vectors.data() + q.size());
    for (std::size_t i = 0; i < n; ++i) set.refs.push_back({i, false, 0});
    for (std::size_t i = 0; i < n; ++i) set.refs.push_back({i, true, 0});
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> negatives;
        for (std::size_t j = 0; j < n; ++j)
            if (image_ids[j] != image_ids[i]) negatives.push_back(n + j);
        if (negatives.empty()) throw ValidationError("no negative source for image id " + std::to_string(image_ids[i]));
        set.anchors.push_back({image_ids[i], 0, i, n + i, maybe_subsample(std::move(negatives), cfg, rng)});
    }
    return set;
}

double local_info_nce(const PairSet& pairs, const LossConfig& cfg) {
    cfg.validate();
    if (pairs.anchors.empty()) throw ValidationError("no correspondences in batch");
    double total = 0.0;
    std::vector<double> l_neg;
    for (const Anchor& a : pairs.anchors) {
        const auto q = pairs.row(a.query_row);
        l_neg.clear();
        for (std::size_t r : a.negative_rows) l_neg.push_back(dot(q, pairs.row(r)) / cfg.temperature);
        total += info_nce_from_logits(dot(q, pairs.row(a.positive_row)) / cfg.temperature, l_neg, nullptr);
    }
    return total / static_cast<double>(pairs.anchors.size());
}

LossWithGrad local_info_nce_with_grad(const PairSet& pairs, const LossConfig& cfg) {
    cfg.validate();
    if (pairs.anchors.empty()) throw ValidationError("no correspondences in batch");
    const std::size_t d = pairs.dim();
    const double tau = cfg.temperature;
    const double scale = 1.0 / static_cast<double>(pairs.anchors.size());
    LossWithGrad out{0.0, Tensor(pairs.vectors.shape())};
    std::vector<double> l_neg, w;
    for (const Anchor& a : pairs.anchors) {
        const auto q = pairs.row(a.query_row);
        const auto kp = pairs.row(a.positive_row);
        l_neg.clear();
        for (std::size_t r : a.negative_rows) l_neg.push_back(dot(q, pairs.row(r)) / tau);
        out.loss += info_nce_from_logits(dot(q, kp) / tau, l_neg, &w);

        // dL/dq = (sum_j w_j k_j - k+) / tau, dL/dk+ = (w_0 - 1) q / tau, dL/dk-_j = w_j q / tau
        double* gq = out.grad.data() + a.query_row * d;
        double* gp = out.grad.data() + a.positive_row * d;
        const double cp = (w[0] - 1.0) * scale / tau;
        for (std::size_t c = 0; c < d; ++c) {
            gq[c] += cp * kp[c];
            gp[c] += cp * q[c];
        }
        for (std::size_t j = 0; j < a.negative_rows.size(); ++j) {
            const auto kn = pairs.row(a.negative_rows[j]);
            double* gn = out.grad.data() + a.negative_rows[j] * d;
            const double cn = w[j + 1] * scale / tau;
            for (std::size_t c = 0; c < d; ++c) {
                gq[c] += cn * kn[c];
                gn[c] += cn * q[c];
            }
        }
    }
    out.loss *= scale;
    return out;
}

}  // namespace dclseg
