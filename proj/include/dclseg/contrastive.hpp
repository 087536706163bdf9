#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dclseg/backbone.hpp"
#include "dclseg/rng.hpp"
#include "dclseg/tensor.hpp"
#include "dclseg/transform.hpp"

namespace dclseg {

struct LossConfig {
    double temperature = 0.1;
    // Cap on negatives per anchor, drawn without replacement.
    std::optional<std::size_t> negative_subsample;
    // Also use key-view anchors against query-view keys and average both directions.
    bool symmetric = false;

    void validate() const;
};

/// -log( e^{q.k+/t} / (e^{q.k+/t} + sum_k- e^{q.k-/t}) )
double global_info_nce(std::span<const double> q, std::span<const double> k_pos,
                       const std::vector<std::vector<double>>& k_negs, const LossConfig& cfg);

/// One batch entry for pair construction: both views' projections of an
/// image and the correspondence from query grid to key grid.
struct PairSource {
    std::size_t image_id = 0;
    const DenseProjection* query = nullptr;
    const DenseProjection* key = nullptr;
    const CorrespondenceMap* map = nullptr;
};

/// Where a pooled vector came from.
struct VectorRef {
    std::size_t entry = 0;
    bool key_view = false;
    std::size_t position = 0;
};

struct Anchor {
    std::size_t image_id = 0;
    std::size_t position = 0;
    std::size_t query_row = 0;
    std::size_t positive_row = 0;
    std::vector<std::size_t> negative_rows;
};

/// Anchors and their keys as row indices into a shared pool of vectors.
/// Entry e contributes its query rows then its key rows.
struct PairSet {
    Tensor vectors;  // rows x dim
    std::vector<VectorRef> refs;
    std::vector<Anchor> anchors;

    std::size_t dim() const { return vectors.dim(1); }
    std::span<const double> row(std::size_t r) const { return {vectors.data() + r * dim(), dim()}; }
};

/// One anchor per corresponded query position. Its positive is the matched
/// key-view vector of the same image; its negatives are every key-view
/// position of every batch entry with a different image id (optionally
/// subsampled with rng). Throws when no entry has a negative source.
PairSet build_pairs(const std::vector<PairSource>& batch, const LossConfig& cfg, Rng* rng = nullptr);

/// One anchor per image for pooled (global) embeddings: q_i against k_i,
/// negatives k_j for entries with another image id. q, k: N x dim.
PairSet build_global_pairs(const Tensor& q, const Tensor& k, const std::vector<std::size_t>& image_ids,
                           const LossConfig& cfg, Rng* rng = nullptr);

struct LossWithGrad {
    double loss = 0.0;
    Tensor grad;  // same shape as PairSet::vectors
};

/// Mean over anchors of the per-anchor InfoNCE term.
double local_info_nce(const PairSet& pairs, const LossConfig& cfg);
LossWithGrad local_info_nce_with_grad(const PairSet& pairs, const LossConfig& cfg);

}  // namespace dclseg
