#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "crossl/autodiff.hpp"
#include "crossl/rng.hpp"
#include "crossl/tensor.hpp"

namespace crossl {

// How intermediate embeddings are masked before aggregation.
//   random:  each of the N*M*K entries is dropped i.i.d. with probability
//            `rate` per sample per view.
//   spatial: for each sample, `count` whole modalities (all K entries) are
//            dropped, chosen uniformly without replacement per sample.
struct MaskSpec {
    enum class Strategy { random, spatial };
    Strategy strategy = Strategy::spatial;
    double rate = 0.5;     // random: drop probability in [0,1]
    std::size_t count = 1; // spatial: modalities hidden per sample, in [0,M]

    static MaskSpec random_rate(double r) { return {Strategy::random, r, 0}; }
    static MaskSpec spatial_count(std::size_t m) { return {Strategy::spatial, 0.0, m}; }

    std::string describe() const;
};

// Binary keep/drop pattern over stacked intermediate embeddings [N,M,K].
// 1 = keep, 0 = mask. Masked entries are zeroed and receive zero gradient.
struct MaskMatrix {
    Tensor bits;

    std::size_t samples() const { return bits.shape.empty() ? 0 : bits.shape[0]; }
    bool operator==(const MaskMatrix& o) const { return bits.values == o.bits.values && bits.shape == o.bits.shape; }
};

// Draws the two independently sampled views used during pre-training.
// Identical masks across views are possible by chance and are not rejected.
std::pair<MaskMatrix, MaskMatrix> sample_masks(const MaskSpec& spec, std::size_t n,
                                               std::size_t m, std::size_t k, Rng& rng);

// Single-view draw (validation passes, tests).
MaskMatrix sample_mask(const MaskSpec& spec, std::size_t n, std::size_t m,
                       std::size_t k, Rng& rng);

// Mask with all-zero rows exactly where a modality is unavailable. This is
// how real missingness enters the forward pass: zero-filled input windows
// plus this forced mask, never a shape change.
MaskMatrix forced_modality_mask(const BoolMatrix& available, std::size_t k);

// Elementwise AND of two masks.
MaskMatrix intersect(const MaskMatrix& a, const MaskMatrix& b);

// Zeroing semantics, no rescaling of kept entries; gradients flow only
// through kept entries.
Var apply_mask(const Var& q, const MaskMatrix& mask);
Tensor apply_mask(const Tensor& q, const MaskMatrix& mask);

} // namespace crossl
