#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crossl/model.hpp"
#include "crossl/rng.hpp"
#include "crossl/tensor.hpp"

namespace crossl {

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

// Windows for all modalities of one dataset. All modalities agree on N; the
// window tensor slice of any (sample, modality) with availability false is
// all zeros. label_visible narrows which train labels a classifier may use
// (label-efficiency runs); it is a runtime view and is not persisted.
struct MultimodalDataset {
    std::vector<ModalityConfig> modalities;
    std::vector<Tensor> windows; // per modality, [N, T_m, C_m]
    std::optional<std::vector<int>> labels;
    BoolMatrix availability; // [N, M]
    std::vector<Split> split;
    std::size_t num_classes = 0;
    std::vector<std::uint8_t> label_visible;

    std::size_t num_samples() const { return split.size(); }
    std::size_t num_modalities() const { return modalities.size(); }
    std::vector<std::size_t> indices_of(Split s) const;
    void validate() const;
    std::uint64_t content_hash() const;
};

// Heterogeneous three-modality benchmark driven by a shared latent class:
// every modality senses one class-conditional sinusoid (frequency 2+y Hz,
// random phase per sample), plus a modality-specific nuisance sinusoid
// independent of the class, plus white noise.
struct SyntheticConfig {
    std::size_t num_classes = 4;
    std::vector<ModalityConfig> modalities{
        {"imu", 3, 50, 50.0},
        {"bio", 3, 100, 100.0},
        {"env", 1, 25, 25.0},
    };
    std::size_t samples_per_class = 100;
    double noise_std = 0.1;
    double nuisance_std = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

double synthetic_class_frequency(std::size_t cls); // Hz
double synthetic_nuisance_frequency(std::size_t modality);

MultimodalDataset generate_synthetic(const SyntheticConfig& cfg);

// How and when modalities go missing for robustness evaluation.
struct MissingScenario {
    enum class Phase { none, inference_only, finetune_and_inference };
    Phase phase = Phase::none;
    std::size_t missing_count = 1; // per sample, must stay < M

    static const char* phase_name(Phase p);
};

MultimodalDataset simulate_missing(const MultimodalDataset& dataset,
                                   const MissingScenario& scenario, Rng& rng);

// Keeps ceil(fraction * train_count) train labels visible, apportioned per
// class (largest remainder, every class keeps at least one). Val/test are
// untouched. Recomputed from the full split every call, so it is idempotent
// for a fixed (fraction, seed).
MultimodalDataset subsample_labels(const MultimodalDataset& dataset, double fraction,
                                   std::uint64_t seed);

struct MultimodalBatch {
    std::vector<Tensor> windows; // per modality, [B, T_m, C_m]
    std::vector<int> labels;     // empty if dataset unlabeled
    BoolMatrix availability;     // [B, M]
    std::vector<std::size_t> sample_indices;

    std::size_t size() const { return sample_indices.size(); }
};

enum class BatchMode {
    ssl,  // drop the short final batch (the variance term needs N >= 2)
    eval, // keep every sample
};

std::vector<MultimodalBatch> make_batches(const MultimodalDataset& dataset, Split split,
                                          std::size_t batch_size, std::uint64_t shuffle_seed,
                                          BatchMode mode);

// Classifier-facing variant: only samples whose labels are visible.
std::vector<MultimodalBatch> make_labeled_batches(const MultimodalDataset& dataset, Split split,
                                                  std::size_t batch_size,
                                                  std::uint64_t shuffle_seed, BatchMode mode);

// On-disk layout: manifest.json naming per-modality payload files ("CRSD"
// magic, dims, f64 little-endian, CRC32 trailer) plus line-oriented labels,
// availability and splits files. Round-trips bit-exactly.
void save_dataset(const MultimodalDataset& dataset, const std::string& dir);
MultimodalDataset load_dataset(const std::string& manifest_path);

} // namespace crossl
