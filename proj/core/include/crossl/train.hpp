#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crossl/data.hpp"
#include "crossl/loss.hpp"
#include "crossl/masking.hpp"
#include "crossl/model.hpp"

namespace crossl {

struct TrainConfig {
    double ssl_lr = 1e-4;
    double cls_lr = 1e-3;
    std::size_t ssl_epochs = 100;
    std::size_t cls_epochs = 50;
    std::size_t freeze_epochs = 20;
    std::size_t patience = 5;
    std::size_t batch_size = 32;
    MaskSpec mask = MaskSpec::spatial_count(1);
    LossWeights loss;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class StopReason { max_epochs, early_stop };

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_metric = 0.0; // SSL: validation loss; classifier: val macro-F1
    LossBreakdown breakdown; // mean over train batches; zero for classifier stages
    double seconds = 0.0;
};

struct TrainTrace {
    std::vector<EpochStats> epochs;
    StopReason stop_reason = StopReason::max_epochs;
    std::size_t best_epoch = 0;

    // CSV: epoch, train_loss, val_metric, inv, var1, var2, cov1, cov2, seconds
    std::string to_csv() const;
    // Identical apart from wall time: everything but the seconds column.
    bool same_numbers(const TrainTrace& other) const;
};

// Early-stopping bookkeeping: strict improvement by at least 1e-6, stop after
// `patience` consecutive non-improving epochs, remember the best epoch.
class EarlyStopper {
public:
    enum class Direction { minimize, maximize };
    EarlyStopper(Direction dir, std::size_t patience);

    // Returns true when the metric improved (caller snapshots state).
    bool observe(double metric);
    bool should_stop() const { return bad_streak_ >= patience_; }
    std::size_t best_epoch() const { return best_epoch_; }
    double best_metric() const { return best_; }

private:
    Direction dir_;
    std::size_t patience_;
    double best_;
    std::size_t bad_streak_ = 0;
    std::size_t best_epoch_ = 0;
    std::size_t seen_ = 0;
};

enum class FinetuneMode { finetuned, fixed };
FinetuneMode finetune_mode_from_name(const std::string& name);

struct TrainResult {
    ModelState state;
    TrainTrace trace;
};

// Step 1: self-supervised pre-training with two masked views. Labels are
// never read. Returns the best-validation-loss state.
TrainResult pretrain(const MultimodalDataset& dataset, const ModelState& init,
                     const TrainConfig& cfg);

// Step-limited variant used by diagnostics: runs at most `max_steps` optimizer
// steps, no early stopping, no validation passes.
ModelState pretrain_steps(const MultimodalDataset& dataset, const ModelState& init,
                          const TrainConfig& cfg, std::size_t max_steps);

// Step 2: supervised classifier training on top of a pre-trained state.
// finetuned: encoders+aggregator frozen for the first freeze_epochs, then
// unfrozen; fixed: frozen throughout (linear probe). Early stopping on
// validation macro-F1. Only forced masks from real missingness are applied.
TrainResult finetune(const MultimodalDataset& dataset, const ModelState& pretrained,
                     const TrainConfig& cfg, FinetuneMode mode);

// Supervised equivalent: same architecture trained end-to-end from random
// init with cross-entropy, no masking of any kind.
TrainResult train_supervised(const MultimodalDataset& dataset, const TrainConfig& cfg,
                             const EncoderSpec& enc = {}, const AggregatorSpec& agg = {});

ModelState init_model_for_dataset(const MultimodalDataset& dataset, const EncoderSpec& enc,
                                  const AggregatorSpec& agg, std::uint64_t seed);

// Test macro-F1 of a trained state on a split.
double evaluate_macro_f1(const MultimodalDataset& dataset, Split split,
                         const ModelState& state, std::size_t batch_size);

} // namespace crossl
