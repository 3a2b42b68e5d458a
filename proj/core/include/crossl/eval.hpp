#pragma once

#include <optional>
#include <string>
#include <vector>

#include "crossl/metrics.hpp"
#include "crossl/train.hpp"

namespace crossl {

// One (condition, seed) result. Fields that do not apply to an experiment
// stay unset and are emitted as "-" (CSV) or null (JSON).
struct EvalRow {
    std::string experiment;
    std::string scenario = "-";
    std::string strategy = "-";
    std::optional<double> grid_value;
    std::optional<double> label_fraction;
    std::string mode;
    std::uint64_t seed = 0;
    double macro_f1 = 0.0;
    std::vector<double> per_class_f1;
};

// Mean and sample standard deviation of macro-F1 across seeds for one
// condition (all row fields except the seed).
struct EvalAggregate {
    std::string experiment;
    std::string scenario = "-";
    std::string strategy = "-";
    std::optional<double> grid_value;
    std::optional<double> label_fraction;
    std::string mode;
    std::size_t num_seeds = 0;
    double mean_macro_f1 = 0.0;
    double std_macro_f1 = 0.0;
};

struct EvalReport {
    std::string experiment;
    std::size_t num_classes = 0;
    std::vector<EvalRow> rows;
    std::vector<EvalAggregate> aggregates; // derived from rows

    void recompute_aggregates();
};

struct HarnessOptions {
    EncoderSpec encoder;
    AggregatorSpec aggregator;
    std::size_t missing_count = 1; // modalities missing per affected sample
    std::string cache_dir;         // empty disables cell/checkpoint caching
    std::size_t jobs = 1;
};

struct EvalOutcome {
    EvalReport report;
    std::size_t computed_cells = 0;
    std::size_t cached_cells = 0;
};

// Missing-modality robustness: 3 scenarios x {supervised, fixed/finetuned x
// random/spatial} x seeds. Pre-training always happens on clean data; the
// scenario decides where missingness is injected afterwards.
EvalOutcome run_missing_scenarios(const MultimodalDataset& dataset, const TrainConfig& cfg,
                                  const std::vector<std::uint64_t>& seeds,
                                  const HarnessOptions& options);

// Masking sweep: one pretrain + probe + finetune per grid point per seed.
// Random grids live in [0,1], spatial grids are integer counts in [0, M-1].
EvalOutcome sweep_mask(const MultimodalDataset& dataset, const TrainConfig& cfg,
                       MaskSpec::Strategy strategy, const std::vector<double>& grid,
                       const std::vector<std::uint64_t>& seeds,
                       const HarnessOptions& options);

// Label-efficiency sweep: pre-train once per seed on the full unlabeled train
// split, then probe/finetune/supervised per label fraction.
EvalOutcome sweep_labels(const MultimodalDataset& dataset, const TrainConfig& cfg,
                         const std::vector<double>& fractions,
                         const std::vector<std::uint64_t>& seeds,
                         const HarnessOptions& options);

// Writes report.csv (one row per condition, stable column order) and
// report.json (full structure). Output is byte-identical for equal reports.
void emit_report(const EvalReport& report, const std::string& dir);
EvalReport parse_report_json(const std::string& path);

std::string report_to_csv(const EvalReport& report);
std::string report_to_json(const EvalReport& report);

} // namespace crossl
