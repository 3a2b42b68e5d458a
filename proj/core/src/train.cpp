#include "crossl/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "crossl/metrics.hpp"

namespace crossl {

void TrainConfig::validate() const {
    if (ssl_lr <= 0.0 || cls_lr <= 0.0) throw config_error("train: learning rates must be > 0");
    if (batch_size < 2) throw config_error("train: batch_size must be >= 2");
    if (patience < 1) throw config_error("train: patience must be >= 1");
    if (freeze_epochs > cls_epochs) {
        throw config_error("train: freeze_epochs " + std::to_string(freeze_epochs) +
                           " exceeds cls_epochs " + std::to_string(cls_epochs));
    }
    loss.validate();
}

std::string TrainTrace::to_csv() const {
    std::ostringstream os;
    os << "epoch,train_loss,val_metric,inv,var1,var2,cov1,cov2,seconds\n";
    char buf[256];
    for (const auto& e : epochs) {
        std::snprintf(buf, sizeof(buf),
                      "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.6f\n", e.epoch,
                      e.train_loss, e.val_metric, e.breakdown.invariance,
                      e.breakdown.variance_v1, e.breakdown.variance_v2,
                      e.breakdown.covariance_v1, e.breakdown.covariance_v2, e.seconds);
        os << buf;
    }
    return os.str();
}

bool TrainTrace::same_numbers(const TrainTrace& other) const {
    if (epochs.size() != other.epochs.size() || stop_reason != other.stop_reason ||
        best_epoch != other.best_epoch) {
        return false;
    }
    for (std::size_t i = 0; i < epochs.size(); ++i) {
        const auto& a = epochs[i];
        const auto& b = other.epochs[i];
        if (a.epoch != b.epoch || a.train_loss != b.train_loss ||
            a.val_metric != b.val_metric || a.breakdown.invariance != b.breakdown.invariance ||
            a.breakdown.variance_v1 != b.breakdown.variance_v1 ||
            a.breakdown.variance_v2 != b.breakdown.variance_v2 ||
            a.breakdown.covariance_v1 != b.breakdown.covariance_v1 ||
            a.breakdown.covariance_v2 != b.breakdown.covariance_v2) {
            return false;
        }
    }
    return true;
}

EarlyStopper::EarlyStopper(Direction dir, std::size_t patience)
    : dir_(dir), patience_(patience),
      best_(dir == Direction::minimize ? std::numeric_limits<double>::infinity()
                                       : -std::numeric_limits<double>::infinity()) {}

bool EarlyStopper::observe(double metric) {
    constexpr double kMinDelta = 1e-6;
    const bool improved = dir_ == Direction::minimize ? metric <= best_ - kMinDelta
                                                      : metric >= best_ + kMinDelta;
    if (improved) {
        best_ = metric;
        best_epoch_ = seen_;
        bad_streak_ = 0;
    } else {
        ++bad_streak_;
    }
    ++seen_;
    return improved;
}

FinetuneMode finetune_mode_from_name(const std::string& name) {
    if (name == "finetuned") return FinetuneMode::finetuned;
    if (name == "fixed") return FinetuneMode::fixed;
    throw config_error("mode must be \"finetuned\" or \"fixed\", got \"" + name + "\"");
}

ModelState init_model_for_dataset(const MultimodalDataset& dataset, const EncoderSpec& enc,
                                  const AggregatorSpec& agg, std::uint64_t seed) {
    Rng rng = Rng(seed).fork("init");
    return ModelState(dataset.modalities, enc, agg, dataset.num_classes, rng);
}

namespace {

double wall_seconds(std::chrono::steady_clock::time_point from) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - from).count();
}

std::vector<Var> batch_inputs(const MultimodalBatch& batch) {
    std::vector<Var> inputs;
    inputs.reserve(batch.windows.size());
    for (const auto& w : batch.windows) inputs.push_back(constant(w));
    return inputs;
}

void check_finite(double loss, const char* stage, std::size_t epoch, std::size_t batch) {
    if (!std::isfinite(loss)) {
        throw divergence_error(std::string(stage) + ": non-finite loss at epoch " +
                               std::to_string(epoch) + ", batch " + std::to_string(batch));
    }
}

// One SSL objective evaluation over a batch; backward only when training.
LossBreakdown ssl_batch_loss(const MultimodalBatch& batch, const ModelState& state,
                             const TrainConfig& cfg, Rng& mask_rng, bool with_grad) {
    const std::size_t n = batch.size();
    const std::size_t m = state.num_modalities();
    const std::size_t k = state.embedding_dim();

    Var q = encode_all(batch_inputs(batch), state);
    auto [mask1, mask2] = sample_masks(cfg.mask, n, m, k, mask_rng);
    const MaskMatrix forced = forced_modality_mask(batch.availability, k);
    Var z1 = aggregate(apply_mask(q, intersect(mask1, forced)), state);
    Var z2 = aggregate(apply_mask(q, intersect(mask2, forced)), state);
    TotalLoss loss = total_loss(z1, z2, cfg.loss);
    if (with_grad) backward(loss.node);
    return loss.breakdown;
}

LossBreakdown add_breakdown(LossBreakdown acc, const LossBreakdown& b) {
    acc.invariance += b.invariance;
    acc.variance_v1 += b.variance_v1;
    acc.variance_v2 += b.variance_v2;
    acc.covariance_v1 += b.covariance_v1;
    acc.covariance_v2 += b.covariance_v2;
    acc.total += b.total;
    return acc;
}

LossBreakdown scale_breakdown(LossBreakdown acc, double factor) {
    acc.invariance *= factor;
    acc.variance_v1 *= factor;
    acc.variance_v2 *= factor;
    acc.covariance_v1 *= factor;
    acc.covariance_v2 *= factor;
    acc.total *= factor;
    return acc;
}

double ssl_validation_loss(const MultimodalDataset& dataset, const ModelState& state,
                           const TrainConfig& cfg, std::size_t epoch) {
    Rng root(cfg.seed);
    Rng mask_rng = root.fork("val_mask", epoch);
    auto batches = make_batches(dataset, Split::val, cfg.batch_size,
                                root.fork("val_shuffle", epoch).seed(), BatchMode::ssl);
    if (batches.empty()) {
        throw config_error("pretrain: validation split has fewer than 2 samples");
    }
    double total = 0.0;
    for (const auto& b : batches) {
        total += ssl_batch_loss(b, state, cfg, mask_rng, /*with_grad=*/false).total;
    }
    return total / static_cast<double>(batches.size());
}

} // namespace

TrainResult pretrain(const MultimodalDataset& dataset, const ModelState& init,
                     const TrainConfig& cfg) {
    cfg.validate();
    ModelState state = init.clone();
    state.set_trainable_encoders_aggregator(true);
    for (auto& p : state.classifier_params()) p.trainable = false;

    Adam opt(cfg.ssl_lr);
    EarlyStopper stopper(EarlyStopper::Direction::minimize, cfg.patience);
    Rng root(cfg.seed);

    TrainTrace trace;
    std::vector<Tensor> best = state.snapshot_values();

    for (std::size_t epoch = 0; epoch < cfg.ssl_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        auto batches = make_batches(dataset, Split::train, cfg.batch_size,
                                    root.fork("shuffle", epoch).seed(), BatchMode::ssl);
        if (batches.empty()) throw config_error("pretrain: train split has fewer than 2 samples");
        Rng mask_rng = root.fork("mask", epoch);

        LossBreakdown mean{};
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            LossBreakdown bd = ssl_batch_loss(batches[bi], state, cfg, mask_rng, true);
            check_finite(bd.total, "pretrain", epoch, bi);
            opt.step(state.params());
            mean = add_breakdown(mean, bd);
        }
        mean = scale_breakdown(mean, 1.0 / static_cast<double>(batches.size()));

        const double val_loss = ssl_validation_loss(dataset, state, cfg, epoch);
        check_finite(val_loss, "pretrain (validation)", epoch, 0);

        if (stopper.observe(val_loss)) best = state.snapshot_values();
        trace.epochs.push_back({epoch, mean.total, val_loss, mean, wall_seconds(t0)});
        if (stopper.should_stop()) {
            trace.stop_reason = StopReason::early_stop;
            break;
        }
    }
    trace.best_epoch = stopper.best_epoch();

    state.restore_values(best);
    state.set_trainable_encoders_aggregator(true);
    return {std::move(state), std::move(trace)};
}

ModelState pretrain_steps(const MultimodalDataset& dataset, const ModelState& init,
                          const TrainConfig& cfg, std::size_t max_steps) {
    cfg.validate();
    ModelState state = init.clone();
    state.set_trainable_encoders_aggregator(true);
    for (auto& p : state.classifier_params()) p.trainable = false;

    Adam opt(cfg.ssl_lr);
    Rng root(cfg.seed);
    std::size_t steps = 0;
    for (std::size_t epoch = 0; steps < max_steps; ++epoch) {
        auto batches = make_batches(dataset, Split::train, cfg.batch_size,
                                    root.fork("shuffle", epoch).seed(), BatchMode::ssl);
        if (batches.empty()) throw config_error("pretrain: train split has fewer than 2 samples");
        Rng mask_rng = root.fork("mask", epoch);
        for (std::size_t bi = 0; bi < batches.size() && steps < max_steps; ++bi) {
            LossBreakdown bd = ssl_batch_loss(batches[bi], state, cfg, mask_rng, true);
            check_finite(bd.total, "pretrain", epoch, bi);
            opt.step(state.params());
            ++steps;
        }
    }
    return state;
}

double evaluate_macro_f1(const MultimodalDataset& dataset, Split split,
                         const ModelState& state, std::size_t batch_size) {
    if (!dataset.labels) throw config_error("evaluate: dataset has no labels");
    auto batches = make_batches(dataset, split, batch_size, /*shuffle_seed=*/0,
                                BatchMode::eval);
    std::vector<int> preds, labels;
    for (const auto& b : batches) {
        auto p = predict(b.windows, b.availability, state);
        preds.insert(preds.end(), p.begin(), p.end());
        labels.insert(labels.end(), b.labels.begin(), b.labels.end());
    }
    return macro_f1(preds, labels, dataset.num_classes).macro;
}

namespace {

TrainResult classifier_training(const MultimodalDataset& dataset, ModelState state,
                                const TrainConfig& cfg, bool frozen_throughout,
                                bool apply_freeze_schedule) {
    if (!dataset.labels) throw config_error("classifier training: dataset has no labels");

    for (auto& p : state.classifier_params()) p.trainable = true;

    Adam opt(cfg.cls_lr);
    EarlyStopper stopper(EarlyStopper::Direction::maximize, cfg.patience);
    Rng root(cfg.seed);

    TrainTrace trace;
    std::vector<Tensor> best = state.snapshot_values();

    for (std::size_t epoch = 0; epoch < cfg.cls_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const bool frozen = frozen_throughout ||
                            (apply_freeze_schedule && epoch < cfg.freeze_epochs);
        state.set_trainable_encoders_aggregator(!frozen);

        auto batches = make_labeled_batches(dataset, Split::train, cfg.batch_size,
                                            root.fork("shuffle", epoch).seed(),
                                            BatchMode::eval);
        if (batches.empty()) throw config_error("classifier training: no labeled train samples");

        double train_loss = 0.0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const auto& batch = batches[bi];
            Var q = encode_all(batch_inputs(batch), state);
            const MaskMatrix forced =
                forced_modality_mask(batch.availability, state.embedding_dim());
            Var z = aggregate(apply_mask(q, forced), state);
            Var loss = softmax_cross_entropy(classifier_logits(z, state), batch.labels);
            const double lv = loss->value.item();
            check_finite(lv, "classifier training", epoch, bi);
            backward(loss);
            opt.step(state.params());
            train_loss += lv;
        }
        train_loss /= static_cast<double>(batches.size());

        const double val_f1 = evaluate_macro_f1(dataset, Split::val, state, cfg.batch_size);
        if (stopper.observe(val_f1)) best = state.snapshot_values();
        trace.epochs.push_back({epoch, train_loss, val_f1, LossBreakdown{}, wall_seconds(t0)});
        if (stopper.should_stop()) {
            trace.stop_reason = StopReason::early_stop;
            break;
        }
    }
    trace.best_epoch = stopper.best_epoch();

    state.restore_values(best);
    return {std::move(state), std::move(trace)};
}

} // namespace

TrainResult finetune(const MultimodalDataset& dataset, const ModelState& pretrained,
                     const TrainConfig& cfg, FinetuneMode mode) {
    cfg.validate();
    return classifier_training(dataset, pretrained.clone(), cfg,
                               /*frozen_throughout=*/mode == FinetuneMode::fixed,
                               /*apply_freeze_schedule=*/mode == FinetuneMode::finetuned);
}

TrainResult train_supervised(const MultimodalDataset& dataset, const TrainConfig& cfg,
                             const EncoderSpec& enc, const AggregatorSpec& agg) {
    cfg.validate();
    ModelState state = init_model_for_dataset(dataset, enc, agg, cfg.seed);
    if (cfg.cls_epochs == 0) {
        return {std::move(state), TrainTrace{}};
    }
    return classifier_training(dataset, std::move(state), cfg,
                               /*frozen_throughout=*/false,
                               /*apply_freeze_schedule=*/false);
}

} // namespace crossl
