#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crossl/masking.hpp"
#include "crossl/optim.hpp"
#include "crossl/rng.hpp"

namespace crossl {

// One sensor stream: its own channel count and window length. Streams never
// get resampled to a common rate; each encoder consumes its native window.
struct ModalityConfig {
    std::string name;
    std::size_t channels = 1;
    std::size_t window_len = 1;
    double sampling_rate = 1.0; // Hz, metadata only

    bool operator==(const ModalityConfig&) const = default;
};

struct ConvLayerSpec {
    std::size_t out_channels;
    std::size_t kernel_width;
    std::size_t stride;

    bool operator==(const ConvLayerSpec&) const = default;
};

// Three 1D conv layers (ReLU after each), global mean pool over time, then a
// linear projection to the K-dimensional intermediate embedding. The same
// layer widths serve every modality; only input channel counts differ.
struct EncoderSpec {
    std::array<ConvLayerSpec, 3> layers{{{16, 5, 2}, {32, 5, 2}, {64, 3, 1}}};
    std::size_t embedding_dim = 32; // K

    // Smallest window the conv stack accepts.
    std::size_t min_window() const;
    bool operator==(const EncoderSpec&) const = default;
};

// Dense layers over the flattened [N, M*K] stack: ReLU hidden layers, linear
// output of width D. The same weights serve both masked views.
struct AggregatorSpec {
    std::vector<std::size_t> hidden{128};
    std::size_t output_dim = 64; // D

    bool operator==(const AggregatorSpec&) const = default;
};

// All parameters of the M encoders, the aggregator and the linear classifier,
// in a fixed, checkpoint-stable order.
class ModelState {
public:
    static constexpr std::uint32_t kFormatVersion = 1;

    ModelState() = default;
    ModelState(std::vector<ModalityConfig> modalities, EncoderSpec encoder,
               AggregatorSpec aggregator, std::size_t num_classes, Rng& rng);

    ModelState clone() const;

    const std::vector<ModalityConfig>& modalities() const { return modalities_; }
    const EncoderSpec& encoder_spec() const { return encoder_; }
    const AggregatorSpec& aggregator_spec() const { return aggregator_; }
    std::size_t num_modalities() const { return modalities_.size(); }
    std::size_t embedding_dim() const { return encoder_.embedding_dim; }
    std::size_t global_dim() const { return aggregator_.output_dim; }
    std::size_t num_classes() const { return num_classes_; }

    std::vector<Parameter>& params() { return params_; }
    const std::vector<Parameter>& params() const { return params_; }
    Parameter& param(const std::string& name);

    // Index ranges into params() for the three blocks.
    std::span<Parameter> encoder_params(std::size_t modality);
    std::span<Parameter> all_encoder_params();
    std::span<Parameter> aggregator_params();
    std::span<Parameter> classifier_params();
    std::span<const Parameter> encoder_params(std::size_t modality) const;
    std::span<const Parameter> aggregator_params() const;
    std::span<const Parameter> classifier_params() const;

    void set_trainable_encoders_aggregator(bool trainable);

    // Snapshot/restore of parameter values only (kept for best-epoch states).
    std::vector<Tensor> snapshot_values() const;
    void restore_values(const std::vector<Tensor>& snapshot);

private:
    std::vector<ModalityConfig> modalities_;
    EncoderSpec encoder_;
    AggregatorSpec aggregator_;
    std::size_t num_classes_ = 0;
    std::vector<Parameter> params_;
    std::size_t agg_begin_ = 0, cls_begin_ = 0;
    std::vector<std::size_t> enc_begin_;

    void build_params(Rng* rng);
    friend ModelState load_checkpoint(const std::string& path);
};

// Forward pieces. The Var overloads record gradients through the model
// parameters; the Tensor overloads run inference without a graph.
Var encode(const Var& window_batch, std::size_t modality, const ModelState& state);
Tensor encode(const Tensor& window_batch, std::size_t modality, const ModelState& state);

// Stacks per-modality embeddings to [N,M,K]; windows must be given for all M
// modalities in config order (zero-filled where unavailable).
Var encode_all(const std::vector<Var>& windows, const ModelState& state);
Tensor encode_all(const std::vector<Tensor>& windows, const BoolMatrix* availability,
                  const ModelState& state);

Var aggregate(const Var& masked_q, const ModelState& state); // [N,M,K] -> [N,D]
Tensor aggregate(const Tensor& masked_q, const ModelState& state);

Var classifier_logits(const Var& z, const ModelState& state); // [N,D] -> [N,C]
Tensor classify(const Tensor& z, const ModelState& state);    // softmax probabilities

// Full inference path: encode, force-mask unavailable modalities, aggregate.
Tensor embed_batch(const std::vector<Tensor>& windows, const BoolMatrix& availability,
                   const ModelState& state);
std::vector<int> predict(const std::vector<Tensor>& windows, const BoolMatrix& availability,
                         const ModelState& state);

// Checkpoint file: magic "CRSL", u32 version, length-prefixed JSON spec
// header, per-parameter records, CRC32 trailer. Round-trips bit-exactly.
void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

} // namespace crossl
