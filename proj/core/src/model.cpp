#include "crossl/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "wire.hpp"

namespace crossl {

using nlohmann::json;

std::size_t EncoderSpec::min_window() const {
    // Walk the stack backwards: layer l needs at least kernel_width input
    // steps to produce one output step.
    std::size_t need = 1;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
        need = it->kernel_width + (need - 1) * it->stride;
    }
    return need;
}

namespace {

Tensor init_weight(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.values) {
        // Truncated normal: resample outside two sigma.
        double z;
        do {
            z = rng.normal();
        } while (std::abs(z) > 2.0);
        v = z * scale;
    }
    return t;
}

void validate_specs(const std::vector<ModalityConfig>& mods, const EncoderSpec& enc,
                    const AggregatorSpec& agg, std::size_t num_classes) {
    if (mods.empty()) throw config_error("model: at least one modality required");
    if (num_classes < 2) throw config_error("model: num_classes must be >= 2");
    if (enc.embedding_dim == 0) throw config_error("model: embedding_dim must be > 0");
    if (agg.output_dim == 0) throw config_error("model: output_dim must be > 0");
    for (const auto& l : enc.layers) {
        if (l.out_channels == 0 || l.kernel_width == 0 || l.stride == 0) {
            throw config_error("model: conv layer dims must be positive");
        }
    }
    const std::size_t min_t = enc.min_window();
    std::vector<std::string> seen;
    for (const auto& m : mods) {
        if (m.name.empty()) throw config_error("model: modality name empty");
        if (std::find(seen.begin(), seen.end(), m.name) != seen.end()) {
            throw config_error("model: duplicate modality name \"" + m.name + "\"");
        }
        seen.push_back(m.name);
        if (m.channels == 0) throw config_error("model: modality \"" + m.name + "\" channels must be > 0");
        if (m.window_len < min_t) {
            throw config_error("model: modality \"" + m.name + "\" window_len " +
                               std::to_string(m.window_len) +
                               " below encoder receptive field " + std::to_string(min_t));
        }
        if (m.sampling_rate <= 0.0) {
            throw config_error("model: modality \"" + m.name + "\" sampling_rate must be > 0");
        }
    }
}

} // namespace

ModelState::ModelState(std::vector<ModalityConfig> modalities, EncoderSpec encoder,
                       AggregatorSpec aggregator, std::size_t num_classes, Rng& rng)
    : modalities_(std::move(modalities)),
      encoder_(encoder),
      aggregator_(aggregator),
      num_classes_(num_classes) {
    validate_specs(modalities_, encoder_, aggregator_, num_classes_);
    build_params(&rng);
}

void ModelState::build_params(Rng* rng) {
    params_.clear();
    enc_begin_.clear();
    Rng dummy(0);
    Rng& r = rng ? *rng : dummy;

    auto add = [&](const std::string& name, std::vector<std::size_t> shape,
                   std::size_t fan_in) {
        Tensor value = rng && fan_in > 0 ? init_weight(shape, fan_in, r)
                                         : Tensor::zeros(shape);
        params_.emplace_back(name, std::move(value));
    };

    for (std::size_t m = 0; m < modalities_.size(); ++m) {
        enc_begin_.push_back(params_.size());
        std::size_t c_in = modalities_[m].channels;
        const std::string prefix = "enc" + std::to_string(m) + ".";
        for (std::size_t l = 0; l < encoder_.layers.size(); ++l) {
            const auto& spec = encoder_.layers[l];
            const std::string lname = prefix + "conv" + std::to_string(l + 1);
            add(lname + ".weight", {spec.kernel_width, c_in, spec.out_channels},
                spec.kernel_width * c_in);
            add(lname + ".bias", {spec.out_channels}, 0);
            c_in = spec.out_channels;
        }
        add(prefix + "proj.weight", {c_in, encoder_.embedding_dim}, c_in);
        add(prefix + "proj.bias", {encoder_.embedding_dim}, 0);
    }

    agg_begin_ = params_.size();
    std::size_t width = modalities_.size() * encoder_.embedding_dim;
    for (std::size_t h = 0; h < aggregator_.hidden.size(); ++h) {
        const std::string lname = "agg.fc" + std::to_string(h);
        add(lname + ".weight", {width, aggregator_.hidden[h]}, width);
        add(lname + ".bias", {aggregator_.hidden[h]}, 0);
        width = aggregator_.hidden[h];
    }
    add("agg.out.weight", {width, aggregator_.output_dim}, width);
    add("agg.out.bias", {aggregator_.output_dim}, 0);

    cls_begin_ = params_.size();
    add("cls.weight", {aggregator_.output_dim, num_classes_}, aggregator_.output_dim);
    add("cls.bias", {num_classes_}, 0);
}

ModelState ModelState::clone() const {
    ModelState copy;
    copy.modalities_ = modalities_;
    copy.encoder_ = encoder_;
    copy.aggregator_ = aggregator_;
    copy.num_classes_ = num_classes_;
    copy.agg_begin_ = agg_begin_;
    copy.cls_begin_ = cls_begin_;
    copy.enc_begin_ = enc_begin_;
    copy.params_.reserve(params_.size());
    for (const auto& p : params_) {
        copy.params_.emplace_back(p.name, p.value(), p.trainable);
    }
    return copy;
}

Parameter& ModelState::param(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) return p;
    }
    throw config_error("model: no parameter named \"" + name + "\"");
}

std::span<Parameter> ModelState::encoder_params(std::size_t modality) {
    const std::size_t begin = enc_begin_.at(modality);
    const std::size_t end =
        modality + 1 < enc_begin_.size() ? enc_begin_[modality + 1] : agg_begin_;
    return {params_.data() + begin, end - begin};
}

std::span<Parameter> ModelState::all_encoder_params() {
    return {params_.data(), agg_begin_};
}

std::span<Parameter> ModelState::aggregator_params() {
    return {params_.data() + agg_begin_, cls_begin_ - agg_begin_};
}

std::span<Parameter> ModelState::classifier_params() {
    return {params_.data() + cls_begin_, params_.size() - cls_begin_};
}

std::span<const Parameter> ModelState::encoder_params(std::size_t modality) const {
    auto s = const_cast<ModelState*>(this)->encoder_params(modality);
    return {s.data(), s.size()};
}

std::span<const Parameter> ModelState::aggregator_params() const {
    auto s = const_cast<ModelState*>(this)->aggregator_params();
    return {s.data(), s.size()};
}

std::span<const Parameter> ModelState::classifier_params() const {
    auto s = const_cast<ModelState*>(this)->classifier_params();
    return {s.data(), s.size()};
}

void ModelState::set_trainable_encoders_aggregator(bool trainable) {
    for (std::size_t i = 0; i < cls_begin_; ++i) params_[i].trainable = trainable;
}

std::vector<Tensor> ModelState::snapshot_values() const {
    std::vector<Tensor> snap;
    snap.reserve(params_.size());
    for (const auto& p : params_) snap.push_back(p.value());
    return snap;
}

void ModelState::restore_values(const std::vector<Tensor>& snapshot) {
    if (snapshot.size() != params_.size()) {
        throw shape_error("model: snapshot has " + std::to_string(snapshot.size()) +
                          " tensors, model has " + std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        require_shape(snapshot[i], params_[i].value().shape, "restore " + params_[i].name);
        params_[i].value() = snapshot[i];
    }
}

// ---------------------------------------------------------------------------
// Forward passes

Var encode(const Var& window_batch, std::size_t modality, const ModelState& state) {
    if (modality >= state.num_modalities()) {
        throw shape_error("encode: modality index " + std::to_string(modality) +
                          " out of range (M=" + std::to_string(state.num_modalities()) + ")");
    }
    const auto& mc = state.modalities()[modality];
    if (window_batch->value.rank() != 3 || window_batch->value.shape[1] != mc.window_len ||
        window_batch->value.shape[2] != mc.channels) {
        throw shape_error("encode: modality \"" + mc.name + "\" expects [N," +
                          std::to_string(mc.window_len) + "," + std::to_string(mc.channels) +
                          "], got " + shape_to_string(window_batch->value.shape));
    }

    auto ps = state.encoder_params(modality);
    Var x = window_batch;
    for (std::size_t l = 0; l < state.encoder_spec().layers.size(); ++l) {
        const auto& spec = state.encoder_spec().layers[l];
        x = relu(conv1d(x, ps[2 * l].node, ps[2 * l + 1].node, spec.stride));
    }
    x = global_mean_pool(x);
    const std::size_t proj = 2 * state.encoder_spec().layers.size();
    return dense(x, ps[proj].node, ps[proj + 1].node);
}

Tensor encode(const Tensor& window_batch, std::size_t modality, const ModelState& state) {
    return encode(constant(window_batch), modality, state)->value;
}

Var encode_all(const std::vector<Var>& windows, const ModelState& state) {
    const std::size_t m = state.num_modalities();
    if (windows.size() != m) {
        throw shape_error("encode_all: got " + std::to_string(windows.size()) +
                          " modality tensors, model has " + std::to_string(m));
    }
    std::vector<Var> embeddings;
    embeddings.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        embeddings.push_back(encode(windows[i], i, state));
    }
    Var stacked = concat_features(embeddings);
    const std::size_t n = stacked->value.shape[0];
    return reshape(stacked, {n, m, state.embedding_dim()});
}

Tensor encode_all(const std::vector<Tensor>& windows, const BoolMatrix* availability,
                  const ModelState& state) {
    const std::size_t m = state.num_modalities();
    if (windows.size() != m) {
        throw shape_error("encode_all: got " + std::to_string(windows.size()) +
                          " modality tensors, model has " + std::to_string(m));
    }
    if (availability) {
        for (std::size_t i = 0; i < m; ++i) {
            if (!windows[i].empty()) continue;
            for (std::size_t s = 0; s < availability->rows; ++s) {
                if (availability->get(s, i)) {
                    throw config_error("encode_all: modality " + std::to_string(i) +
                                       " has no tensor but is flagged available for sample " +
                                       std::to_string(s));
                }
            }
        }
    }
    std::vector<Var> vars;
    vars.reserve(m);
    std::size_t n = 0;
    for (const auto& w : windows) {
        if (!w.empty()) {
            n = w.shape[0];
            break;
        }
    }
    for (std::size_t i = 0; i < m; ++i) {
        if (windows[i].empty()) {
            const auto& mc = state.modalities()[i];
            vars.push_back(constant(Tensor::zeros({n, mc.window_len, mc.channels})));
        } else {
            vars.push_back(constant(windows[i]));
        }
    }
    return encode_all(vars, state)->value;
}

Var aggregate(const Var& masked_q, const ModelState& state) {
    const std::size_t m = state.num_modalities();
    const std::size_t k = state.embedding_dim();
    if (masked_q->value.rank() != 3 || masked_q->value.shape[1] != m ||
        masked_q->value.shape[2] != k) {
        throw shape_error("aggregate: expected [N," + std::to_string(m) + "," +
                          std::to_string(k) + "], got " +
                          shape_to_string(masked_q->value.shape));
    }
    const std::size_t n = masked_q->value.shape[0];
    auto ps = state.aggregator_params();

    Var x = reshape(masked_q, {n, m * k});
    const std::size_t hidden = state.aggregator_spec().hidden.size();
    for (std::size_t h = 0; h < hidden; ++h) {
        x = relu(dense(x, ps[2 * h].node, ps[2 * h + 1].node));
    }
    return dense(x, ps[2 * hidden].node, ps[2 * hidden + 1].node);
}

Tensor aggregate(const Tensor& masked_q, const ModelState& state) {
    return aggregate(constant(masked_q), state)->value;
}

Var classifier_logits(const Var& z, const ModelState& state) {
    auto ps = state.classifier_params();
    return dense(z, ps[0].node, ps[1].node);
}

Tensor classify(const Tensor& z, const ModelState& state) {
    return softmax_rows(classifier_logits(constant(z), state)->value);
}

Tensor embed_batch(const std::vector<Tensor>& windows, const BoolMatrix& availability,
                   const ModelState& state) {
    Tensor q = encode_all(windows, &availability, state);
    MaskMatrix forced = forced_modality_mask(availability, state.embedding_dim());
    return aggregate(apply_mask(q, forced), state);
}

std::vector<int> predict(const std::vector<Tensor>& windows, const BoolMatrix& availability,
                         const ModelState& state) {
    Tensor probs = classify(embed_batch(windows, availability, state), state);
    const std::size_t n = probs.shape[0], c = probs.shape[1];
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = probs.values.data() + i * c;
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j) {
            if (row[j] > row[best]) best = j;
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint persistence

namespace {

json specs_to_json(const ModelState& s) {
    json mods = json::array();
    for (const auto& m : s.modalities()) {
        mods.push_back({{"name", m.name},
                        {"channels", m.channels},
                        {"window_len", m.window_len},
                        {"sampling_rate", m.sampling_rate}});
    }
    json layers = json::array();
    for (const auto& l : s.encoder_spec().layers) {
        layers.push_back({{"out_channels", l.out_channels},
                          {"kernel_width", l.kernel_width},
                          {"stride", l.stride}});
    }
    return json{{"modalities", mods},
                {"encoder", {{"layers", layers}, {"embedding_dim", s.embedding_dim()}}},
                {"aggregator",
                 {{"hidden", s.aggregator_spec().hidden}, {"output_dim", s.global_dim()}}},
                {"num_classes", s.num_classes()}};
}

} // namespace

void save_checkpoint(const ModelState& state, const std::string& path) {
    std::vector<std::uint8_t> buf;
    wire::put_bytes(buf, "CRSL", 4);
    wire::put_u32(buf, ModelState::kFormatVersion);

    const std::string header = specs_to_json(state).dump();
    wire::put_u32(buf, static_cast<std::uint32_t>(header.size()));
    wire::put_bytes(buf, header.data(), header.size());

    for (const auto& p : state.params()) {
        wire::put_u32(buf, static_cast<std::uint32_t>(p.name.size()));
        wire::put_bytes(buf, p.name.data(), p.name.size());
        wire::put_u32(buf, static_cast<std::uint32_t>(p.value().rank()));
        for (std::size_t d : p.value().shape) {
            wire::put_u32(buf, static_cast<std::uint32_t>(d));
        }
        for (double v : p.value().values) wire::put_f64(buf, v);
    }

    wire::put_u32(buf, wire::crc32_of(buf.data(), buf.size()));
    wire::write_file(path, buf);
}

ModelState load_checkpoint(const std::string& path) {
    const auto buf = wire::read_file(path);
    wire::Reader r(buf, "checkpoint " + path);

    if (buf.size() < 4) r.fail("file shorter than CRC trailer");
    const std::uint32_t stored_crc = [&] {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(buf[buf.size() - 4 + i]) << (8 * i);
        return v;
    }();
    const std::uint32_t actual_crc = wire::crc32_of(buf.data(), buf.size() - 4);
    if (stored_crc != actual_crc) {
        throw format_error("checkpoint " + path + ": CRC mismatch at offset " +
                           std::to_string(buf.size() - 4) + " (payload corrupted)");
    }

    r.expect_magic("CRSL");
    const std::uint32_t version = r.u32();
    if (version != ModelState::kFormatVersion) {
        throw format_error("checkpoint " + path + ": unsupported format_version " +
                           std::to_string(version) + " at offset 4");
    }

    const std::uint32_t header_len = r.u32();
    json header;
    try {
        header = json::parse(r.str(header_len));
    } catch (const json::exception& e) {
        throw format_error("checkpoint " + path + ": bad spec header: " + e.what());
    }

    ModelState state;
    try {
        for (const auto& m : header.at("modalities")) {
            state.modalities_.push_back({m.at("name").get<std::string>(),
                                         m.at("channels").get<std::size_t>(),
                                         m.at("window_len").get<std::size_t>(),
                                         m.at("sampling_rate").get<double>()});
        }
        const auto& layers = header.at("encoder").at("layers");
        if (layers.size() != state.encoder_.layers.size()) {
            throw format_error("checkpoint " + path + ": expected 3 conv layers");
        }
        for (std::size_t i = 0; i < layers.size(); ++i) {
            state.encoder_.layers[i] = {layers[i].at("out_channels").get<std::size_t>(),
                                        layers[i].at("kernel_width").get<std::size_t>(),
                                        layers[i].at("stride").get<std::size_t>()};
        }
        state.encoder_.embedding_dim = header.at("encoder").at("embedding_dim").get<std::size_t>();
        state.aggregator_.hidden =
            header.at("aggregator").at("hidden").get<std::vector<std::size_t>>();
        state.aggregator_.output_dim = header.at("aggregator").at("output_dim").get<std::size_t>();
        state.num_classes_ = header.at("num_classes").get<std::size_t>();
    } catch (const json::exception& e) {
        throw format_error("checkpoint " + path + ": spec header missing field: " + e.what());
    }
    try {
        validate_specs(state.modalities_, state.encoder_, state.aggregator_, state.num_classes_);
    } catch (const config_error& e) {
        throw format_error("checkpoint " + path + ": invalid specs: " + e.what());
    }

    state.build_params(nullptr); // zero-filled, overwritten below

    for (auto& p : state.params_) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.str(name_len);
        if (name != p.name) {
            throw format_error("checkpoint " + path + ": parameter \"" + name +
                               "\" where \"" + p.name + "\" expected at offset " +
                               std::to_string(r.offset()));
        }
        const std::uint32_t rank = r.u32();
        std::vector<std::size_t> dims(rank);
        for (auto& d : dims) d = r.u32();
        if (dims != p.value().shape) {
            throw format_error("checkpoint " + path + ": parameter \"" + name +
                               "\" has shape " + shape_to_string(dims) + ", expected " +
                               shape_to_string(p.value().shape));
        }
        r.f64_block(p.value().values.data(), p.value().size());
    }

    if (r.remaining() != 4) {
        r.fail("trailing bytes after parameters");
    }
    return state;
}

} // namespace crossl
