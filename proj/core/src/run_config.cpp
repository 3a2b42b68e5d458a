#include "crossl/run_config.hpp"

#include <cstdlib>

#include <nlohmann/json.hpp>

#include "wire.hpp"

namespace crossl {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& section,
                    std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) {
        throw config_error("config: \"" + section + "\" must be an object");
    }
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) {
            if (key == a) {
                ok = true;
                break;
            }
        }
        if (!ok) {
            throw config_error("config: unknown key \"" +
                               (section.empty() ? key : section + "." + key) + "\"");
        }
    }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out, const std::string& section) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw config_error("config: bad value for \"" + section + "." + key + "\"");
    }
}

void parse_synthetic(const json& j, SyntheticConfig& out) {
    reject_unknown(j, "synthetic",
                   {"num_classes", "samples_per_class", "noise_std", "nuisance_std", "seed",
                    "modalities"});
    read_field(j, "num_classes", out.num_classes, "synthetic");
    read_field(j, "samples_per_class", out.samples_per_class, "synthetic");
    read_field(j, "noise_std", out.noise_std, "synthetic");
    read_field(j, "nuisance_std", out.nuisance_std, "synthetic");
    read_field(j, "seed", out.seed, "synthetic");
    if (j.contains("modalities")) {
        if (!j.at("modalities").is_array() || j.at("modalities").empty()) {
            throw config_error("config: \"synthetic.modalities\" must be a non-empty array");
        }
        out.modalities.clear();
        for (const auto& m : j.at("modalities")) {
            reject_unknown(m, "synthetic.modalities[]",
                           {"name", "channels", "window_len", "sampling_rate"});
            ModalityConfig mc;
            if (!m.contains("name")) {
                throw config_error("config: \"synthetic.modalities[].name\" is required");
            }
            read_field(m, "name", mc.name, "synthetic.modalities[]");
            read_field(m, "channels", mc.channels, "synthetic.modalities[]");
            read_field(m, "window_len", mc.window_len, "synthetic.modalities[]");
            read_field(m, "sampling_rate", mc.sampling_rate, "synthetic.modalities[]");
            out.modalities.push_back(std::move(mc));
        }
    }
}

void parse_model(const json& j, EncoderSpec& enc, AggregatorSpec& agg) {
    reject_unknown(j, "model",
                   {"embedding_dim", "global_dim", "conv_channels", "kernel_widths",
                    "strides", "aggregator_hidden"});
    read_field(j, "embedding_dim", enc.embedding_dim, "model");
    read_field(j, "global_dim", agg.output_dim, "model");
    auto read_triple = [&](const char* key, auto assign) {
        if (!j.contains(key)) return;
        std::vector<std::size_t> v;
        read_field(j, key, v, "model");
        if (v.size() != enc.layers.size()) {
            throw config_error("config: \"model." + std::string(key) + "\" must list " +
                               std::to_string(enc.layers.size()) + " values");
        }
        for (std::size_t i = 0; i < v.size(); ++i) assign(enc.layers[i], v[i]);
    };
    read_triple("conv_channels", [](ConvLayerSpec& l, std::size_t v) { l.out_channels = v; });
    read_triple("kernel_widths", [](ConvLayerSpec& l, std::size_t v) { l.kernel_width = v; });
    read_triple("strides", [](ConvLayerSpec& l, std::size_t v) { l.stride = v; });
    read_field(j, "aggregator_hidden", agg.hidden, "model");
}

void parse_masking(const json& j, MaskSpec& out) {
    reject_unknown(j, "masking", {"strategy", "rate", "count"});
    if (j.contains("strategy")) {
        std::string s;
        read_field(j, "strategy", s, "masking");
        if (s == "random") {
            out.strategy = MaskSpec::Strategy::random;
        } else if (s == "spatial") {
            out.strategy = MaskSpec::Strategy::spatial;
        } else {
            throw config_error("config: masking.strategy must be \"random\" or \"spatial\"");
        }
    }
    read_field(j, "rate", out.rate, "masking");
    read_field(j, "count", out.count, "masking");
}

void parse_loss(const json& j, LossWeights& out) {
    reject_unknown(j, "loss", {"lambda", "mu", "nu", "gamma", "eps"});
    read_field(j, "lambda", out.lambda_inv, "loss");
    read_field(j, "mu", out.mu_var, "loss");
    read_field(j, "nu", out.nu_cov, "loss");
    read_field(j, "gamma", out.gamma, "loss");
    read_field(j, "eps", out.eps_var, "loss");
}

void parse_train(const json& j, TrainConfig& out) {
    reject_unknown(j, "train",
                   {"ssl_lr", "cls_lr", "ssl_epochs", "cls_epochs", "freeze_epochs",
                    "patience", "batch_size", "seed"});
    read_field(j, "ssl_lr", out.ssl_lr, "train");
    read_field(j, "cls_lr", out.cls_lr, "train");
    read_field(j, "ssl_epochs", out.ssl_epochs, "train");
    read_field(j, "cls_epochs", out.cls_epochs, "train");
    read_field(j, "freeze_epochs", out.freeze_epochs, "train");
    read_field(j, "patience", out.patience, "train");
    read_field(j, "batch_size", out.batch_size, "train");
    read_field(j, "seed", out.seed, "train");
}

void parse_eval(const json& j, EvalParams& out) {
    reject_unknown(j, "eval", {"seeds", "grid", "fractions", "missing_count", "jobs"});
    read_field(j, "seeds", out.seeds, "eval");
    read_field(j, "grid", out.grid, "eval");
    read_field(j, "fractions", out.fractions, "eval");
    read_field(j, "missing_count", out.missing_count, "eval");
    read_field(j, "jobs", out.jobs, "eval");
    if (out.seeds.empty()) throw config_error("config: eval.seeds must be non-empty");
    if (out.jobs == 0) throw config_error("config: eval.jobs must be >= 1");
}

} // namespace

void RunConfig::validate() const {
    synthetic.validate();
    train.validate();
}

RunConfig parse_run_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw config_error(std::string("config: not valid JSON: ") + e.what());
    }
    reject_unknown(doc, "", {"synthetic", "model", "masking", "loss", "train", "eval"});

    RunConfig cfg;
    if (doc.contains("synthetic")) parse_synthetic(doc.at("synthetic"), cfg.synthetic);
    if (doc.contains("model")) parse_model(doc.at("model"), cfg.encoder, cfg.aggregator);
    if (doc.contains("masking")) parse_masking(doc.at("masking"), cfg.train.mask);
    if (doc.contains("loss")) parse_loss(doc.at("loss"), cfg.train.loss);
    if (doc.contains("train")) parse_train(doc.at("train"), cfg.train);
    if (doc.contains("eval")) parse_eval(doc.at("eval"), cfg.eval);
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    if (path.empty()) return RunConfig{};
    return parse_run_config(wire::read_text_file(path));
}

std::string dump_run_config(const RunConfig& cfg) {
    json mods = json::array();
    for (const auto& m : cfg.synthetic.modalities) {
        mods.push_back({{"name", m.name},
                        {"channels", m.channels},
                        {"window_len", m.window_len},
                        {"sampling_rate", m.sampling_rate}});
    }
    std::vector<std::size_t> channels, widths, strides;
    for (const auto& l : cfg.encoder.layers) {
        channels.push_back(l.out_channels);
        widths.push_back(l.kernel_width);
        strides.push_back(l.stride);
    }
    json doc{
        {"synthetic",
         {{"num_classes", cfg.synthetic.num_classes},
          {"samples_per_class", cfg.synthetic.samples_per_class},
          {"noise_std", cfg.synthetic.noise_std},
          {"nuisance_std", cfg.synthetic.nuisance_std},
          {"seed", cfg.synthetic.seed},
          {"modalities", mods}}},
        {"model",
         {{"embedding_dim", cfg.encoder.embedding_dim},
          {"global_dim", cfg.aggregator.output_dim},
          {"conv_channels", channels},
          {"kernel_widths", widths},
          {"strides", strides},
          {"aggregator_hidden", cfg.aggregator.hidden}}},
        {"masking",
         {{"strategy",
           cfg.train.mask.strategy == MaskSpec::Strategy::random ? "random" : "spatial"},
          {"rate", cfg.train.mask.rate},
          {"count", cfg.train.mask.count}}},
        {"loss",
         {{"lambda", cfg.train.loss.lambda_inv},
          {"mu", cfg.train.loss.mu_var},
          {"nu", cfg.train.loss.nu_cov},
          {"gamma", cfg.train.loss.gamma},
          {"eps", cfg.train.loss.eps_var}}},
        {"train",
         {{"ssl_lr", cfg.train.ssl_lr},
          {"cls_lr", cfg.train.cls_lr},
          {"ssl_epochs", cfg.train.ssl_epochs},
          {"cls_epochs", cfg.train.cls_epochs},
          {"freeze_epochs", cfg.train.freeze_epochs},
          {"patience", cfg.train.patience},
          {"batch_size", cfg.train.batch_size},
          {"seed", cfg.train.seed}}},
        {"eval",
         {{"seeds", cfg.eval.seeds},
          {"grid", cfg.eval.grid},
          {"fractions", cfg.eval.fractions},
          {"missing_count", cfg.eval.missing_count},
          {"jobs", cfg.eval.jobs}}}};
    return doc.dump(2) + "\n";
}

void apply_env_overrides(RunConfig& cfg) {
    if (const char* s = std::getenv("CROSSL_SEED")) {
        try {
            const std::uint64_t seed = std::stoull(s);
            cfg.train.seed = seed;
            cfg.synthetic.seed = seed;
        } catch (const std::exception&) {
            throw config_error("CROSSL_SEED is not an integer: \"" + std::string(s) + "\"");
        }
    }
}

const std::vector<ConfigKeyDoc>& run_config_keys() {
    static const std::vector<ConfigKeyDoc> keys = {
        {"synthetic.num_classes", "4", "classes in the generated dataset"},
        {"synthetic.samples_per_class", "100", "windows generated per class"},
        {"synthetic.noise_std", "0.1", "white-noise amplitude"},
        {"synthetic.nuisance_std", "0.5", "class-independent sinusoid amplitude"},
        {"synthetic.seed", "0", "generator seed"},
        {"synthetic.modalities[].name", "imu/bio/env", "modality name (required per entry)"},
        {"synthetic.modalities[].channels", "3/3/1", "channels per modality"},
        {"synthetic.modalities[].window_len", "50/100/25", "samples per window"},
        {"synthetic.modalities[].sampling_rate", "50/100/25", "Hz, metadata"},
        {"model.embedding_dim", "32", "per-modality embedding size K"},
        {"model.global_dim", "64", "global embedding size D"},
        {"model.conv_channels", "[16,32,64]", "encoder conv output channels"},
        {"model.kernel_widths", "[5,5,3]", "encoder conv kernel widths"},
        {"model.strides", "[2,2,1]", "encoder conv strides"},
        {"model.aggregator_hidden", "[128]", "aggregator hidden layer widths"},
        {"masking.strategy", "spatial", "\"random\" or \"spatial\""},
        {"masking.rate", "0.5", "random strategy: drop probability"},
        {"masking.count", "1", "spatial strategy: modalities hidden per sample"},
        {"loss.lambda", "10", "invariance weight"},
        {"loss.mu", "10", "variance weight"},
        {"loss.nu", "100", "covariance weight"},
        {"loss.gamma", "1", "target per-dimension batch std"},
        {"loss.eps", "0.0001", "variance stability epsilon"},
        {"train.ssl_lr", "0.0001", "pre-training learning rate"},
        {"train.cls_lr", "0.001", "classifier learning rate"},
        {"train.ssl_epochs", "100", "max pre-training epochs"},
        {"train.cls_epochs", "50", "max classifier epochs"},
        {"train.freeze_epochs", "20", "frozen epochs before fine-tuning unfreezes"},
        {"train.patience", "5", "early-stopping patience (epochs)"},
        {"train.batch_size", "32", "batch size"},
        {"train.seed", "0", "training seed"},
        {"eval.seeds", "[0,1,2,3,4]", "seeds per sweep cell"},
        {"eval.grid", "[0,0.25,0.5,0.75]", "mask sweep grid"},
        {"eval.fractions", "[0.01,0.1,0.5,1]", "label fractions"},
        {"eval.missing_count", "1", "modalities missing per affected sample"},
        {"eval.jobs", "1", "concurrent sweep cells"},
    };
    return keys;
}

} // namespace crossl
