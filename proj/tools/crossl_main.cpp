// crossl: dataset generation, self-supervised pre-training, fine-tuning and
// the evaluation harness behind one binary.
//
// Exit codes: 0 ok, 2 configuration error, 3 I/O or file-format error,
// 4 numerical divergence.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crossl/data.hpp"
#include "crossl/eval.hpp"
#include "crossl/run_config.hpp"
#include "crossl/train.hpp"

namespace fs = std::filesystem;
using namespace crossl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitDiverged = 4;

std::string config_keys_help() {
    std::string out = "Config keys (JSON document passed via --config):\n";
    for (const auto& doc : run_config_keys()) {
        out += "  " + doc.key;
        if (out.back() != ' ') out += std::string(std::max<int>(1, 38 - static_cast<int>(doc.key.size())), ' ');
        out += "default: " + doc.def + "  " + doc.help + "\n";
    }
    return out;
}

RunConfig load_config_or_die(const std::string& path) {
    RunConfig cfg = load_run_config(path);
    apply_env_overrides(cfg);
    return cfg;
}

void prepare_out_dir(const std::string& out, const RunConfig& cfg) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw io_error("cannot create output dir " + out + ": " + ec.message());
    std::ofstream f(out + "/config.resolved.json", std::ios::trunc);
    if (!f) throw io_error("cannot write " + out + "/config.resolved.json");
    f << dump_run_config(cfg);
}

void write_trace(const TrainTrace& trace, const std::string& out) {
    std::ofstream f(out + "/trace.csv", std::ios::trunc);
    if (!f) throw io_error("cannot write " + out + "/trace.csv");
    f << trace.to_csv();
}

int cmd_generate(const std::string& config_path, const std::string& out) {
    RunConfig cfg = load_config_or_die(config_path);
    prepare_out_dir(out, cfg);
    MultimodalDataset ds = generate_synthetic(cfg.synthetic);
    save_dataset(ds, out);

    std::size_t n_train = ds.indices_of(Split::train).size();
    std::size_t n_val = ds.indices_of(Split::val).size();
    std::size_t n_test = ds.indices_of(Split::test).size();
    std::printf("dataset: %zu samples (train %zu / val %zu / test %zu), %zu classes\n",
                ds.num_samples(), n_train, n_val, n_test, ds.num_classes);
    for (std::size_t m = 0; m < ds.num_modalities(); ++m) {
        const auto& mc = ds.modalities[m];
        std::printf("  %-8s windows [%zu,%zu,%zu] @ %.6g Hz\n", mc.name.c_str(),
                    ds.num_samples(), mc.window_len, mc.channels, mc.sampling_rate);
    }
    return kExitOk;
}

int cmd_pretrain(const std::string& config_path, const std::string& data,
                 const std::string& out) {
    RunConfig cfg = load_config_or_die(config_path);
    prepare_out_dir(out, cfg);
    MultimodalDataset ds = load_dataset(data);
    ModelState init =
        init_model_for_dataset(ds, cfg.encoder, cfg.aggregator, cfg.train.seed);
    TrainResult res = pretrain(ds, init, cfg.train);
    save_checkpoint(res.state, out + "/checkpoint.crsl");
    write_trace(res.trace, out);
    std::printf("pretrain: %zu epochs (%s), best epoch %zu, final val loss %.6g\n",
                res.trace.epochs.size(),
                res.trace.stop_reason == StopReason::early_stop ? "early stop" : "max epochs",
                res.trace.best_epoch,
                res.trace.epochs.empty() ? 0.0 : res.trace.epochs.back().val_metric);
    return kExitOk;
}

int cmd_finetune(const std::string& config_path, const std::string& data,
                 const std::string& ckpt, const std::string& mode_name,
                 const std::string& out) {
    RunConfig cfg = load_config_or_die(config_path);
    const FinetuneMode mode = finetune_mode_from_name(mode_name);
    prepare_out_dir(out, cfg);
    MultimodalDataset ds = load_dataset(data);
    ModelState pretrained = load_checkpoint(ckpt);
    TrainResult res = finetune(ds, pretrained, cfg.train, mode);
    save_checkpoint(res.state, out + "/checkpoint.crsl");
    write_trace(res.trace, out);
    const double test_f1 = evaluate_macro_f1(ds, Split::test, res.state, cfg.train.batch_size);
    std::printf("finetune (%s): %zu epochs, best epoch %zu, test macro-F1 %.6g\n",
                mode_name.c_str(), res.trace.epochs.size(), res.trace.best_epoch, test_f1);
    return kExitOk;
}

int cmd_supervised(const std::string& config_path, const std::string& data,
                   const std::string& out) {
    RunConfig cfg = load_config_or_die(config_path);
    prepare_out_dir(out, cfg);
    MultimodalDataset ds = load_dataset(data);
    TrainResult res = train_supervised(ds, cfg.train, cfg.encoder, cfg.aggregator);
    save_checkpoint(res.state, out + "/checkpoint.crsl");
    write_trace(res.trace, out);
    const double test_f1 = evaluate_macro_f1(ds, Split::test, res.state, cfg.train.batch_size);
    std::printf("supervised: %zu epochs, best epoch %zu, test macro-F1 %.6g\n",
                res.trace.epochs.size(), res.trace.best_epoch, test_f1);
    return kExitOk;
}

struct EvalFlags {
    bool scenario = false;
    bool sweep_mask_flag = false;
    bool sweep_labels_flag = false;
    std::string seeds_csv, grid_csv, fractions_csv;
    std::size_t jobs = 0; // 0: take from config
};

template <typename T>
std::vector<T> parse_csv_list(const std::string& csv, const char* what) {
    std::vector<T> out;
    std::string token;
    std::istringstream in(csv);
    while (std::getline(in, token, ',')) {
        if (token.empty()) continue;
        try {
            if constexpr (std::is_same_v<T, std::uint64_t>) {
                out.push_back(std::stoull(token));
            } else {
                out.push_back(std::stod(token));
            }
        } catch (const std::exception&) {
            throw config_error(std::string(what) + ": bad list entry \"" + token + "\"");
        }
    }
    if (out.empty()) throw config_error(std::string(what) + ": empty list");
    return out;
}

int cmd_eval(const std::string& config_path, const std::string& data, const std::string& out,
             const EvalFlags& flags) {
    const int selected = static_cast<int>(flags.scenario) +
                         static_cast<int>(flags.sweep_mask_flag) +
                         static_cast<int>(flags.sweep_labels_flag);
    if (selected != 1) {
        throw config_error("eval: exactly one of --scenario, --sweep-mask, --sweep-labels");
    }
    RunConfig cfg = load_config_or_die(config_path);
    prepare_out_dir(out, cfg);
    MultimodalDataset ds = load_dataset(data);

    std::vector<std::uint64_t> seeds = cfg.eval.seeds;
    if (!flags.seeds_csv.empty()) seeds = parse_csv_list<std::uint64_t>(flags.seeds_csv, "--seeds");

    HarnessOptions options;
    options.encoder = cfg.encoder;
    options.aggregator = cfg.aggregator;
    options.missing_count = cfg.eval.missing_count;
    options.cache_dir = out + "/cache";
    options.jobs = flags.jobs ? flags.jobs : cfg.eval.jobs;

    EvalOutcome outcome;
    if (flags.scenario) {
        outcome = run_missing_scenarios(ds, cfg.train, seeds, options);
    } else if (flags.sweep_mask_flag) {
        std::vector<double> grid = cfg.eval.grid;
        if (!flags.grid_csv.empty()) grid = parse_csv_list<double>(flags.grid_csv, "--grid");
        outcome = sweep_mask(ds, cfg.train, cfg.train.mask.strategy, grid, seeds, options);
    } else {
        std::vector<double> fractions = cfg.eval.fractions;
        if (!flags.fractions_csv.empty())
            fractions = parse_csv_list<double>(flags.fractions_csv, "--fractions");
        outcome = sweep_labels(ds, cfg.train, fractions, seeds, options);
    }

    emit_report(outcome.report, out);
    std::printf("eval: %zu rows (%zu computed, %zu cached) -> %s/report.{csv,json}\n",
                outcome.report.rows.size(), outcome.computed_cells, outcome.cached_cells,
                out.c_str());
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"CroSSL: cross-modal self-supervised learning for multimodal time series"};
    app.footer(config_keys_help());
    app.require_subcommand(1);

    std::string config_path, data_path, out_dir, ckpt_path, mode_name = "finetuned";
    EvalFlags eval_flags;

    auto* gen = app.add_subcommand("generate", "Generate a synthetic multimodal dataset");
    gen->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    gen->add_option("--out", out_dir, "output dataset directory")->required();

    auto* pre = app.add_subcommand("pretrain", "Self-supervised pre-training (step 1)");
    pre->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    pre->add_option("--data", data_path, "dataset directory or manifest.json")->required();
    pre->add_option("--out", out_dir, "output run directory")->required();

    auto* fin = app.add_subcommand("finetune", "Classifier training on a checkpoint (step 2)");
    fin->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    fin->add_option("--data", data_path, "dataset directory or manifest.json")->required();
    fin->add_option("--ckpt", ckpt_path, "pre-trained checkpoint")->required();
    fin->add_option("--mode", mode_name, "\"finetuned\" or \"fixed\"");
    fin->add_option("--out", out_dir, "output run directory")->required();

    auto* sup = app.add_subcommand("supervised", "End-to-end supervised baseline");
    sup->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    sup->add_option("--data", data_path, "dataset directory or manifest.json")->required();
    sup->add_option("--out", out_dir, "output run directory")->required();

    auto* ev = app.add_subcommand("eval", "Experiment matrix (scenarios and sweeps)");
    ev->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    ev->add_option("--data", data_path, "dataset directory or manifest.json")->required();
    ev->add_option("--out", out_dir, "output report directory")->required();
    ev->add_flag("--scenario", eval_flags.scenario, "missing-modality scenarios");
    ev->add_flag("--sweep-mask", eval_flags.sweep_mask_flag, "masking-rate sweep");
    ev->add_flag("--sweep-labels", eval_flags.sweep_labels_flag, "label-efficiency sweep");
    ev->add_option("--seeds", eval_flags.seeds_csv, "comma-separated seeds (default from config)");
    ev->add_option("--grid", eval_flags.grid_csv, "comma-separated mask grid values");
    ev->add_option("--fractions", eval_flags.fractions_csv, "comma-separated label fractions");
    ev->add_option("--jobs", eval_flags.jobs, "concurrent sweep cells");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_generate(config_path, out_dir);
        if (pre->parsed()) return cmd_pretrain(config_path, data_path, out_dir);
        if (fin->parsed())
            return cmd_finetune(config_path, data_path, ckpt_path, mode_name, out_dir);
        if (sup->parsed()) return cmd_supervised(config_path, data_path, out_dir);
        if (ev->parsed()) return cmd_eval(config_path, data_path, out_dir, eval_flags);
    } catch (const config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const divergence_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const format_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
