#include "crossl/eval.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "wire.hpp"

namespace crossl {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Aggregation and serialization

namespace {

std::string opt_to_string(const std::optional<double>& v) {
    if (!v) return "-";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", *v);
    return buf;
}

std::string condition_key(const EvalRow& r) {
    return r.experiment + "|" + r.scenario + "|" + r.strategy + "|" +
           opt_to_string(r.grid_value) + "|" + opt_to_string(r.label_fraction) + "|" + r.mode;
}

} // namespace

void EvalReport::recompute_aggregates() {
    aggregates.clear();
    std::vector<std::string> order;
    std::map<std::string, std::vector<const EvalRow*>> groups;
    for (const auto& r : rows) {
        const std::string key = condition_key(r);
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(&r);
    }
    for (const auto& key : order) {
        const auto& members = groups[key];
        EvalAggregate a;
        const EvalRow& first = *members.front();
        a.experiment = first.experiment;
        a.scenario = first.scenario;
        a.strategy = first.strategy;
        a.grid_value = first.grid_value;
        a.label_fraction = first.label_fraction;
        a.mode = first.mode;
        a.num_seeds = members.size();
        double sum = 0.0;
        for (const auto* r : members) sum += r->macro_f1;
        a.mean_macro_f1 = sum / static_cast<double>(members.size());
        double ss = 0.0;
        for (const auto* r : members) {
            const double d = r->macro_f1 - a.mean_macro_f1;
            ss += d * d;
        }
        a.std_macro_f1 =
            members.size() > 1 ? std::sqrt(ss / static_cast<double>(members.size() - 1)) : 0.0;
        aggregates.push_back(std::move(a));
    }
}

std::string report_to_csv(const EvalReport& report) {
    std::ostringstream os;
    os << "experiment,scenario,strategy,grid_value,label_fraction,mode,seed,macro_f1";
    for (std::size_t c = 0; c < report.num_classes; ++c) os << ",f1_class_" << c;
    os << "\n";
    char buf[64];
    for (const auto& r : report.rows) {
        os << r.experiment << ',' << r.scenario << ',' << r.strategy << ','
           << opt_to_string(r.grid_value) << ',' << opt_to_string(r.label_fraction) << ','
           << r.mode << ',' << r.seed << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", r.macro_f1);
        os << buf;
        for (std::size_t c = 0; c < report.num_classes; ++c) {
            const double v = c < r.per_class_f1.size() ? r.per_class_f1[c] : 0.0;
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            os << ',' << buf;
        }
        os << "\n";
    }
    return os.str();
}

namespace {

json row_to_json(const EvalRow& r) {
    json j{{"experiment", r.experiment}, {"scenario", r.scenario},
           {"strategy", r.strategy},    {"mode", r.mode},
           {"seed", r.seed},            {"macro_f1", r.macro_f1},
           {"per_class_f1", r.per_class_f1}};
    j["grid_value"] = r.grid_value ? json(*r.grid_value) : json(nullptr);
    j["label_fraction"] = r.label_fraction ? json(*r.label_fraction) : json(nullptr);
    return j;
}

EvalRow row_from_json(const json& j) {
    EvalRow r;
    r.experiment = j.at("experiment").get<std::string>();
    r.scenario = j.at("scenario").get<std::string>();
    r.strategy = j.at("strategy").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.per_class_f1 = j.at("per_class_f1").get<std::vector<double>>();
    if (!j.at("grid_value").is_null()) r.grid_value = j.at("grid_value").get<double>();
    if (!j.at("label_fraction").is_null())
        r.label_fraction = j.at("label_fraction").get<double>();
    return r;
}

} // namespace

std::string report_to_json(const EvalReport& report) {
    json rows = json::array();
    for (const auto& r : report.rows) rows.push_back(row_to_json(r));
    json aggs = json::array();
    for (const auto& a : report.aggregates) {
        json j{{"experiment", a.experiment}, {"scenario", a.scenario},
               {"strategy", a.strategy},     {"mode", a.mode},
               {"num_seeds", a.num_seeds},   {"mean_macro_f1", a.mean_macro_f1},
               {"std_macro_f1", a.std_macro_f1}};
        j["grid_value"] = a.grid_value ? json(*a.grid_value) : json(nullptr);
        j["label_fraction"] = a.label_fraction ? json(*a.label_fraction) : json(nullptr);
        aggs.push_back(std::move(j));
    }
    json doc{{"experiment", report.experiment},
             {"num_classes", report.num_classes},
             {"rows", rows},
             {"aggregates", aggs}};
    return doc.dump(2) + "\n";
}

void emit_report(const EvalReport& report, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("cannot create report dir " + dir + ": " + ec.message());
    wire::write_text_file(dir + "/report.csv", report_to_csv(report));
    wire::write_text_file(dir + "/report.json", report_to_json(report));
}

EvalReport parse_report_json(const std::string& path) {
    json doc;
    try {
        doc = json::parse(wire::read_text_file(path));
    } catch (const json::exception& e) {
        throw format_error("report " + path + ": " + e.what());
    }
    EvalReport report;
    try {
        report.experiment = doc.at("experiment").get<std::string>();
        report.num_classes = doc.at("num_classes").get<std::size_t>();
        for (const auto& j : doc.at("rows")) report.rows.push_back(row_from_json(j));
    } catch (const json::exception& e) {
        throw format_error("report " + path + ": missing field: " + e.what());
    }
    report.recompute_aggregates();
    return report;
}

// ---------------------------------------------------------------------------
// Cell execution with caching

namespace {

std::uint64_t config_fingerprint(const TrainConfig& cfg, const HarnessOptions& opt) {
    std::ostringstream os;
    os << cfg.ssl_lr << '|' << cfg.cls_lr << '|' << cfg.ssl_epochs << '|' << cfg.cls_epochs
       << '|' << cfg.freeze_epochs << '|' << cfg.patience << '|' << cfg.batch_size << '|'
       << cfg.loss.lambda_inv << '|' << cfg.loss.mu_var << '|' << cfg.loss.nu_cov << '|'
       << cfg.loss.gamma << '|' << cfg.loss.eps_var << '|' << opt.missing_count << '|'
       << opt.encoder.embedding_dim << '|' << opt.aggregator.output_dim;
    for (const auto& l : opt.encoder.layers)
        os << '|' << l.out_channels << ',' << l.kernel_width << ',' << l.stride;
    for (std::size_t h : opt.aggregator.hidden) os << '|' << h;
    return hash_str64(os.str());
}

// Deduplicates identical SSL pre-training runs across cells: in memory for
// the current process (threads share a future) and on disk across processes.
class SslCache {
public:
    explicit SslCache(std::string dir) : dir_(std::move(dir)) {}

    std::shared_ptr<const ModelState> get_or_train(const std::string& key,
                                                   const std::function<ModelState()>& train) {
        std::shared_future<std::shared_ptr<const ModelState>> fut;
        bool owner = false;
        {
            std::lock_guard<std::mutex> lock(mu_);
            auto it = futures_.find(key);
            if (it == futures_.end()) {
                std::promise<std::shared_ptr<const ModelState>> prom;
                fut = prom.get_future().share();
                futures_.emplace(key, fut);
                promises_.emplace(key, std::move(prom));
                owner = true;
            } else {
                fut = it->second;
            }
        }
        if (owner) {
            std::shared_ptr<const ModelState> state;
            try {
                const std::string path = file_path(key);
                if (!dir_.empty() && fs::exists(path)) {
                    state = std::make_shared<const ModelState>(load_checkpoint(path));
                } else {
                    state = std::make_shared<const ModelState>(train());
                    if (!dir_.empty()) {
                        fs::create_directories(dir_);
                        save_checkpoint(*state, path);
                    }
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu_);
                promises_.at(key).set_exception(std::current_exception());
                promises_.erase(key);
                throw;
            }
            std::lock_guard<std::mutex> lock(mu_);
            promises_.at(key).set_value(state);
            promises_.erase(key);
        }
        return fut.get();
    }

private:
    std::string file_path(const std::string& key) const {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(hash_str64(key)));
        return dir_ + "/ssl_" + buf + ".crsl";
    }

    std::string dir_;
    std::mutex mu_;
    std::map<std::string, std::shared_future<std::shared_ptr<const ModelState>>> futures_;
    std::map<std::string, std::promise<std::shared_ptr<const ModelState>>> promises_;
};

struct Cell {
    std::string key; // stable id of (condition, seed, config, dataset)
    std::function<std::vector<EvalRow>()> compute;
};

class CellRunner {
public:
    CellRunner(const HarnessOptions& opt) : opt_(opt) {
        if (!opt.cache_dir.empty()) {
            cells_dir_ = opt.cache_dir + "/cells";
            fs::create_directories(cells_dir_);
        }
    }

    EvalOutcome run(std::vector<Cell> cells, std::string experiment,
                    std::size_t num_classes) {
        std::vector<std::vector<EvalRow>> results(cells.size());
        std::atomic<std::size_t> next{0};
        std::atomic<std::size_t> computed{0}, cached{0};
        std::exception_ptr first_error;
        std::mutex error_mu;

        auto worker = [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= cells.size()) return;
                try {
                    if (auto hit = load_cell(cells[i].key)) {
                        results[i] = std::move(*hit);
                        ++cached;
                    } else {
                        results[i] = cells[i].compute();
                        store_cell(cells[i].key, results[i]);
                        ++computed;
                    }
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        };

        const std::size_t jobs = std::max<std::size_t>(1, opt_.jobs);
        if (jobs == 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (std::size_t j = 0; j < std::min(jobs, cells.size()); ++j) {
                pool.emplace_back(worker);
            }
            for (auto& t : pool) t.join();
        }
        if (first_error) std::rethrow_exception(first_error);

        EvalOutcome out;
        out.report.experiment = std::move(experiment);
        out.report.num_classes = num_classes;
        for (auto& rows : results) {
            for (auto& r : rows) out.report.rows.push_back(std::move(r));
        }
        out.report.recompute_aggregates();
        out.computed_cells = computed;
        out.cached_cells = cached;
        return out;
    }

private:
    std::string cell_path(const std::string& key) const {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(hash_str64(key)));
        return cells_dir_ + "/cell_" + buf + ".json";
    }

    std::optional<std::vector<EvalRow>> load_cell(const std::string& key) {
        if (cells_dir_.empty()) return std::nullopt;
        const std::string path = cell_path(key);
        if (!fs::exists(path)) return std::nullopt;
        try {
            json doc = json::parse(wire::read_text_file(path));
            if (doc.at("key").get<std::string>() != key) return std::nullopt;
            std::vector<EvalRow> rows;
            for (const auto& j : doc.at("rows")) rows.push_back(row_from_json(j));
            return rows;
        } catch (const std::exception&) {
            return std::nullopt; // unreadable cache entries are recomputed
        }
    }

    void store_cell(const std::string& key, const std::vector<EvalRow>& rows) {
        if (cells_dir_.empty()) return;
        json jrows = json::array();
        for (const auto& r : rows) jrows.push_back(row_to_json(r));
        json doc{{"key", key}, {"rows", jrows}};
        wire::write_text_file(cell_path(key), doc.dump() + "\n");
    }

    const HarnessOptions& opt_;
    std::string cells_dir_;
};

EvalRow make_row(std::string experiment, std::string scenario, std::string strategy,
                 std::optional<double> grid, std::optional<double> fraction, std::string mode,
                 std::uint64_t seed, const MacroF1& f1) {
    EvalRow r;
    r.experiment = std::move(experiment);
    r.scenario = std::move(scenario);
    r.strategy = std::move(strategy);
    r.grid_value = grid;
    r.label_fraction = fraction;
    r.mode = std::move(mode);
    r.seed = seed;
    r.macro_f1 = f1.macro;
    r.per_class_f1 = f1.per_class;
    return r;
}

MacroF1 test_macro_f1(const MultimodalDataset& ds, const ModelState& state,
                      std::size_t batch_size) {
    auto batches = make_batches(ds, Split::test, batch_size, 0, BatchMode::eval);
    std::vector<int> preds, labels;
    for (const auto& b : batches) {
        auto p = predict(b.windows, b.availability, state);
        preds.insert(preds.end(), p.begin(), p.end());
        labels.insert(labels.end(), b.labels.begin(), b.labels.end());
    }
    return macro_f1(preds, labels, ds.num_classes);
}

const char* strategy_name(MaskSpec::Strategy s) {
    return s == MaskSpec::Strategy::random ? "random" : "spatial";
}

} // namespace

// ---------------------------------------------------------------------------
// Experiments

EvalOutcome run_missing_scenarios(const MultimodalDataset& dataset, const TrainConfig& cfg,
                                  const std::vector<std::uint64_t>& seeds,
                                  const HarnessOptions& options) {
    if (seeds.empty()) throw config_error("run_missing_scenarios: need at least one seed");
    cfg.validate();
    if (options.missing_count >= dataset.num_modalities()) {
        throw config_error("run_missing_scenarios: missing_count must stay below M");
    }

    const std::uint64_t ds_hash = dataset.content_hash();
    const std::uint64_t cfg_hash = config_fingerprint(cfg, options);
    auto ssl_cache = std::make_shared<SslCache>(
        options.cache_dir.empty() ? "" : options.cache_dir + "/ssl");

    const std::vector<MissingScenario::Phase> phases = {
        MissingScenario::Phase::none, MissingScenario::Phase::inference_only,
        MissingScenario::Phase::finetune_and_inference};
    const std::vector<MaskSpec> specs = {MaskSpec::random_rate(cfg.mask.rate),
                                         MaskSpec::spatial_count(cfg.mask.count)};

    auto scenario_dataset = [&](MissingScenario::Phase phase, std::uint64_t seed) {
        MissingScenario sc{phase, options.missing_count};
        Rng rng = Rng(seed).fork("missing", static_cast<std::uint64_t>(phase));
        return simulate_missing(dataset, sc, rng);
    };

    auto pretrained_for = [&, ds_hash, cfg_hash](const MaskSpec& spec, std::uint64_t seed) {
        std::ostringstream key;
        key << "ssl|" << ds_hash << '|' << cfg_hash << '|' << spec.describe() << '|' << seed;
        return ssl_cache->get_or_train(key.str(), [&, spec, seed] {
            TrainConfig c = cfg;
            c.mask = spec;
            c.seed = seed;
            return pretrain(dataset,
                            init_model_for_dataset(dataset, options.encoder,
                                                   options.aggregator, seed),
                            c)
                .state;
        });
    };

    std::vector<Cell> cells;
    for (std::uint64_t seed : seeds) {
        for (auto phase : phases) {
            const std::string scen = MissingScenario::phase_name(phase);
            std::ostringstream base;
            base << "missing|" << ds_hash << '|' << cfg_hash << '|' << scen << '|' << seed;

            cells.push_back({base.str() + "|supervised", [=, &dataset, &options] {
                TrainConfig c = cfg;
                c.seed = seed;
                auto ds_s = scenario_dataset(phase, seed);
                auto res = train_supervised(ds_s, c, options.encoder, options.aggregator);
                return std::vector<EvalRow>{make_row(
                    "missing_scenarios", scen, "-", std::nullopt, std::nullopt, "supervised",
                    seed, test_macro_f1(ds_s, res.state, c.batch_size))};
            }});

            for (const auto& spec : specs) {
                for (auto mode : {FinetuneMode::fixed, FinetuneMode::finetuned}) {
                    const std::string mode_name =
                        mode == FinetuneMode::fixed ? "fixed" : "finetuned";
                    cells.push_back(
                        {base.str() + "|" + spec.describe() + "|" + mode_name, [=, &dataset] {
                            TrainConfig c = cfg;
                            c.seed = seed;
                            auto ckpt = pretrained_for(spec, seed);
                            auto ds_s = scenario_dataset(phase, seed);
                            auto res = finetune(ds_s, *ckpt, c, mode);
                            return std::vector<EvalRow>{make_row(
                                "missing_scenarios", scen, strategy_name(spec.strategy),
                                std::nullopt, std::nullopt, mode_name, seed,
                                test_macro_f1(ds_s, res.state, c.batch_size))};
                        }});
                }
            }
        }
    }

    CellRunner runner(options);
    return runner.run(std::move(cells), "missing_scenarios", dataset.num_classes);
}

EvalOutcome sweep_mask(const MultimodalDataset& dataset, const TrainConfig& cfg,
                       MaskSpec::Strategy strategy, const std::vector<double>& grid,
                       const std::vector<std::uint64_t>& seeds,
                       const HarnessOptions& options) {
    if (seeds.empty()) throw config_error("sweep_mask: need at least one seed");
    if (grid.empty()) throw config_error("sweep_mask: grid must be non-empty");
    cfg.validate();
    const std::size_t m = dataset.num_modalities();
    for (double g : grid) {
        if (strategy == MaskSpec::Strategy::random) {
            if (g < 0.0 || g > 1.0) {
                throw config_error("sweep_mask: random rate " + std::to_string(g) +
                                   " outside [0,1]");
            }
        } else {
            if (g < 0.0 || g != std::floor(g) || static_cast<std::size_t>(g) >= m) {
                throw config_error("sweep_mask: spatial count " + std::to_string(g) +
                                   " outside [0, M-1]");
            }
        }
    }

    const std::uint64_t ds_hash = dataset.content_hash();
    const std::uint64_t cfg_hash = config_fingerprint(cfg, options);
    auto ssl_cache = std::make_shared<SslCache>(
        options.cache_dir.empty() ? "" : options.cache_dir + "/ssl");

    std::vector<Cell> cells;
    for (double g : grid) {
        const MaskSpec spec = strategy == MaskSpec::Strategy::random
                                  ? MaskSpec::random_rate(g)
                                  : MaskSpec::spatial_count(static_cast<std::size_t>(g));
        for (std::uint64_t seed : seeds) {
            for (auto mode : {FinetuneMode::fixed, FinetuneMode::finetuned}) {
                const std::string mode_name =
                    mode == FinetuneMode::fixed ? "fixed" : "finetuned";
                std::ostringstream key;
                key << "sweep_mask|" << ds_hash << '|' << cfg_hash << '|' << spec.describe()
                    << '|' << mode_name << '|' << seed;
                cells.push_back({key.str(), [=, &dataset, &options] {
                    TrainConfig c = cfg;
                    c.mask = spec;
                    c.seed = seed;
                    std::ostringstream ssl_key;
                    ssl_key << "ssl|" << ds_hash << '|' << cfg_hash << '|' << spec.describe()
                            << '|' << seed;
                    auto ckpt = ssl_cache->get_or_train(ssl_key.str(), [&] {
                        return pretrain(dataset,
                                        init_model_for_dataset(dataset, options.encoder,
                                                               options.aggregator, seed),
                                        c)
                            .state;
                    });
                    auto res = finetune(dataset, *ckpt, c, mode);
                    return std::vector<EvalRow>{make_row(
                        "sweep_mask", "-", strategy_name(strategy), g, std::nullopt,
                        mode_name, seed, test_macro_f1(dataset, res.state, c.batch_size))};
                }});
            }
        }
    }

    CellRunner runner(options);
    return runner.run(std::move(cells), "sweep_mask", dataset.num_classes);
}

EvalOutcome sweep_labels(const MultimodalDataset& dataset, const TrainConfig& cfg,
                         const std::vector<double>& fractions,
                         const std::vector<std::uint64_t>& seeds,
                         const HarnessOptions& options) {
    if (seeds.empty()) throw config_error("sweep_labels: need at least one seed");
    if (fractions.empty()) throw config_error("sweep_labels: fractions must be non-empty");
    cfg.validate();
    for (double f : fractions) {
        if (!(f > 0.0) || f > 1.0) {
            throw config_error("sweep_labels: fraction " + std::to_string(f) +
                               " outside (0,1]");
        }
    }

    const std::uint64_t ds_hash = dataset.content_hash();
    const std::uint64_t cfg_hash = config_fingerprint(cfg, options);
    auto ssl_cache = std::make_shared<SslCache>(
        options.cache_dir.empty() ? "" : options.cache_dir + "/ssl");

    std::vector<Cell> cells;
    for (double f : fractions) {
        for (std::uint64_t seed : seeds) {
            std::ostringstream base;
            base << "sweep_labels|" << ds_hash << '|' << cfg_hash << '|' << f << '|' << seed;

            for (auto mode : {FinetuneMode::fixed, FinetuneMode::finetuned}) {
                const std::string mode_name =
                    mode == FinetuneMode::fixed ? "fixed" : "finetuned";
                cells.push_back({base.str() + "|" + mode_name, [=, &dataset, &options] {
                    TrainConfig c = cfg;
                    c.seed = seed;
                    std::ostringstream ssl_key;
                    ssl_key << "ssl|" << ds_hash << '|' << cfg_hash << '|'
                            << c.mask.describe() << '|' << seed;
                    auto ckpt = ssl_cache->get_or_train(ssl_key.str(), [&] {
                        return pretrain(dataset,
                                        init_model_for_dataset(dataset, options.encoder,
                                                               options.aggregator, seed),
                                        c)
                            .state;
                    });
                    auto sub = subsample_labels(dataset, f, seed);
                    auto res = finetune(sub, *ckpt, c, mode);
                    return std::vector<EvalRow>{make_row(
                        "sweep_labels", "-", strategy_name(c.mask.strategy), std::nullopt, f,
                        mode_name, seed, test_macro_f1(sub, res.state, c.batch_size))};
                }});
            }

            cells.push_back({base.str() + "|supervised", [=, &dataset, &options] {
                TrainConfig c = cfg;
                c.seed = seed;
                auto sub = subsample_labels(dataset, f, seed);
                auto res = train_supervised(sub, c, options.encoder, options.aggregator);
                return std::vector<EvalRow>{make_row(
                    "sweep_labels", "-", "-", std::nullopt, f, "supervised", seed,
                    test_macro_f1(sub, res.state, c.batch_size))};
            }});
        }
    }

    CellRunner runner(options);
    return runner.run(std::move(cells), "sweep_labels", dataset.num_classes);
}

} // namespace crossl
