#include "crossl/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "wire.hpp"

namespace crossl {

namespace fs = std::filesystem;
using nlohmann::json;

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw format_error("unknown split tag \"" + name + "\"");
}

std::vector<std::size_t> MultimodalDataset::indices_of(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i) {
        if (split[i] == s) out.push_back(i);
    }
    return out;
}

void MultimodalDataset::validate() const {
    const std::size_t m = modalities.size();
    if (windows.size() != m) {
        throw format_error("dataset: " + std::to_string(windows.size()) +
                           " window tensors for " + std::to_string(m) + " modalities");
    }
    const std::size_t n = num_samples();
    for (std::size_t i = 0; i < m; ++i) {
        const auto& mc = modalities[i];
        require_shape(windows[i], {n, mc.window_len, mc.channels},
                      "dataset windows \"" + mc.name + "\"");
    }
    if (availability.rows != n || availability.cols != m) {
        throw format_error("dataset: availability is " + std::to_string(availability.rows) +
                           "x" + std::to_string(availability.cols) + ", expected " +
                           std::to_string(n) + "x" + std::to_string(m));
    }
    if (labels) {
        if (labels->size() != n) {
            throw format_error("dataset: " + std::to_string(labels->size()) +
                               " labels for " + std::to_string(n) + " samples");
        }
        for (std::size_t i = 0; i < n; ++i) {
            if ((*labels)[i] < 0 || static_cast<std::size_t>((*labels)[i]) >= num_classes) {
                throw format_error("dataset: label " + std::to_string((*labels)[i]) +
                                   " for sample " + std::to_string(i) + " outside [0, " +
                                   std::to_string(num_classes) + ")");
            }
        }
    }
    if (!label_visible.empty() && label_visible.size() != n) {
        throw format_error("dataset: label_visible length mismatch");
    }
    // Zero-fill coherence: unavailable (sample, modality) slices must be zero.
    for (std::size_t mi = 0; mi < m; ++mi) {
        const std::size_t stride = modalities[mi].window_len * modalities[mi].channels;
        for (std::size_t i = 0; i < n; ++i) {
            if (availability.get(i, mi)) continue;
            const double* base = windows[mi].values.data() + i * stride;
            for (std::size_t j = 0; j < stride; ++j) {
                if (base[j] != 0.0) {
                    throw format_error("dataset: sample " + std::to_string(i) +
                                       " modality \"" + modalities[mi].name +
                                       "\" flagged unavailable but window is non-zero");
                }
            }
        }
    }
}

std::uint64_t MultimodalDataset::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_bytes = [&h](const void* data, std::size_t len) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& w : windows) {
        mix_bytes(w.values.data(), w.values.size() * sizeof(double));
    }
    if (labels) mix_bytes(labels->data(), labels->size() * sizeof(int));
    mix_bytes(availability.bits.data(), availability.bits.size());
    mix_bytes(split.data(), split.size() * sizeof(Split));
    if (!label_visible.empty()) mix_bytes(label_visible.data(), label_visible.size());
    return h;
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SyntheticConfig::validate() const {
    if (num_classes < 2) throw config_error("synthetic.num_classes must be >= 2");
    if (modalities.empty()) throw config_error("synthetic.modalities must be non-empty");
    if (samples_per_class == 0) throw config_error("synthetic.samples_per_class must be > 0");
    if (noise_std < 0.0) throw config_error("synthetic.noise_std must be >= 0");
    if (nuisance_std < 0.0) throw config_error("synthetic.nuisance_std must be >= 0");
    for (const auto& m : modalities) {
        if (m.name.empty()) throw config_error("synthetic.modalities[].name must be non-empty");
        if (m.channels == 0) throw config_error("synthetic.modalities[].channels must be > 0");
        if (m.window_len == 0) throw config_error("synthetic.modalities[].window_len must be > 0");
        if (m.sampling_rate <= 0.0) {
            throw config_error("synthetic.modalities[].sampling_rate must be > 0");
        }
    }
}

double synthetic_class_frequency(std::size_t cls) { return 2.0 + static_cast<double>(cls); }

double synthetic_nuisance_frequency(std::size_t modality) {
    return 9.0 + 1.5 * static_cast<double>(modality);
}

MultimodalDataset generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    const std::size_t m = cfg.modalities.size();
    const std::size_t n = cfg.num_classes * cfg.samples_per_class;
    Rng root(cfg.seed);
    Rng phase_rng = root.fork("phase");
    Rng noise_rng = root.fork("noise");
    Rng split_rng = root.fork("split");

    MultimodalDataset ds;
    ds.modalities = cfg.modalities;
    ds.num_classes = cfg.num_classes;
    ds.availability = BoolMatrix(n, m, true);
    ds.split.assign(n, Split::train);

    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(i % cfg.num_classes);
    }
    ds.labels = labels;
    ds.label_visible.assign(n, 1);

    for (std::size_t mi = 0; mi < m; ++mi) {
        const auto& mc = cfg.modalities[mi];
        ds.windows.push_back(Tensor::zeros({n, mc.window_len, mc.channels}));
    }

    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t i = 0; i < n; ++i) {
        const double f_cls = synthetic_class_frequency(static_cast<std::size_t>(labels[i]));
        for (std::size_t mi = 0; mi < m; ++mi) {
            const auto& mc = cfg.modalities[mi];
            const double phase = phase_rng.uniform() * two_pi;
            const double nuisance_phase = phase_rng.uniform() * two_pi;
            const double f_nui = synthetic_nuisance_frequency(mi);
            double* base =
                ds.windows[mi].values.data() + i * mc.window_len * mc.channels;
            for (std::size_t t = 0; t < mc.window_len; ++t) {
                const double time = static_cast<double>(t) / mc.sampling_rate;
                const double nuisance =
                    cfg.nuisance_std * std::sin(two_pi * f_nui * time + nuisance_phase);
                for (std::size_t c = 0; c < mc.channels; ++c) {
                    const double channel_phase =
                        phase + static_cast<double>(c) * std::numbers::pi / 7.0;
                    double v = std::sin(two_pi * f_cls * time + channel_phase) + nuisance;
                    if (cfg.noise_std > 0.0) v += cfg.noise_std * noise_rng.normal();
                    base[t * mc.channels + c] = v;
                }
            }
        }
    }

    // Stratified 70/15/15 per class, shuffled within class.
    for (std::size_t cls = 0; cls < cfg.num_classes; ++cls) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < n; ++i) {
            if (static_cast<std::size_t>(labels[i]) == cls) members.push_back(i);
        }
        split_rng.shuffle(members);
        const std::size_t n_train = static_cast<std::size_t>(
            std::floor(0.70 * static_cast<double>(members.size())));
        const std::size_t n_val = static_cast<std::size_t>(
            std::floor(0.15 * static_cast<double>(members.size())));
        for (std::size_t j = 0; j < members.size(); ++j) {
            ds.split[members[j]] =
                j < n_train ? Split::train : (j < n_train + n_val ? Split::val : Split::test);
        }
    }

    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Missing-data simulation

const char* MissingScenario::phase_name(Phase p) {
    switch (p) {
        case Phase::none: return "none";
        case Phase::inference_only: return "inference";
        case Phase::finetune_and_inference: return "both";
    }
    return "?";
}

MultimodalDataset simulate_missing(const MultimodalDataset& dataset,
                                   const MissingScenario& scenario, Rng& rng) {
    const std::size_t m = dataset.num_modalities();
    if (scenario.missing_count >= m) {
        throw config_error("missing scenario: missing_count " +
                           std::to_string(scenario.missing_count) +
                           " must stay below modality count " + std::to_string(m));
    }
    MultimodalDataset out = dataset;
    if (scenario.phase == MissingScenario::Phase::none || scenario.missing_count == 0) {
        return out;
    }

    auto affected = [&](Split s) {
        if (scenario.phase == MissingScenario::Phase::inference_only) return s == Split::test;
        return true; // finetune_and_inference: all splits
    };

    for (std::size_t i = 0; i < out.num_samples(); ++i) {
        if (!affected(out.split[i])) continue;
        auto missing = rng.sample_without_replacement(m, scenario.missing_count);
        for (std::size_t mi : missing) {
            out.availability.set(i, mi, false);
            const std::size_t stride =
                out.modalities[mi].window_len * out.modalities[mi].channels;
            double* base = out.windows[mi].values.data() + i * stride;
            std::fill(base, base + stride, 0.0);
        }
    }
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// Label subsampling

MultimodalDataset subsample_labels(const MultimodalDataset& dataset, double fraction,
                                   std::uint64_t seed) {
    if (!dataset.labels) throw config_error("subsample_labels: dataset has no labels");
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw config_error("subsample_labels: fraction must be in (0, 1]");
    }

    MultimodalDataset out = dataset;
    const std::size_t n = dataset.num_samples();
    out.label_visible.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (dataset.split[i] != Split::train) out.label_visible[i] = 1;
    }

    std::vector<std::vector<std::size_t>> by_class(dataset.num_classes);
    for (std::size_t i = 0; i < n; ++i) {
        if (dataset.split[i] == Split::train) {
            by_class[static_cast<std::size_t>((*dataset.labels)[i])].push_back(i);
        }
    }
    std::size_t train_total = 0;
    for (const auto& v : by_class) train_total += v.size();
    if (train_total == 0) throw config_error("subsample_labels: no train samples");

    const std::size_t target = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(train_total)));

    // Largest-remainder apportionment over classes, min 1 per non-empty class.
    std::vector<std::size_t> take(dataset.num_classes, 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < dataset.num_classes; ++c) {
        if (by_class[c].empty()) continue;
        const double exact = fraction * static_cast<double>(by_class[c].size());
        take[c] = std::min(by_class[c].size(),
                           std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(exact))));
        assigned += take[c];
        remainders.emplace_back(exact - std::floor(exact), c);
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t r = 0; assigned < target && r < remainders.size(); ++r) {
        const std::size_t c = remainders[r].second;
        if (take[c] < by_class[c].size()) {
            ++take[c];
            ++assigned;
        }
    }
    // If min-1 guarantees overshot the target, that is accepted: every class
    // keeps at least one label.

    Rng rng(seed);
    for (std::size_t c = 0; c < dataset.num_classes; ++c) {
        if (by_class[c].empty()) continue;
        auto chosen = rng.fork("class", c).sample_without_replacement(by_class[c].size(), take[c]);
        for (std::size_t idx : chosen) out.label_visible[by_class[c][idx]] = 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batching

namespace {

MultimodalBatch gather_batch(const MultimodalDataset& ds,
                             const std::vector<std::size_t>& idx) {
    MultimodalBatch b;
    b.sample_indices = idx;
    b.availability = BoolMatrix(idx.size(), ds.num_modalities(), true);
    for (std::size_t mi = 0; mi < ds.num_modalities(); ++mi) {
        const auto& mc = ds.modalities[mi];
        const std::size_t stride = mc.window_len * mc.channels;
        Tensor t = Tensor::zeros({idx.size(), mc.window_len, mc.channels});
        for (std::size_t j = 0; j < idx.size(); ++j) {
            std::copy_n(ds.windows[mi].values.data() + idx[j] * stride, stride,
                        t.values.data() + j * stride);
        }
        b.windows.push_back(std::move(t));
    }
    for (std::size_t j = 0; j < idx.size(); ++j) {
        for (std::size_t mi = 0; mi < ds.num_modalities(); ++mi) {
            b.availability.set(j, mi, ds.availability.get(idx[j], mi));
        }
        if (ds.labels) b.labels.push_back((*ds.labels)[idx[j]]);
    }
    return b;
}

std::vector<MultimodalBatch> batches_from_indices(const MultimodalDataset& ds,
                                                  std::vector<std::size_t> indices,
                                                  std::size_t batch_size,
                                                  std::uint64_t shuffle_seed, BatchMode mode) {
    if (batch_size < 2) throw config_error("batch_size must be >= 2");
    Rng rng(shuffle_seed);
    rng.shuffle(indices);

    std::vector<MultimodalBatch> out;
    std::size_t pos = 0;
    while (pos < indices.size()) {
        const std::size_t take = std::min(batch_size, indices.size() - pos);
        if (mode == BatchMode::ssl && take < batch_size) break;
        out.push_back(gather_batch(
            ds, {indices.begin() + static_cast<std::ptrdiff_t>(pos),
                 indices.begin() + static_cast<std::ptrdiff_t>(pos + take)}));
        pos += take;
    }
    // A dataset smaller than one batch still yields its samples in SSL mode
    // as long as the variance term stays defined.
    if (out.empty() && mode == BatchMode::ssl && indices.size() >= 2) {
        out.push_back(gather_batch(ds, indices));
    }
    return out;
}

} // namespace

std::vector<MultimodalBatch> make_batches(const MultimodalDataset& dataset, Split split,
                                          std::size_t batch_size, std::uint64_t shuffle_seed,
                                          BatchMode mode) {
    return batches_from_indices(dataset, dataset.indices_of(split), batch_size, shuffle_seed,
                                mode);
}

std::vector<MultimodalBatch> make_labeled_batches(const MultimodalDataset& dataset, Split split,
                                                  std::size_t batch_size,
                                                  std::uint64_t shuffle_seed, BatchMode mode) {
    if (!dataset.labels) throw config_error("make_labeled_batches: dataset has no labels");
    auto indices = dataset.indices_of(split);
    if (!dataset.label_visible.empty()) {
        std::erase_if(indices,
                      [&](std::size_t i) { return dataset.label_visible[i] == 0; });
    }
    return batches_from_indices(dataset, std::move(indices), batch_size, shuffle_seed, mode);
}

// ---------------------------------------------------------------------------
// On-disk format

namespace {

constexpr std::uint32_t kDatasetVersion = 1;

void write_payload(const Tensor& t, const std::string& path) {
    std::vector<std::uint8_t> buf;
    wire::put_bytes(buf, "CRSD", 4);
    wire::put_u32(buf, kDatasetVersion);
    wire::put_u32(buf, static_cast<std::uint32_t>(t.shape[0]));
    wire::put_u32(buf, static_cast<std::uint32_t>(t.shape[1]));
    wire::put_u32(buf, static_cast<std::uint32_t>(t.shape[2]));
    for (double v : t.values) wire::put_f64(buf, v);
    wire::put_u32(buf, wire::crc32_of(buf.data(), buf.size()));
    wire::write_file(path, buf);
}

Tensor read_payload(const std::string& path, const ModalityConfig& expect) {
    const auto buf = wire::read_file(path);
    wire::Reader r(buf, "payload " + path);
    if (buf.size() < 4) r.fail("file shorter than CRC trailer");
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i)
        stored |= static_cast<std::uint32_t>(buf[buf.size() - 4 + i]) << (8 * i);
    if (stored != wire::crc32_of(buf.data(), buf.size() - 4)) {
        throw format_error("payload " + path + ": CRC mismatch at offset " +
                           std::to_string(buf.size() - 4));
    }
    r.expect_magic("CRSD");
    const std::uint32_t version = r.u32();
    if (version != kDatasetVersion) {
        throw format_error("payload " + path + ": unsupported version " +
                           std::to_string(version) + " at offset 4");
    }
    const std::size_t n = r.u32(), t_len = r.u32(), c = r.u32();
    if (t_len != expect.window_len) {
        throw format_error("payload " + path + ": window_len " + std::to_string(t_len) +
                           " but manifest declares " + std::to_string(expect.window_len));
    }
    if (c != expect.channels) {
        throw format_error("payload " + path + ": channels " + std::to_string(c) +
                           " but manifest declares " + std::to_string(expect.channels));
    }
    Tensor out = Tensor::zeros({n, t_len, c});
    r.f64_block(out.values.data(), out.size());
    if (r.remaining() != 4) r.fail("trailing bytes after values");
    return out;
}

} // namespace

void save_dataset(const MultimodalDataset& dataset, const std::string& dir) {
    dataset.validate();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("cannot create dataset dir " + dir + ": " + ec.message());

    json mods = json::array();
    for (std::size_t mi = 0; mi < dataset.num_modalities(); ++mi) {
        const auto& mc = dataset.modalities[mi];
        const std::string payload = mc.name + ".crsd";
        write_payload(dataset.windows[mi], dir + "/" + payload);
        mods.push_back({{"name", mc.name},
                        {"channels", mc.channels},
                        {"window_len", mc.window_len},
                        {"sampling_rate", mc.sampling_rate},
                        {"payload_file", payload}});
    }

    json manifest{{"format_version", kDatasetVersion},
                  {"num_classes", dataset.num_classes},
                  {"modalities", mods},
                  {"labels_file", nullptr},
                  {"availability_file", "availability.txt"},
                  {"splits_file", "splits.txt"}};

    if (dataset.labels) {
        manifest["labels_file"] = "labels.txt";
        std::ostringstream lf;
        for (int l : *dataset.labels) lf << l << "\n";
        wire::write_text_file(dir + "/labels.txt", lf.str());
    }

    std::ostringstream av;
    for (std::size_t i = 0; i < dataset.num_samples(); ++i) {
        for (std::size_t mi = 0; mi < dataset.num_modalities(); ++mi) {
            if (mi) av << ' ';
            av << (dataset.availability.get(i, mi) ? '1' : '0');
        }
        av << "\n";
    }
    wire::write_text_file(dir + "/availability.txt", av.str());

    std::ostringstream sp;
    for (Split s : dataset.split) sp << split_name(s) << "\n";
    wire::write_text_file(dir + "/splits.txt", sp.str());

    wire::write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

namespace {

std::vector<std::string> read_lines(const std::string& path) {
    std::istringstream in(wire::read_text_file(path));
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

} // namespace

MultimodalDataset load_dataset(const std::string& manifest_path) {
    fs::path mpath(manifest_path);
    if (fs::is_directory(mpath)) mpath /= "manifest.json";
    const fs::path dir = mpath.parent_path();

    json manifest;
    try {
        manifest = json::parse(wire::read_text_file(mpath.string()));
    } catch (const json::exception& e) {
        throw format_error("manifest " + mpath.string() + ": " + e.what());
    }

    MultimodalDataset ds;
    try {
        if (manifest.at("format_version").get<std::uint32_t>() != kDatasetVersion) {
            throw format_error("manifest " + mpath.string() + ": unsupported format_version");
        }
        ds.num_classes = manifest.at("num_classes").get<std::size_t>();
        for (const auto& m : manifest.at("modalities")) {
            ModalityConfig mc{m.at("name").get<std::string>(),
                              m.at("channels").get<std::size_t>(),
                              m.at("window_len").get<std::size_t>(),
                              m.at("sampling_rate").get<double>()};
            ds.modalities.push_back(mc);
            ds.windows.push_back(
                read_payload((dir / m.at("payload_file").get<std::string>()).string(), mc));
        }

        const std::size_t n = ds.windows.empty() ? 0 : ds.windows[0].shape[0];
        for (std::size_t mi = 0; mi < ds.windows.size(); ++mi) {
            if (ds.windows[mi].shape[0] != n) {
                throw format_error("manifest " + mpath.string() + ": modality \"" +
                                   ds.modalities[mi].name + "\" has " +
                                   std::to_string(ds.windows[mi].shape[0]) +
                                   " samples, expected " + std::to_string(n));
            }
        }

        const auto split_lines = read_lines((dir / manifest.at("splits_file").get<std::string>()).string());
        if (split_lines.size() != n) {
            throw format_error("splits_file: " + std::to_string(split_lines.size()) +
                               " records for " + std::to_string(n) + " samples");
        }
        for (const auto& s : split_lines) ds.split.push_back(split_from_name(s));

        const auto avail_lines =
            read_lines((dir / manifest.at("availability_file").get<std::string>()).string());
        if (avail_lines.size() != n) {
            throw format_error("availability_file: " + std::to_string(avail_lines.size()) +
                               " records for " + std::to_string(n) + " samples");
        }
        ds.availability = BoolMatrix(n, ds.modalities.size(), true);
        for (std::size_t i = 0; i < n; ++i) {
            std::istringstream row(avail_lines[i]);
            for (std::size_t mi = 0; mi < ds.modalities.size(); ++mi) {
                int b;
                if (!(row >> b) || (b != 0 && b != 1)) {
                    throw format_error("availability_file: bad record on line " +
                                       std::to_string(i + 1));
                }
                ds.availability.set(i, mi, b == 1);
            }
        }

        if (!manifest.at("labels_file").is_null()) {
            const auto label_lines =
                read_lines((dir / manifest.at("labels_file").get<std::string>()).string());
            if (label_lines.size() != n) {
                throw format_error("labels_file: " + std::to_string(label_lines.size()) +
                                   " records for " + std::to_string(n) + " samples");
            }
            std::vector<int> labels;
            for (const auto& s : label_lines) {
                try {
                    labels.push_back(std::stoi(s));
                } catch (const std::exception&) {
                    throw format_error("labels_file: bad record \"" + s + "\"");
                }
            }
            ds.labels = std::move(labels);
            ds.label_visible.assign(n, 1);
        }
    } catch (const json::exception& e) {
        throw format_error("manifest " + mpath.string() + ": missing field: " + e.what());
    }

    ds.validate();
    return ds;
}

} // namespace crossl
