#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <zlib.h>

#include "crossl/model.hpp"
#include "test_support.hpp"

using namespace crossl;
using crossl::test::random_tensor;
using crossl::test::random_uniform_tensor;

namespace {

std::vector<ModalityConfig> tiny_modalities() {
    return {{"a", 2, 30, 30.0}, {"b", 1, 40, 40.0}, {"c", 3, 25, 25.0}};
}

EncoderSpec tiny_encoder() {
    EncoderSpec e;
    e.layers = {{{8, 5, 2}, {8, 3, 1}, {8, 3, 1}}};
    e.embedding_dim = 6;
    return e;
}

AggregatorSpec tiny_aggregator() {
    AggregatorSpec a;
    a.hidden = {16};
    a.output_dim = 10;
    return a;
}

ModelState tiny_model(std::uint64_t seed = 0) {
    Rng rng(seed);
    return ModelState(tiny_modalities(), tiny_encoder(), tiny_aggregator(), 4, rng);
}

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<std::uint8_t> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST_CASE("encode produces [N,K] for heterogeneous windows, deterministically") {
    ModelState model = tiny_model();
    Rng rng(1);
    for (std::size_t m = 0; m < 3; ++m) {
        const auto& mc = model.modalities()[m];
        Tensor x = random_tensor({5, mc.window_len, mc.channels}, rng);
        Tensor q = encode(x, m, model);
        CHECK(q.shape == std::vector<std::size_t>{5, model.embedding_dim()});
        // Same input twice: identical output.
        CHECK(encode(x, m, model).values == q.values);
    }

    // Two identical windows give identical embedding rows.
    const auto& mc = model.modalities()[0];
    Tensor w = random_tensor({1, mc.window_len, mc.channels}, rng);
    Tensor pair = Tensor::zeros({2, mc.window_len, mc.channels});
    std::copy(w.values.begin(), w.values.end(), pair.values.begin());
    std::copy(w.values.begin(), w.values.end(),
              pair.values.begin() + static_cast<std::ptrdiff_t>(w.size()));
    Tensor q = encode(pair, 0, model);
    for (std::size_t j = 0; j < model.embedding_dim(); ++j)
        CHECK(q.at(0, j) == q.at(1, j));

    CHECK_THROWS_AS(encode(Tensor::zeros({2, 10, 2}), 0, model), shape_error);
    CHECK_THROWS_AS(encode(Tensor::zeros({2, 30, 2}), 7, model), shape_error);
}

TEST_CASE("degenerate identity encoder reduces to channel means") {
    // One modality, 2 channels; all conv layers W=1 stride 1 identity maps,
    // projection identity: Q must equal the per-channel time means. Inputs are
    // kept positive so the interleaved ReLUs are transparent.
    std::vector<ModalityConfig> mods{{"m", 2, 8, 8.0}};
    EncoderSpec enc;
    enc.layers = {{{2, 1, 1}, {2, 1, 1}, {2, 1, 1}}};
    enc.embedding_dim = 2;
    AggregatorSpec agg;
    agg.hidden = {};
    agg.output_dim = 2;
    Rng rng(0);
    ModelState model(mods, enc, agg, 2, rng);

    Tensor eye({1, 2, 2}, {1, 0, 0, 1});
    for (int l = 1; l <= 3; ++l) {
        model.param("enc0.conv" + std::to_string(l) + ".weight").value() = eye;
        model.param("enc0.conv" + std::to_string(l) + ".bias").value() = Tensor::zeros({2});
    }
    model.param("enc0.proj.weight").value() = Tensor({2, 2}, {1, 0, 0, 1});
    model.param("enc0.proj.bias").value() = Tensor::zeros({2});

    Rng data_rng(5);
    Tensor x = random_uniform_tensor({3, 8, 2}, data_rng, 0.1, 2.0);
    Tensor q = encode(x, 0, model);
    for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t c = 0; c < 2; ++c) {
            double mean = 0.0;
            for (std::size_t t = 0; t < 8; ++t) mean += x.at(n, t, c);
            mean /= 8.0;
            CHECK(q.at(n, c) == doctest::Approx(mean).epsilon(1e-12));
        }
}

TEST_CASE("encode_all stacks embeddings in modality order") {
    ModelState model = tiny_model();
    Rng rng(2);
    std::vector<Tensor> windows;
    for (const auto& mc : model.modalities())
        windows.push_back(random_tensor({4, mc.window_len, mc.channels}, rng));

    Tensor q = encode_all(windows, nullptr, model);
    CHECK(q.shape == std::vector<std::size_t>{4, 3, model.embedding_dim()});

    // Rows match per-modality encode outputs.
    for (std::size_t m = 0; m < 3; ++m) {
        Tensor qm = encode(windows[m], m, model);
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t k = 0; k < model.embedding_dim(); ++k)
                CHECK(q.at(n, m, k) == qm.at(n, k));
    }

    // Permuting sample order permutes rows identically.
    std::vector<Tensor> swapped;
    for (const auto& w : windows) {
        Tensor s = w;
        const std::size_t stride = w.shape[1] * w.shape[2];
        std::copy_n(w.values.data(), stride, s.values.data() + stride);
        std::copy_n(w.values.data() + stride, stride, s.values.data());
        swapped.push_back(std::move(s));
    }
    Tensor qs = encode_all(swapped, nullptr, model);
    for (std::size_t m = 0; m < 3; ++m)
        for (std::size_t k = 0; k < model.embedding_dim(); ++k) {
            CHECK(qs.at(0, m, k) == q.at(1, m, k));
            CHECK(qs.at(1, m, k) == q.at(0, m, k));
        }

    // Availability flag inconsistent with a missing tensor.
    std::vector<Tensor> partial = windows;
    partial[1] = Tensor{};
    BoolMatrix avail(4, 3, true);
    CHECK_THROWS_AS(encode_all(partial, &avail, model), config_error);
    for (std::size_t i = 0; i < 4; ++i) avail.set(i, 1, false);
    CHECK(encode_all(partial, &avail, model).shape ==
          std::vector<std::size_t>{4, 3, model.embedding_dim()});
}

TEST_CASE("aggregate: identity configuration passes the flattened stack through") {
    std::vector<ModalityConfig> mods{{"x", 1, 10, 10.0}, {"y", 1, 10, 10.0}};
    EncoderSpec enc;
    enc.layers = {{{2, 1, 1}, {2, 1, 1}, {2, 1, 1}}};
    enc.embedding_dim = 2;
    AggregatorSpec agg;
    agg.hidden = {}; // single output layer
    agg.output_dim = 4;
    Rng rng(0);
    ModelState model(mods, enc, agg, 2, rng);

    Tensor eye4 = Tensor::zeros({4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye4.at(i, i) = 1.0;
    model.param("agg.out.weight").value() = eye4;
    model.param("agg.out.bias").value() = Tensor::zeros({4});

    Rng drng(3);
    Tensor q = random_tensor({3, 2, 2}, drng);
    Tensor z = aggregate(q, model);
    CHECK(z.shape == std::vector<std::size_t>{3, 4});
    CHECK(z.values == q.values); // row-major flatten is the identity layout

    // Zero input: output equals the bias.
    model.param("agg.out.bias").value() = Tensor({4}, {1, 2, 3, 4});
    Tensor zb = aggregate(Tensor::zeros({2, 2, 2}), model);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t j = 0; j < 4; ++j) CHECK(zb.at(n, j) == double(j + 1));
}

TEST_CASE("aggregate: hand-set two-layer oracle") {
    std::vector<ModalityConfig> mods{{"x", 1, 10, 10.0}, {"y", 1, 10, 10.0}};
    EncoderSpec enc;
    enc.layers = {{{2, 1, 1}, {2, 1, 1}, {2, 1, 1}}};
    enc.embedding_dim = 2;
    AggregatorSpec agg;
    agg.hidden = {3};
    agg.output_dim = 2;
    Rng rng(0);
    ModelState model(mods, enc, agg, 2, rng);

    // fc0: weight [4,3], out: weight [3,2].
    Tensor w0({4, 3}, {1, 0, 1, 0, 1, 1, 1, 1, 0, 0, 0, 1});
    Tensor b0({3}, {0.5, -0.5, 0.0});
    Tensor w1({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor b1({2}, {1, -1});
    model.param("agg.fc0.weight").value() = w0;
    model.param("agg.fc0.bias").value() = b0;
    model.param("agg.out.weight").value() = w1;
    model.param("agg.out.bias").value() = b1;

    Tensor q({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    // Hand computation: flat = [1,2,3,4];
    // h = relu(flat*w0 + b0) = relu([1+3+0.5, 2+3-0.5, 1+2+4]) = [4.5, 4.5, 7]
    // z = h*w1 + b1 = [4.5+13.5+35+1, 9+18+42-1] = [54, 68]
    Tensor z = aggregate(q, model);
    CHECK(z.at(0, 0) == doctest::Approx(54.0).epsilon(1e-12));
    CHECK(z.at(0, 1) == doctest::Approx(68.0).epsilon(1e-12));

    CHECK_THROWS_AS(aggregate(Tensor::zeros({1, 3, 2}), model), shape_error);
}

TEST_CASE("classify: probabilities, symmetry, argmax") {
    ModelState model = tiny_model();
    // Zero classifier: uniform probabilities.
    model.param("cls.weight").value() = Tensor::zeros({model.global_dim(), 4});
    model.param("cls.bias").value() = Tensor::zeros({4});
    Rng rng(4);
    Tensor z = random_tensor({3, model.global_dim()}, rng);
    Tensor probs = classify(z, model);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 4; ++c)
            CHECK(probs.at(i, c) == doctest::Approx(0.25).epsilon(1e-12));

    // Random weights: rows sum to 1 within 1e-9.
    model.param("cls.weight").value() = random_tensor({model.global_dim(), 4}, rng);
    model.param("cls.bias").value() = random_tensor({4}, rng);
    probs = classify(z, model);
    for (std::size_t i = 0; i < 3; ++i) {
        double row = 0.0;
        for (std::size_t c = 0; c < 4; ++c) row += probs.at(i, c);
        CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
    }

    // A weight column aligned with z makes that class the argmax.
    Tensor w = Tensor::zeros({model.global_dim(), 4});
    for (std::size_t d = 0; d < model.global_dim(); ++d) w.at(d, 2) = z.at(0, d);
    model.param("cls.weight").value() = w;
    model.param("cls.bias").value() = Tensor::zeros({4});
    probs = classify(z, model);
    std::size_t best = 0;
    for (std::size_t c = 1; c < 4; ++c)
        if (probs.at(0, c) > probs.at(0, best)) best = c;
    CHECK(best == 2);
}

TEST_CASE("Z is invariant to batch composition") {
    ModelState model = tiny_model(3);
    Rng rng(9);
    std::vector<Tensor> batch;
    for (const auto& mc : model.modalities())
        batch.push_back(random_tensor({6, mc.window_len, mc.channels}, rng));
    BoolMatrix avail(6, 3, true);
    Tensor z_batch = embed_batch(batch, avail, model);

    // Re-embed sample 4 alone; its row must match exactly.
    std::vector<Tensor> solo;
    for (std::size_t m = 0; m < 3; ++m) {
        const auto& mc = model.modalities()[m];
        const std::size_t stride = mc.window_len * mc.channels;
        Tensor t = Tensor::zeros({1, mc.window_len, mc.channels});
        std::copy_n(batch[m].values.data() + 4 * stride, stride, t.values.data());
        solo.push_back(std::move(t));
    }
    Tensor z_solo = embed_batch(solo, BoolMatrix(1, 3, true), model);
    for (std::size_t d = 0; d < model.global_dim(); ++d)
        CHECK(z_solo.at(0, d) == z_batch.at(4, d));
}

TEST_CASE("modality permutation with coherent parameter blocks preserves Z") {
    ModelState model = tiny_model(11);
    Rng rng(12);
    std::vector<Tensor> windows;
    for (const auto& mc : model.modalities())
        windows.push_back(random_tensor({3, mc.window_len, mc.channels}, rng));
    BoolMatrix avail(3, 3, true);
    Tensor z_ref = embed_batch(windows, avail, model);

    // Permutation (2, 0, 1) of modalities.
    const std::vector<std::size_t> perm{2, 0, 1};
    std::vector<ModalityConfig> pmods;
    std::vector<Tensor> pwindows;
    for (std::size_t m : perm) {
        pmods.push_back(model.modalities()[m]);
        pwindows.push_back(windows[m]);
    }
    Rng rng2(99);
    ModelState pmodel(pmods, model.encoder_spec(), model.aggregator_spec(), 4, rng2);

    // Copy encoder blocks according to the permutation.
    for (std::size_t dst = 0; dst < 3; ++dst) {
        auto src_params = model.encoder_params(perm[dst]);
        auto dst_params = pmodel.encoder_params(dst);
        REQUIRE(src_params.size() == dst_params.size());
        for (std::size_t i = 0; i < src_params.size(); ++i)
            dst_params[i].value() = src_params[i].value();
    }
    // Aggregator: permute the first layer's input-row blocks of size K.
    const std::size_t k = model.embedding_dim();
    const Tensor& w_src = model.param("agg.fc0.weight").value();
    Tensor w_dst = w_src;
    for (std::size_t dst = 0; dst < 3; ++dst) {
        for (std::size_t r = 0; r < k; ++r) {
            for (std::size_t col = 0; col < w_src.shape[1]; ++col) {
                w_dst.at(dst * k + r, col) = w_src.at(perm[dst] * k + r, col);
            }
        }
    }
    pmodel.param("agg.fc0.weight").value() = w_dst;
    pmodel.param("agg.fc0.bias").value() = model.param("agg.fc0.bias").value();
    pmodel.param("agg.out.weight").value() = model.param("agg.out.weight").value();
    pmodel.param("agg.out.bias").value() = model.param("agg.out.bias").value();

    Tensor z_perm = embed_batch(pwindows, avail, pmodel);
    for (std::size_t i = 0; i < z_ref.size(); ++i)
        CHECK(z_perm.values[i] == doctest::Approx(z_ref.values[i]).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip is bit exact") {
    ModelState model = tiny_model(21);
    const std::string path = tmp_path("crossl_test_ckpt.crsl");
    save_checkpoint(model, path);
    ModelState loaded = load_checkpoint(path);

    REQUIRE(loaded.params().size() == model.params().size());
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        CHECK(loaded.params()[i].name == model.params()[i].name);
        CHECK(loaded.params()[i].value().values == model.params()[i].value().values);
    }
    CHECK(loaded.modalities() == model.modalities());
    CHECK(loaded.encoder_spec() == model.encoder_spec());
    CHECK(loaded.aggregator_spec() == model.aggregator_spec());

    // Saving the loaded state reproduces the file byte for byte.
    const std::string path2 = tmp_path("crossl_test_ckpt2.crsl");
    save_checkpoint(loaded, path2);
    CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("corrupted checkpoints are rejected") {
    ModelState model = tiny_model(22);
    const std::string path = tmp_path("crossl_test_ckpt3.crsl");
    save_checkpoint(model, path);
    const auto good = slurp(path);

    // Truncation.
    spit(path, {good.begin(), good.begin() + static_cast<std::ptrdiff_t>(good.size() / 2)});
    CHECK_THROWS_AS(load_checkpoint(path), format_error);

    // Single flipped payload byte trips the CRC.
    auto flipped = good;
    flipped[flipped.size() / 2] ^= 0x01;
    spit(path, flipped);
    CHECK_THROWS_AS(load_checkpoint(path), format_error);

    // Bad magic.
    auto bad_magic = good;
    bad_magic[0] = 'X';
    spit(path, bad_magic);
    CHECK_THROWS_AS(load_checkpoint(path), format_error);

    // Version bump with a recomputed CRC, so the version check itself fires.
    auto bad_version = good;
    bad_version[4] = 99;
    const auto crc = static_cast<std::uint32_t>(::crc32(
        0L, reinterpret_cast<const Bytef*>(bad_version.data()),
        static_cast<uInt>(bad_version.size() - 4)));
    for (int i = 0; i < 4; ++i)
        bad_version[bad_version.size() - 4 + static_cast<std::size_t>(i)] =
            static_cast<std::uint8_t>(crc >> (8 * i));
    spit(path, bad_version);
    CHECK_THROWS_WITH_AS(load_checkpoint(path),
                         doctest::Contains("unsupported format_version"), format_error);

    CHECK_THROWS_AS(load_checkpoint(tmp_path("does_not_exist.crsl")), io_error);
}
