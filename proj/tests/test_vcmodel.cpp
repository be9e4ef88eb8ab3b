#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "mfc/params.hpp"
#include "mfc/rng.hpp"
#include "mfc/vc_model.hpp"
#include "mfc/version.hpp"

using namespace mfc;
using namespace mfc::model;
using num::Tensor;

namespace {

Tensor rand_mat(int r, int c, uint64_t seed, double lim = 1.0) {
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(r) * c);
    for (auto& x : v) x = rng.uniform(-lim, lim);
    return Tensor::matrix(r, c, std::move(v));
}

Tensor rand_vec(int n, uint64_t seed, double lim = 1.0) {
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.uniform(-lim, lim);
    return Tensor::vector(std::move(v));
}

struct Inputs {
    Tensor content, lf0, energy, spk;
};

Inputs make_inputs(const VcConfig& cfg, int T, uint64_t seed) {
    return {rand_mat(T, cfg.content_dim, seed), rand_mat(T, 1, seed + 1),
            rand_mat(T, 1, seed + 2), rand_vec(cfg.speaker_dim, seed + 3)};
}

}  // namespace

TEST_CASE("style extraction shapes and pooling") {
    VcConfig cfg;
    VcModel m(cfg, 5);
    const int T = 80;

    SUBCASE("shapes at T=80") {
        Inputs in = make_inputs(cfg, T, 10);
        auto st = m.extract_styles(in.content, in.lf0, in.energy);
        CHECK(st.global.shape() == std::vector<int>{cfg.style_hidden});
        CHECK(st.local.shape() == std::vector<int>{20, cfg.style_hidden});
        CHECK(st.frame.shape() == std::vector<int>{80, 2});
    }

    SUBCASE("constant inputs give identical local rows") {
        Tensor content = Tensor::matrix(T, cfg.content_dim,
                                        std::vector<double>(static_cast<size_t>(T) * cfg.content_dim, 0.4));
        Tensor lf0 = Tensor::matrix(T, 1, std::vector<double>(static_cast<size_t>(T), 0.2));
        Tensor energy = Tensor::matrix(T, 1, std::vector<double>(static_cast<size_t>(T), 0.6));
        auto st = m.extract_styles(content, lf0, energy);
        for (int t = 1; t < st.local.rows(); ++t) {
            for (int j = 0; j < st.local.cols(); ++j) {
                CHECK(st.local.at(t, j) == doctest::Approx(st.local.at(0, j)).epsilon(1e-15));
            }
        }
        for (int j = 0; j < cfg.style_hidden; ++j) {
            CHECK(st.global.at(j) == doctest::Approx(st.local.at(0, j)).epsilon(1e-15));
        }
    }

    SUBCASE("stateless: outputs depend only on the given inputs") {
        Inputs a = make_inputs(cfg, 40, 20);
        Inputs b = make_inputs(cfg, 60, 30);
        auto sa1 = m.extract_styles(a.content, a.lf0, a.energy);
        auto sb = m.extract_styles(b.content, b.lf0, b.energy);
        auto sa2 = m.extract_styles(a.content, a.lf0, a.energy);
        CHECK(sa1.global.value() == sa2.global.value());
        CHECK(sa1.local.value() == sa2.local.value());
        CHECK(sb.global.value() != sa1.global.value());
    }

    SUBCASE("length mismatch is a contract violation") {
        Inputs in = make_inputs(cfg, T, 40);
        Tensor short_lf0 = rand_mat(T - 1, 1, 41);
        CHECK_THROWS_AS(m.extract_styles(in.content, short_lf0, in.energy), ContractViolation);
    }
}

TEST_CASE("conversion output shape, finiteness, and mode flag") {
    VcConfig cfg;
    VcModel m(cfg, 7);
    const int T = 24;

    // zero inputs on an untrained model stay finite
    Tensor content = Tensor::zeros({T, cfg.content_dim});
    Tensor lf0 = Tensor::zeros({T, 1});
    Tensor energy = Tensor::zeros({T, 1});
    Tensor spk = Tensor::zeros({cfg.speaker_dim});
    auto st = m.extract_styles(content, lf0, energy);
    Tensor y = m.convert(content, spk, st, std::nullopt);
    REQUIRE(y.shape() == std::vector<int>{T, cfg.mel_bins});
    for (double v : y.value()) CHECK(std::isfinite(v));

    // teacher-forced and free-running differ on an untrained model
    Inputs in = make_inputs(cfg, T, 50);
    auto st2 = m.extract_styles(in.content, in.lf0, in.energy);
    Tensor teacher = rand_mat(T, cfg.mel_bins, 51);
    Tensor y_tf = m.convert(in.content, in.spk, st2, teacher);
    Tensor y_fr = m.convert(in.content, in.spk, st2, std::nullopt);
    bool differs = false;
    for (size_t i = 0; i < y_tf.value().size(); ++i) {
        differs = differs || std::abs(y_tf.value()[i] - y_fr.value()[i]) > 1e-12;
    }
    CHECK(differs);

    // deterministic given (params, inputs, mode)
    Tensor y_fr2 = m.convert(in.content, in.spk, st2, std::nullopt);
    CHECK(y_fr.value() == y_fr2.value());

    CHECK_THROWS_AS(m.convert(in.content, rand_vec(cfg.speaker_dim + 1, 52), st2, std::nullopt),
                    ContractViolation);
}

TEST_CASE("speaker vector pathway is live") {
    VcConfig cfg;
    VcModel m(cfg, 9);
    const int T = 16;
    Inputs in = make_inputs(cfg, T, 60);
    auto st = m.extract_styles(in.content, in.lf0, in.energy);
    Tensor y0 = m.convert(in.content, in.spk, st, std::nullopt);

    std::vector<double> bumped = in.spk.value();
    bumped[3] += 0.25;
    Tensor y1 = m.convert(in.content, Tensor::vector(bumped), st, std::nullopt);
    double delta = 0;
    for (size_t i = 0; i < y0.value().size(); ++i) delta += std::abs(y0.value()[i] - y1.value()[i]);
    CHECK(delta > 1e-9);
}

TEST_CASE("reconstruction gradient passes the finite-difference check for every parameter") {
    VcConfig cfg;
    VcModel m(cfg, 11);
    const int T = 2;  // micro instance
    Inputs in = make_inputs(cfg, T, 70);
    Tensor target = rand_mat(T, cfg.mel_bins, 71);
    Tensor teacher = rand_mat(T, cfg.mel_bins, 72);

    auto recon_loss = [&]() {
        auto st = m.extract_styles(in.content, in.lf0, in.energy);
        Tensor y = m.convert(in.content, in.spk, st, teacher);
        return num::mse(y, target);
    };
    for (auto& [name, t] : m.params().items()) {
        auto rep = num::grad_check_inplace(recon_loss, t, 1e-5, 1e-4);
        INFO("param ", name, " max rel err ", rep.max_relative_error, " ", rep.message);
        CHECK(rep.pass);
    }

    // free-running path backpropagates through the frame recurrence
    auto freerun_loss = [&]() {
        auto st = m.extract_styles(in.content, in.lf0, in.energy);
        Tensor y = m.convert(in.content, in.spk, st, std::nullopt);
        return num::mse(y, target);
    };
    for (auto& [name, t] : m.params().items()) {
        auto rep = num::grad_check_inplace(freerun_loss, t, 1e-5, 1e-4);
        INFO("param ", name, " (free-run) max rel err ", rep.max_relative_error);
        CHECK(rep.pass);
    }
}

TEST_CASE("checkpoint round-trip restores parameters bit-exactly") {
    namespace fs = std::filesystem;
    VcConfig cfg;
    VcModel m(cfg, 13);
    params::Adam opt;

    // run one step so optimizer state is nontrivial
    {
        num::Tape tape;
        Inputs in = make_inputs(cfg, 8, 80);
        auto st = m.extract_styles(in.content, in.lf0, in.energy);
        Tensor y = m.convert(in.content, in.spk, st, rand_mat(8, cfg.mel_bins, 81));
        num::backward(num::mse(y, rand_mat(8, cfg.mel_bins, 82)));
        opt.step(m.params(), 1e-3);
    }

    fs::path path = fs::temp_directory_path() / "mfc_test_ckpt.ckpt";
    params::CheckpointMeta meta;
    meta.kind = "vc_base";
    meta.version = kVersion;
    meta.config_hash = "cfg123";
    meta.corpus_hash = "corpus456";
    meta.extra = cfg.to_json();
    params::save_checkpoint(path, {{"vc", &m.params()}}, &opt, meta);

    auto loaded = params::load_checkpoint(path);
    CHECK(loaded.meta.kind == "vc_base");
    CHECK(loaded.meta.config_hash == "cfg123");
    CHECK(loaded.opt_step == 1);

    VcModel m2(VcConfig::from_json(loaded.meta.extra), 999);  // different init
    loaded.load_into("vc", m2.params());
    for (size_t i = 0; i < m.params().items().size(); ++i) {
        const auto& [name, t] = m.params().items()[i];
        const auto& [name2, t2] = m2.params().items()[i];
        REQUIRE(name == name2);
        CHECK(t.value() == t2.value());
    }
    CHECK(m.params().content_hash() == m2.params().content_hash());
    fs::remove(path);
}
