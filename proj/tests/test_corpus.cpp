#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "mfc/corpus.hpp"
#include "mfc/hash.hpp"
#include "mfc/rng.hpp"

using namespace mfc;
using namespace mfc::corpus;
namespace fs = std::filesystem;

namespace {

double pearson_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    const size_t n = a.size();
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

CorpusConfig small_config(uint64_t seed = 3) {
    CorpusConfig cfg;
    cfg.seed = seed;
    cfg.base_speakers = 6;
    cfg.target_speakers = 2;
    cfg.utts_per_base = 6;
    cfg.test_utts = 12;
    cfg.target_ref_utts = 4;
    return cfg;
}

fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("mfc_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("default corpus has the configured file counts") {
    CorpusConfig cfg = small_config(7);
    fs::path dir = temp_dir("counts");
    CorpusManifest m = generate_corpus(cfg, dir);

    const int expected = cfg.base_speakers * cfg.utts_per_base + cfg.test_utts +
                         cfg.target_speakers * (cfg.adapt_small + cfg.adapt_large + cfg.target_ref_utts);
    CHECK(static_cast<int>(m.files.size()) == expected);
    CHECK(static_cast<int>(m.speakers.size()) == cfg.base_speakers + cfg.target_speakers);

    for (int t = cfg.base_speakers; t < cfg.base_speakers + cfg.target_speakers; ++t) {
        CHECK(m.file_indices("adapt_1", t).size() == 1);
        CHECK(m.file_indices("adapt_5", t).size() == 5);
        CHECK(m.file_indices("target_ref", t).size() == static_cast<size_t>(cfg.target_ref_utts));
    }
    fs::remove_all(dir);
}

TEST_CASE("same seed twice gives an identical corpus directory hash") {
    CorpusConfig cfg = small_config(11);
    fs::path d1 = temp_dir("det1");
    fs::path d2 = temp_dir("det2");
    generate_corpus(cfg, d1);
    generate_corpus(cfg, d2);
    CHECK(sha256_dir(d1) == sha256_dir(d2));

    cfg.seed = 12;
    fs::path d3 = temp_dir("det3");
    generate_corpus(cfg, d3);
    CHECK(sha256_dir(d1) != sha256_dir(d3));
    fs::remove_all(d1);
    fs::remove_all(d2);
    fs::remove_all(d3);
}

TEST_CASE("lf0 band tracks the ground-truth contour") {
    CorpusConfig cfg = small_config(5);
    fs::path dir = temp_dir("lf0");
    CorpusManifest m = generate_corpus(cfg, dir);
    for (const auto& e : m.files) {
        Utterance u = load_utterance(dir / e.path);
        std::vector<double> band0(static_cast<size_t>(u.t_frames));
        for (int t = 0; t < u.t_frames; ++t) band0[static_cast<size_t>(t)] = u.mel_at(t, 0);
        CHECK(pearson_oracle(band0, u.lf0) >= 0.999);
    }
    fs::remove_all(dir);
}

TEST_CASE("synthesis is deterministic given factors, noise aside") {
    CorpusConfig cfg;
    cfg.noise_sigma = 0.0;
    SpeakerProfile sp{0, {0.1, -0.2, 0.3, -0.4, 0.5, -0.6, 0.7, -0.8}};
    std::vector<std::vector<double>> templates(static_cast<size_t>(cfg.vocab),
                                               std::vector<double>(7, 0.0));
    for (int k = 0; k < cfg.vocab; ++k)
        for (int j = 0; j < 7; ++j) templates[static_cast<size_t>(k)][static_cast<size_t>(j)] = 0.1 * k - 0.05 * j;
    std::vector<uint16_t> tokens(12);
    for (size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<uint16_t>(i % cfg.vocab);
    StyleSpec st = make_style_spec(2, 0.0, 0.0);

    Utterance a = synthesize_mel(sp, tokens, st, /*noise_seed=*/1, cfg, templates);
    Utterance b = synthesize_mel(sp, tokens, st, /*noise_seed=*/999, cfg, templates);
    CHECK(a.mel == b.mel);  // zero noise: different seeds give identical mel

    SUBCASE("speaker change touches only the timbre bands") {
        SpeakerProfile sp2{1, {-0.9, 0.8, -0.7, 0.6, -0.5, 0.4, -0.3, 0.2}};
        Utterance c = synthesize_mel(sp2, tokens, st, 1, cfg, templates);
        for (int t = 0; t < a.t_frames; ++t) {
            for (int bb = 0; bb < 8; ++bb) CHECK(a.mel_at(t, bb) == c.mel_at(t, bb));
        }
        bool timbre_differs = false;
        for (int t = 0; t < a.t_frames && !timbre_differs; ++t) {
            for (int bb = 8; bb < 16; ++bb) timbre_differs = timbre_differs || a.mel_at(t, bb) != c.mel_at(t, bb);
        }
        CHECK(timbre_differs);
    }

    SUBCASE("style change touches only the prosody band") {
        StyleSpec st2 = make_style_spec(3, 0.0, 0.0);
        Utterance c = synthesize_mel(sp, tokens, st2, 1, cfg, templates);
        for (int t = 0; t < a.t_frames; ++t) {
            for (int bb = 1; bb < 16; ++bb) CHECK(a.mel_at(t, bb) == c.mel_at(t, bb));
        }
        bool prosody_differs = false;
        for (int t = 0; t < a.t_frames; ++t) prosody_differs = prosody_differs || a.mel_at(t, 0) != c.mel_at(t, 0);
        CHECK(prosody_differs);
    }
}

TEST_CASE("utterance file round-trip is lossless") {
    CorpusConfig cfg = small_config(21);
    fs::path dir = temp_dir("roundtrip");
    CorpusManifest m = generate_corpus(cfg, dir);
    Utterance u = load_utterance(dir / m.files[0].path);

    fs::path copy = dir / "copy.mfcu";
    save_utterance(u, copy);
    Utterance v = load_utterance(copy);
    CHECK(u.mel == v.mel);
    CHECK(u.lf0 == v.lf0);
    CHECK(u.energy == v.energy);
    CHECK(u.tokens == v.tokens);
    CHECK(u.speaker_id == v.speaker_id);
    CHECK(u.style_class == v.style_class);

    SUBCASE("truncated file reports the offset") {
        auto bytes = fs::file_size(copy);
        fs::resize_file(copy, bytes / 2);
        CHECK_THROWS_WITH_AS(load_utterance(copy), doctest::Contains("offset"), IoError);
    }
    SUBCASE("missing file reports the path") {
        CHECK_THROWS_WITH_AS(load_utterance(dir / "nope.mfcu"), doctest::Contains("nope.mfcu"),
                             IoError);
    }
    SUBCASE("manifest referencing a missing file fails validation") {
        fs::remove(dir / m.files[3].path);
        CHECK_THROWS_AS(load_manifest(dir), IoError);
    }
    fs::remove_all(dir);
}

TEST_CASE("speaker sampling rejects unsatisfiable configurations") {
    CorpusConfig cfg = small_config(1);
    cfg.timbre_dim = 1;
    cfg.base_speakers = 30;  // 30 speakers at distance >= 0.5 cannot fit in [-1,1]
    fs::path dir = temp_dir("reject");
    CHECK_THROWS_AS(generate_corpus(cfg, dir), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("factor separability: nearest-centroid speaker id from timbre bands") {
    CorpusConfig cfg = small_config(31);
    fs::path dir = temp_dir("sep");
    CorpusManifest m = generate_corpus(cfg, dir);

    int total = 0, correct = 0;
    for (const auto& e : m.files) {
        Utterance u = load_utterance(dir / e.path);
        std::vector<double> est = timbre_estimate(u);
        int best = -1;
        double best_d = 1e300;
        for (const auto& sp : m.speakers) {
            double d = 0;
            for (size_t j = 0; j < est.size(); ++j) {
                d += (est[j] - sp.timbre[j]) * (est[j] - sp.timbre[j]);
            }
            if (d < best_d) {
                best_d = d;
                best = sp.id;
            }
        }
        total++;
        correct += (best == u.speaker_id);
    }
    CHECK(static_cast<double>(correct) / total >= 0.95);

    SUBCASE("noiseless classification is exact") {
        CorpusConfig c0 = cfg;
        c0.noise_sigma = 0.0;
        StyleSpec st = make_style_spec(1, 0.02, -0.03);
        std::vector<uint16_t> toks(14, 3);
        for (const auto& sp : m.speakers) {
            Utterance u = synthesize_mel(sp, toks, st, 5, c0, m.templates);
            std::vector<double> est = timbre_estimate(u);
            int best = -1;
            double best_d = 1e300;
            for (const auto& cand : m.speakers) {
                double d = 0;
                for (size_t j = 0; j < est.size(); ++j) d += (est[j] - cand.timbre[j]) * (est[j] - cand.timbre[j]);
                if (d < best_d) {
                    best_d = d;
                    best = cand.id;
                }
            }
            CHECK(best == sp.id);
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("token decode accuracy at default noise") {
    CorpusConfig cfg = small_config(41);
    fs::path dir = temp_dir("tokens");
    CorpusManifest m = generate_corpus(cfg, dir);
    int64_t total = 0, correct = 0;
    for (const auto& e : m.files) {
        Utterance u = load_utterance(dir / e.path);
        auto decoded = decode_tokens_oracle(u, m.templates);
        REQUIRE(decoded.size() == u.tokens.size());
        for (size_t i = 0; i < decoded.size(); ++i) {
            total++;
            correct += (decoded[i] == u.tokens[i]);
        }
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(total) >= 0.99);
    fs::remove_all(dir);
}

TEST_CASE("manifest load validates split disjointness") {
    CorpusConfig cfg = small_config(51);
    fs::path dir = temp_dir("disjoint");
    CorpusManifest m = generate_corpus(cfg, dir);

    // loads fine as generated
    CorpusManifest m2 = load_manifest(dir);
    CHECK(m2.files.size() == m.files.size());

    // corrupt: move an adaptation utterance into the base-train split
    std::ifstream in(dir / "manifest.json");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    auto pos = text.find("\"adapt_1\"");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 9, "\"base_train\"");
    std::ofstream out(dir / "manifest.json");
    out << text;
    out.close();
    CHECK_THROWS_AS(load_manifest(dir), ContractViolation);
    fs::remove_all(dir);
}
