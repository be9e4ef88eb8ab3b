#include "mfc/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mfc/rng.hpp"

namespace mfc::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kContentBands = 7;   // bins 1..7
constexpr int kTimbreStart = 8;    // bins 8..15
constexpr uint16_t kFormatVersion = 1;
constexpr int kMaxRejectionAttempts = 10000;

// seed-chain tags
enum : uint64_t { kSeedSpeakers = 1, kSeedTemplates = 2, kSeedUtt = 3, kSeedNoise = 4 };

const double kFreqBase[4] = {0.015, 0.028, 0.050, 0.085};
const double kAmpBase[4] = {1.3, 1.4, 1.5, 1.6};

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0;
    for (size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return d;
}

std::vector<double> sample_point(Rng& rng, int dim) {
    std::vector<double> v(static_cast<size_t>(dim));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

std::string pad3(int v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%03d", v);
    return buf;
}

}  // namespace

StyleSpec make_style_spec(int style_class, double freq_jitter, double amp_jitter) {
    if (style_class < 0 || style_class >= 4) {
        throw ContractViolation("make_style_spec: style class " + std::to_string(style_class) +
                                " out of range [0,4)");
    }
    if (std::abs(freq_jitter) > 0.1 || std::abs(amp_jitter) > 0.1) {
        throw ContractViolation("make_style_spec: jitter exceeds 10%");
    }
    StyleSpec s;
    s.style_class = style_class;
    s.contour_freq = kFreqBase[style_class] * (1.0 + freq_jitter);
    s.contour_amp = kAmpBase[style_class] * (1.0 + amp_jitter);
    return s;
}

double contour_at(const StyleSpec& s, int t) {
    return s.contour_amp * std::sin(2.0 * std::numbers::pi * s.contour_freq * t);
}

double energy_at(const StyleSpec& s, int t) {
    return 0.5 + 0.2 * (s.contour_amp / 1.6) * std::cos(2.0 * std::numbers::pi * s.contour_freq * t);
}

Utterance synthesize_mel(const SpeakerProfile& speaker, const std::vector<uint16_t>& tokens,
                         const StyleSpec& style, uint64_t noise_seed, const CorpusConfig& cfg,
                         const std::vector<std::vector<double>>& templates) {
    if (tokens.size() < 10) {
        throw ContractViolation("synthesize_mel: need at least 10 content tokens, got " +
                                std::to_string(tokens.size()));
    }
    const int B = cfg.mel_bins;
    const int T = static_cast<int>(tokens.size()) * cfg.frames_per_token;
    Utterance u;
    u.t_frames = T;
    u.bins = B;
    u.vocab = cfg.vocab;
    u.speaker_id = speaker.id;
    u.style_class = style.style_class;
    u.tokens = tokens;
    u.lf0.resize(static_cast<size_t>(T));
    u.energy.resize(static_cast<size_t>(T));
    u.mel.assign(static_cast<size_t>(T) * B, 0.0);

    Rng noise(noise_seed);
    for (int t = 0; t < T; ++t) {
        const uint16_t tok = tokens[static_cast<size_t>(t / cfg.frames_per_token)];
        if (tok >= templates.size()) {
            throw ContractViolation("synthesize_mel: token " + std::to_string(tok) +
                                    " outside template bank");
        }
        u.lf0[static_cast<size_t>(t)] = contour_at(style, t);
        u.energy[static_cast<size_t>(t)] = energy_at(style, t);
        double* row = u.mel.data() + static_cast<size_t>(t) * B;
        row[0] = u.lf0[static_cast<size_t>(t)];
        for (int j = 0; j < kContentBands; ++j) row[1 + j] = templates[tok][static_cast<size_t>(j)];
        for (int j = 0; j < B - kTimbreStart; ++j) row[kTimbreStart + j] = speaker.timbre[static_cast<size_t>(j)];
        if (cfg.noise_sigma > 0.0) {
            for (int b = 0; b < B; ++b) row[b] += noise.normal(0.0, cfg.noise_sigma);
        }
    }
    return u;
}

// ---- binary utterance format -------------------------------------------
// magic "MFCU" | u16 version | u32 T | u32 B | u32 vocab | u32 speaker_id |
// u32 style_class | f64 mel[T*B] | f64 lf0[T] | f64 energy[T] |
// u16 tokens[ceil(T/4)] — all little-endian.

namespace {

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
    uint64_t bits = std::bit_cast<uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    const std::string path;
    size_t pos = 0;

    void need(size_t n, const char* what) {
        if (pos + n > buf.size()) {
            throw IoError(path + ": truncated while reading " + what + " at offset " +
                          std::to_string(pos) + " (need " + std::to_string(n) + " bytes, have " +
                          std::to_string(buf.size() - pos) + ")");
        }
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = static_cast<uint8_t>(buf[pos]) | (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
        pos += 4;
        return v;
    }
    double f64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
        pos += 8;
        return std::bit_cast<double>(v);
    }
};

}  // namespace

void save_utterance(const Utterance& u, const fs::path& path) {
    const int token_count = (u.t_frames + 3) / 4;
    if (static_cast<int>(u.tokens.size()) != token_count) {
        throw ContractViolation("save_utterance: token count " + std::to_string(u.tokens.size()) +
                                " does not match ceil(T/4) = " + std::to_string(token_count));
    }
    std::string out;
    out.reserve(32 + u.mel.size() * 8 + u.lf0.size() * 16 + u.tokens.size() * 2);
    out += "MFCU";
    put_u16(out, kFormatVersion);
    put_u32(out, static_cast<uint32_t>(u.t_frames));
    put_u32(out, static_cast<uint32_t>(u.bins));
    put_u32(out, static_cast<uint32_t>(u.vocab));
    put_u32(out, static_cast<uint32_t>(u.speaker_id));
    put_u32(out, static_cast<uint32_t>(u.style_class));
    for (double d : u.mel) put_f64(out, d);
    for (double d : u.lf0) put_f64(out, d);
    for (double d : u.energy) put_f64(out, d);
    for (uint16_t t : u.tokens) put_u16(out, t);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("save_utterance: cannot open " + path.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("save_utterance: write failed for " + path.string());
}

Utterance load_utterance(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_utterance: cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{buf, path.string()};

    r.need(4, "magic");
    if (buf.compare(0, 4, "MFCU") != 0) {
        throw IoError(path.string() + ": bad magic, not an utterance file");
    }
    r.pos = 4;
    const uint16_t version = r.u16("version");
    if (version != kFormatVersion) {
        throw IoError(path.string() + ": unsupported format version " + std::to_string(version));
    }
    Utterance u;
    u.t_frames = static_cast<int>(r.u32("frame count"));
    u.bins = static_cast<int>(r.u32("bin count"));
    u.vocab = static_cast<int>(r.u32("vocab size"));
    u.speaker_id = static_cast<int>(r.u32("speaker id"));
    u.style_class = static_cast<int>(r.u32("style class"));
    if (u.t_frames <= 0 || u.bins <= 0 || u.t_frames > (1 << 20) || u.bins > (1 << 12)) {
        throw IoError(path.string() + ": implausible header (T=" + std::to_string(u.t_frames) +
                      ", B=" + std::to_string(u.bins) + ")");
    }
    const size_t n_mel = static_cast<size_t>(u.t_frames) * static_cast<size_t>(u.bins);
    u.mel.resize(n_mel);
    for (size_t i = 0; i < n_mel; ++i) u.mel[i] = r.f64("mel");
    u.lf0.resize(static_cast<size_t>(u.t_frames));
    for (auto& d : u.lf0) d = r.f64("lf0");
    u.energy.resize(static_cast<size_t>(u.t_frames));
    for (auto& d : u.energy) d = r.f64("energy");
    const int token_count = (u.t_frames + 3) / 4;
    u.tokens.resize(static_cast<size_t>(token_count));
    for (auto& t : u.tokens) t = r.u16("tokens");
    if (r.pos != buf.size()) {
        throw IoError(path.string() + ": trailing bytes at offset " + std::to_string(r.pos));
    }
    return u;
}

// ---- manifest ------------------------------------------------------------

std::vector<int> CorpusManifest::file_indices(const std::string& split, int speaker) const {
    std::vector<int> out;
    for (size_t i = 0; i < files.size(); ++i) {
        if (files[i].split == split && (speaker < 0 || files[i].speaker == speaker)) {
            out.push_back(static_cast<int>(i));
        }
    }
    return out;
}

const SpeakerProfile& CorpusManifest::speaker(int id) const {
    for (const auto& s : speakers) {
        if (s.id == id) return s;
    }
    throw ContractViolation("manifest: unknown speaker id " + std::to_string(id));
}

namespace {

json config_to_json_impl(const CorpusConfig& c) {
    return json{{"seed", c.seed},
                {"base_speakers", c.base_speakers},
                {"target_speakers", c.target_speakers},
                {"utts_per_base", c.utts_per_base},
                {"test_utts", c.test_utts},
                {"adapt_small", c.adapt_small},
                {"adapt_large", c.adapt_large},
                {"target_ref_utts", c.target_ref_utts},
                {"mel_bins", c.mel_bins},
                {"vocab", c.vocab},
                {"n_styles", c.n_styles},
                {"timbre_dim", c.timbre_dim},
                {"frames_per_token", c.frames_per_token},
                {"t_min", c.t_min},
                {"t_max", c.t_max},
                {"noise_sigma", c.noise_sigma},
                {"min_speaker_dist", c.min_speaker_dist},
                {"min_template_dist", c.min_template_dist}};
}

CorpusConfig config_from_json_impl(const json& j) {
    CorpusConfig c;
    c.seed = j.at("seed").get<uint64_t>();
    c.base_speakers = j.at("base_speakers").get<int>();
    c.target_speakers = j.at("target_speakers").get<int>();
    c.utts_per_base = j.at("utts_per_base").get<int>();
    c.test_utts = j.at("test_utts").get<int>();
    c.adapt_small = j.at("adapt_small").get<int>();
    c.adapt_large = j.at("adapt_large").get<int>();
    c.target_ref_utts = j.at("target_ref_utts").get<int>();
    c.mel_bins = j.at("mel_bins").get<int>();
    c.vocab = j.at("vocab").get<int>();
    c.n_styles = j.at("n_styles").get<int>();
    c.timbre_dim = j.at("timbre_dim").get<int>();
    c.frames_per_token = j.at("frames_per_token").get<int>();
    c.t_min = j.at("t_min").get<int>();
    c.t_max = j.at("t_max").get<int>();
    c.noise_sigma = j.at("noise_sigma").get<double>();
    c.min_speaker_dist = j.at("min_speaker_dist").get<double>();
    c.min_template_dist = j.at("min_template_dist").get<double>();
    return c;
}

void validate_manifest(const CorpusManifest& m, const fs::path& dir) {
    std::set<int> base_ids, target_ids;
    for (const auto& s : m.speakers) {
        (s.id < m.cfg.base_speakers ? base_ids : target_ids).insert(s.id);
    }
    std::set<std::string> adapt_paths, eval_paths;
    for (const auto& e : m.files) {
        if (!fs::exists(dir / e.path)) {
            throw IoError("manifest validation: referenced file missing: " + e.path);
        }
        if (e.split == "base_train" && target_ids.count(e.speaker)) {
            throw ContractViolation("manifest validation: target speaker " +
                                    std::to_string(e.speaker) + " appears in base training data");
        }
        if (e.split == "adapt_1" || e.split == "adapt_5") adapt_paths.insert(e.path);
        if (e.split == "test" || e.split == "target_ref") eval_paths.insert(e.path);
    }
    for (const auto& p : adapt_paths) {
        if (eval_paths.count(p)) {
            throw ContractViolation("manifest validation: adaptation utterance " + p +
                                    " overlaps the evaluation sets");
        }
    }
}

}  // namespace

nlohmann::json CorpusConfig::to_json() const { return config_to_json_impl(*this); }

CorpusConfig CorpusConfig::from_json(const nlohmann::json& j) { return config_from_json_impl(j); }


CorpusManifest generate_corpus(const CorpusConfig& cfg, const fs::path& dir) {
    CorpusManifest m;
    m.cfg = cfg;
    const int n_total = cfg.base_speakers + cfg.target_speakers;

    // Speakers: rejection-sampled for pairwise timbre distance. Base speakers
    // occupy the inner region of the cube; low-resource targets sit on the
    // outer shell, so their timbres extrapolate beyond the base distribution.
    {
        Rng rng(seed_chain(cfg.seed, kSeedSpeakers));
        const double min_sq = cfg.min_speaker_dist * cfg.min_speaker_dist;
        for (int id = 0; id < n_total; ++id) {
            const bool is_target = id >= cfg.base_speakers;
            int attempts = 0;
            while (true) {
                if (++attempts > kMaxRejectionAttempts) {
                    throw ConfigError(
                        "generate_corpus: could not place speaker " + std::to_string(id) +
                        " after " + std::to_string(kMaxRejectionAttempts) +
                        " attempts; timbre dim too small for requested speaker count");
                }
                std::vector<double> cand(static_cast<size_t>(cfg.timbre_dim));
                for (auto& v : cand) {
                    if (is_target) {
                        v = rng.uniform(0.65, 0.85) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
                    } else {
                        v = rng.uniform(-0.5, 0.5);
                    }
                }
                bool ok = true;
                for (const auto& s : m.speakers) ok = ok && sq_dist(cand, s.timbre) >= min_sq;
                if (ok) {
                    m.speakers.push_back({id, std::move(cand)});
                    break;
                }
            }
        }
    }

    // content templates over the content bands
    {
        Rng rng(seed_chain(cfg.seed, kSeedTemplates));
        const double min_sq = cfg.min_template_dist * cfg.min_template_dist;
        for (int k = 0; k < cfg.vocab; ++k) {
            int attempts = 0;
            while (true) {
                if (++attempts > kMaxRejectionAttempts) {
                    throw ConfigError("generate_corpus: could not place content template " +
                                      std::to_string(k) + "; vocabulary too large for band count");
                }
                std::vector<double> cand = sample_point(rng, kContentBands);
                bool ok = true;
                for (const auto& t : m.templates) ok = ok && sq_dist(cand, t) >= min_sq;
                if (ok) {
                    m.templates.push_back(std::move(cand));
                    break;
                }
            }
        }
    }

    fs::create_directories(dir / "utts");

    uint64_t utt_index = 0;
    auto make_utt = [&](int speaker_id, const std::string& split, const std::string& name) {
        Rng rng(seed_chain(cfg.seed, kSeedUtt, utt_index));
        const int fpt = cfg.frames_per_token;
        const int n_tokens = rng.uniform_int(cfg.t_min / fpt, cfg.t_max / fpt);
        std::vector<uint16_t> tokens(static_cast<size_t>(n_tokens));
        for (auto& t : tokens) t = static_cast<uint16_t>(rng.uniform_int(0, cfg.vocab - 1));
        const int style_class = rng.uniform_int(0, cfg.n_styles - 1);
        StyleSpec style = make_style_spec(style_class, rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
        const uint64_t noise_seed = seed_chain(cfg.seed, kSeedNoise, utt_index);
        Utterance u = synthesize_mel(m.speaker(speaker_id), tokens, style, noise_seed, cfg, m.templates);
        const std::string rel = "utts/" + name + ".mfcu";
        save_utterance(u, dir / rel);
        m.files.push_back({rel, speaker_id, style_class, split});
        ++utt_index;
    };

    for (int s = 0; s < cfg.base_speakers; ++s) {
        for (int i = 0; i < cfg.utts_per_base; ++i) {
            make_utt(s, "base_train", "b" + pad3(s) + "_" + pad3(i));
        }
    }
    for (int i = 0; i < cfg.test_utts; ++i) {
        make_utt(i % cfg.base_speakers, "test", "test_" + pad3(i));
    }
    for (int t = 0; t < cfg.target_speakers; ++t) {
        const int id = cfg.base_speakers + t;
        for (int i = 0; i < cfg.adapt_small; ++i) make_utt(id, "adapt_1", "t" + pad3(id) + "_a1_" + pad3(i));
        for (int i = 0; i < cfg.adapt_large; ++i) make_utt(id, "adapt_5", "t" + pad3(id) + "_a5_" + pad3(i));
        for (int i = 0; i < cfg.target_ref_utts; ++i) make_utt(id, "target_ref", "t" + pad3(id) + "_ref_" + pad3(i));
    }

    json j;
    j["format_version"] = 1;
    j["config"] = cfg.to_json();
    j["speakers"] = json::array();
    for (const auto& s : m.speakers) {
        j["speakers"].push_back({{"id", s.id},
                                 {"role", s.id < cfg.base_speakers ? "base" : "target"},
                                 {"timbre", s.timbre}});
    }
    j["content_templates"] = m.templates;
    j["files"] = json::array();
    for (const auto& e : m.files) {
        j["files"].push_back({{"path", e.path}, {"speaker", e.speaker}, {"style", e.style}, {"split", e.split}});
    }
    std::ofstream f(dir / "manifest.json");
    if (!f) throw IoError("generate_corpus: cannot write manifest.json under " + dir.string());
    f << j.dump(2) << "\n";
    f.close();

    validate_manifest(m, dir);
    return m;
}

CorpusManifest load_manifest(const fs::path& dir) {
    const fs::path mpath = dir / "manifest.json";
    std::ifstream f(mpath);
    if (!f) throw IoError("load_manifest: cannot open " + mpath.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw IoError("load_manifest: malformed JSON in " + mpath.string() + ": " + e.what());
    }
    CorpusManifest m;
    try {
        m.cfg = CorpusConfig::from_json(j.at("config"));
        for (const auto& s : j.at("speakers")) {
            m.speakers.push_back({s.at("id").get<int>(), s.at("timbre").get<std::vector<double>>()});
        }
        m.templates = j.at("content_templates").get<std::vector<std::vector<double>>>();
        for (const auto& e : j.at("files")) {
            m.files.push_back({e.at("path").get<std::string>(), e.at("speaker").get<int>(),
                               e.at("style").get<int>(), e.at("split").get<std::string>()});
        }
    } catch (const json::exception& e) {
        throw IoError("load_manifest: missing or mistyped field in " + mpath.string() + ": " + e.what());
    }
    validate_manifest(m, dir);
    return m;
}

// ---- oracles ----------------------------------------------------------

std::vector<uint16_t> decode_tokens_oracle(const Utterance& u,
                                           const std::vector<std::vector<double>>& templates) {
    const int groups = static_cast<int>(u.tokens.size());
    std::vector<uint16_t> out(static_cast<size_t>(groups));
    for (int g = 0; g < groups; ++g) {
        const int lo = g * 4;
        const int hi = std::min(u.t_frames, lo + 4);
        std::vector<double> avg(kContentBands, 0.0);
        for (int t = lo; t < hi; ++t) {
            for (int j = 0; j < kContentBands; ++j) avg[static_cast<size_t>(j)] += u.mel_at(t, 1 + j);
        }
        for (auto& v : avg) v /= (hi - lo);
        int best = 0;
        double best_d = 1e300;
        for (size_t k = 0; k < templates.size(); ++k) {
            const double d = sq_dist(avg, templates[k]);
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(k);
            }
        }
        out[static_cast<size_t>(g)] = static_cast<uint16_t>(best);
    }
    return out;
}

std::vector<int> frame_tokens(const Utterance& u) {
    std::vector<int> out(static_cast<size_t>(u.t_frames));
    for (int t = 0; t < u.t_frames; ++t) out[static_cast<size_t>(t)] = u.tokens[static_cast<size_t>(t / 4)];
    return out;
}

std::vector<double> timbre_estimate(const Utterance& u) {
    std::vector<double> est(static_cast<size_t>(u.bins - kTimbreStart), 0.0);
    for (int t = 0; t < u.t_frames; ++t) {
        for (size_t j = 0; j < est.size(); ++j) est[j] += u.mel_at(t, kTimbreStart + static_cast<int>(j));
    }
    for (auto& v : est) v /= u.t_frames;
    return est;
}

std::vector<double> extract_lf0(const Utterance& u) {
    std::vector<double> out(static_cast<size_t>(u.t_frames));
    for (int t = 0; t < u.t_frames; ++t) out[static_cast<size_t>(t)] = u.mel_at(t, 0);
    return out;
}

}  // namespace mfc::corpus
