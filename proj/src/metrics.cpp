#include "mfc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace mfc::eval {

using constraints::StyleLevels;
using num::Tensor;
using nlohmann::json;

double pearson(const std::vector<double>& a, const std::vector<double>& b, bool* degenerate) {
    if (a.size() != b.size() || a.empty()) {
        throw ContractViolation("pearson: length mismatch (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
    }
    if (degenerate) *degenerate = false;
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    // rounding keeps constant sequences from reaching exactly zero variance
    const double tol_a = n * 1e-20 * (1.0 + ma * ma);
    const double tol_b = n * 1e-20 * (1.0 + mb * mb);
    if (saa <= tol_a || sbb <= tol_b) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    return sab / std::sqrt(saa * sbb);
}

double metric_d_style(const constraints::Ser& ser, const Tensor& source_mel,
                      const Tensor& converted_mel) {
    num::NoTape guard;
    return constraints::loss_style(ser, source_mel, converted_mel, {false, true, true}).total.item();
}

double metric_p_lf0(const std::vector<double>& source_lf0, const Tensor& converted_mel,
                    bool* degenerate) {
    if (converted_mel.rank() != 2 || converted_mel.rows() != static_cast<int>(source_lf0.size())) {
        throw ContractViolation("metric_p_lf0: contour length " +
                                std::to_string(source_lf0.size()) + " does not match mel frames");
    }
    std::vector<double> band0(static_cast<size_t>(converted_mel.rows()));
    for (int t = 0; t < converted_mel.rows(); ++t) band0[static_cast<size_t>(t)] = converted_mel.at(t, 0);
    return pearson(source_lf0, band0, degenerate);
}

double metric_cos_sim(const constraints::SpeakerIndicator& indicator, const Tensor& converted_mel,
                      const Tensor& target_centroid) {
    num::NoTape guard;
    return num::cosine(indicator.embed(converted_mel), target_centroid).item();
}

double metric_content_error(const constraints::AsrStandin& asr,
                            const std::vector<uint16_t>& source_tokens,
                            const Tensor& converted_mel) {
    num::NoTape guard;
    std::vector<int> frames = asr.decode_frames(converted_mel);
    const int groups = static_cast<int>(source_tokens.size());
    if ((converted_mel.rows() + 3) / 4 != groups) {
        throw ContractViolation("metric_content_error: token count " + std::to_string(groups) +
                                " does not match frame count " + std::to_string(converted_mel.rows()));
    }
    int wrong = 0;
    for (int g = 0; g < groups; ++g) {
        const int lo = g * 4;
        const int hi = std::min<int>(static_cast<int>(frames.size()), lo + 4);
        std::map<int, int> votes;
        for (int t = lo; t < hi; ++t) votes[frames[static_cast<size_t>(t)]]++;
        int best_tok = -1, best_count = -1;
        for (const auto& [tok, count] : votes) {
            if (count > best_count) {  // ties resolve to the lowest token id
                best_count = count;
                best_tok = tok;
            }
        }
        wrong += (best_tok != static_cast<int>(source_tokens[static_cast<size_t>(g)]));
    }
    return static_cast<double>(wrong) / static_cast<double>(groups);
}

double oracle_timbre_cos(const Tensor& converted_mel, const std::vector<double>& timbre) {
    const int B = converted_mel.cols();
    const int start = B - static_cast<int>(timbre.size());
    std::vector<double> est(timbre.size(), 0.0);
    for (int t = 0; t < converted_mel.rows(); ++t) {
        for (size_t j = 0; j < timbre.size(); ++j) est[j] += converted_mel.at(t, start + static_cast<int>(j));
    }
    for (auto& v : est) v /= converted_mel.rows();
    double dot = 0, na = 0, nb = 0;
    for (size_t j = 0; j < timbre.size(); ++j) {
        dot += est[j] * timbre[j];
        na += est[j] * est[j];
        nb += timbre[j] * timbre[j];
    }
    if (na <= 0 || nb <= 0) return 0.0;
    return dot / std::sqrt(na * nb);
}

json MetricRow::to_json() const {
    return json{{"utt", utt},
                {"d_style", d_style},
                {"p_lf0", p_lf0},
                {"p_lf0_degenerate", p_lf0_degenerate},
                {"cos_sim", cos_sim},
                {"content_error", content_error},
                {"timbre_cos", timbre_cos}};
}

void MetricsReport::finalize() {
    mean_d_style = mean_p_lf0 = mean_cos_sim = mean_content_error = mean_timbre_cos = 0;
    for (const auto& r : rows) {
        mean_d_style += r.d_style;
        mean_p_lf0 += r.p_lf0;
        mean_cos_sim += r.cos_sim;
        mean_content_error += r.content_error;
        mean_timbre_cos += r.timbre_cos;
    }
    if (!rows.empty()) {
        const double n = static_cast<double>(rows.size());
        mean_d_style /= n;
        mean_p_lf0 /= n;
        mean_cos_sim /= n;
        mean_content_error /= n;
        mean_timbre_cos /= n;
    }
    mean_self_p_lf0 = 0;
    for (const auto& r : self_rows) mean_self_p_lf0 += r.p_lf0;
    if (!self_rows.empty()) mean_self_p_lf0 /= static_cast<double>(self_rows.size());
}

json MetricsReport::to_json() const {
    json j;
    j["lineage"] = lineage;
    j["rows"] = json::array();
    for (const auto& r : rows) j["rows"].push_back(r.to_json());
    j["self_rows"] = json::array();
    for (const auto& r : self_rows) {
        j["self_rows"].push_back({{"utt", r.utt}, {"p_lf0", r.p_lf0}, {"degenerate", r.degenerate}});
    }
    j["aggregate"] = {{"d_style", mean_d_style},
                      {"p_lf0", mean_p_lf0},
                      {"cos_sim", mean_cos_sim},
                      {"content_error", mean_content_error},
                      {"timbre_cos", mean_timbre_cos},
                      {"self_p_lf0", mean_self_p_lf0}};
    return j;
}

std::string MetricsReport::to_text() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << "utt                              d_style    p_lf0  cos_sim  cont_err  timbre_cos\n";
    auto line = [&](const std::string& name, double ds, double pl, double cs, double ce, double tc) {
        os << name;
        for (size_t i = name.size(); i < 30; ++i) os << ' ';
        os << "  " << ds << "   " << pl << "   " << cs << "    " << ce << "      " << tc << "\n";
    };
    for (const auto& r : rows) line(r.utt, r.d_style, r.p_lf0, r.cos_sim, r.content_error, r.timbre_cos);
    line("MEAN", mean_d_style, mean_p_lf0, mean_cos_sim, mean_content_error, mean_timbre_cos);
    os << "self-conversion p_lf0 mean: " << mean_self_p_lf0 << " over " << self_rows.size()
       << " utterances\n";
    return os.str();
}

std::string MetricsReport::to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "utt,d_style,p_lf0,p_lf0_degenerate,cos_sim,content_error,timbre_cos\n";
    for (const auto& r : rows) {
        os << r.utt << ',' << r.d_style << ',' << r.p_lf0 << ',' << (r.p_lf0_degenerate ? 1 : 0)
           << ',' << r.cos_sim << ',' << r.content_error << ',' << r.timbre_cos << "\n";
    }
    return os.str();
}

MetricsReport evaluate_conversion(const train::UttStore& store, const constraints::AuxModels& aux,
                                  const model::VcModel& vc, int target_speaker,
                                  const std::function<Tensor(const corpus::Utterance&)>& speaker_input_for,
                                  const Tensor& reference_centroid, json lineage) {
    num::NoTape guard;
    MetricsReport rep;
    rep.lineage = std::move(lineage);
    const auto& timbre = store.manifest.speaker(target_speaker).timbre;

    auto convert_utt = [&](int idx) {
        const corpus::Utterance& u = store.utts[static_cast<size_t>(idx)];
        Tensor mel = store.mels[static_cast<size_t>(idx)];
        Tensor content = aux.asr->features(mel);
        auto styles = vc.extract_styles(content, constraints::lf0_column(u),
                                        constraints::energy_column(u));
        return vc.convert(content, speaker_input_for(u), styles, std::nullopt);
    };

    for (int idx : store.manifest.file_indices("test")) {
        const corpus::Utterance& u = store.utts[static_cast<size_t>(idx)];
        Tensor converted = convert_utt(idx);
        MetricRow row;
        row.utt = store.manifest.files[static_cast<size_t>(idx)].path;
        row.d_style = metric_d_style(*aux.ser, store.mels[static_cast<size_t>(idx)], converted);
        row.p_lf0 = metric_p_lf0(u.lf0, converted, &row.p_lf0_degenerate);
        row.cos_sim = metric_cos_sim(*aux.indicator, converted, reference_centroid);
        row.content_error = metric_content_error(*aux.asr, u.tokens, converted);
        row.timbre_cos = oracle_timbre_cos(converted, timbre);
        rep.rows.push_back(std::move(row));
    }

    for (int idx : store.manifest.file_indices("target_ref", target_speaker)) {
        const corpus::Utterance& u = store.utts[static_cast<size_t>(idx)];
        Tensor converted = convert_utt(idx);
        SelfRow row;
        row.utt = store.manifest.files[static_cast<size_t>(idx)].path;
        row.p_lf0 = metric_p_lf0(u.lf0, converted, &row.degenerate);
        rep.self_rows.push_back(std::move(row));
    }
    rep.finalize();
    return rep;
}

json SpeakerTable::to_json() const {
    auto side = [](const SpeakerTableSide& s) {
        json j;
        j["intra"] = s.intra ? json(*s.intra) : json(nullptr);
        j["intra_defined"] = s.intra.has_value();
        j["inter"] = s.inter;
        j["gap"] = s.gap();
        return j;
    };
    return json{{"classifier", side(classifier)}, {"indicator", side(indicator)}};
}

SpeakerTable speaker_model_table(const train::UttStore& store, const constraints::AuxModels& aux) {
    num::NoTape guard;
    std::vector<int> heldout = store.manifest.file_indices("test");
    {
        auto refs = store.manifest.file_indices("target_ref");
        heldout.insert(heldout.end(), refs.begin(), refs.end());
    }
    if (heldout.empty()) throw ContractViolation("speaker_model_table: no held-out utterances");

    struct Emb {
        int speaker;
        std::vector<double> cls, ind;
    };
    std::vector<Emb> embs;
    embs.reserve(heldout.size());
    for (int idx : heldout) {
        Emb e;
        e.speaker = store.utts[static_cast<size_t>(idx)].speaker_id;
        e.cls = aux.classifier->embedding(store.mels[static_cast<size_t>(idx)]).value();
        e.ind = aux.indicator->embed(store.mels[static_cast<size_t>(idx)]).value();
        embs.push_back(std::move(e));
    }

    auto cos = [](const std::vector<double>& a, const std::vector<double>& b) {
        double d = 0, na = 0, nb = 0;
        for (size_t i = 0; i < a.size(); ++i) {
            d += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        if (na <= 0 || nb <= 0) return 0.0;
        return d / std::sqrt(na * nb);
    };

    auto table_for = [&](bool use_ind) {
        SpeakerTableSide side;
        double intra_sum = 0, inter_sum = 0;
        int64_t intra_n = 0, inter_n = 0;
        for (size_t i = 0; i < embs.size(); ++i) {
            for (size_t j = i + 1; j < embs.size(); ++j) {
                const double c = use_ind ? cos(embs[i].ind, embs[j].ind) : cos(embs[i].cls, embs[j].cls);
                if (embs[i].speaker == embs[j].speaker) {
                    intra_sum += c;
                    ++intra_n;
                } else {
                    inter_sum += c;
                    ++inter_n;
                }
            }
        }
        if (intra_n > 0) side.intra = intra_sum / static_cast<double>(intra_n);
        side.inter = inter_n > 0 ? inter_sum / static_cast<double>(inter_n) : 0.0;
        return side;
    };

    SpeakerTable t;
    t.classifier = table_for(false);
    t.indicator = table_for(true);
    return t;
}

}  // namespace mfc::eval
