#include "mfc/vc_model.hpp"

#include <string>

namespace mfc::model {

using num::Tensor;
using nlohmann::json;

json VcConfig::to_json() const {
    return json{{"mel_bins", mel_bins},       {"content_dim", content_dim},
                {"style_hidden", style_hidden}, {"local_factor", local_factor},
                {"speaker_dim", speaker_dim}, {"enc_width", enc_width},
                {"enc_blocks", enc_blocks},   {"dec_hidden", dec_hidden},
                {"autoregressive", autoregressive}};
}

VcConfig VcConfig::from_json(const json& j) {
    VcConfig c;
    c.mel_bins = j.at("mel_bins").get<int>();
    c.content_dim = j.at("content_dim").get<int>();
    c.style_hidden = j.at("style_hidden").get<int>();
    c.local_factor = j.at("local_factor").get<int>();
    c.speaker_dim = j.at("speaker_dim").get<int>();
    c.enc_width = j.at("enc_width").get<int>();
    c.enc_blocks = j.at("enc_blocks").get<int>();
    c.dec_hidden = j.at("dec_hidden").get<int>();
    c.autoregressive = j.at("autoregressive").get<bool>();
    return c;
}

VcModel::VcModel(const VcConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    Rng rng(init_seed);
    params_.create("style.W", {cfg.content_dim + 2, cfg.style_hidden}, rng);
    params_.create("style.b", {cfg.style_hidden}, rng);

    const int enc_in = cfg.content_dim + cfg.style_hidden + cfg.speaker_dim;
    params_.create("enc_in.W", {enc_in, cfg.enc_width}, rng);
    params_.create("enc_in.b", {cfg.enc_width}, rng);
    for (int b = 0; b < cfg.enc_blocks; ++b) {
        const std::string stem = "enc_b" + std::to_string(b);
        params_.create(stem + ".W", {3 * cfg.enc_width, cfg.enc_width}, rng);
        params_.create(stem + ".b", {cfg.enc_width}, rng);
    }

    const int dec_in = cfg.enc_width + cfg.style_hidden + 2 + cfg.speaker_dim + cfg.mel_bins;
    params_.create("dec_h.W", {dec_in, cfg.dec_hidden}, rng);
    params_.create("dec_h.b", {cfg.dec_hidden}, rng);
    params_.create("dec_out.W", {cfg.dec_hidden, cfg.mel_bins}, rng);
    params_.create("dec_out.b", {cfg.mel_bins}, rng);
}

StyleRepresentations VcModel::extract_styles(const Tensor& content, const Tensor& lf0,
                                             const Tensor& energy) const {
    if (content.rank() != 2 || lf0.rank() != 2 || energy.rank() != 2 || lf0.cols() != 1 ||
        energy.cols() != 1 || content.rows() != lf0.rows() || content.rows() != energy.rows()) {
        throw ContractViolation("extract_styles: misaligned inputs, content " +
                                num::shape_str(content.shape()) + ", lf0 " +
                                num::shape_str(lf0.shape()) + ", energy " +
                                num::shape_str(energy.shape()));
    }
    if (content.cols() != cfg_.content_dim) {
        throw ContractViolation("extract_styles: content width " + std::to_string(content.cols()) +
                                " does not match configured " + std::to_string(cfg_.content_dim));
    }
    StyleRepresentations st;
    st.frame = num::concat_cols({lf0, energy});
    Tensor pre = num::concat_cols({content, st.frame});
    Tensor hidden = num::tanh_op(
        num::add(num::matmul(pre, params_.get("style.W")), params_.get("style.b")));
    st.local = num::downsample_time(hidden, cfg_.local_factor);
    st.global = num::mean_pool_time(hidden);
    return st;
}

num::Tensor VcModel::encode(const Tensor& content, const Tensor& speaker_vec,
                            const StyleRepresentations& styles, int t_frames) const {
    Tensor local_up = num::repeat_rows(styles.local, cfg_.local_factor, t_frames);
    Tensor spk_rows = num::broadcast_row(speaker_vec, t_frames);
    Tensor h = num::tanh_op(num::add(
        num::matmul(num::concat_cols({content, local_up, spk_rows}), params_.get("enc_in.W")),
        params_.get("enc_in.b")));
    for (int b = 0; b < cfg_.enc_blocks; ++b) {
        const std::string stem = "enc_b" + std::to_string(b);
        Tensor mixed = num::concat_cols({h, num::shift_rows(h, 1), num::shift_rows(h, -1)});
        Tensor update = num::tanh_op(
            num::add(num::matmul(mixed, params_.get(stem + ".W")), params_.get(stem + ".b")));
        h = num::add(h, update);
    }
    return h;
}

num::Tensor VcModel::convert(const Tensor& content, const Tensor& speaker_vec,
                             const StyleRepresentations& styles,
                             const std::optional<Tensor>& teacher_mel) const {
    const int T = content.rank() == 2 ? content.rows() : -1;
    if (T <= 0 || content.cols() != cfg_.content_dim) {
        throw ContractViolation("convert: bad content shape " + num::shape_str(content.shape()));
    }
    if (speaker_vec.rank() != 1 || speaker_vec.shape()[0] != cfg_.speaker_dim) {
        throw ContractViolation("convert: speaker vector shape " +
                                num::shape_str(speaker_vec.shape()) + " does not match dim " +
                                std::to_string(cfg_.speaker_dim));
    }
    if (styles.frame.rows() != T) {
        throw ContractViolation("convert: style frame axis " + std::to_string(styles.frame.rows()) +
                                " does not match content frames " + std::to_string(T));
    }
    if (teacher_mel && (teacher_mel->rank() != 2 || teacher_mel->rows() != T ||
                        teacher_mel->cols() != cfg_.mel_bins)) {
        throw ContractViolation("convert: teacher mel shape " +
                                num::shape_str(teacher_mel->shape()) + " does not match [T," +
                                std::to_string(cfg_.mel_bins) + "]");
    }

    Tensor enc = encode(content, speaker_vec, styles, T);

    // decoder input order: [encoder, global style, frame style, speaker, prev frame]
    if (!cfg_.autoregressive || teacher_mel) {
        Tensor prev = cfg_.autoregressive ? num::shift_rows(*teacher_mel, 1)
                                          : Tensor::zeros({T, cfg_.mel_bins});
        Tensor dec_in = num::concat_cols({enc, num::broadcast_row(styles.global, T), styles.frame,
                                          num::broadcast_row(speaker_vec, T), prev});
        Tensor hidden = num::tanh_op(
            num::add(num::matmul(dec_in, params_.get("dec_h.W")), params_.get("dec_h.b")));
        return num::add(num::matmul(hidden, params_.get("dec_out.W")), params_.get("dec_out.b"));
    }

    // free-running: feed back the previous predicted frame
    std::vector<Tensor> rows;
    rows.reserve(static_cast<size_t>(T));
    Tensor prev = Tensor::zeros({cfg_.mel_bins});
    for (int t = 0; t < T; ++t) {
        Tensor in_t = num::concat_vec({num::select_row(enc, t), styles.global,
                                       num::select_row(styles.frame, t), speaker_vec, prev});
        Tensor hidden = num::tanh_op(
            num::add(num::matmul(in_t, params_.get("dec_h.W")), params_.get("dec_h.b")));
        Tensor out_t = num::add(num::matmul(hidden, params_.get("dec_out.W")), params_.get("dec_out.b"));
        rows.push_back(out_t);
        prev = out_t;
    }
    return num::stack_rows(rows);
}

}  // namespace mfc::model
