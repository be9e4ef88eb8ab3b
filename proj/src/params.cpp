#include "mfc/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mfc/errors.hpp"
#include "mfc/hash.hpp"

namespace mfc::params {

using nlohmann::json;
namespace fs = std::filesystem;

num::Tensor ParamStore::create(const std::string& name, const std::vector<int>& shape, Rng& rng) {
    std::vector<double> data;
    if (shape.size() == 2) {
        const double limit = std::sqrt(6.0 / (shape[0] + shape[1]));
        data.resize(static_cast<size_t>(shape[0]) * static_cast<size_t>(shape[1]));
        for (auto& v : data) v = rng.uniform(-limit, limit);
        num::Tensor t = num::Tensor::matrix(shape[0], shape[1], std::move(data), true);
        add(name, t);
        return t;
    }
    if (shape.size() == 1) {
        num::Tensor t = num::Tensor::vector(std::vector<double>(static_cast<size_t>(shape[0]), 0.0), true);
        add(name, t);
        return t;
    }
    num::Tensor t = num::Tensor::scalar(0.0, true);
    add(name, t);
    return t;
}

void ParamStore::add(const std::string& name, num::Tensor t) {
    if (index_.count(name)) {
        throw ContractViolation("ParamStore: duplicate parameter name '" + name + "'");
    }
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
}

num::Tensor ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractViolation("ParamStore: unknown parameter '" + name + "'");
    return items_[it->second].second;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) != 0; }

int64_t ParamStore::total_elements() const {
    int64_t n = 0;
    for (const auto& [_, t] : items_) n += t.numel();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& [_, t] : items_) t.zero_grad();
}

void ParamStore::set_requires_grad(bool rg) {
    for (auto& [_, t] : items_) t.set_requires_grad(rg);
}

std::string ParamStore::content_hash() const {
    std::string acc;
    for (const auto& [name, t] : items_) {
        acc += name;
        acc += ':';
        const auto& v = t.value();
        acc.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    }
    return sha256_hex(acc);
}

void Adam::step(ParamStore& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, tensor] : params.items()) {
        if (!tensor.requires_grad()) continue;
        const auto& g = tensor.grad();
        auto& slot = moments_[name];
        if (slot.first.empty()) {
            slot.first.assign(g.size(), 0.0);
            slot.second.assign(g.size(), 0.0);
        }
        auto& value = const_cast<num::Tensor&>(tensor).mutable_value();
        for (size_t i = 0; i < g.size(); ++i) {
            slot.first[i] = beta1_ * slot.first[i] + (1.0 - beta1_) * g[i];
            slot.second[i] = beta2_ * slot.second[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mhat = slot.first[i] / bc1;
            const double vhat = slot.second[i] / bc2;
            value[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
    params.zero_grads();
}

void Adam::restore(int64_t t,
                   std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments) {
    t_ = t;
    moments_ = std::move(moments);
}

// ---- checkpoint I/O ------------------------------------------------------

namespace {

void append_f64(std::string& payload, const std::vector<double>& v) {
    for (double d : v) {
        uint64_t bits = std::bit_cast<uint64_t>(d);
        for (int i = 0; i < 8; ++i) payload.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
}

std::vector<double> read_f64(const std::string& payload, size_t offset_elems, size_t count,
                             const std::string& path) {
    const size_t byte_off = offset_elems * 8;
    if (byte_off + count * 8 > payload.size()) {
        throw IoError(path + ": checkpoint payload truncated at element offset " +
                      std::to_string(offset_elems));
    }
    std::vector<double> out(count);
    for (size_t i = 0; i < count; ++i) {
        uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) {
            bits |= static_cast<uint64_t>(static_cast<uint8_t>(payload[byte_off + i * 8 + static_cast<size_t>(b)])) << (8 * b);
        }
        out[i] = std::bit_cast<double>(bits);
    }
    return out;
}

}  // namespace

void save_checkpoint(const fs::path& path,
                     const std::vector<std::pair<std::string, const ParamStore*>>& stores,
                     const Adam* optimizer, const CheckpointMeta& meta) {
    json index;
    index["format_version"] = 1;
    index["kind"] = meta.kind;
    index["version"] = meta.version;
    index["config_hash"] = meta.config_hash;
    index["parent_hash"] = meta.parent_hash;
    index["corpus_hash"] = meta.corpus_hash;
    index["aux_hash"] = meta.aux_hash;
    index["frozen"] = meta.frozen;
    index["epoch"] = meta.epoch;
    index["extra"] = meta.extra;

    std::string payload;
    json tensors = json::object();
    size_t offset = 0;
    for (const auto& [prefix, store] : stores) {
        for (const auto& [name, t] : store->items()) {
            const std::string full = prefix + "." + name;
            tensors[full] = {{"shape", t.shape()}, {"offset", offset}, {"count", t.value().size()}};
            append_f64(payload, t.value());
            offset += t.value().size();
        }
    }
    index["tensors"] = tensors;

    if (optimizer) {
        json opt;
        opt["step"] = optimizer->step_count();
        json moments = json::object();
        for (const auto& [name, mv] : optimizer->moments()) {
            moments[name] = {{"m_offset", offset}, {"v_offset", offset + mv.first.size()},
                             {"count", mv.first.size()}};
            append_f64(payload, mv.first);
            append_f64(payload, mv.second);
            offset += 2 * mv.first.size();
        }
        opt["moments"] = moments;
        index["opt"] = opt;
    }

    const std::string idx = index.dump();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("save_checkpoint: cannot open " + path.string() + " for writing");
    f << "MFCK";
    const uint32_t len = static_cast<uint32_t>(idx.size());
    for (int i = 0; i < 4; ++i) f.put(static_cast<char>((len >> (8 * i)) & 0xff));
    f.write(idx.data(), static_cast<std::streamsize>(idx.size()));
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!f) throw IoError("save_checkpoint: write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_checkpoint: cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 || buf.compare(0, 4, "MFCK") != 0) {
        throw IoError(path.string() + ": not a checkpoint file");
    }
    uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<uint32_t>(static_cast<uint8_t>(buf[4 + static_cast<size_t>(i)])) << (8 * i);
    if (8 + static_cast<size_t>(len) > buf.size()) {
        throw IoError(path.string() + ": checkpoint index truncated");
    }
    json index;
    try {
        index = json::parse(buf.substr(8, len));
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": malformed checkpoint index: " + e.what());
    }
    const std::string payload = buf.substr(8 + len);

    LoadedCheckpoint out;
    try {
        out.meta.kind = index.at("kind").get<std::string>();
        out.meta.version = index.at("version").get<std::string>();
        out.meta.config_hash = index.at("config_hash").get<std::string>();
        out.meta.parent_hash = index.at("parent_hash").get<std::string>();
        out.meta.corpus_hash = index.at("corpus_hash").get<std::string>();
        out.meta.aux_hash = index.at("aux_hash").get<std::string>();
        out.meta.frozen = index.at("frozen").get<bool>();
        out.meta.epoch = index.at("epoch").get<int>();
        out.meta.extra = index.at("extra");
        for (const auto& [name, spec] : index.at("tensors").items()) {
            const auto shape = spec.at("shape").get<std::vector<int>>();
            const auto offset = spec.at("offset").get<size_t>();
            const auto count = spec.at("count").get<size_t>();
            std::vector<double> data = read_f64(payload, offset, count, path.string());
            num::Tensor t;
            if (shape.empty()) t = num::Tensor::scalar(data[0]);
            else if (shape.size() == 1) t = num::Tensor::vector(std::move(data));
            else t = num::Tensor::matrix(shape[0], shape[1], std::move(data));
            out.tensors.emplace(name, std::move(t));
        }
        if (index.contains("opt")) {
            out.opt_step = index.at("opt").at("step").get<int64_t>();
            for (const auto& [name, spec] : index.at("opt").at("moments").items()) {
                const auto m_off = spec.at("m_offset").get<size_t>();
                const auto v_off = spec.at("v_offset").get<size_t>();
                const auto count = spec.at("count").get<size_t>();
                out.moments[name] = {read_f64(payload, m_off, count, path.string()),
                                     read_f64(payload, v_off, count, path.string())};
            }
        }
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": bad checkpoint index: " + e.what());
    }
    return out;
}

void LoadedCheckpoint::load_into(const std::string& prefix, ParamStore& store) const {
    for (auto& [name, t] : store.items()) {
        const std::string full = prefix + "." + name;
        auto it = tensors.find(full);
        if (it == tensors.end()) {
            throw ContractViolation("checkpoint: missing tensor '" + full + "'");
        }
        if (it->second.shape() != t.shape()) {
            throw ContractViolation("checkpoint: shape mismatch for '" + full + "': stored " +
                                    num::shape_str(it->second.shape()) + ", expected " +
                                    num::shape_str(t.shape()));
        }
        const_cast<num::Tensor&>(t).mutable_value() = it->second.value();
    }
}

bool LoadedCheckpoint::has_prefix(const std::string& prefix) const {
    const std::string p = prefix + ".";
    for (const auto& [name, _] : tensors) {
        if (name.rfind(p, 0) == 0) return true;
    }
    return false;
}

}  // namespace mfc::params
