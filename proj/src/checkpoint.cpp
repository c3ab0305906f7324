// SPDX-License-Identifier: Apache-2.0
#include "ilm/checkpoint.hpp"

#include "json.hpp"

#include <cstring>
#include <fstream>

namespace ilm {

namespace {

constexpr char kMagic[] = "ILMCKPT1";

void write_u16(std::ofstream& f, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    f.write(reinterpret_cast<char*>(b), 2);
}

void write_u32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<char*>(b), 4);
}

std::uint16_t read_u16(std::ifstream& f) {
    unsigned char b[2];
    f.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t read_u32(std::ifstream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_tensor(std::ofstream& f, const std::string& name, const Mat<float>& m) {
    write_u16(f, static_cast<std::uint16_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    f.put(2);  // rank
    write_u32(f, static_cast<std::uint32_t>(m.rows()));
    write_u32(f, static_cast<std::uint32_t>(m.cols()));
    f.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(float) * m.size()));
}

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"n_layers", c.n_layers},       {"d_model", c.d_model},
            {"n_heads", c.n_heads},         {"d_ff", c.d_ff},
            {"vocab_size", c.vocab_size},   {"max_seq_len", c.max_seq_len},
            {"ln_eps", c.ln_eps},           {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.n_layers = j.at("n_layers").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.ln_eps = j.at("ln_eps").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

nlohmann::json spec_to_json(const IlmVariantSpec& s) {
    return {{"variant", to_string(s.variant)},
            {"grad_mode", to_string(s.grad_mode)},
            {"lambda", s.lambda},
            {"mask_rate", s.mask_rate}};
}

IlmVariantSpec spec_from_json(const nlohmann::json& j) {
    IlmVariantSpec s;
    s.variant = variant_from_string(j.at("variant").get<std::string>());
    s.grad_mode = grad_mode_from_string(j.at("grad_mode").get<std::string>());
    s.lambda = j.at("lambda").get<double>();
    s.mask_rate = j.at("mask_rate").get<double>();
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, ModelParams<float>& params,
                     const IlmVariantSpec& spec, long long step, const AdamState* adam) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("save_checkpoint: cannot open " + path);
    f.write(kMagic, 8);

    nlohmann::json header = {{"config", config_to_json(params.config)},
                             {"variant", spec_to_json(spec)},
                             {"step", step},
                             {"has_adam", adam != nullptr}};
    std::string hs = header.dump();
    write_u32(f, static_cast<std::uint32_t>(hs.size()));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));

    auto named = params.named_tensors();
    for (auto& [name, t] : named) write_tensor(f, name, t->value());
    if (adam) {
        if (adam->m.size() != named.size()) fail("save_checkpoint: adam state size mismatch");
        for (size_t k = 0; k < named.size(); ++k) {
            write_tensor(f, "adam.m." + named[k].first, adam->m[k]);
            write_tensor(f, "adam.v." + named[k].first, adam->v[k]);
        }
        Mat<float> t(1, 1);
        t(0, 0) = static_cast<float>(adam->t);
        write_tensor(f, "adam.t", t);
    }
    if (!f) fail("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("load_checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0) fail("load_checkpoint: bad magic in " + path);

    std::uint32_t hlen = read_u32(f);
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const std::exception& e) {
        fail(std::string("load_checkpoint: malformed header: ") + e.what());
    }

    Checkpoint ck;
    ck.spec = spec_from_json(header.at("variant"));
    ck.step = header.at("step").get<long long>();
    ModelConfig cfg = config_from_json(header.at("config"));
    ck.params = init_model<float>(cfg);
    bool has_adam = header.value("has_adam", false);
    if (has_adam) {
        ck.adam.emplace();
        adam_init(*ck.adam, ck.params);
    }

    auto named = ck.params.named_tensors();
    std::unordered_map<std::string, Mat<float>*> slots;
    for (auto& [name, t] : named) slots[name] = &t->mutable_value();
    if (has_adam) {
        for (size_t k = 0; k < named.size(); ++k) {
            slots["adam.m." + named[k].first] = &ck.adam->m[k];
            slots["adam.v." + named[k].first] = &ck.adam->v[k];
        }
    }
    Mat<float> adam_t(1, 1);
    adam_t.setZero();
    if (has_adam) slots["adam.t"] = &adam_t;

    while (true) {
        std::uint16_t name_len = read_u16(f);
        if (!f) break;
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        int rank = f.get();
        if (rank != 2) fail("load_checkpoint: unsupported tensor rank");
        std::uint32_t rows = read_u32(f);
        std::uint32_t cols = read_u32(f);
        auto it = slots.find(name);
        if (it == slots.end()) fail("load_checkpoint: unknown tensor " + name);
        Mat<float>& dst = *it->second;
        if (dst.rows() != static_cast<Index>(rows) || dst.cols() != static_cast<Index>(cols))
            fail("load_checkpoint: shape mismatch for " + name);
        f.read(reinterpret_cast<char*>(dst.data()),
               static_cast<std::streamsize>(sizeof(float) * rows * cols));
        if (!f) fail("load_checkpoint: truncated tensor " + name);
    }
    if (has_adam) ck.adam->t = static_cast<long long>(adam_t(0, 0));
    return ck;
}

}  // namespace ilm
