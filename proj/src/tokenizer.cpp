// SPDX-License-Identifier: Apache-2.0
#include "ilm/tokenizer.hpp"

#include "ilm/common.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>

namespace ilm {

namespace {

inline std::uint64_t pack_pair(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

// Token byte strings may not be valid UTF-8, so the JSON file stores them
// with each byte mapped to the Unicode codepoint of the same value.
std::string bytes_to_json_string(const std::string& bytes) {
    std::string out;
    out.reserve(bytes.size());
    for (unsigned char c : bytes) {
        if (c < 0x80) {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back(static_cast<char>(0xC0 | (c >> 6)));
            out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
        }
    }
    return out;
}

std::string json_string_to_bytes(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (size_t i = 0; i < s.size();) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        if (c < 0x80) {
            out.push_back(static_cast<char>(c));
            i += 1;
        } else if ((c == 0xC2 || c == 0xC3) && i + 1 < s.size()) {
            unsigned char c2 = static_cast<unsigned char>(s[i + 1]);
            out.push_back(static_cast<char>(((c & 0x03) << 6) | (c2 & 0x3F)));
            i += 2;
        } else {
            fail("tokenizer: invalid byte encoding in token string");
        }
    }
    return out;
}

}  // namespace

void Tokenizer::init_base() {
    id_to_token_ = {specials_.pad, specials_.unk, specials_.bos, specials_.eos};
    for (int b = 0; b < 256; ++b) id_to_token_.push_back(std::string(1, static_cast<char>(b)));
    token_to_id_.clear();
    for (size_t i = 0; i < id_to_token_.size(); ++i)
        token_to_id_[id_to_token_[i]] = static_cast<int>(i);
}

void Tokenizer::index_merges() {
    merge_lookup_.clear();
    for (size_t r = 0; r < merges_.size(); ++r) {
        const auto& [l, rgt] = merges_[r];
        auto li = token_to_id_.find(l);
        auto ri = token_to_id_.find(rgt);
        auto mi = token_to_id_.find(l + rgt);
        if (li == token_to_id_.end() || ri == token_to_id_.end() || mi == token_to_id_.end())
            fail("tokenizer: merge references unknown token");
        merge_lookup_[pack_pair(li->second, ri->second)] = {static_cast<int>(r), mi->second};
    }
}

Tokenizer Tokenizer::train(std::istream& corpus, int vocab_size) {
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(corpus, line))
        if (!line.empty()) lines.push_back(line);
    return train_from_lines(lines, vocab_size);
}

Tokenizer Tokenizer::train_from_lines(const std::vector<std::string>& lines, int vocab_size) {
    Tokenizer tok;
    tok.init_base();
    const int base = tok.vocab_size();
    if (vocab_size <= base)
        fail("train_bpe: vocab_size " + std::to_string(vocab_size) +
             " must exceed base alphabet + specials (" + std::to_string(base) + ")");

    // Duplicate lines collapse into weighted entries; merging operates on the
    // weighted multiset.
    std::map<std::string, long long> weighted;
    for (const auto& l : lines) ++weighted[l];

    struct Seq {
        std::vector<int> ids;
        long long weight;
    };
    std::vector<Seq> seqs;
    seqs.reserve(weighted.size());
    for (const auto& [text, w] : weighted) {
        Seq s;
        s.weight = w;
        s.ids.reserve(text.size());
        for (unsigned char c : text) s.ids.push_back(kByteBase + c);
        seqs.push_back(std::move(s));
    }

    const int n_merges = vocab_size - base;
    for (int round = 0; round < n_merges; ++round) {
        std::unordered_map<std::uint64_t, long long> counts;
        for (const auto& s : seqs)
            for (size_t i = 0; i + 1 < s.ids.size(); ++i)
                ++counts[pack_pair(s.ids[i], s.ids[i + 1])];
        if (counts.empty()) break;

        auto is_special = [&](const std::string& s) {
            return s == tok.specials_.pad || s == tok.specials_.unk || s == tok.specials_.bos ||
                   s == tok.specials_.eos;
        };

        long long best_count = 0;
        int best_l = -1, best_r = -1;
        for (const auto& [key, cnt] : counts) {
            int l = static_cast<int>(key >> 32);
            int r = static_cast<int>(key & 0xFFFFFFFFu);
            if (is_special(tok.id_to_token_[l] + tok.id_to_token_[r])) continue;
            if (cnt > best_count) {
                best_count = cnt;
                best_l = l;
                best_r = r;
            } else if (cnt == best_count) {
                const auto& cl = tok.id_to_token_[l];
                const auto& cr = tok.id_to_token_[r];
                const auto& bl = tok.id_to_token_[best_l];
                const auto& br = tok.id_to_token_[best_r];
                if (cl < bl || (cl == bl && cr < br)) {
                    best_l = l;
                    best_r = r;
                }
            }
        }

        if (best_l < 0) break;
        std::string merged = tok.id_to_token_[best_l] + tok.id_to_token_[best_r];
        int new_id = tok.vocab_size();
        tok.id_to_token_.push_back(merged);
        tok.token_to_id_[merged] = new_id;
        tok.merges_.emplace_back(tok.id_to_token_[best_l], tok.id_to_token_[best_r]);

        // left-to-right non-overlapping replacement
        for (auto& s : seqs) {
            std::vector<int> out;
            out.reserve(s.ids.size());
            for (size_t i = 0; i < s.ids.size();) {
                if (i + 1 < s.ids.size() && s.ids[i] == best_l && s.ids[i + 1] == best_r) {
                    out.push_back(new_id);
                    i += 2;
                } else {
                    out.push_back(s.ids[i]);
                    i += 1;
                }
            }
            s.ids = std::move(out);
        }
    }

    tok.index_merges();
    return tok;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(kByteBase + c);

    // Repeatedly apply the lowest-ranked merge present anywhere in the
    // sequence, replacing left-to-right.
    while (ids.size() >= 2) {
        int best_rank = -1, merged_id = -1, best_l = -1, best_r = -1;
        for (size_t i = 0; i + 1 < ids.size(); ++i) {
            auto it = merge_lookup_.find(pack_pair(ids[i], ids[i + 1]));
            if (it != merge_lookup_.end() &&
                (best_rank < 0 || it->second.first < best_rank)) {
                best_rank = it->second.first;
                merged_id = it->second.second;
                best_l = ids[i];
                best_r = ids[i + 1];
            }
        }
        if (best_rank < 0) break;
        std::vector<int> out;
        out.reserve(ids.size());
        for (size_t i = 0; i < ids.size();) {
            if (i + 1 < ids.size() && ids[i] == best_l && ids[i + 1] == best_r) {
                out.push_back(merged_id);
                i += 2;
            } else {
                out.push_back(ids[i]);
                i += 1;
            }
        }
        ids = std::move(out);
    }
    return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= vocab_size())
            fail("decode: id " + std::to_string(id) + " out of range for vocab " +
                 std::to_string(vocab_size()));
        out += id_to_token_[id];
    }
    return out;
}

const std::string& Tokenizer::token(int id) const {
    if (id < 0 || id >= vocab_size()) fail("token: id out of range");
    return id_to_token_[id];
}

void Tokenizer::save(const std::string& path) const {
    nlohmann::json j;
    nlohmann::json vocab = nlohmann::json::object();
    for (size_t i = 0; i < id_to_token_.size(); ++i) {
        std::string key = i < kNumSpecials ? id_to_token_[i] : bytes_to_json_string(id_to_token_[i]);
        vocab[key] = static_cast<int>(i);
    }
    j["vocab"] = std::move(vocab);
    nlohmann::json merges = nlohmann::json::array();
    for (const auto& [l, r] : merges_)
        merges.push_back({bytes_to_json_string(l), bytes_to_json_string(r)});
    j["merges"] = std::move(merges);
    j["specials"] = {{"pad", specials_.pad},
                     {"unk", specials_.unk},
                     {"bos", specials_.bos},
                     {"eos", specials_.eos}};
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("tokenizer save: cannot open " + path);
    f << j.dump(2) << "\n";
}

Tokenizer Tokenizer::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("tokenizer load: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        fail("tokenizer load: malformed JSON in " + path + ": " + e.what());
    }

    Tokenizer tok;
    tok.specials_.pad = j.at("specials").at("pad").get<std::string>();
    tok.specials_.unk = j.at("specials").at("unk").get<std::string>();
    tok.specials_.bos = j.at("specials").at("bos").get<std::string>();
    tok.specials_.eos = j.at("specials").at("eos").get<std::string>();

    const auto& vocab = j.at("vocab");
    tok.id_to_token_.assign(vocab.size(), std::string());
    for (auto it = vocab.begin(); it != vocab.end(); ++it) {
        int id = it.value().get<int>();
        if (id < 0 || id >= static_cast<int>(vocab.size())) fail("tokenizer load: ids not dense");
        tok.id_to_token_[id] =
            id < kNumSpecials ? it.key() : json_string_to_bytes(it.key());
    }
    tok.token_to_id_.clear();
    for (size_t i = 0; i < tok.id_to_token_.size(); ++i)
        tok.token_to_id_[tok.id_to_token_[i]] = static_cast<int>(i);

    for (const auto& m : j.at("merges"))
        tok.merges_.emplace_back(json_string_to_bytes(m.at(0).get<std::string>()),
                                 json_string_to_bytes(m.at(1).get<std::string>()));
    tok.index_merges();
    return tok;
}

}  // namespace ilm
