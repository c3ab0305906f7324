// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <istream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ilm {

/// Byte-level BPE tokenizer. The base alphabet is all 256 bytes, so any text
/// encodes without an <unk>; specials live below the byte range and are never
/// produced by merges.
class Tokenizer {
public:
    struct Specials {
        std::string pad = "<|pad|>";
        std::string unk = "<unk>";
        std::string bos = "<|bos|>";
        std::string eos = "<|eos|>";
    };

    static constexpr int kPadId = 0;
    static constexpr int kUnkId = 1;
    static constexpr int kBosId = 2;
    static constexpr int kEosId = 3;
    static constexpr int kNumSpecials = 4;
    static constexpr int kByteBase = kNumSpecials;  // byte b -> id kByteBase + b

    /// Deterministic BPE training; pair-frequency ties break toward the
    /// lexicographically smaller (left, right) byte-string pair.
    static Tokenizer train(std::istream& corpus, int vocab_size);
    static Tokenizer train_from_lines(const std::vector<std::string>& lines, int vocab_size);

    std::vector<int> encode(std::string_view text) const;
    std::string decode(const std::vector<int>& ids) const;

    int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
    int pad_id() const { return kPadId; }
    int unk_id() const { return kUnkId; }
    const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
    const std::string& token(int id) const;

    void save(const std::string& path) const;
    static Tokenizer load(const std::string& path);

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::pair<std::string, std::string>> merges_;
    // (left id, right id) -> (rank, merged id)
    std::unordered_map<std::uint64_t, std::pair<int, int>> merge_lookup_;
    Specials specials_;

    void init_base();
    void index_merges();
    friend struct TokenizerIO;
};

}  // namespace ilm
