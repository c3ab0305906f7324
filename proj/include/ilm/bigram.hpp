// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ilm/dataset.hpp"

#include <cstdint>
#include <vector>

namespace ilm {

/// Predecessor counts: counts(p, n) = occurrences of token p immediately
/// before token n within a sequence.
class BigramModel {
public:
    BigramModel(int vocab_size, int pad_id)
        : vocab_(vocab_size), pad_id_(pad_id),
          counts_(static_cast<size_t>(vocab_size) * vocab_size, 0) {}

    void add_sequence(const std::vector<int>& seq);

    /// argmax over predecessors p of counts(p, next); ties break toward the
    /// smaller id; a token never seen as non-initial maps to the pad id.
    int predict_prev(int next) const;

    std::uint32_t count(int prev, int next) const {
        return counts_[static_cast<size_t>(prev) * vocab_ + next];
    }
    int vocab_size() const { return vocab_; }

private:
    int vocab_;
    int pad_id_;
    std::vector<std::uint32_t> counts_;
};

BigramModel train_bigram(const ChunkedDataset& ds, int vocab_size, int pad_id);

}  // namespace ilm
