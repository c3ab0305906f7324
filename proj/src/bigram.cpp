// SPDX-License-Identifier: Apache-2.0
#include "ilm/bigram.hpp"

#include "ilm/common.hpp"

namespace ilm {

void BigramModel::add_sequence(const std::vector<int>& seq) {
    for (size_t t = 1; t < seq.size(); ++t) {
        int p = seq[t - 1], n = seq[t];
        if (p < 0 || p >= vocab_ || n < 0 || n >= vocab_) fail("bigram: token id out of range");
        ++counts_[static_cast<size_t>(p) * vocab_ + n];
    }
}

int BigramModel::predict_prev(int next) const {
    if (next < 0 || next >= vocab_) fail("predict_prev: token id out of range");
    std::uint32_t best = 0;
    int best_p = pad_id_;
    for (int p = 0; p < vocab_; ++p) {
        std::uint32_t c = counts_[static_cast<size_t>(p) * vocab_ + next];
        if (c > best) {
            best = c;
            best_p = p;
        }
    }
    return best_p;
}

BigramModel train_bigram(const ChunkedDataset& ds, int vocab_size, int pad_id) {
    BigramModel m(vocab_size, pad_id);
    for (const auto& seq : ds.sequences) m.add_sequence(seq);
    return m;
}

}  // namespace ilm
