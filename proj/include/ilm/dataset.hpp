// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ilm/tokenizer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ilm {

/// Fixed-length token sequences produced by overlapped chunking.
struct ChunkedDataset {
    int seq_len = 0;
    double overlap_frac = 0.0;
    std::vector<std::vector<int>> sequences;

    size_t size() const { return sequences.size(); }
};

/// Overlapped chunking of one token stream. Stride is
/// seq_len - round(overlap_frac * seq_len); the trailing partial chunk is
/// dropped.
ChunkedDataset chunk(const std::vector<int>& ids, int seq_len, double overlap_frac);

struct SplitDataset {
    ChunkedDataset train, val, test;
};

/// Splits documents 90/5/5 (configurable) with a seeded shuffle, then chunks
/// each split's documents independently.
SplitDataset build_splits(const std::vector<std::vector<int>>& docs, int seq_len,
                          double overlap_frac, double train_frac, double val_frac,
                          std::uint64_t seed);

/// Reads a corpus file (one document per nonempty line) and encodes each line.
std::vector<std::vector<int>> encode_corpus_file(const Tokenizer& tok, const std::string& path);

/// Binary cache: magic "ILMDS1", u32le seq_len, u32le count, u16le token ids.
void save_dataset(const ChunkedDataset& ds, const std::string& path);
ChunkedDataset load_dataset(const std::string& path);

}  // namespace ilm
