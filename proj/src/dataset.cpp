// SPDX-License-Identifier: Apache-2.0
#include "ilm/dataset.hpp"

#include "ilm/common.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace ilm {

ChunkedDataset chunk(const std::vector<int>& ids, int seq_len, double overlap_frac) {
    if (seq_len < 2) fail("chunk: seq_len must be >= 2");
    if (overlap_frac < 0.0 || overlap_frac >= 1.0) fail("chunk: overlap_frac must be in [0, 1)");
    int overlap = static_cast<int>(std::lround(overlap_frac * seq_len));
    int stride = seq_len - overlap;
    if (stride < 1) stride = 1;

    ChunkedDataset ds;
    ds.seq_len = seq_len;
    ds.overlap_frac = overlap_frac;
    for (size_t start = 0; start + static_cast<size_t>(seq_len) <= ids.size();
         start += static_cast<size_t>(stride)) {
        ds.sequences.emplace_back(ids.begin() + static_cast<long>(start),
                                  ids.begin() + static_cast<long>(start) + seq_len);
    }
    return ds;
}

SplitDataset build_splits(const std::vector<std::vector<int>>& docs, int seq_len,
                          double overlap_frac, double train_frac, double val_frac,
                          std::uint64_t seed) {
    std::vector<size_t> order(docs.size());
    std::iota(order.begin(), order.end(), size_t{0});
    auto rng = make_rng(seed, /*salt=*/0x5117);
    std::shuffle(order.begin(), order.end(), rng);

    size_t n_train = static_cast<size_t>(train_frac * static_cast<double>(docs.size()));
    size_t n_val = static_cast<size_t>(val_frac * static_cast<double>(docs.size()));

    SplitDataset out;
    auto append = [&](ChunkedDataset& dst, const std::vector<int>& doc) {
        ChunkedDataset c = chunk(doc, seq_len, overlap_frac);
        dst.seq_len = seq_len;
        dst.overlap_frac = overlap_frac;
        for (auto& s : c.sequences) dst.sequences.push_back(std::move(s));
    };
    for (size_t i = 0; i < order.size(); ++i) {
        const auto& doc = docs[order[i]];
        if (i < n_train) append(out.train, doc);
        else if (i < n_train + n_val) append(out.val, doc);
        else append(out.test, doc);
    }
    return out;
}

std::vector<std::vector<int>> encode_corpus_file(const Tokenizer& tok, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("encode_corpus_file: cannot open " + path);
    std::vector<std::vector<int>> docs;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) docs.push_back(tok.encode(line));
    return docs;
}

namespace {
constexpr char kMagic[] = "ILMDS1";

void write_u32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
}  // namespace

void save_dataset(const ChunkedDataset& ds, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("save_dataset: cannot open " + path);
    f.write(kMagic, 6);
    write_u32(f, static_cast<std::uint32_t>(ds.seq_len));
    write_u32(f, static_cast<std::uint32_t>(ds.sequences.size()));
    for (const auto& seq : ds.sequences) {
        for (int id : seq) {
            if (id < 0 || id > 0xFFFF) fail("save_dataset: token id exceeds u16 range");
            unsigned char b[2] = {static_cast<unsigned char>(id),
                                  static_cast<unsigned char>(id >> 8)};
            f.write(reinterpret_cast<char*>(b), 2);
        }
    }
}

ChunkedDataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("load_dataset: cannot open " + path);
    char magic[6];
    f.read(magic, 6);
    if (!f || std::string(magic, 6) != kMagic) fail("load_dataset: bad magic in " + path);
    ChunkedDataset ds;
    ds.seq_len = static_cast<int>(read_u32(f));
    std::uint32_t count = read_u32(f);
    ds.sequences.resize(count);
    for (auto& seq : ds.sequences) {
        seq.resize(ds.seq_len);
        for (int& id : seq) {
            unsigned char b[2];
            f.read(reinterpret_cast<char*>(b), 2);
            id = static_cast<int>(b[0]) | (static_cast<int>(b[1]) << 8);
        }
    }
    if (!f) fail("load_dataset: truncated file " + path);
    return ds;
}

}  // namespace ilm
