// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "ilm/bigram.hpp"
#include "ilm/common.hpp"
#include "ilm/dataset.hpp"
#include "ilm/textgen.hpp"
#include "ilm/tokenizer.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

using ilm::ChunkedDataset;
using ilm::Tokenizer;

namespace {

// Naive reference BPE: token sequences kept as byte strings, pair counts
// recomputed from scratch each round with an ordered map, ties resolved by
// the map's lexicographic order. Written before the production trainer; the
// production path must reproduce its merge sequence exactly.
std::vector<std::pair<std::string, std::string>> oracle_merges(
    const std::vector<std::string>& lines, int n_merges) {
    std::vector<std::vector<std::string>> seqs;
    for (const auto& l : lines) {
        std::vector<std::string> s;
        for (char c : l) s.emplace_back(1, c);
        seqs.push_back(std::move(s));
    }
    std::vector<std::pair<std::string, std::string>> merges;
    for (int round = 0; round < n_merges; ++round) {
        std::map<std::pair<std::string, std::string>, long long> counts;
        for (const auto& s : seqs)
            for (size_t i = 0; i + 1 < s.size(); ++i) ++counts[{s[i], s[i + 1]}];
        if (counts.empty()) break;
        std::pair<std::string, std::string> best;
        long long best_count = -1;
        for (const auto& [pair, cnt] : counts)
            if (cnt > best_count) {  // first max in lexicographic order wins ties
                best = pair;
                best_count = cnt;
            }
        merges.push_back(best);
        for (auto& s : seqs) {
            std::vector<std::string> out;
            for (size_t i = 0; i < s.size();) {
                if (i + 1 < s.size() && s[i] == best.first && s[i + 1] == best.second) {
                    out.push_back(best.first + best.second);
                    i += 2;
                } else {
                    out.push_back(s[i]);
                    i += 1;
                }
            }
            s = std::move(out);
        }
    }
    return merges;
}

std::vector<std::string> sample_lines() {
    std::vector<std::string> lines;
    auto rng = ilm::make_rng(99, 1);
    size_t total = 0;
    while (total < 1024) {
        lines.push_back(ilm::textgen::story(rng));
        total += lines.back().size();
    }
    return lines;
}

}  // namespace

TEST_CASE("single merge on aaaa") {
    std::vector<std::string> lines = {"aaaa"};
    Tokenizer tok = Tokenizer::train_from_lines(lines, Tokenizer::kByteBase + 256 + 1);
    REQUIRE(tok.merges().size() == 1);
    CHECK(tok.merges()[0].first == "a");
    CHECK(tok.merges()[0].second == "a");
    auto ids = tok.encode("aaaa");
    CHECK(ids.size() == 2);  // left-to-right non-overlapping
}

TEST_CASE("vocab_size must exceed base alphabet") {
    std::vector<std::string> lines = {"abc"};
    CHECK_THROWS_AS(Tokenizer::train_from_lines(lines, 100), ilm::Error);
}

TEST_CASE("merge sequence equals the naive pair-count oracle on a 1KB corpus") {
    auto lines = sample_lines();
    const int n_merges = 60;
    Tokenizer tok = Tokenizer::train_from_lines(lines, 260 + n_merges);
    auto want = oracle_merges(lines, n_merges);
    REQUIRE(tok.merges().size() == want.size());
    for (size_t i = 0; i < want.size(); ++i) {
        CHECK(tok.merges()[i].first == want[i].first);
        CHECK(tok.merges()[i].second == want[i].second);
    }
}

TEST_CASE("training is deterministic") {
    auto lines = sample_lines();
    Tokenizer a = Tokenizer::train_from_lines(lines, 300);
    Tokenizer b = Tokenizer::train_from_lines(lines, 300);
    REQUIRE(a.merges().size() == b.merges().size());
    for (size_t i = 0; i < a.merges().size(); ++i) CHECK(a.merges()[i] == b.merges()[i]);
}

TEST_CASE("round trips") {
    auto lines = sample_lines();
    Tokenizer tok = Tokenizer::train_from_lines(lines, 320);
    for (const auto& l : lines) CHECK(tok.decode(tok.encode(l)) == l);
    CHECK(tok.encode("").empty());
    CHECK_THROWS_AS(tok.decode({tok.vocab_size()}), ilm::Error);

    // random UTF-8 via byte fallback
    std::mt19937_64 rng(4);
    for (int it = 0; it < 50; ++it) {
        std::string s;
        int n = 1 + static_cast<int>(rng() % 40);
        for (int i = 0; i < n; ++i) {
            unsigned cp = 1 + static_cast<unsigned>(rng() % 0x2FFF);
            if (cp < 0x80) {
                s.push_back(static_cast<char>(cp));
            } else if (cp < 0x800) {
                s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
                s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
            } else {
                s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
                s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
                s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
            }
        }
        CHECK(tok.decode(tok.encode(s)) == s);
    }
}

TEST_CASE("save/load is bit-exact and behavior-preserving") {
    auto lines = sample_lines();
    Tokenizer tok = Tokenizer::train_from_lines(lines, 300);
    std::string p1 = "tok_test_a.json", p2 = "tok_test_b.json";
    tok.save(p1);
    Tokenizer loaded = Tokenizer::load(p1);
    loaded.save(p2);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());
    CHECK(loaded.vocab_size() == tok.vocab_size());
    for (const auto& l : lines) CHECK(loaded.encode(l) == tok.encode(l));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("chunk starts and counts") {
    std::vector<int> ids(100);
    for (int i = 0; i < 100; ++i) ids[i] = i;

    ChunkedDataset ds = ilm::chunk(ids, 8, 0.25);
    REQUIRE(ds.sequences.size() == 16);  // starts 0..90 step 6
    for (size_t k = 0; k < ds.sequences.size(); ++k) CHECK(ds.sequences[k][0] == 6 * (int)k);

    // adjacent chunks share exactly round(0.25*8)=2 tokens
    for (size_t k = 0; k + 1 < ds.sequences.size(); ++k) {
        CHECK(ds.sequences[k][6] == ds.sequences[k + 1][0]);
        CHECK(ds.sequences[k][7] == ds.sequences[k + 1][1]);
    }

    ChunkedDataset disjoint = ilm::chunk(ids, 10, 0.0);
    REQUIRE(disjoint.sequences.size() == 10);
    for (size_t k = 0; k + 1 < disjoint.sequences.size(); ++k)
        CHECK(disjoint.sequences[k].back() + 1 == disjoint.sequences[k + 1].front());
}

TEST_CASE("dataset cache round trip") {
    std::vector<int> ids(50);
    for (int i = 0; i < 50; ++i) ids[i] = 3 * i + 1;
    ChunkedDataset ds = ilm::chunk(ids, 8, 0.25);
    ilm::save_dataset(ds, "ds_test.bin");
    ChunkedDataset back = ilm::load_dataset("ds_test.bin");
    CHECK(back.seq_len == ds.seq_len);
    REQUIRE(back.sequences.size() == ds.sequences.size());
    for (size_t i = 0; i < ds.sequences.size(); ++i) CHECK(back.sequences[i] == ds.sequences[i]);
    std::remove("ds_test.bin");
}

TEST_CASE("bigram predecessor counts and prediction") {
    const int a = 10, b = 11, c = 12, pad = 0;
    ChunkedDataset ds;
    ds.seq_len = 6;
    ds.sequences = {{a, b, a, b, a, c}};
    ilm::BigramModel m = ilm::train_bigram(ds, 16, pad);

    CHECK(m.count(a, b) == 2);
    CHECK(m.predict_prev(b) == a);
    CHECK(m.predict_prev(15) == pad);  // never seen as non-initial

    // column sums equal non-initial occurrence counts
    std::vector<int> occ(16, 0);
    for (const auto& seq : ds.sequences)
        for (size_t t = 1; t < seq.size(); ++t) ++occ[seq[t]];
    for (int n = 0; n < 16; ++n) {
        long long col = 0;
        for (int p = 0; p < 16; ++p) col += m.count(p, n);
        CHECK(col == occ[n]);
    }
}

TEST_CASE("bigram counts are permutation-equivariant") {
    auto rng = ilm::make_rng(3, 3);
    ChunkedDataset ds;
    ds.seq_len = 12;
    for (int s = 0; s < 20; ++s) {
        std::vector<int> seq(12);
        for (auto& t : seq) t = static_cast<int>(rng() % 16);
        ds.sequences.push_back(seq);
    }
    std::vector<int> perm(16);
    for (int i = 0; i < 16; ++i) perm[i] = (i * 7 + 3) % 16;

    ChunkedDataset relabeled = ds;
    for (auto& seq : relabeled.sequences)
        for (auto& t : seq) t = perm[t];

    ilm::BigramModel m1 = ilm::train_bigram(ds, 16, 0);
    ilm::BigramModel m2 = ilm::train_bigram(relabeled, 16, 0);
    for (int p = 0; p < 16; ++p)
        for (int n = 0; n < 16; ++n) CHECK(m1.count(p, n) == m2.count(perm[p], perm[n]));
}

TEST_CASE("split fractions by document") {
    std::vector<std::vector<int>> docs(40);
    for (size_t d = 0; d < docs.size(); ++d) docs[d] = std::vector<int>(30, static_cast<int>(d));
    auto splits = ilm::build_splits(docs, 8, 0.25, 0.9, 0.05, 7);
    CHECK(splits.train.size() > 0);
    CHECK(splits.val.size() > 0);
    CHECK(splits.test.size() > 0);
    // same seed -> same assignment
    auto again = ilm::build_splits(docs, 8, 0.25, 0.9, 0.05, 7);
    CHECK(again.train.sequences == splits.train.sequences);
}
