// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace ilm {

/// Template-generated children's-story text, one story per line. Used as a
/// self-contained corpus source when no external text is supplied.
namespace textgen {

constexpr int kNumTopics = 6;

const char* topic_name(int topic);

/// One sentence about the given topic class (for the classification study).
std::string topic_sentence(int topic, std::mt19937_64& rng);

/// A short multi-sentence story mixing topics.
std::string story(std::mt19937_64& rng);

/// Writes stories (one per line) until at least min_chars bytes are emitted.
void write_corpus(const std::string& path, std::size_t min_chars, std::uint64_t seed);

}  // namespace textgen
}  // namespace ilm
