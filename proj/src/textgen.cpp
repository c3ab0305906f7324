// SPDX-License-Identifier: Apache-2.0
#include "ilm/textgen.hpp"

#include "ilm/common.hpp"

#include <array>
#include <fstream>

namespace ilm::textgen {

namespace {

const std::array<const char*, 56> kNames = {
    "Tim",  "Lily", "Ben",  "Sue",  "Max",  "Amy",  "Tom",  "Mia",  "Sam",  "Anna", "Leo",
    "Ella", "Jack", "Rosa", "Finn", "Nora", "Omar", "Ivy",  "Gus",  "Tess", "Hugo", "Wren",
    "Pip",  "June", "Cora", "Dex",  "Faye", "Gil",  "Hana", "Iris", "Jude", "Kai",  "Lars",
    "Mona", "Nico", "Opal", "Pax",  "Quin", "Rex",  "Sage", "Tara", "Umar", "Vera", "Wade",
    "Xena", "Yuri", "Zane", "Bea",  "Cleo", "Drew", "Edie", "Flor", "Greta", "Hank", "Isla",
    "Joss"};

const std::array<const char*, 24> kAdjectives = {
    "big",   "small", "red",    "shiny",  "old",   "happy", "blue",   "soft",
    "quiet", "brave", "tiny",   "green",  "round", "warm",  "yellow", "funny",
    "heavy", "light", "purple", "smooth", "loud",  "clever", "gentle", "odd"};

const std::array<const char*, 20> kPlaces = {
    "the park",   "the garden", "the beach",   "the kitchen", "the forest",
    "the yard",   "the market", "the river",   "the school",  "the hill",
    "the barn",   "the town",   "the meadow",  "the cellar",  "the harbor",
    "the attic",  "the orchard", "the bridge", "the cave",    "the library"};

struct Topic {
    std::array<const char*, 8> things;
    std::array<const char*, 6> verbs;
    std::array<const char*, 4> endings;
};

// Six topic classes with disjoint core vocabulary; class id doubles as the
// label in the classification study.
const std::array<Topic, kNumTopics> kTopics = {{
    // 0: animals
    {{"dog", "cat", "bird", "rabbit", "frog", "pony", "duck", "mouse"},
     {"fed", "chased", "petted", "watched", "found", "followed"},
     {"It wagged and squeaked all day.", "The animal was very hungry.",
      "They became best friends.", "It ran back to its nest."}},
    // 1: space
    {{"rocket", "star", "moon", "planet", "comet", "telescope", "alien", "galaxy"},
     {"launched", "watched", "drew", "imagined", "spotted", "counted"},
     {"The sky was full of lights.", "They dreamed of flying far away.",
      "The stars twinkled brightly.", "It glowed in the dark night."}},
    // 2: cooking
    {{"cake", "soup", "bread", "pie", "cookie", "salad", "jam", "pancake"},
     {"baked", "stirred", "tasted", "shared", "decorated", "cooked"},
     {"It smelled delicious.", "Everyone wanted another bite.",
      "The kitchen was warm and sweet.", "They ate it all up."}},
    // 3: sports
    {{"ball", "race", "goal", "kite", "bike", "rope", "team", "medal"},
     {"kicked", "threw", "won", "caught", "jumped over", "bounced"},
     {"The crowd cheered loudly.", "They played until sunset.",
      "It was the best game ever.", "Everyone was out of breath."}},
    // 4: music
    {{"drum", "song", "flute", "bell", "piano", "guitar", "tune", "whistle"},
     {"played", "hummed", "sang", "practiced", "heard", "tapped"},
     {"The melody filled the air.", "Everyone clapped along.",
      "It sounded like magic.", "The music made them dance."}},
    // 5: weather
    {{"rain", "snow", "wind", "cloud", "storm", "rainbow", "puddle", "sunshine"},
     {"watched", "felt", "waited for", "splashed in", "hid from", "loved"},
     {"The sky slowly cleared.", "Drops fell on the window.",
      "It was cozy inside.", "The air smelled fresh."}},
}};

template <typename A>
const char* pick(const A& arr, std::mt19937_64& rng) {
    return arr[rng() % arr.size()];
}

}  // namespace

const char* topic_name(int topic) {
    static const std::array<const char*, kNumTopics> names = {"animals", "space",  "cooking",
                                                              "sports",  "music", "weather"};
    if (topic < 0 || topic >= kNumTopics) fail("topic_name: bad topic id");
    return names[topic];
}

std::string topic_sentence(int topic, std::mt19937_64& rng) {
    if (topic < 0 || topic >= kNumTopics) fail("topic_sentence: bad topic id");
    const Topic& t = kTopics[topic];
    std::string s;
    switch (rng() % 3) {
        case 0:
            s = std::string("One day, ") + pick(kNames, rng) + " " + pick(t.verbs, rng) + " the " +
                pick(kAdjectives, rng) + " " + pick(t.things, rng) + " in " + pick(kPlaces, rng) +
                ". " + pick(t.endings, rng);
            break;
        case 1:
            s = std::string(pick(kNames, rng)) + " and " + pick(kNames, rng) + " " +
                pick(t.verbs, rng) + " a " + pick(t.things, rng) + " near " + pick(kPlaces, rng) +
                ". " + pick(t.endings, rng);
            break;
        default:
            s = std::string("The ") + pick(kAdjectives, rng) + " " + pick(t.things, rng) +
                " made " + pick(kNames, rng) + " smile. " + pick(t.endings, rng);
            break;
    }
    return s;
}

std::string story(std::mt19937_64& rng) {
    // A story binds two characters and one thing and keeps referring to
    // them, so continuations depend on tokens introduced earlier in the
    // document rather than on the template alone.
    const Topic& t = kTopics[rng() % kNumTopics];
    std::string a = pick(kNames, rng);
    std::string b = pick(kNames, rng);
    while (b == a) b = pick(kNames, rng);
    std::string thing = pick(t.things, rng);
    std::string adj = pick(kAdjectives, rng);
    std::string place = pick(kPlaces, rng);

    std::string s = "One day, " + a + " found a " + adj + " " + thing + " in " + place + ". ";

    const std::size_t target = 340 + rng() % 220;
    while (s.size() < target) {
        switch (rng() % 16) {
            case 0: s += a + " " + pick(t.verbs, rng) + " the " + thing + " with " + b + ". "; break;
            case 1: s += b + " came to " + place + " and saw the " + thing + ". "; break;
            case 2: s += a + " showed the " + adj + " " + thing + " to " + b + ". "; break;
            case 3: s += b + " liked the " + adj + " " + thing + " very much. "; break;
            case 4: s += "The " + thing + " made " + b + " smile. "; break;
            case 5: s += b + " wanted to hold the " + thing + " too. "; break;
            case 6: s += a + " and " + b + " played with the " + thing + " until sunset. "; break;
            case 7: s += "Then " + a + " gave the " + thing + " to " + b + ". "; break;
            case 8: s += a + " and " + b + " took the " + thing + " back to " + place + ". "; break;
            case 9: s += "\"What a " + adj + " " + thing + "!\" said " + b + " to " + a + ". "; break;
            case 10:
                s += pick(kNames, rng) + std::string(" walked past ") + pick(kPlaces, rng) +
                     " carrying a " + pick(kAdjectives, rng) + " " + pick(t.things, rng) + ". ";
                break;
            case 11:
                s += std::string("Near ") + pick(kPlaces, rng) + ", " + pick(kNames, rng) +
                     " heard about the " + adj + " " + thing + ". ";
                break;
            case 12: s += a + " hid the " + thing + " behind " + pick(kPlaces, rng) + ". "; break;
            case 13:
                s += b + " asked " + pick(kNames, rng) + " about the " + thing + ". ";
                break;
            case 14:
                s += std::string("The ") + pick(kAdjectives, rng) + " " + pick(t.things, rng) +
                     " stayed in " + place + ". ";
                break;
            default: s += a + " told " + b + " a story about " + pick(kPlaces, rng) + ". "; break;
        }
    }
    s += pick(t.endings, rng);
    return s;
}

void write_corpus(const std::string& path, std::size_t min_chars, std::uint64_t seed) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("write_corpus: cannot open " + path);
    auto rng = make_rng(seed, 0x7e47);
    std::size_t written = 0;
    while (written < min_chars) {
        std::string s = story(rng);
        f << s << "\n";
        written += s.size() + 1;
    }
}

}  // namespace ilm::textgen
