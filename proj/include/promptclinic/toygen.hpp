#pragma once

#include "promptclinic/chat.hpp"

#include <cstdint>
#include <filesystem>

namespace promptclinic {

/// Synthetic picture-description corpus with a planted lexical signal: the
/// AD class inserts filler tokens ("uh", "um", ...) at a much higher rate,
/// mimicking disfluency. Balanced, deterministic for a given seed.
struct ToyCorpusSpec {
    int n_per_class = 100;
    int utterances_min = 3;
    int utterances_max = 5;
    int words_per_utterance_min = 5;
    int words_per_utterance_max = 9;
    double filler_rate_ad = 0.35;
    double filler_rate_hc = 0.04;
    uint64_t seed = 7;
};

Corpus make_toy_corpus(const ToyCorpusSpec& spec);

// Writes the corpus as CHAT files plus a manifest.csv, so the full
// parse-and-load path can be exercised without licensed data.
void write_toy_corpus_files(const Corpus& corpus, const std::filesystem::path& dir);

} // namespace promptclinic
