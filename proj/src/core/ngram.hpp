#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>

#include "core/corpus.hpp"
#include "core/rnn.hpp"
#include "core/symbols.hpp"

namespace memsig {

// Add-k smoothed n-gram model over symbol ids. Contexts are the order-1 most
// recent symbols, padded with pad_id() past the segment start, so every event
// has a full-length context and the packed key is fixed-width.
struct NgramLm {
    SymbolSet symbols;
    int order = 1;      // n; contexts hold order-1 ids
    double add_k = 0.01;

    // Keyed by pack_context (7 bits per id, context[j] = symbol j+1 steps
    // back). pair_counts additionally carries the target in the low 7 bits.
    std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
    std::unordered_map<std::uint64_t, std::int64_t> ctx_totals;

    int vocab() const { return symbols.size(); }
    int pad_id() const { return symbols.size(); }
    int context_len() const { return order - 1; }
};

// Counts in-segment n-grams over the train partition. Order is capped at 9 so
// context+target always pack into one key; add_k must be positive so every
// probability is, too.
NgramLm train_ngram(const CorpusSplit& split, int order, double add_k = 0.01);

// P(target | recent), recent[0] = most recent symbol. A short context is
// padded (segment start), extra entries beyond order-1 are ignored. Contexts
// absent from the tables fall back to uniform 1/|V|.
double ngram_prob(const NgramLm& m, std::span<const std::int32_t> recent, std::int32_t target);

// exp(mean NLL) over in-segment transitions; S-1 events per segment, same
// convention as the recurrent models.
double perplexity(const NgramLm& m, const CorpusSplit& split, const std::string& part);

// Trace whose row p is the model's prediction context at p: block j of width
// |V| holds one-hot(symbol j+1 steps back) and is all zero past the segment
// start, so row 0 of every segment is all padding. Width (order-1) * |V|,
// single layer; plugs into the same probe pipeline as recurrent traces.
StateTrace ngram_state_trace(const NgramLm& m, const CorpusSplit& split, const std::string& part,
                             std::size_t max_positions = 0);

inline constexpr std::uint32_t kNgramFileVersion = 1;

// JSON container with count tables sorted by packed key; byte-deterministic
// for a given model.
void save_ngram(const NgramLm& m, const std::string& path);
NgramLm load_ngram(const std::string& path);

} // namespace memsig
