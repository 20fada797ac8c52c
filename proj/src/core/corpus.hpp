#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "symbols.hpp"

namespace memsig {

// Encoded text plus the train/dev/eval partition. Segments never mix across
// partitions; one segment is one line of the input file.
struct Corpus {
    SymbolSet symbols;
    std::vector<EncodedSegment> segments;

    // Hash of the symbol set and encoded content; identifies the corpus in
    // manifests and signature metadata.
    std::uint64_t content_id() const;
};

struct SplitRatios {
    double train = 0.8;
    double dev = 0.1;
    double eval = 0.1;
};

struct CorpusSplit {
    std::shared_ptr<const Corpus> corpus;
    std::vector<std::uint32_t> train;
    std::vector<std::uint32_t> dev;
    std::vector<std::uint32_t> eval;
    std::uint64_t seed = 0;

    const SymbolSet& symbols() const { return corpus->symbols; }
    const EncodedSegment& segment(std::uint32_t idx) const { return corpus->segments[idx]; }

    const std::vector<std::uint32_t>& part(const std::string& name) const;
};

// Lines that encode to nothing (empty lines) are dropped.
Corpus load_corpus_file(const std::string& path, const SymbolSet& symbols);
Corpus corpus_from_lines(const std::vector<std::string>& lines, const SymbolSet& symbols);

// Deterministic shuffled assignment; partition sizes within one segment of
// ratio * count, all three non-empty.
CorpusSplit split_corpus(std::shared_ptr<const Corpus> corpus, SplitRatios ratios, std::uint64_t seed);

// Seeded subsample of the train partition (dev/eval untouched); used for the
// small-in-domain retraining workflow.
CorpusSplit sample_train_fraction(const CorpusSplit& split, double fraction, std::uint64_t seed);

// One batch of fixed-length windows. Targets are inputs shifted by one;
// mask marks live positions (short final windows are padded).
struct IdBatch {
    int batch = 0;  // rows
    int window = 0; // cols
    std::vector<std::int32_t> inputs;  // [batch x window]
    std::vector<std::int32_t> targets; // [batch x window]
    std::vector<std::uint8_t> mask;    // [batch x window]
};

// Tiles every segment's (input,target) adjacent pairs into windows, shuffles
// the windows with `seed`, and serves them in batches. Each in-segment pair
// appears exactly once per pass; windows never span segments.
class WindowBatcher {
public:
    WindowBatcher(const CorpusSplit& split, const std::string& part, int window, int batch,
                  std::uint64_t seed);

    bool next(IdBatch& out);
    void reset(std::uint64_t seed); // reshuffle for a new epoch
    std::size_t window_count() const { return windows_.size(); }

private:
    struct WindowRef {
        std::uint32_t segment;
        std::uint32_t start; // first input position
        std::uint32_t len;   // number of live (input,target) pairs
    };
    const Corpus* corpus_;
    std::vector<WindowRef> windows_;
    std::size_t cursor_ = 0;
    int window_;
    int batch_;
};

// Normalized bigram counts over in-segment adjacent pairs, flattened as
// freq[a * |V| + b]. Feeds the factorized-kernel lambda vector.
std::vector<double> bigram_frequencies(const std::vector<EncodedSegment>& segments,
                                       const SymbolSet& symbols);
std::vector<double> bigram_frequencies(const CorpusSplit& split, const std::string& part);

} // namespace memsig
