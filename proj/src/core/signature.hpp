#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "core/probe.hpp"

namespace memsig {

struct SignatureMeta {
    std::string model;   // free-text descriptor, e.g. "lstm [1,32]"
    int layer = 0;
    StateChoice choice = StateChoice::output;
    std::uint64_t corpus_id = 0;
    std::uint64_t seed = 0;
};

// Recall-accuracy matrix over (delta, symbol). NaN marks an absent cell
// (zero support); absent is distinct from zero accuracy everywhere below.
struct MemorySignature {
    std::string symbols;            // axis labels in id order
    int max_delta = 0;
    std::vector<double> accuracy;   // max_delta x |symbols|, row-major
    std::vector<std::int64_t> support;
    SignatureMeta meta;

    int vocab() const { return int(symbols.size()); }
    std::size_t cell(int delta, int sym) const {
        return std::size_t(delta - 1) * symbols.size() + std::size_t(sym);
    }
    double acc_at(int delta, int sym) const { return accuracy[cell(delta, sym)]; }
    std::int64_t support_at(int delta, int sym) const { return support[cell(delta, sym)]; }
};

struct SignatureDiff {
    std::string symbols;
    int max_delta = 0;
    std::vector<double> a, b;       // operand accuracies, NaN = absent
    std::vector<double> diff;       // a - b where both present, else NaN
    SignatureMeta meta_a, meta_b;

    int vocab() const { return int(symbols.size()); }
    std::size_t cell(int delta, int sym) const {
        return std::size_t(delta - 1) * symbols.size() + std::size_t(sym);
    }
};

// One probe evaluation row: per-symbol recall accuracies at a given delta.
struct DeltaEvaluation {
    int delta = 0;
    std::vector<double> per_symbol; // NaN = absent
    std::vector<std::int64_t> support;
};

// Evaluations must cover delta = 1..max contiguously (else IncompleteProbe);
// duplicate deltas are rejected. Cell validity: NaN exactly where support 0.
MemorySignature compile_signature(const std::string& symbols,
                                  const std::vector<DeltaEvaluation>& evaluations,
                                  const SignatureMeta& meta);

// Compiles the cells of one probed layer; stamps layer and state choice.
MemorySignature signature_from_probe(const ProbeRun& run, int layer, SignatureMeta meta);

// Support-weighted mean accuracy per delta: identical to pooled accuracy
// (total correct / total count), not the mean of per-symbol accuracies.
std::vector<double> marginal_recall(const MemorySignature& sig);
// The unweighted reading: plain mean over present cells.
std::vector<double> marginal_recall_unweighted(const MemorySignature& sig);

// Elementwise A - B. Axes must agree exactly; absent propagates.
SignatureDiff diff_signatures(const MemorySignature& a, const MemorySignature& b);

// Sum of |a-b| over cells present in both operands.
double diff_l1(const SignatureDiff& d);

// CSV schema: header delta,symbol,accuracy,support; one row per present
// cell; accuracies at 6 decimals; the symbol column writes space as "<sp>"
// and comma as "<comma>" (quotes included). Diff files carry columns
// delta,symbol,accuracy_a,accuracy_b,diff over cells present in both.
std::string signature_csv(const MemorySignature& sig);
std::string diff_csv(const SignatureDiff& d);
MemorySignature parse_signature_csv(const std::string& text);
SignatureDiff parse_diff_csv(const std::string& text);
void export_csv(const MemorySignature& sig, const std::string& path);
void export_csv(const SignatureDiff& d, const std::string& path);

enum class Palette { purple, green, diverging };
const char* palette_name(Palette p);
Palette palette_from_name(const std::string& name);

// Deterministic standalone SVG heatmap: symbols on the x-axis, delta on the
// y-axis, absent cells hatched gray, color legend at the right. Signatures
// take a sequential palette; diffs always render red-blue diverging.
std::string render_heatmap_svg(const MemorySignature& sig, Palette palette);
std::string render_heatmap_svg(const SignatureDiff& d);
void render_heatmap(const MemorySignature& sig, const std::string& path, Palette palette);
void render_heatmap(const SignatureDiff& d, const std::string& path);

} // namespace memsig
