#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/probe.hpp"
#include "core/signature.hpp"

namespace memsig {

inline constexpr std::uint32_t kEvalFileVersion = 1;

// One probed (delta, layer) cell plus the run context needed to compile
// signatures later without the originating model or corpus.
struct EvalFile {
    std::string model;
    std::uint64_t corpus_id = 0;
    std::uint64_t seed = 0;
    StateChoice choice = StateChoice::output;
    SymbolSet symbols;
    ProbeCell cell;
};

// Self-contained JSON for one cell of a probe run; byte-deterministic.
std::string eval_cell_json(const ProbeRun& run, const ProbeCell& cell, const std::string& model,
                           std::uint64_t corpus_id, std::uint64_t seed);

// FileFormatError on anything malformed; null accuracies decode to NaN.
EvalFile parse_eval_cell(const std::string& text);

// Compiles parsed cells into a signature. layer = -1 admits exactly one
// probed layer and selects it; otherwise cells are filtered to `layer`.
// Cells from different runs (model, corpus, seed, state choice or symbol
// mismatch) -> UsageError; delta gaps or duplicates surface from
// compile_signature.
MemorySignature compile_signature_cells(const std::vector<EvalFile>& cells, int layer);

} // namespace memsig
