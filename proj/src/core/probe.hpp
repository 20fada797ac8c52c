#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "core/decoder.hpp"
#include "core/rnn.hpp"
#include "core/train.hpp"

namespace memsig {

// Trace rows paired with the symbol delta steps back in the same segment.
struct ProbePairs {
    std::vector<std::uint32_t> rows;
    std::vector<std::int32_t> targets;
    std::size_t size() const { return rows.size(); }
};

// Recall task for one (delta, layer): decode g_{t-delta} from the state at t.
// Decoders train on the train-part trace and are scored on the eval-part
// trace; the traces stay owned by the caller.
struct ProbeDataset {
    int delta = 0;
    int layer = 0;
    const StateTrace* train_trace = nullptr;
    const StateTrace* eval_trace = nullptr;
    ProbePairs train;
    ProbePairs eval;
};

// One pair per position with a same-segment target delta steps back,
// in trace row order. No segment has that much history -> EmptyDataset.
ProbePairs probe_pairs(const StateTrace& trace, int delta);

ProbeDataset build_probe_dataset(const StateTrace& train_trace, const StateTrace& eval_trace,
                                 int delta, int layer);

struct DecoderConfig {
    std::vector<int> hidden;
    std::vector<double> keep_grid{0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::size_t param_floor = 0; // decoder must have at least this many parameters
    TrainConfig train;           // keep_hidden is the active dropout site
};

void validate_decoder_config(const DecoderConfig& cfg);

// Per-symbol recall accuracies. accuracy[v] = correct(v) / support(v); a
// zero-support symbol is absent (NaN), not zero. confusion is [V x V]
// row-major with row = true symbol, so row sums equal supports.
struct DecoderEval {
    double accuracy = 0.0; // pooled correct / total
    std::int64_t total = 0;
    std::vector<double> per_symbol;
    std::vector<std::int64_t> support;
    std::vector<std::int64_t> confusion;
};

struct DecoderEpoch {
    double train_loss = 0.0;
    double eval_accuracy = 0.0;
};

struct TrainedDecoder {
    Decoder<float> decoder;
    DecoderEval eval; // metrics of the returned (best-epoch) decoder
    std::vector<DecoderEpoch> history;
    int best_epoch = -1;
    double keep_hidden = 1.0;
};

DecoderEval evaluate_decoder(const Decoder<float>& dec, const StateTrace& trace, int layer,
                             const ProbePairs& pairs);

// Cross-entropy over the train pairs with early stopping on eval accuracy;
// returns the best-eval decoder. The traced model is never touched. A
// non-finite loss or gradient -> DivergedError.
TrainedDecoder train_decoder(const ProbeDataset& ds, const DecoderConfig& cfg);

struct SweepRow {
    double keep = 1.0;
    double accuracy = 0.0;
};

struct DropoutSweep {
    std::vector<SweepRow> table; // one row per grid point, grid order
    TrainedDecoder best;         // arg-max accuracy, ties toward higher keep
};

// Trains one decoder per keep-prob in the grid, all from the same seed.
DropoutSweep sweep_dropout(const ProbeDataset& ds, const DecoderConfig& cfg);

// ---- full probe runs ------------------------------------------------------

struct ProbeCell {
    int delta = 0;
    int layer = 0;
    double keep = 1.0;
    DecoderEval eval;
    std::vector<SweepRow> sweep; // empty when the sweep is disabled
};

struct ProbeConfig {
    int max_delta = 8;
    std::vector<int> layers;                  // empty = every traced layer
    StateChoice choice = StateChoice::output; // used by probe_model
    int depth = 2;
    bool sweep = true;
    std::vector<double> keep_grid{0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    TrainConfig train;
    std::size_t max_positions = 0; // per-part trace cap (probe_model)
    int jobs = 1;
};

void validate_probe_config(const ProbeConfig& cfg);

struct ProbeRun {
    SymbolSet symbols;
    StateChoice choice = StateChoice::output;
    int width = 0;
    std::vector<ProbeCell> cells; // ordered by (layer, delta)
};

// Decoder jobs for distinct (delta, layer, keep) run on a bounded worker
// pool over the shared immutable traces; per-job seeds derive from the
// config seed and the cell key, so results do not depend on scheduling.
// Hidden widths per layer come from size_decoder over layer_floors.
ProbeRun probe_traces(const StateTrace& train_trace, const StateTrace& eval_trace,
                      std::span<const std::size_t> layer_floors, const ProbeConfig& cfg);

// Traces the split's train and eval parts and probes every requested layer;
// floors are the per-layer kernel + embedding parameter counts.
ProbeRun probe_model(const CharLm<float>& m, const CorpusSplit& split, const ProbeConfig& cfg);

} // namespace memsig
