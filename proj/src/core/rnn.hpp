#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "corpus.hpp"
#include "mat.hpp"
#include "rng.hpp"
#include "symbols.hpp"

namespace memsig {

enum class CellKind { lstm, gru, lstm_factorized };

// Which per-layer vector a trace records: the internal cell state c (LSTM
// only) or the cell output h.
enum class StateChoice { cell, output };

inline const char* cell_kind_name(CellKind k) {
    switch (k) {
        case CellKind::lstm: return "lstm";
        case CellKind::gru: return "gru";
        case CellKind::lstm_factorized: return "lstm-factorized";
    }
    return "?";
}

inline CellKind cell_kind_from_name(const std::string& name) {
    if (name == "lstm") return CellKind::lstm;
    if (name == "gru") return CellKind::gru;
    if (name == "lstm-factorized") return CellKind::lstm_factorized;
    throw UsageError("unknown architecture: " + name + " (expected lstm|gru|lstm-factorized)");
}

inline const char* state_choice_name(StateChoice c) {
    return c == StateChoice::cell ? "cell" : "output";
}

inline StateChoice state_choice_from_name(const std::string& name) {
    if (name == "cell") return StateChoice::cell;
    if (name == "output") return StateChoice::output;
    throw UsageError("unknown state choice: " + name + " (expected cell|output)");
}

// Gate pre-activations live in a [4n x 2n] kernel applied to [x ; h_prev].
// Row-slice order is fixed: forget, input, output, projected-input.
template <typename T>
struct LstmKernel {
    int n = 0;
    Mat<T> w;         // [4n x 2n]
    std::vector<T> b; // [4n]
};

template <typename T>
struct GruKernel {
    int n = 0;
    Mat<T> wz, wr, wh;        // [n x 2n] each: update, reset, candidate
    std::vector<T> bz, br, bh; // [n]
};

// W = W0 + sum_i lambda_i * u_i v_i^T with one rank-one basis per bigram.
// lambda is data (normalized bigram frequencies), not a trained parameter.
template <typename T>
struct FactorizedKernel {
    LstmKernel<T> base;
    Mat<T> u;              // [4n x B], column i = u_i
    Mat<T> v;              // [B x 2n], row i = v_i^T
    std::vector<T> lambda; // [B]
};

template <typename T>
struct CharLm {
    SymbolSet symbols;
    CellKind kind = CellKind::lstm;
    int state = 0; // n
    int embed = 0; // e; e == n so layer input widths chain

    Mat<T> embedding;            // [|V| x e]
    std::vector<LstmKernel<T>> lstm;
    std::vector<GruKernel<T>> gru;
    std::vector<FactorizedKernel<T>> fact;
    Mat<T> proj;                 // [n x |V|]
    std::vector<T> proj_b;       // [|V|]

    int layer_count() const {
        switch (kind) {
            case CellKind::lstm: return int(lstm.size());
            case CellKind::gru: return int(gru.size());
            case CellKind::lstm_factorized: return int(fact.size());
        }
        return 0;
    }

    int vocab() const { return symbols.size(); }
    int basis_count() const { return kind == CellKind::lstm_factorized ? int(fact[0].lambda.size()) : 0; }

    // "[L,n]" as used in run descriptors.
    std::string shape_string() const {
        return "[" + std::to_string(layer_count()) + "," + std::to_string(state) + "]";
    }
};

using CharLmF = CharLm<float>;

template <typename T>
CharLm<T> make_char_lm(const SymbolSet& symbols, CellKind kind, int layers, int state_size,
                       std::uint64_t seed);

// Zero-filled clone used as a gradient container.
template <typename T>
CharLm<T> clone_zeroed(const CharLm<T>& m);

template <typename Src, typename Dst>
CharLm<Dst> convert_lm(const CharLm<Src>& m);

// Visits every trainable tensor (lambda excluded) in a stable order.
template <typename T, typename F>
void visit_params(CharLm<T>& m, F&& f);
template <typename T, typename F>
void visit_params(const CharLm<T>& m, F&& f);

// Every tensor including lambda; the serialization order.
template <typename T, typename F>
void visit_tensors(CharLm<T>& m, F&& f);
template <typename T, typename F>
void visit_tensors(const CharLm<T>& m, F&& f);

std::size_t lm_param_count(const CharLm<float>& m);
std::uint64_t lm_param_hash(const CharLm<float>& m);

// Combined kernel + embedding parameter count for one layer; the probe
// decoder sizing floor.
template <typename T>
std::size_t layer_probe_floor(const CharLm<T>& m, int layer);

// Sets lambda for every factorized layer. Length must be |V|^2.
template <typename T>
void set_lambda(CharLm<T>& m, std::span<const double> lambda);
template <typename T>
void set_lambda_zero(CharLm<T>& m);
template <typename T>
void set_lambda_onehot(CharLm<T>& m, int basis);

// ---- single-step ops ----------------------------------------------------

template <typename T>
void lstm_step(const LstmKernel<T>& k, std::span<const T> x, std::span<const T> h_prev,
               std::span<const T> c_prev, std::span<T> h_out, std::span<T> c_out);

template <typename T>
void gru_step(const GruKernel<T>& k, std::span<const T> x, std::span<const T> h_prev,
              std::span<T> h_out);

// Gate pre-activations for a batch of concatenated inputs z = [x ; h_prev]:
// out = z * W0^T + ((z * V^T) .* lambda) * U^T. With lambda = 0 this reduces
// bit-exactly to the base kernel product.
template <typename T>
void apply_factorized(const FactorizedKernel<T>& k, const Mat<T>& z, Mat<T>& out,
                      Mat<T>* q_cache = nullptr, Mat<T>* p_cache = nullptr);

// ---- windowed forward/backward (training path) ---------------------------

enum class DropoutMode { off, train };

// Per-window activation cache; reused across batches to avoid churn.
template <typename T>
struct LmCache {
    int batch = 0, window = 0, layers = 0;
    bool dropout = false;
    // Indexed [l * window + t].
    std::vector<Mat<T>> z;      // [B x 2n] concat input (lstm/fact: gate input; gru: [x|h_prev])
    std::vector<Mat<T>> gates;  // lstm/fact: [B x 4n] post-activation; gru: [B x 3n] (z|r|hc)
    std::vector<Mat<T>> zh;     // gru only: [B x 2n] candidate-path concat [x | r.*h_prev]
    std::vector<Mat<T>> c;      // lstm/fact: [B x n]
    std::vector<Mat<T>> tc;     // lstm/fact: tanh(c)
    std::vector<Mat<T>> h;      // [B x n] pre-dropout output
    std::vector<Mat<T>> drop;   // [B x n] inverted dropout mask (empty when off)
    std::vector<Mat<T>> q;      // factorized: [B x basis] lambda-scaled projections
    std::vector<Mat<T>> x;      // [l==0 only] embedded inputs [B x e]
    Mat<T> hall;                // [B*window x n] top-layer (dropped) outputs, row b*window+t
    Mat<T> logits;              // [B*window x |V|]
    Mat<T> zero_state;          // [B x n] shared zero initial state
    Mat<T> wa, wb;              // step scratch
    IdBatch ids;                // the window batch this cache was built from
};

// Runs the stacked model over one window batch starting from zero state.
// With dropout off the result is a deterministic function of parameters and
// inputs. Throws NumericalError when activations overflow to non-finite.
template <typename T>
void lm_forward(const CharLm<T>& m, const IdBatch& batch, DropoutMode mode, double keep_prob,
                Rng* drop_rng, LmCache<T>& cache);

// Accumulates full truncated-BPTT gradients into `grads` (a zeroed clone).
// State gradients flow through both the h and c chains.
template <typename T>
void lm_backward(const CharLm<T>& m, const LmCache<T>& cache, const Mat<T>& dlogits,
                 CharLm<T>& grads);

// ---- segment-level evaluation (dropout always off) ------------------------

// exp(mean NLL) over next-symbol events; a segment of length S contributes
// S-1 events, scored from a zero initial state.
template <typename T>
double perplexity(const CharLm<T>& m, const CorpusSplit& split, const std::string& part);

template <typename T>
double perplexity_segments(const CharLm<T>& m, std::span<const EncodedSegment* const> segments);

// Time-aligned recurrent states: states[l].row(p) was produced after the
// model consumed ids[p]. Segment ranges let probe datasets stay inside
// segment boundaries. Shared by RNN and n-gram probing.
struct StateTrace {
    SymbolSet symbols;
    StateChoice choice = StateChoice::output;
    int width = 0;
    std::vector<MatF> states; // one [P x width] matrix per probed layer
    std::vector<std::int32_t> ids;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> segments; // [begin,end) rows
    std::size_t positions() const { return ids.size(); }
    int layer_count() const { return int(states.size()); }
};

// Zero initial state per segment; segments taken in split order until
// max_positions is reached (0 = no cap).
StateTrace extract_state_trace(const CharLm<float>& m, const CorpusSplit& split,
                               const std::string& part, StateChoice choice,
                               std::size_t max_positions = 0);

} // namespace memsig

#include "rnn_impl.hpp"
