#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "core/adam.hpp"
#include "core/checkpoint.hpp"
#include "core/corpus.hpp"
#include "core/error.hpp"
#include "core/rnn.hpp"

namespace memsig {

// Shared by the language-model trainer and the probe-decoder trainer; the two
// dropout sites are the recurrent-state outputs (keep_state) and the decoder
// hidden layers (keep_hidden).
struct TrainConfig {
    AdamConfig adam;
    int batch = 32;
    int window = 64;
    int max_epochs = 50;
    int patience = 5;
    double keep_state = 1.0;
    double keep_hidden = 1.0;
    double clip_norm = 5.0;
    std::uint64_t seed = 0;
};

void validate_train_config(const TrainConfig& cfg);

// Raised when a training loss or gradient stops being finite. Carries the
// most recent checkpoint that still evaluated cleanly (the best-dev snapshot,
// or the untouched initial model when no epoch completed).
struct TrainingDiverged : DivergedError {
    std::shared_ptr<Checkpoint> last_good;
    TrainingDiverged(std::string msg, std::shared_ptr<Checkpoint> ckpt)
        : DivergedError(std::move(msg)), last_good(std::move(ckpt)) {}
};

// Adam with global-norm clipping over shuffled fixed-length windows; dev
// perplexity is evaluated every epoch and training stops after `patience`
// epochs without improvement (or at max_epochs). The returned checkpoint
// holds the weights and optimizer state of the best dev epoch, plus the full
// history. Fixed seed -> identical history and weights.
Checkpoint train_lm(const CharLm<float>& model, const CorpusSplit& split, const TrainConfig& cfg);

// Domain adaptation: same contract as train_lm, starting from the checkpoint
// weights with fresh optimizer state. Symbol-set mismatch with the new corpus
// -> IncompatibleCheckpoint. max_epochs = 0 returns the weights unchanged.
Checkpoint retrain_lm(const Checkpoint& ckpt, const CorpusSplit& split, const TrainConfig& cfg);

} // namespace memsig
