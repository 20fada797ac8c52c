#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "core/rnn.hpp"

namespace memsig {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moment buffers, one per parameter tensor in visit_params
// order. step counts completed updates (bias correction uses step+1).
struct AdamState {
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    std::int64_t step = 0;
};

AdamState adam_init(const CharLm<float>& model);

// One clipped Adam update. Gradients are globally norm-clipped to clip_norm
// before the moment updates; moments and params stay float, the arithmetic
// runs in double. Non-finite gradient norm -> NumericalError.
void adam_step(CharLm<float>& model, const CharLm<float>& grads, AdamState& state,
               const AdamConfig& config, double clip_norm);

// Span-based core shared by the language-model and probe-decoder trainers;
// tensors pair up positionally with the state buffers.
AdamState adam_init_spans(const std::vector<std::span<const float>>& params);
void adam_step_spans(const std::vector<std::span<float>>& params,
                     const std::vector<std::span<const float>>& grads, AdamState& state,
                     const AdamConfig& config, double clip_norm);

} // namespace memsig
