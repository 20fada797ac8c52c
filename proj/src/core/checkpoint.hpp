#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/adam.hpp"
#include "core/rnn.hpp"

namespace memsig {

struct EpochStats {
    double train_loss = 0.0;
    double dev_ppx = 0.0;
};

// Per-epoch record plus the index the returned weights came from (-1 when
// training never ran). No timings: histories are byte-reproducible.
struct TrainHistory {
    std::vector<EpochStats> epochs;
    int best_epoch = -1;
};

struct AdamSnapshot {
    AdamConfig config;
    AdamState state;
};

struct Checkpoint {
    CharLm<float> model;
    std::optional<AdamSnapshot> optimizer;
    TrainHistory history;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Container layout: "MSIG", u32 version, u64 header length, JSON header
// (symbol set, architecture, history, tensor manifest with shapes/offsets),
// then float32 little-endian payloads in manifest order. Byte-deterministic
// for a given checkpoint.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

// Validates magic, version, header fields, manifest order and shapes, and
// exact payload length; any mismatch -> CheckpointError. Round-trip loads
// evaluate bit-exactly.
Checkpoint load_checkpoint(const std::string& path);

} // namespace memsig
