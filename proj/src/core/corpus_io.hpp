#pragma once

#include <string>

#include "core/corpus.hpp"

namespace memsig {

inline constexpr std::uint32_t kCorpusFileVersion = 1;

// JSON container: symbol set, encoded segments (id arrays) and the partition
// index lists. Byte-deterministic for a given split.
void save_corpus(const CorpusSplit& split, const std::string& path);

// Validates the format marker, version, symbol set, id ranges and partition
// indices (in range, disjoint, all parts non-empty).
CorpusSplit load_corpus(const std::string& path);

} // namespace memsig
