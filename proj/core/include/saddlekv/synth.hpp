#pragma once

#include <cstdint>

#include "saddlekv/trace.hpp"

namespace saddlekv {

// Synthetic attention streams with planted structure:
//   recent  - the last `recent_len` columns of every row get `recent_gain`
//   sinks   - columns [0, sink_count) get `sink_gain`
//   saddles - `saddles` columns drawn from the current round's prompt get
//             `saddle_gain`; the set is redrawn every `shift_every` rounds
// Each weight is then scaled by uniform noise in [1 - noise, 1 + noise] and
// the row renormalized.
struct SynthConfig {
  std::uint32_t rounds = 20;
  std::uint32_t prompt_len = 64;
  std::uint32_t decode_len = 16;
  std::uint32_t saddles = 8;
  double saddle_gain = 5.0;
  std::uint32_t shift_every = 5;
  std::uint32_t sink_count = 0;
  double sink_gain = 1.0;
  std::uint32_t recent_len = 32;
  double recent_gain = 1.0;
  double noise = 0.0;
  std::uint32_t layers = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

// ROUND_START, TOKENS, SADDLE_TRUTH (when saddles > 0) and one ATTN_ROW per
// layer per token, for every round. Bit-reproducible for a fixed config.
Trace generate_synthetic(const SynthConfig& cfg);

}  // namespace saddlekv
