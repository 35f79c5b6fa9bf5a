#include "saddlekv/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "saddlekv/errors.hpp"
#include "saddlekv/rng.hpp"

namespace saddlekv {

void SynthConfig::validate() const {
  if (saddle_gain < 1.0 || sink_gain < 1.0 || recent_gain < 1.0) {
    throw DomainError("SynthConfig: gains must be >= 1");
  }
  if (shift_every < 1) throw DomainError("SynthConfig: shift_every must be >= 1");
  if (rounds > 0 && prompt_len < 1) throw DomainError("SynthConfig: prompt_len must be >= 1");
  if (!(noise >= 0.0 && noise < 1.0)) throw DomainError("SynthConfig: noise must be in [0, 1)");
  if (layers < 1) throw DomainError("SynthConfig: layers must be >= 1");
}

Trace generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(splitmix64(cfg.seed ^ 0x73796e7468ULL));

  Trace trace;
  trace.header.layers = cfg.layers;
  trace.header.heads = 1;
  trace.header.flags = kFlagHeadAggregated;

  const std::uint64_t per_round = static_cast<std::uint64_t>(cfg.prompt_len) + cfg.decode_len;
  const std::uint64_t total = per_round * cfg.rounds;
  if (total > UINT32_MAX) throw DomainError("SynthConfig: stream too long for u32 columns");

  std::vector<std::uint8_t> is_saddle(total, 0);
  std::vector<std::uint32_t> active;
  std::vector<double> weights;
  std::uint32_t position = 0;

  for (std::uint32_t round = 0; round < cfg.rounds; ++round) {
    trace.events.emplace_back(RoundStart{round, cfg.prompt_len});
    trace.events.emplace_back(Tokens{std::vector<Modality>(per_round, Modality::text)});

    if (cfg.saddles > 0) {
      if (round % cfg.shift_every == 0) {
        for (std::uint32_t c : active) is_saddle[c] = 0;
        // Partial Fisher-Yates over this round's prompt positions.
        std::vector<std::uint32_t> pool(cfg.prompt_len);
        std::iota(pool.begin(), pool.end(), position);
        const std::uint32_t k = std::min(cfg.saddles, cfg.prompt_len);
        for (std::uint32_t i = 0; i < k; ++i) {
          const auto j = i + static_cast<std::uint32_t>(uniform_index(rng, pool.size() - i));
          std::swap(pool[i], pool[j]);
        }
        active.assign(pool.begin(), pool.begin() + k);
        std::sort(active.begin(), active.end());
        for (std::uint32_t c : active) is_saddle[c] = 1;
      }
      trace.events.emplace_back(SaddleTruth{round, active});
    }

    for (std::uint64_t step = 0; step < per_round; ++step, ++position) {
      const std::uint32_t n = position + 1;
      const std::uint32_t recent_from = n > cfg.recent_len ? n - cfg.recent_len : 0;
      for (std::uint32_t layer = 0; layer < cfg.layers; ++layer) {
        weights.assign(n, 1.0);
        double sum = 0.0;
        for (std::uint32_t c = 0; c < n; ++c) {
          double w = 1.0;
          if (c >= recent_from) w *= cfg.recent_gain;
          if (c < cfg.sink_count) w *= cfg.sink_gain;
          if (is_saddle[c]) w *= cfg.saddle_gain;
          if (cfg.noise > 0.0) w *= uniform(rng, 1.0 - cfg.noise, 1.0 + cfg.noise);
          weights[c] = w;
          sum += w;
        }
        AttnRow row;
        row.layer = layer;
        row.probs.resize(n);
        for (std::uint32_t c = 0; c < n; ++c) {
          row.probs[c] = static_cast<float>(weights[c] / sum);
        }
        trace.events.emplace_back(std::move(row));
      }
    }
  }
  return trace;
}

}  // namespace saddlekv
