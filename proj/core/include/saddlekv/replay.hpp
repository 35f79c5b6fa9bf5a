#pragma once

// Drives the eviction policies from a recorded or synthetic trace instead of
// the decoder. Trace rows are attention over the full, never-evicted stream;
// the policy sees each row restricted to the tokens it still caches and
// renormalized, which is exactly the attention the model would produce over
// the compressed cache when logits are unchanged.

#include <cstddef>
#include <deque>
#include <optional>
#include <vector>

#include "saddlekv/metrics.hpp"
#include "saddlekv/policy.hpp"
#include "saddlekv/trace.hpp"

namespace saddlekv {

struct ReplayOptions {
  PolicyKind policy = PolicyKind::inf_mllm;
  PolicyConfig config;
  std::size_t head_dim = 8;  // traces carry no head size; used for memory/FLOP figures
};

struct ReplayRound {
  std::uint32_t round_id = 0;
  std::vector<EvictionDecision> decisions;              // per layer, cache-slot indexing
  std::vector<std::vector<std::size_t>> kept_positions;  // per layer, stream positions
  MetricsRow metrics;
};

class ReplayEngine {
 public:
  ReplayEngine(const TraceHeader& header, const ReplayOptions& options);

  void consume(const TraceEvent& event);
  // Flushes a round whose eviction point was not reached before end of trace.
  void finish();

  const std::vector<ReplayRound>& rounds() const noexcept { return rounds_; }
  std::vector<MetricsRow> metrics() const;

 private:
  struct LayerState {
    std::vector<std::size_t> positions;  // cached stream positions, ascending
    AttentionWindow window;
    std::vector<float> accumulator;
    std::deque<ProbRow> oracle_rows;  // last l full-stream rows
    std::size_t stream_len = 0;
    std::size_t prompt_rows_left = 0;
  };

  void on_row(const AttnRow& row);
  void evict_round();

  TraceHeader header_;
  ReplayOptions options_;
  std::vector<LayerState> layers_;
  std::vector<ReplayRound> rounds_;
  std::optional<std::uint32_t> pending_round_;
  std::vector<std::size_t> truth_;
};

std::vector<ReplayRound> replay_trace(const Trace& trace, const ReplayOptions& options);
std::vector<ReplayRound> replay_trace(TraceReader& reader, const ReplayOptions& options);

}  // namespace saddlekv
