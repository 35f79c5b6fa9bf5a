#pragma once

// Multi-round streaming session over the tiny decoder. Tokens are decoded one
// at a time and the cache only grows; eviction runs once per round, after the
// round's prompt has been processed.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "saddlekv/decoder.hpp"
#include "saddlekv/kv_cache.hpp"
#include "saddlekv/metrics.hpp"
#include "saddlekv/policy.hpp"

namespace saddlekv {

struct SessionOptions {
  PolicyKind policy = PolicyKind::inf_mllm;
  PolicyConfig config;
  bool oracle = false;      // keep a never-evicted shadow cache for metrics/checks
  std::size_t workers = 1;  // >1 fans out per-layer eviction across threads
};

struct RoundScript {
  std::vector<std::int64_t> prompt_token_ids;
  std::size_t decode_steps = 0;
  std::vector<Modality> modality;  // per prompt token; empty means all text
};

struct RoundReport {
  std::uint32_t round_id = 0;
  std::size_t pre_eviction_len = 0;   // max per-layer length before eviction
  std::size_t post_eviction_len = 0;  // max per-layer length after eviction
  std::uint64_t memory_bytes = 0;     // after eviction
  std::uint64_t flops_per_token = 0;  // after eviction, summed over layers
  std::vector<EvictionDecision> decisions;  // one per layer
  // Layer means; only populated when the session keeps a shadow cache.
  std::optional<double> retained_mass;
  std::optional<double> topk_overlap;
};

class Session {
 public:
  Session(const TinyDecoderSpec& spec, const SessionOptions& options);

  // Decodes one token: attention over the current cache (which includes the
  // token itself), appends its K/V, records each layer's head-aggregated row.
  // Never evicts. Returns one row per layer.
  std::vector<ProbRow> decode_step(std::int64_t token_id, Modality modality = Modality::text);

  // Processes the prompt, then runs the configured policy once per layer and
  // compacts the cache.
  RoundReport start_round(const RoundScript& script);

  // start_round followed by `script.decode_steps` generated tokens.
  RoundReport run_round(const RoundScript& script);

  // Max |a - b| between the next query's attention output over (a) the
  // compressed cache and (b) the shadow cache masked to the retained tokens.
  // `shadow_mode` overrides the position assignment used by path (b).
  double attention_equivalence_check(std::size_t layer,
                                     std::optional<PositionMode> shadow_mode = std::nullopt,
                                     std::optional<std::int64_t> probe_token = std::nullopt) const;

  MetricsRow metrics_row(const RoundReport& report) const;

  const TinyDecoder& decoder() const noexcept { return decoder_; }
  const SessionOptions& options() const noexcept { return options_; }
  const KvCache& cache() const noexcept { return cache_; }
  const KvCache* shadow() const noexcept { return shadow_ ? &*shadow_ : nullptr; }
  const AttentionWindow& window(std::size_t layer) const { return windows_.at(layer); }
  std::span<const float> accumulator(std::size_t layer) const { return accumulators_.at(layer); }

  // Rounds started so far; the current round id is rounds_started() - 1.
  std::uint32_t rounds_started() const noexcept { return rounds_started_; }
  // Tokens processed so far (= shadow length when the oracle is on).
  std::uint64_t step_id() const noexcept { return step_id_; }
  std::size_t tokens_since_eviction() const noexcept { return since_eviction_; }

  // Token id fed at a generated decode step; a seeded hash of the step index.
  std::int64_t generated_token(std::uint64_t step) const;

 private:
  struct Rotated {
    std::vector<std::vector<float>> heads;  // per head, n * head_dim, rope applied
  };

  std::uint64_t next_position(std::size_t layer) const;
  void rebuild_rotated(std::size_t layer);
  void evict_layer(std::size_t layer, RoundReport& report, std::vector<double>& mass,
                   std::vector<double>& overlap);
  RealVec attend(std::size_t layer, std::span<const float> q_packed, std::uint64_t q_pos,
                 std::vector<ProbRow>* head_rows) const;

  TinyDecoder decoder_;
  SessionOptions options_;
  KvCache cache_;
  std::vector<Rotated> rotated_;
  std::optional<KvCache> shadow_;
  std::vector<Rotated> shadow_rotated_;
  std::vector<AttentionWindow> windows_;
  std::vector<AttentionWindow> oracle_windows_;
  std::vector<std::vector<float>> accumulators_;
  std::uint32_t rounds_started_ = 0;
  std::uint64_t step_id_ = 0;
  std::size_t since_eviction_ = 0;
  float scale_;
};

Session init_session(const TinyDecoderSpec& spec, PolicyKind policy, const PolicyConfig& cfg,
                     bool oracle);

}  // namespace saddlekv
