#pragma once

// Eviction policies as pure decision functions: given the scoring state of one
// layer, return the slots to keep. Includes the attention-saddle policy
// (recent window + top-r biased window-mean scores) and the baselines it is
// measured against.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "saddlekv/tensor.hpp"

namespace saddlekv {

enum class HeadAgg { mean, max };

enum class PolicyKind { none, inf_mllm, sink_recent, window, heavy_hitter };

std::string_view to_string(PolicyKind kind);
std::string_view to_string(HeadAgg agg);
// Throws DomainError listing the valid names.
PolicyKind parse_policy(std::string_view name);
HeadAgg parse_head_agg(std::string_view name);
std::span<const std::string_view> policy_names();

struct PolicyConfig {
  std::size_t recent_len = 32;        // l: retrieval window / recent tokens kept
  std::size_t relevant_budget = 2016; // r: non-recent tokens kept by score
  float bias = 0.1F;                  // b: total age penalty
  std::size_t sink_count = 4;         // sink+recent baseline only
  HeadAgg head_agg = HeadAgg::mean;

  // Total retained entries after an eviction (r + l); baselines use the same.
  std::size_t budget() const noexcept { return recent_len + relevant_budget; }
  void validate() const;
};

// Rolling buffer of the last `capacity` head-aggregated attention rows of one
// layer. Row i covers cache slots [0, rows[i].size()); since the cache only
// grows at the end between evictions, rows are prefixes of the current slot
// order and older rows are never longer than newer ones.
class AttentionWindow {
 public:
  explicit AttentionWindow(std::size_t capacity);

  // Drops the oldest row when full. Throws DomainError for rows that are not
  // probability distributions or are shorter than the newest stored row.
  void push(ProbRow row);

  // Re-index every row onto the surviving slots `kept` (ascending) and
  // renormalize; rows left with no mass are dropped.
  void remap(std::span<const std::size_t> kept);

  void clear() noexcept { rows_.clear(); }
  std::span<const ProbRow> rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return rows_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  bool empty() const noexcept { return rows_.empty(); }

 private:
  std::size_t capacity_;
  std::vector<ProbRow> rows_;  // oldest first
};

struct EvictionDecision {
  std::size_t n = 0;                  // cache length the decision was made for
  std::vector<std::size_t> relevant;  // I_r, ascending
  std::vector<std::size_t> recent;    // I_l, ascending
  std::vector<std::size_t> kept;      // ascending union

  bool evicts() const noexcept { return kept.size() < n; }
};

// Mean over the stored rows of columns [0, n - l). A column missing from an
// older (shorter) row contributes 0; the divisor is always the row count.
std::vector<float> window_mean_scores(std::span<const ProbRow> rows, std::size_t n,
                                      std::size_t l);
std::vector<float> window_mean_scores(const AttentionWindow& window, std::size_t n,
                                      std::size_t l);

// Linear age penalty over the n - l scorable columns: the oldest column gets
// -(n-l-1) * b/(n-l), the newest scorable column gets 0.
std::vector<float> bias_vector(std::size_t n, std::size_t l, float b);

// Indices (ascending) of the k largest scores; equal scores prefer the larger
// index, i.e. the newer token.
std::vector<std::size_t> top_k_indices(std::span<const float> scores, std::size_t k);

// Collapses per-head rows into one row. `max` renormalizes so the result is
// still a distribution.
ProbRow aggregate_heads(std::span<const ProbRow> per_head, HeadAgg agg);

EvictionDecision keep_all_decision(std::size_t n, std::size_t recent_len);

EvictionDecision inf_mllm_decide(const AttentionWindow& window, std::size_t n,
                                 const PolicyConfig& cfg);
EvictionDecision inf_mllm_decide(std::span<const ProbRow> rows, std::size_t n,
                                 const PolicyConfig& cfg);

EvictionDecision sliding_window_decide(std::size_t n, std::size_t budget);
EvictionDecision sink_recent_decide(std::size_t n, std::size_t sinks, std::size_t budget);

std::vector<float> heavy_hitter_accumulate(std::span<const float> acc,
                                           std::span<const float> new_row);
void heavy_hitter_accumulate_inplace(std::vector<float>& acc, std::span<const float> new_row);
EvictionDecision heavy_hitter_decide(std::span<const float> acc, std::size_t n,
                                     std::size_t r, std::size_t l);

// Dispatch on `kind`. `accumulator` is only read by the heavy-hitter policy.
EvictionDecision decide(PolicyKind kind, const PolicyConfig& cfg,
                        const AttentionWindow& window, std::span<const float> accumulator,
                        std::size_t n);

}  // namespace saddlekv
