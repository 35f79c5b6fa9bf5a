#include "saddlekv/policy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

#include "saddlekv/errors.hpp"

namespace saddlekv {

namespace {

constexpr std::array<std::string_view, 5> kPolicyNames = {
    "none", "inf-mllm", "sink-recent", "window", "heavy-hitter"};

std::vector<std::size_t> iota_range(std::size_t first, std::size_t last) {
  std::vector<std::size_t> out(last > first ? last - first : 0);
  std::iota(out.begin(), out.end(), first);
  return out;
}

std::vector<std::size_t> ascending_union(std::span<const std::size_t> a,
                                         std::span<const std::size_t> b) {
  std::vector<std::size_t> out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

}  // namespace

std::string_view to_string(PolicyKind kind) {
  return kPolicyNames[static_cast<std::size_t>(kind)];
}

std::string_view to_string(HeadAgg agg) { return agg == HeadAgg::max ? "max" : "mean"; }

std::span<const std::string_view> policy_names() { return kPolicyNames; }

PolicyKind parse_policy(std::string_view name) {
  for (std::size_t i = 0; i < kPolicyNames.size(); ++i) {
    if (kPolicyNames[i] == name) return static_cast<PolicyKind>(i);
  }
  std::string valid;
  for (auto n : kPolicyNames) {
    if (!valid.empty()) valid += ", ";
    valid += n;
  }
  throw DomainError("unknown policy '" + std::string(name) + "' (valid: " + valid + ")");
}

HeadAgg parse_head_agg(std::string_view name) {
  if (name == "mean") return HeadAgg::mean;
  if (name == "max") return HeadAgg::max;
  throw DomainError("unknown head aggregation '" + std::string(name) + "' (valid: mean, max)");
}

void PolicyConfig::validate() const {
  if (recent_len < 1) throw DomainError("PolicyConfig: recent_len must be >= 1");
  if (!(bias >= 0.0F) || !std::isfinite(bias)) {
    throw DomainError("PolicyConfig: bias must be finite and >= 0");
  }
}

// ---------------------------------------------------------------------------
// AttentionWindow

AttentionWindow::AttentionWindow(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw DomainError("AttentionWindow: capacity must be >= 1");
  rows_.reserve(capacity);
}

void AttentionWindow::push(ProbRow row) {
  if (!is_prob_row(row)) throw DomainError("AttentionWindow: row is not a distribution");
  if (!rows_.empty() && row.size() < rows_.back().size()) {
    throw DomainError("AttentionWindow: row shorter than the newest stored row");
  }
  if (rows_.size() == capacity_) rows_.erase(rows_.begin());
  rows_.push_back(std::move(row));
}

void AttentionWindow::remap(std::span<const std::size_t> kept) {
  std::vector<ProbRow> out;
  out.reserve(rows_.size());
  for (const ProbRow& row : rows_) {
    ProbRow mapped;
    float sum = 0.0F;
    for (std::size_t slot : kept) {
      if (slot >= row.size()) break;
      mapped.push_back(row[slot]);
      sum += row[slot];
    }
    if (!(sum > 0.0F)) continue;
    for (float& p : mapped) p /= sum;
    out.push_back(std::move(mapped));
  }
  rows_ = std::move(out);
}

// ---------------------------------------------------------------------------
// Scoring

std::vector<float> window_mean_scores(std::span<const ProbRow> rows, std::size_t n,
                                      std::size_t l) {
  if (rows.empty()) throw DomainError("window_mean_scores: empty window");
  if (n <= l) throw DomainError("window_mean_scores: no scorable columns (n <= l)");
  const std::size_t cols = n - l;
  std::vector<float> sums(cols, 0.0F);
  for (const ProbRow& row : rows) {
    if (row.size() > n) throw DomainError("window_mean_scores: row longer than cache");
    const std::size_t upto = std::min(cols, row.size());
    for (std::size_t c = 0; c < upto; ++c) sums[c] += row[c];
  }
  const float count = static_cast<float>(rows.size());
  for (float& s : sums) s /= count;
  return sums;
}

std::vector<float> window_mean_scores(const AttentionWindow& window, std::size_t n,
                                      std::size_t l) {
  return window_mean_scores(window.rows(), n, l);
}

std::vector<float> bias_vector(std::size_t n, std::size_t l, float b) {
  if (n <= l) throw DomainError("bias_vector: n must exceed l");
  if (!(b >= 0.0F)) throw DomainError("bias_vector: b must be >= 0");
  const std::size_t cols = n - l;
  const float step = b / static_cast<float>(cols);
  std::vector<float> out(cols);
  for (std::size_t c = 0; c < cols; ++c) {
    out[c] = -static_cast<float>(cols - 1 - c) * step;
  }
  return out;
}

std::vector<std::size_t> top_k_indices(std::span<const float> scores, std::size_t k) {
  if (k >= scores.size()) return iota_range(0, scores.size());
  if (k == 0) return {};
  std::vector<std::size_t> idx = iota_range(0, scores.size());
  const auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a > b;
  };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k - 1), idx.end(),
                   better);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

ProbRow aggregate_heads(std::span<const ProbRow> per_head, HeadAgg agg) {
  if (per_head.empty()) throw DomainError("aggregate_heads: no heads");
  const std::size_t n = per_head.front().size();
  for (const auto& row : per_head) {
    if (row.size() != n) throw DomainError("aggregate_heads: ragged head rows");
  }
  ProbRow out(per_head.front());
  if (per_head.size() == 1) return out;
  if (agg == HeadAgg::mean) {
    for (std::size_t h = 1; h < per_head.size(); ++h) {
      for (std::size_t c = 0; c < n; ++c) out[c] += per_head[h][c];
    }
    const float inv = 1.0F / static_cast<float>(per_head.size());
    for (float& p : out) p *= inv;
  } else {
    for (std::size_t h = 1; h < per_head.size(); ++h) {
      for (std::size_t c = 0; c < n; ++c) out[c] = std::max(out[c], per_head[h][c]);
    }
    const float sum = std::accumulate(out.begin(), out.end(), 0.0F);
    for (float& p : out) p /= sum;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decisions

EvictionDecision keep_all_decision(std::size_t n, std::size_t recent_len) {
  const std::size_t split = n > recent_len ? n - recent_len : 0;
  EvictionDecision d;
  d.n = n;
  d.relevant = iota_range(0, split);
  d.recent = iota_range(split, n);
  d.kept = iota_range(0, n);
  return d;
}

EvictionDecision inf_mllm_decide(std::span<const ProbRow> rows, std::size_t n,
                                 const PolicyConfig& cfg) {
  cfg.validate();
  if (rows.empty()) throw DomainError("inf_mllm_decide: empty attention window");
  const std::size_t l = cfg.recent_len;
  const std::size_t r = cfg.relevant_budget;
  if (n <= r + l) return keep_all_decision(n, l);

  std::vector<float> biased = window_mean_scores(rows, n, l);
  const std::vector<float> penalty = bias_vector(n, l, cfg.bias);
  for (std::size_t c = 0; c < biased.size(); ++c) biased[c] += penalty[c];

  EvictionDecision d;
  d.n = n;
  d.relevant = top_k_indices(biased, r);
  d.recent = iota_range(n - l, n);
  d.kept = d.relevant;
  d.kept.insert(d.kept.end(), d.recent.begin(), d.recent.end());
  return d;
}

EvictionDecision inf_mllm_decide(const AttentionWindow& window, std::size_t n,
                                 const PolicyConfig& cfg) {
  return inf_mllm_decide(window.rows(), n, cfg);
}

EvictionDecision sliding_window_decide(std::size_t n, std::size_t budget) {
  if (budget < 1) throw DomainError("sliding_window_decide: budget must be >= 1");
  EvictionDecision d;
  d.n = n;
  d.recent = iota_range(n > budget ? n - budget : 0, n);
  d.kept = d.recent;
  return d;
}

EvictionDecision sink_recent_decide(std::size_t n, std::size_t sinks, std::size_t budget) {
  if (budget <= sinks) throw DomainError("sink_recent_decide: budget must exceed sink count");
  EvictionDecision d;
  d.n = n;
  if (n <= budget) {
    d.relevant = iota_range(0, std::min(sinks, n));
    d.recent = iota_range(d.relevant.size(), n);
    d.kept = iota_range(0, n);
    return d;
  }
  d.relevant = iota_range(0, sinks);
  d.recent = iota_range(n - (budget - sinks), n);
  d.kept = ascending_union(d.relevant, d.recent);
  return d;
}

std::vector<float> heavy_hitter_accumulate(std::span<const float> acc,
                                           std::span<const float> new_row) {
  std::vector<float> out(acc.begin(), acc.end());
  heavy_hitter_accumulate_inplace(out, new_row);
  return out;
}

void heavy_hitter_accumulate_inplace(std::vector<float>& acc, std::span<const float> new_row) {
  if (acc.size() > new_row.size()) {
    throw DomainError("heavy_hitter_accumulate: accumulator longer than row");
  }
  acc.resize(new_row.size(), 0.0F);
  for (std::size_t c = 0; c < new_row.size(); ++c) acc[c] += new_row[c];
}

EvictionDecision heavy_hitter_decide(std::span<const float> acc, std::size_t n,
                                     std::size_t r, std::size_t l) {
  if (acc.size() != n) throw DomainError("heavy_hitter_decide: accumulator length != n");
  if (r + l >= n) return keep_all_decision(n, l);
  EvictionDecision d;
  d.n = n;
  d.relevant = top_k_indices(acc.first(n - l), r);
  d.recent = iota_range(n - l, n);
  d.kept = d.relevant;
  d.kept.insert(d.kept.end(), d.recent.begin(), d.recent.end());
  return d;
}

EvictionDecision decide(PolicyKind kind, const PolicyConfig& cfg,
                        const AttentionWindow& window, std::span<const float> accumulator,
                        std::size_t n) {
  switch (kind) {
    case PolicyKind::none:
      return keep_all_decision(n, cfg.recent_len);
    case PolicyKind::inf_mllm:
      return inf_mllm_decide(window, n, cfg);
    case PolicyKind::sink_recent:
      return sink_recent_decide(n, cfg.sink_count, cfg.budget());
    case PolicyKind::window:
      return sliding_window_decide(n, cfg.budget());
    case PolicyKind::heavy_hitter:
      return heavy_hitter_decide(accumulator, n, cfg.relevant_budget, cfg.recent_len);
  }
  throw DomainError("decide: unknown policy");
}

}  // namespace saddlekv
