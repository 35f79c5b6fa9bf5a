#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "saddlekv/tensor.hpp"

namespace saddlekv {

// One measurement per round boundary (taken right after eviction).
// Ratio fields are absent when the data they need was not collected
// (no shadow cache, no planted ground truth).
struct MetricsRow {
  std::uint32_t round_id = 0;
  std::string policy;
  std::optional<double> retained_mass;
  std::optional<double> topk_overlap;
  std::optional<double> planted_recall;
  std::uint64_t cache_len = 0;
  std::uint64_t memory_bytes = 0;
  std::uint64_t flops_per_token = 0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

// Mean over `oracle_rows` of the probability mass that falls on `kept`.
// Columns a row does not cover (tokens newer than the row) contribute 0.
double retained_mass(std::span<const ProbRow> oracle_rows, std::span<const std::size_t> kept);

// |relevant ∩ top_r(oracle_scores)| / min(r, |oracle_scores|); 1 when there is
// nothing to select.
double topk_overlap(std::span<const float> oracle_scores,
                    std::span<const std::size_t> relevant, std::size_t r);

// |truth ∩ kept| / |truth|, absent for an empty truth set.
std::optional<double> planted_recall(std::span<const std::size_t> truth,
                                     std::span<const std::size_t> kept);

// 4 * n * head_dim * heads * layers: QK^T and PV multiply-adds for one query.
std::uint64_t flops_per_token(std::uint64_t cache_len, std::uint64_t layers,
                              std::uint64_t heads, std::uint64_t head_dim);

enum class ReportFormat { csv, json };

inline constexpr std::string_view kCsvHeader =
    "round,policy,retained_mass,topk_overlap,planted_recall,cache_len,memory_bytes,"
    "flops_per_token";

// Reals are printed with 6 significant digits; absent values are empty CSV
// fields / JSON null.
void emit_report(std::span<const MetricsRow> rows, ReportFormat format, std::ostream& os);
std::string format_real(double value);

std::vector<MetricsRow> parse_csv_report(std::istream& is);
std::vector<MetricsRow> parse_json_report(std::istream& is);

struct PolicySummary {
  std::string policy;
  std::size_t rounds = 0;
  std::optional<double> mean_retained_mass;
  std::optional<double> mean_topk_overlap;
  std::optional<double> mean_planted_recall;
  double mean_cache_len = 0.0;
  double mean_memory_bytes = 0.0;
  double mean_flops_per_token = 0.0;
  std::uint64_t max_memory_bytes = 0;
};

// Per-field means over rows; optional fields average only the present values.
PolicySummary summarize(std::string_view policy, std::span<const MetricsRow> rows);

}  // namespace saddlekv
