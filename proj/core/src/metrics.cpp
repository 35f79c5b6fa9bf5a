#include "saddlekv/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "saddlekv/errors.hpp"
#include "saddlekv/policy.hpp"

namespace saddlekv {

double retained_mass(std::span<const ProbRow> oracle_rows, std::span<const std::size_t> kept) {
  if (oracle_rows.empty()) throw DomainError("retained_mass: no oracle rows");
  std::size_t width = 0;
  for (const auto& row : oracle_rows) width = std::max(width, row.size());
  for (std::size_t c : kept) {
    if (c >= width) throw DomainError("retained_mass: kept index outside oracle rows");
  }
  double total = 0.0;
  for (const auto& row : oracle_rows) {
    double mass = 0.0;
    for (std::size_t c : kept) {
      if (c < row.size()) mass += row[c];
    }
    total += mass;
  }
  return std::clamp(total / static_cast<double>(oracle_rows.size()), 0.0, 1.0);
}

double topk_overlap(std::span<const float> oracle_scores,
                    std::span<const std::size_t> relevant, std::size_t r) {
  if (r < 1) throw DomainError("topk_overlap: r must be >= 1");
  const std::size_t denom = std::min(r, oracle_scores.size());
  if (denom == 0) return 1.0;
  const std::vector<std::size_t> oracle = top_k_indices(oracle_scores, r);
  const std::unordered_set<std::size_t> mine(relevant.begin(), relevant.end());
  std::size_t hits = 0;
  for (std::size_t c : oracle) hits += mine.count(c);
  return static_cast<double>(hits) / static_cast<double>(denom);
}

std::optional<double> planted_recall(std::span<const std::size_t> truth,
                                     std::span<const std::size_t> kept) {
  if (truth.empty()) return std::nullopt;
  const std::unordered_set<std::size_t> k(kept.begin(), kept.end());
  const std::unordered_set<std::size_t> t(truth.begin(), truth.end());
  std::size_t hits = 0;
  for (std::size_t c : t) hits += k.count(c);
  return static_cast<double>(hits) / static_cast<double>(t.size());
}

std::uint64_t flops_per_token(std::uint64_t cache_len, std::uint64_t layers,
                              std::uint64_t heads, std::uint64_t head_dim) {
  return 4ULL * cache_len * head_dim * heads * layers;
}

// ---------------------------------------------------------------------------
// Report emission

std::string format_real(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return buf;
}

namespace {

std::string opt_csv(const std::optional<double>& v) { return v ? format_real(*v) : ""; }

nlohmann::json opt_json(const std::optional<double>& v) {
  // Round-trip through the 6-digit text form so JSON and CSV agree.
  if (!v) return nullptr;
  return std::stod(format_real(*v));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

std::optional<double> json_opt(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

void emit_report(std::span<const MetricsRow> rows, ReportFormat format, std::ostream& os) {
  if (format == ReportFormat::csv) {
    os << kCsvHeader << '\n';
    for (const auto& r : rows) {
      os << r.round_id << ',' << r.policy << ',' << opt_csv(r.retained_mass) << ','
         << opt_csv(r.topk_overlap) << ',' << opt_csv(r.planted_recall) << ',' << r.cache_len
         << ',' << r.memory_bytes << ',' << r.flops_per_token << '\n';
    }
  } else {
    // ordered_json keeps the key order identical to the CSV header.
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
      nlohmann::ordered_json o;
      o["round"] = r.round_id;
      o["policy"] = r.policy;
      o["retained_mass"] = opt_json(r.retained_mass);
      o["topk_overlap"] = opt_json(r.topk_overlap);
      o["planted_recall"] = opt_json(r.planted_recall);
      o["cache_len"] = r.cache_len;
      o["memory_bytes"] = r.memory_bytes;
      o["flops_per_token"] = r.flops_per_token;
      arr.push_back(std::move(o));
    }
    os << arr.dump(2) << '\n';
  }
  if (!os) throw IoError("emit_report: write failed");
}

std::vector<MetricsRow> parse_csv_report(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader) {
    throw ParseError("metrics csv: missing or unexpected header", 0);
  }
  std::vector<MetricsRow> rows;
  std::uint64_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 8) throw ParseError("metrics csv: expected 8 fields on line " +
                                            std::to_string(line_no), line_no);
    MetricsRow r;
    r.round_id = static_cast<std::uint32_t>(std::stoul(f[0]));
    r.policy = f[1];
    r.retained_mass = parse_opt(f[2]);
    r.topk_overlap = parse_opt(f[3]);
    r.planted_recall = parse_opt(f[4]);
    r.cache_len = std::stoull(f[5]);
    r.memory_bytes = std::stoull(f[6]);
    r.flops_per_token = std::stoull(f[7]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<MetricsRow> parse_json_report(std::istream& is) {
  const auto arr = nlohmann::json::parse(is);
  std::vector<MetricsRow> rows;
  for (const auto& o : arr) {
    MetricsRow r;
    r.round_id = o.at("round").get<std::uint32_t>();
    r.policy = o.at("policy").get<std::string>();
    r.retained_mass = json_opt(o, "retained_mass");
    r.topk_overlap = json_opt(o, "topk_overlap");
    r.planted_recall = json_opt(o, "planted_recall");
    r.cache_len = o.at("cache_len").get<std::uint64_t>();
    r.memory_bytes = o.at("memory_bytes").get<std::uint64_t>();
    r.flops_per_token = o.at("flops_per_token").get<std::uint64_t>();
    rows.push_back(std::move(r));
  }
  return rows;
}

PolicySummary summarize(std::string_view policy, std::span<const MetricsRow> rows) {
  PolicySummary s;
  s.policy = std::string(policy);
  s.rounds = rows.size();
  auto mean_opt = [&](auto field) -> std::optional<double> {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& r : rows) {
      if (const auto& v = r.*field) {
        sum += *v;
        ++count;
      }
    }
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
  };
  s.mean_retained_mass = mean_opt(&MetricsRow::retained_mass);
  s.mean_topk_overlap = mean_opt(&MetricsRow::topk_overlap);
  s.mean_planted_recall = mean_opt(&MetricsRow::planted_recall);
  if (!rows.empty()) {
    for (const auto& r : rows) {
      s.mean_cache_len += static_cast<double>(r.cache_len);
      s.mean_memory_bytes += static_cast<double>(r.memory_bytes);
      s.mean_flops_per_token += static_cast<double>(r.flops_per_token);
      s.max_memory_bytes = std::max(s.max_memory_bytes, r.memory_bytes);
    }
    const double n = static_cast<double>(rows.size());
    s.mean_cache_len /= n;
    s.mean_memory_bytes /= n;
    s.mean_flops_per_token /= n;
  }
  return s;
}

}  // namespace saddlekv
