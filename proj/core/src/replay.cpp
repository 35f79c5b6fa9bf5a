#include "saddlekv/replay.hpp"

#include <algorithm>
#include <numeric>

#include "saddlekv/errors.hpp"

namespace saddlekv {

ReplayEngine::ReplayEngine(const TraceHeader& header, const ReplayOptions& options)
    : header_(header), options_(options) {
  options_.config.validate();
  if (options_.policy == PolicyKind::sink_recent &&
      options_.config.budget() <= options_.config.sink_count) {
    throw DomainError("sink-recent: budget must exceed sink count");
  }
  layers_.reserve(header.layers);
  for (std::uint32_t l = 0; l < header.layers; ++l) {
    layers_.push_back(LayerState{{}, AttentionWindow(options_.config.recent_len), {}, {}, 0, 0});
  }
}

void ReplayEngine::consume(const TraceEvent& event) {
  if (const auto* rs = std::get_if<RoundStart>(&event)) {
    if (pending_round_) evict_round();
    pending_round_ = rs->round_id;
    truth_.clear();
    for (auto& ls : layers_) ls.prompt_rows_left = rs->prompt_len;
    if (rs->prompt_len == 0) evict_round();
  } else if (const auto* st = std::get_if<SaddleTruth>(&event)) {
    truth_.assign(st->columns.begin(), st->columns.end());
  } else if (const auto* row = std::get_if<AttnRow>(&event)) {
    on_row(*row);
  }
  // TOKENS carries modality only; stream growth is read off the row lengths.
}

void ReplayEngine::on_row(const AttnRow& row) {
  if (row.layer >= layers_.size()) throw DomainError("replay: row layer out of range");
  LayerState& ls = layers_[row.layer];
  const std::size_t n = row.probs.size();
  if (n < ls.stream_len) throw DomainError("replay: row shorter than the stream so far");
  for (std::size_t p = ls.stream_len; p < n; ++p) ls.positions.push_back(p);
  ls.stream_len = n;

  ProbRow compressed;
  compressed.reserve(ls.positions.size());
  float sum = 0.0F;
  for (std::size_t p : ls.positions) {
    compressed.push_back(row.probs[p]);
    sum += row.probs[p];
  }
  if (sum > 0.0F) {
    for (float& x : compressed) x /= sum;
    heavy_hitter_accumulate_inplace(ls.accumulator, compressed);
    ls.window.push(std::move(compressed));
  } else {
    ls.accumulator.resize(ls.positions.size(), 0.0F);
  }

  ls.oracle_rows.push_back(row.probs);
  if (ls.oracle_rows.size() > options_.config.recent_len) ls.oracle_rows.pop_front();

  if (pending_round_ && ls.prompt_rows_left > 0 && --ls.prompt_rows_left == 0) {
    const bool all_done = std::all_of(layers_.begin(), layers_.end(),
                                      [](const LayerState& s) { return s.prompt_rows_left == 0; });
    if (all_done) evict_round();
  }
}

void ReplayEngine::evict_round() {
  const PolicyConfig& cfg = options_.config;
  ReplayRound round;
  round.round_id = pending_round_.value_or(0);
  pending_round_.reset();

  double mass = 0.0;
  double overlap = 0.0;
  double recall = 0.0;
  std::size_t scored_layers = 0;
  std::size_t recall_layers = 0;
  std::uint64_t entries = 0;
  std::uint64_t max_len = 0;

  for (LayerState& ls : layers_) {
    const std::size_t n = ls.positions.size();
    EvictionDecision d = (n == 0 || ls.window.empty())
                             ? keep_all_decision(n, cfg.recent_len)
                             : decide(options_.policy, cfg, ls.window, ls.accumulator, n);

    std::vector<std::size_t> kept_pos;
    kept_pos.reserve(d.kept.size());
    for (std::size_t s : d.kept) kept_pos.push_back(ls.positions[s]);

    if (!ls.oracle_rows.empty()) {
      const std::vector<ProbRow> oracle(ls.oracle_rows.begin(), ls.oracle_rows.end());
      mass += retained_mass(oracle, kept_pos);
      if (ls.stream_len > cfg.recent_len) {
        std::vector<std::size_t> rel_pos;
        for (std::size_t s : d.relevant) rel_pos.push_back(ls.positions[s]);
        const auto scores = window_mean_scores(oracle, ls.stream_len, cfg.recent_len);
        overlap += topk_overlap(scores, rel_pos, std::max<std::size_t>(cfg.relevant_budget, 1));
      } else {
        overlap += 1.0;
      }
      ++scored_layers;
    }
    if (auto r = planted_recall(truth_, kept_pos)) {
      recall += *r;
      ++recall_layers;
    }

    if (d.evicts()) {
      ls.positions = kept_pos;
      ls.window.remap(d.kept);
      for (std::size_t i = 0; i < d.kept.size(); ++i) ls.accumulator[i] = ls.accumulator[d.kept[i]];
      ls.accumulator.resize(d.kept.size());
    }
    entries += ls.positions.size();
    max_len = std::max<std::uint64_t>(max_len, ls.positions.size());
    round.kept_positions.push_back(std::move(kept_pos));
    round.decisions.push_back(std::move(d));
  }

  MetricsRow& m = round.metrics;
  m.round_id = round.round_id;
  m.policy = std::string(to_string(options_.policy));
  if (scored_layers > 0) {
    m.retained_mass = mass / static_cast<double>(scored_layers);
    m.topk_overlap = overlap / static_cast<double>(scored_layers);
  }
  if (recall_layers > 0) m.planted_recall = recall / static_cast<double>(recall_layers);
  m.cache_len = max_len;
  m.memory_bytes = 2ULL * entries * options_.head_dim * header_.heads * sizeof(float);
  m.flops_per_token = 4ULL * entries * options_.head_dim * header_.heads;
  rounds_.push_back(std::move(round));
}

void ReplayEngine::finish() {
  if (pending_round_) evict_round();
}

std::vector<MetricsRow> ReplayEngine::metrics() const {
  std::vector<MetricsRow> out;
  out.reserve(rounds_.size());
  for (const auto& r : rounds_) out.push_back(r.metrics);
  return out;
}

std::vector<ReplayRound> replay_trace(const Trace& trace, const ReplayOptions& options) {
  ReplayEngine engine(trace.header, options);
  for (const auto& e : trace.events) engine.consume(e);
  engine.finish();
  return engine.rounds();
}

std::vector<ReplayRound> replay_trace(TraceReader& reader, const ReplayOptions& options) {
  ReplayEngine engine(reader.header(), options);
  while (auto e = reader.next()) engine.consume(*e);
  engine.finish();
  return engine.rounds();
}

}  // namespace saddlekv
