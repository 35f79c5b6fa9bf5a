#include "saddlekv/session.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>

#include "saddlekv/errors.hpp"
#include "saddlekv/rng.hpp"

namespace saddlekv {

namespace {

constexpr std::uint64_t kVocabSize = 32000;
constexpr std::uint64_t kDecodeSalt = 0x6465636f6465ULL;
constexpr std::uint64_t kProbeSalt = 0x70726f6265ULL;

std::vector<std::size_t> to_original(std::span<const TokenMeta> meta,
                                     std::span<const std::size_t> slots) {
  std::vector<std::size_t> out;
  out.reserve(slots.size());
  for (std::size_t s : slots) out.push_back(static_cast<std::size_t>(meta[s].original_position));
  return out;
}

}  // namespace

Session::Session(const TinyDecoderSpec& spec, const SessionOptions& options)
    : decoder_(spec),
      options_(options),
      cache_(spec.layers, spec.heads, spec.head_dim),
      scale_(default_attention_scale(spec.head_dim)) {
  options_.config.validate();
  if (options_.workers == 0) options_.workers = 1;
  if (options_.policy == PolicyKind::sink_recent &&
      options_.config.budget() <= options_.config.sink_count) {
    throw DomainError("sink-recent: budget must exceed sink count");
  }
  const std::size_t l = options_.config.recent_len;
  rotated_.resize(spec.layers);
  for (auto& r : rotated_) r.heads.resize(spec.heads);
  windows_.assign(spec.layers, AttentionWindow(l));
  accumulators_.resize(spec.layers);
  if (options_.oracle) {
    shadow_.emplace(spec.layers, spec.heads, spec.head_dim);
    shadow_rotated_.resize(spec.layers);
    for (auto& r : shadow_rotated_) r.heads.resize(spec.heads);
    oracle_windows_.assign(spec.layers, AttentionWindow(l));
  }
}

std::int64_t Session::generated_token(std::uint64_t step) const {
  return static_cast<std::int64_t>(
      hash_combine(decoder_.spec().seed ^ kDecodeSalt, step) % kVocabSize);
}

std::uint64_t Session::next_position(std::size_t layer) const {
  return decoder_.spec().position_mode == PositionMode::original ? step_id_
                                                                 : cache_.size(layer);
}

RealVec Session::attend(std::size_t layer, std::span<const float> q_packed, std::uint64_t q_pos,
                        std::vector<ProbRow>* head_rows) const {
  const auto& spec = decoder_.spec();
  const std::size_t d = spec.head_dim;
  RealVec out(spec.model_dim());
  for (std::size_t h = 0; h < spec.heads; ++h) {
    const RealVec q = rope_apply(q_packed.subspan(h * d, d), q_pos, spec.rope_base);
    ProbRow probs = attn_probs(q, std::span<const float>(rotated_[layer].heads[h]), scale_);
    const RealVec o = weighted_sum(probs, cache_.values(layer, h), d);
    std::copy(o.begin(), o.end(), out.begin() + static_cast<std::ptrdiff_t>(h * d));
    if (head_rows) head_rows->push_back(std::move(probs));
  }
  return out;
}

std::vector<ProbRow> Session::decode_step(std::int64_t token_id, Modality modality) {
  const auto& spec = decoder_.spec();
  const std::size_t d = spec.head_dim;
  const TokenMeta meta{step_id_, modality, rounds_started_ > 0 ? rounds_started_ - 1 : 0};

  RealVec x = decoder_.embed(token_id);
  std::vector<ProbRow> rows;
  rows.reserve(spec.layers);
  for (std::size_t layer = 0; layer < spec.layers; ++layer) {
    const RealVec q = decoder_.project_q(layer, x);
    const RealVec k = decoder_.project_k(layer, x);
    const RealVec v = decoder_.project_v(layer, x);
    const std::uint64_t pos = next_position(layer);

    cache_.append_packed(layer, k, v, meta);
    for (std::size_t h = 0; h < spec.heads; ++h) {
      RealVec kr = rope_apply(std::span<const float>(k).subspan(h * d, d), pos, spec.rope_base);
      auto& buf = rotated_[layer].heads[h];
      buf.insert(buf.end(), kr.begin(), kr.end());
    }

    std::vector<ProbRow> head_rows;
    const RealVec out = attend(layer, q, pos, &head_rows);
    ProbRow row = aggregate_heads(head_rows, options_.config.head_agg);

    if (shadow_) {
      // The shadow holds every token at its stream position.
      shadow_->append_packed(layer, k, v, meta);
      std::vector<ProbRow> oracle_heads;
      for (std::size_t h = 0; h < spec.heads; ++h) {
        RealVec kr = rope_apply(std::span<const float>(k).subspan(h * d, d), step_id_,
                                spec.rope_base);
        auto& buf = shadow_rotated_[layer].heads[h];
        buf.insert(buf.end(), kr.begin(), kr.end());
        const RealVec qh = rope_apply(std::span<const float>(q).subspan(h * d, d), step_id_,
                                      spec.rope_base);
        oracle_heads.push_back(attn_probs(qh, std::span<const float>(buf), scale_));
      }
      oracle_windows_[layer].push(aggregate_heads(oracle_heads, options_.config.head_agg));
    }

    heavy_hitter_accumulate_inplace(accumulators_[layer], row);
    windows_[layer].push(row);
    rows.push_back(std::move(row));

    for (std::size_t i = 0; i < x.size(); ++i) x[i] += out[i];
  }
  ++step_id_;
  ++since_eviction_;
  return rows;
}

void Session::rebuild_rotated(std::size_t layer) {
  const auto& spec = decoder_.spec();
  const std::size_t d = spec.head_dim;
  const auto positions = cache_.positions_for(layer, spec.position_mode);
  for (std::size_t h = 0; h < spec.heads; ++h) {
    const auto raw = cache_.keys(layer, h);
    auto& buf = rotated_[layer].heads[h];
    buf.assign(raw.begin(), raw.end());
    for (std::size_t i = 0; i < positions.size(); ++i) {
      rope_apply_inplace(std::span<float>(buf).subspan(i * d, d), positions[i], spec.rope_base);
    }
  }
}

void Session::evict_layer(std::size_t layer, RoundReport& report, std::vector<double>& mass,
                          std::vector<double>& overlap) {
  const PolicyConfig& cfg = options_.config;
  const std::size_t n = cache_.size(layer);
  EvictionDecision decision =
      decide(options_.policy, cfg, windows_[layer], accumulators_[layer], n);

  if (shadow_ && !oracle_windows_[layer].empty()) {
    const auto meta = cache_.meta(layer);
    const auto oracle_rows = oracle_windows_[layer].rows();
    mass[layer] = retained_mass(oracle_rows, to_original(meta, decision.kept));
    const std::size_t full = shadow_->size(layer);
    if (full > cfg.recent_len) {
      const auto scores = window_mean_scores(oracle_rows, full, cfg.recent_len);
      overlap[layer] = topk_overlap(scores, to_original(meta, decision.relevant),
                                    std::max<std::size_t>(cfg.relevant_budget, 1));
    } else {
      overlap[layer] = 1.0;
    }
  }

  if (decision.evicts()) {
    cache_.gather_keep(layer, decision.kept);
    rebuild_rotated(layer);
    windows_[layer].remap(decision.kept);
    auto& acc = accumulators_[layer];
    for (std::size_t i = 0; i < decision.kept.size(); ++i) acc[i] = acc[decision.kept[i]];
    acc.resize(decision.kept.size());
  }
  report.decisions[layer] = std::move(decision);
}

RoundReport Session::start_round(const RoundScript& script) {
  if (script.prompt_token_ids.empty()) throw DomainError("start_round: empty prompt");
  if (!script.modality.empty() && script.modality.size() != script.prompt_token_ids.size()) {
    throw DomainError("start_round: modality labels must match prompt length");
  }
  ++rounds_started_;
  for (std::size_t i = 0; i < script.prompt_token_ids.size(); ++i) {
    decode_step(script.prompt_token_ids[i],
                script.modality.empty() ? Modality::text : script.modality[i]);
  }

  const std::size_t layers = decoder_.spec().layers;
  RoundReport report;
  report.round_id = rounds_started_ - 1;
  report.decisions.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    report.pre_eviction_len = std::max(report.pre_eviction_len, cache_.size(l));
  }
  std::vector<double> mass(layers, 0.0);
  std::vector<double> overlap(layers, 0.0);

  const std::size_t workers = std::min(options_.workers, layers);
  if (workers <= 1) {
    for (std::size_t l = 0; l < layers; ++l) evict_layer(l, report, mass, overlap);
  } else {
    // Layers are independent: each worker owns a strided subset.
    std::vector<std::future<void>> jobs;
    for (std::size_t w = 0; w < workers; ++w) {
      jobs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t l = w; l < layers; l += workers) evict_layer(l, report, mass, overlap);
      }));
    }
    for (auto& j : jobs) j.get();
  }

  if (shadow_) {
    double m = 0.0;
    double o = 0.0;
    for (std::size_t l = 0; l < layers; ++l) {
      m += mass[l];
      o += overlap[l];
    }
    report.retained_mass = m / static_cast<double>(layers);
    report.topk_overlap = o / static_cast<double>(layers);
  }
  const auto& spec = decoder_.spec();
  for (std::size_t l = 0; l < layers; ++l) {
    report.post_eviction_len = std::max(report.post_eviction_len, cache_.size(l));
    report.flops_per_token += flops_per_token(cache_.size(l), 1, spec.heads, spec.head_dim);
  }
  report.memory_bytes = cache_.memory_bytes();
  since_eviction_ = 0;
  return report;
}

RoundReport Session::run_round(const RoundScript& script) {
  RoundReport report = start_round(script);
  for (std::size_t i = 0; i < script.decode_steps; ++i) decode_step(generated_token(step_id_));
  return report;
}

double Session::attention_equivalence_check(std::size_t layer,
                                            std::optional<PositionMode> shadow_mode,
                                            std::optional<std::int64_t> probe_token) const {
  if (!shadow_) throw DomainError("attention_equivalence_check: oracle shadow cache disabled");
  const auto& spec = decoder_.spec();
  if (layer >= spec.layers) throw DomainError("attention_equivalence_check: layer out of range");
  if (cache_.size(layer) == 0) throw DomainError("attention_equivalence_check: empty cache");
  const std::size_t d = spec.head_dim;

  RealVec x = decoder_.embed(probe_token.value_or(generated_token(step_id_ ^ kProbeSalt)));
  for (std::size_t li = 0; li < layer; ++li) {
    const RealVec q = decoder_.project_q(li, x);
    const RealVec out = attend(li, q, next_position(li), nullptr);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += out[i];
  }
  const RealVec q = decoder_.project_q(layer, x);

  // (a) compressed cache
  const RealVec a = attend(layer, q, next_position(layer), nullptr);

  // (b) full shadow cache with everything outside the retained set masked out
  const PositionMode mode = shadow_mode.value_or(spec.position_mode);
  const auto meta = cache_.meta(layer);
  const std::size_t full = shadow_->size(layer);
  std::vector<std::int64_t> rank(full, -1);
  for (std::size_t i = 0; i < meta.size(); ++i) {
    rank[meta[i].original_position] = static_cast<std::int64_t>(i);
  }
  const std::uint64_t q_pos = mode == PositionMode::original ? step_id_ : meta.size();

  RealVec b(spec.model_dim(), 0.0F);
  std::vector<float> logits(full);
  for (std::size_t h = 0; h < spec.heads; ++h) {
    const RealVec qh = rope_apply(std::span<const float>(q).subspan(h * d, d), q_pos,
                                  spec.rope_base);
    float max = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < full; ++j) {
      if (rank[j] < 0) {
        logits[j] = -std::numeric_limits<float>::infinity();
        continue;
      }
      const std::uint64_t pos =
          mode == PositionMode::original ? j : static_cast<std::uint64_t>(rank[j]);
      const RealVec kr = rope_apply(shadow_->key(layer, h, j), pos, spec.rope_base);
      logits[j] = dot(qh, kr) * scale_;
      max = std::max(max, logits[j]);
    }
    float sum = 0.0F;
    for (float& z : logits) {
      z = std::isinf(z) ? 0.0F : std::exp(z - max);
      sum += z;
    }
    for (std::size_t j = 0; j < full; ++j) {
      const float p = logits[j] / sum;
      const auto v = shadow_->value(layer, h, j);
      for (std::size_t i = 0; i < d; ++i) b[h * d + i] += p * v[i];
    }
  }

  double dev = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dev = std::max(dev, static_cast<double>(std::abs(a[i] - b[i])));
  }
  return dev;
}

MetricsRow Session::metrics_row(const RoundReport& report) const {
  MetricsRow row;
  row.round_id = report.round_id;
  row.policy = std::string(to_string(options_.policy));
  row.retained_mass = report.retained_mass;
  row.topk_overlap = report.topk_overlap;
  row.cache_len = report.post_eviction_len;
  row.memory_bytes = report.memory_bytes;
  row.flops_per_token = report.flops_per_token;
  return row;
}

Session init_session(const TinyDecoderSpec& spec, PolicyKind policy, const PolicyConfig& cfg,
                     bool oracle) {
  SessionOptions opts;
  opts.policy = policy;
  opts.config = cfg;
  opts.oracle = oracle;
  return Session(spec, opts);
}

}  // namespace saddlekv
