#include "saddlekv/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "saddlekv/errors.hpp"

namespace saddlekv {

float dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw DomainError("dot: dimension mismatch");
  float acc = 0.0F;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

float l2_norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

namespace {

// In-place softmax over `row`; the caller has validated finiteness.
void softmax_inplace(std::span<float> row) {
  const float max = *std::max_element(row.begin(), row.end());
  float sum = 0.0F;
  for (float& x : row) {
    x = std::exp(x - max);
    sum += x;
  }
  const float inv = 1.0F / sum;
  for (float& x : row) x *= inv;
}

}  // namespace

ProbRow softmax_row(std::span<const float> logits) {
  if (logits.empty()) throw DomainError("softmax_row: empty input");
  for (float x : logits) {
    if (!std::isfinite(x)) throw DomainError("softmax_row: non-finite logit");
  }
  ProbRow out(logits.begin(), logits.end());
  softmax_inplace(out);
  return out;
}

void rope_apply_inplace(std::span<float> v, std::uint64_t position, double base) {
  if (v.size() % 2 != 0) throw DomainError("rope_apply: odd dimension");
  if (!(base > 1.0)) throw DomainError("rope_apply: base must be > 1");
  if (position == 0) return;
  const double dim = static_cast<double>(v.size());
  const double pos = static_cast<double>(position);
  for (std::size_t i = 0; i < v.size() / 2; ++i) {
    const double theta = pos * std::pow(base, -2.0 * static_cast<double>(i) / dim);
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    const double x = v[2 * i];
    const double y = v[2 * i + 1];
    v[2 * i] = static_cast<float>(x * c - y * s);
    v[2 * i + 1] = static_cast<float>(x * s + y * c);
  }
}

RealVec rope_apply(std::span<const float> v, std::uint64_t position, double base) {
  RealVec out(v.begin(), v.end());
  rope_apply_inplace(out, position, base);
  return out;
}

float default_attention_scale(std::size_t head_dim) {
  if (head_dim == 0) throw DomainError("attention scale: head_dim must be positive");
  return 1.0F / std::sqrt(static_cast<float>(head_dim));
}

ProbRow attn_probs(std::span<const float> query, std::span<const float> keys,
                   float scale) {
  const std::size_t dim = query.size();
  if (dim == 0) throw DomainError("attn_probs: empty query");
  if (keys.empty()) throw DomainError("attn_probs: empty key set");
  if (keys.size() % dim != 0) throw DomainError("attn_probs: key dimension mismatch");
  if (!(scale > 0.0F)) throw DomainError("attn_probs: scale must be positive");

  const std::size_t n = keys.size() / dim;
  ProbRow row(n);
  for (std::size_t j = 0; j < n; ++j) {
    const float* k = keys.data() + j * dim;
    float acc = 0.0F;
    for (std::size_t i = 0; i < dim; ++i) acc += query[i] * k[i];
    row[j] = acc * scale;
    if (!std::isfinite(row[j])) throw DomainError("attn_probs: non-finite logit");
  }
  softmax_inplace(row);
  return row;
}

ProbRow attn_probs(std::span<const float> query, std::span<const RealVec> keys,
                   float scale) {
  if (keys.empty()) throw DomainError("attn_probs: empty key set");
  std::vector<float> flat;
  flat.reserve(keys.size() * query.size());
  for (const auto& k : keys) {
    if (k.size() != query.size()) throw DomainError("attn_probs: key dimension mismatch");
    flat.insert(flat.end(), k.begin(), k.end());
  }
  return attn_probs(query, std::span<const float>(flat), scale);
}

ProbRow attn_probs(std::span<const float> query, std::span<const RealVec> keys) {
  return attn_probs(query, keys, default_attention_scale(query.size()));
}

RealVec weighted_sum(std::span<const float> probs, std::span<const float> values,
                     std::size_t dim) {
  if (dim == 0) throw DomainError("weighted_sum: zero dimension");
  if (values.size() != probs.size() * dim) {
    throw DomainError("weighted_sum: length mismatch");
  }
  RealVec out(dim, 0.0F);
  for (std::size_t j = 0; j < probs.size(); ++j) {
    const float p = probs[j];
    const float* v = values.data() + j * dim;
    for (std::size_t i = 0; i < dim; ++i) out[i] += p * v[i];
  }
  return out;
}

RealVec weighted_sum(std::span<const float> probs, std::span<const RealVec> values) {
  if (probs.size() != values.size()) throw DomainError("weighted_sum: length mismatch");
  if (values.empty()) throw DomainError("weighted_sum: empty input");
  const std::size_t dim = values.front().size();
  RealVec out(dim, 0.0F);
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (values[j].size() != dim) throw DomainError("weighted_sum: value dimension mismatch");
    for (std::size_t i = 0; i < dim; ++i) out[i] += probs[j] * values[j][i];
  }
  return out;
}

bool is_prob_row(std::span<const float> row, float tol) {
  if (row.empty()) return false;
  double sum = 0.0;
  for (float p : row) {
    if (!(p >= 0.0F) || !std::isfinite(p)) return false;
    sum += p;
  }
  return std::abs(sum - 1.0) <= tol;
}

}  // namespace saddlekv
