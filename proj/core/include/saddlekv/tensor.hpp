#pragma once

// Dense fp32 kernels for single-query attention: softmax, rotary position
// rotation, scaled dot-product probabilities and probability-weighted sums.
// Everything here is a pure function of its arguments.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace saddlekv {

using RealVec = std::vector<float>;

// A probability distribution over cached tokens (one row of an attention map).
using ProbRow = std::vector<float>;

inline constexpr double kDefaultRopeBase = 10000.0;
inline constexpr float kProbSumTolerance = 1e-4F;

float dot(std::span<const float> a, std::span<const float> b);
float l2_norm(std::span<const float> v);

// Max-subtracted softmax. Throws DomainError on empty or non-finite input.
ProbRow softmax_row(std::span<const float> logits);

// Rotates consecutive pairs (v[2i], v[2i+1]) by position * base^(-2i/dim).
RealVec rope_apply(std::span<const float> v, std::uint64_t position,
                   double base = kDefaultRopeBase);
void rope_apply_inplace(std::span<float> v, std::uint64_t position,
                        double base = kDefaultRopeBase);

float default_attention_scale(std::size_t head_dim);

// softmax(scale * K q). `keys` is row-major, one key of query.size() floats per row.
ProbRow attn_probs(std::span<const float> query, std::span<const float> keys,
                   float scale);
ProbRow attn_probs(std::span<const float> query, std::span<const RealVec> keys,
                   float scale);
ProbRow attn_probs(std::span<const float> query, std::span<const RealVec> keys);

// sum_i probs[i] * values[i]. `values` is row-major with `dim` columns.
RealVec weighted_sum(std::span<const float> probs, std::span<const float> values,
                     std::size_t dim);
RealVec weighted_sum(std::span<const float> probs, std::span<const RealVec> values);

// True when every entry is >= 0 and the sum lies within `tol` of 1.
bool is_prob_row(std::span<const float> row, float tol = kProbSumTolerance);

}  // namespace saddlekv
