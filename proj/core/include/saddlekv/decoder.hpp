#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "saddlekv/kv_cache.hpp"
#include "saddlekv/tensor.hpp"

namespace saddlekv {

struct TinyDecoderSpec {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t head_dim = 8;
  std::uint64_t seed = 0;
  PositionMode position_mode = PositionMode::cache_relative;
  double rope_base = kDefaultRopeBase;

  std::size_t model_dim() const noexcept { return heads * head_dim; }
  void validate() const;
};

// Deterministic attention-only decoder used to produce real attention maps.
// Weights are drawn from the seed; token embeddings are seeded hashes of the
// token id. Each layer maps the residual stream x (heads * head_dim floats)
// to head-packed q, k, v with dense projections.
class TinyDecoder {
 public:
  explicit TinyDecoder(const TinyDecoderSpec& spec);

  const TinyDecoderSpec& spec() const noexcept { return spec_; }

  RealVec embed(std::int64_t token_id) const;

  // Row-major [model_dim x model_dim] projection weights of one layer.
  std::span<const float> wq(std::size_t layer) const;
  std::span<const float> wk(std::size_t layer) const;
  std::span<const float> wv(std::size_t layer) const;

  RealVec project_q(std::size_t layer, std::span<const float> x) const;
  RealVec project_k(std::size_t layer, std::span<const float> x) const;
  RealVec project_v(std::size_t layer, std::span<const float> x) const;

 private:
  struct LayerWeights {
    std::vector<float> q, k, v;
  };
  RealVec matvec(std::span<const float> w, std::span<const float> x) const;

  TinyDecoderSpec spec_;
  std::vector<LayerWeights> layers_;
};

}  // namespace saddlekv
