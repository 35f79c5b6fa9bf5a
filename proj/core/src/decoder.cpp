#include "saddlekv/decoder.hpp"

#include <cmath>

#include "saddlekv/errors.hpp"
#include "saddlekv/rng.hpp"

namespace saddlekv {

void TinyDecoderSpec::validate() const {
  if (layers == 0 || heads == 0 || head_dim == 0) {
    throw DomainError("TinyDecoderSpec: layers, heads and head_dim must be positive");
  }
  if (head_dim % 2 != 0) throw DomainError("TinyDecoderSpec: head_dim must be even");
  if (!(rope_base > 1.0)) throw DomainError("TinyDecoderSpec: rope_base must be > 1");
}

TinyDecoder::TinyDecoder(const TinyDecoderSpec& spec) : spec_(spec) {
  spec_.validate();
  const std::size_t dim = spec_.model_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec_.head_dim));
  Rng rng(splitmix64(spec_.seed));
  auto draw = [&](std::vector<float>& w) {
    w.resize(dim * dim);
    for (float& x : w) x = static_cast<float>(uniform(rng, -0.5, 0.5) * scale);
  };
  layers_.resize(spec_.layers);
  for (auto& l : layers_) {
    draw(l.q);
    draw(l.k);
    draw(l.v);
  }
}

RealVec TinyDecoder::embed(std::int64_t token_id) const {
  const std::uint64_t base = hash_combine(spec_.seed ^ 0x656d626564ULL,
                                          static_cast<std::uint64_t>(token_id));
  RealVec x(spec_.model_dim());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const std::uint64_t h = hash_combine(base, j);
    x[j] = static_cast<float>(static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0);
  }
  return x;
}

std::span<const float> TinyDecoder::wq(std::size_t layer) const { return layers_.at(layer).q; }
std::span<const float> TinyDecoder::wk(std::size_t layer) const { return layers_.at(layer).k; }
std::span<const float> TinyDecoder::wv(std::size_t layer) const { return layers_.at(layer).v; }

RealVec TinyDecoder::matvec(std::span<const float> w, std::span<const float> x) const {
  const std::size_t dim = spec_.model_dim();
  if (x.size() != dim) throw DomainError("TinyDecoder: input dimension mismatch");
  RealVec out(dim, 0.0F);
  for (std::size_t r = 0; r < dim; ++r) {
    const float* row = w.data() + r * dim;
    float acc = 0.0F;
    for (std::size_t c = 0; c < dim; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
  return out;
}

RealVec TinyDecoder::project_q(std::size_t layer, std::span<const float> x) const {
  return matvec(wq(layer), x);
}
RealVec TinyDecoder::project_k(std::size_t layer, std::span<const float> x) const {
  return matvec(wk(layer), x);
}
RealVec TinyDecoder::project_v(std::size_t layer, std::span<const float> x) const {
  return matvec(wv(layer), x);
}

}  // namespace saddlekv
