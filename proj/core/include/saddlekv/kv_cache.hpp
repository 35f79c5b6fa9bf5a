#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "saddlekv/tensor.hpp"

namespace saddlekv {

enum class Modality : std::uint8_t { text = 0, visual = 1 };

// How rotary positions are assigned to cached keys.
//  cache_relative: slot index 0..n-1 (positions roll after eviction)
//  original:       position of the token in the uncompressed stream
enum class PositionMode { cache_relative, original };

std::string_view to_string(PositionMode mode);
PositionMode parse_position_mode(std::string_view name);

struct TokenMeta {
  std::uint64_t original_position = 0;
  Modality modality = Modality::text;
  std::uint32_t round_id = 0;

  friend bool operator==(const TokenMeta&, const TokenMeta&) = default;
};

// Throws DomainError unless `kept` is strictly ascending and within [0, n).
void validate_kept(std::span<const std::size_t> kept, std::size_t n);

// Per-layer, per-head key/value store. Every head of a layer holds the same
// token set (selection is shared across heads), so token metadata is kept
// once per layer. Layers may hold different token sets.
class KvCache {
 public:
  KvCache(std::size_t layers, std::size_t heads, std::size_t head_dim);

  std::size_t layers() const noexcept { return layers_.size(); }
  std::size_t heads() const noexcept { return heads_; }
  std::size_t head_dim() const noexcept { return head_dim_; }

  // Entry count n of one layer.
  std::size_t size(std::size_t layer) const;
  bool empty() const noexcept;

  // One key and one value per head. `meta.original_position` must exceed every
  // position already stored in the layer.
  void append(std::size_t layer, std::span<const RealVec> keys,
              std::span<const RealVec> values, const TokenMeta& meta);
  // Same, with all heads packed head-major (heads * head_dim floats each).
  void append_packed(std::size_t layer, std::span<const float> keys,
                     std::span<const float> values, const TokenMeta& meta);

  // Compress the layer to exactly the `kept` slots (strictly ascending),
  // preserving temporal order. Dropped entries are gone for good.
  void gather_keep(std::size_t layer, std::span<const std::size_t> kept);

  std::vector<std::uint64_t> positions_for(std::size_t layer, PositionMode mode) const;

  // 2 (K and V) * entries * head_dim * heads * sizeof(float), summed over layers.
  std::uint64_t memory_bytes() const noexcept;

  // Row-major [n x head_dim] views.
  std::span<const float> keys(std::size_t layer, std::size_t head) const;
  std::span<const float> values(std::size_t layer, std::size_t head) const;
  std::span<const float> key(std::size_t layer, std::size_t head, std::size_t slot) const;
  std::span<const float> value(std::size_t layer, std::size_t head, std::size_t slot) const;
  std::span<const TokenMeta> meta(std::size_t layer) const;

  // Human-readable debug snapshot; the format is not stable.
  void dump(std::ostream& os) const;

 private:
  struct Layer {
    std::vector<std::vector<float>> keys;    // per head, n * head_dim
    std::vector<std::vector<float>> values;  // per head, n * head_dim
    std::vector<TokenMeta> meta;
  };

  const Layer& layer_at(std::size_t layer) const;
  Layer& layer_at(std::size_t layer);
  void push_meta(Layer& l, const TokenMeta& meta);

  std::size_t heads_;
  std::size_t head_dim_;
  std::vector<Layer> layers_;
};

}  // namespace saddlekv
