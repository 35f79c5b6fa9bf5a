#include "saddlekv/kv_cache.hpp"

#include <algorithm>
#include <ostream>
#include <string>

#include "saddlekv/errors.hpp"

namespace saddlekv {

std::string_view to_string(PositionMode mode) {
  return mode == PositionMode::original ? "original" : "cache_relative";
}

PositionMode parse_position_mode(std::string_view name) {
  if (name == "cache_relative" || name == "cache-relative") return PositionMode::cache_relative;
  if (name == "original") return PositionMode::original;
  throw DomainError("unknown position mode: " + std::string(name));
}

void validate_kept(std::span<const std::size_t> kept, std::size_t n) {
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (kept[i] >= n) {
      throw DomainError("kept index " + std::to_string(kept[i]) + " out of range [0, " +
                        std::to_string(n) + ")");
    }
    if (i > 0 && kept[i] <= kept[i - 1]) {
      throw DomainError("kept indices must be unique and ascending");
    }
  }
}

KvCache::KvCache(std::size_t layers, std::size_t heads, std::size_t head_dim)
    : heads_(heads), head_dim_(head_dim) {
  if (layers == 0 || heads == 0 || head_dim == 0) {
    throw DomainError("KvCache: layers, heads and head_dim must be positive");
  }
  if (head_dim % 2 != 0) throw DomainError("KvCache: head_dim must be even");
  layers_.resize(layers);
  for (auto& l : layers_) {
    l.keys.resize(heads);
    l.values.resize(heads);
  }
}

const KvCache::Layer& KvCache::layer_at(std::size_t layer) const {
  if (layer >= layers_.size()) throw DomainError("KvCache: layer out of range");
  return layers_[layer];
}

KvCache::Layer& KvCache::layer_at(std::size_t layer) {
  if (layer >= layers_.size()) throw DomainError("KvCache: layer out of range");
  return layers_[layer];
}

std::size_t KvCache::size(std::size_t layer) const { return layer_at(layer).meta.size(); }

bool KvCache::empty() const noexcept {
  for (const auto& l : layers_) {
    if (!l.meta.empty()) return false;
  }
  return true;
}

void KvCache::push_meta(Layer& l, const TokenMeta& meta) {
  if (!l.meta.empty() && meta.original_position <= l.meta.back().original_position) {
    throw DomainError("KvCache: original_position must be strictly increasing");
  }
  l.meta.push_back(meta);
}

void KvCache::append(std::size_t layer, std::span<const RealVec> keys,
                     std::span<const RealVec> values, const TokenMeta& meta) {
  Layer& l = layer_at(layer);
  if (keys.size() != heads_ || values.size() != heads_) {
    throw DomainError("KvCache::append: expected one key/value pair per head");
  }
  for (std::size_t h = 0; h < heads_; ++h) {
    if (keys[h].size() != head_dim_ || values[h].size() != head_dim_) {
      throw DomainError("KvCache::append: key/value dimension mismatch");
    }
  }
  push_meta(l, meta);
  for (std::size_t h = 0; h < heads_; ++h) {
    l.keys[h].insert(l.keys[h].end(), keys[h].begin(), keys[h].end());
    l.values[h].insert(l.values[h].end(), values[h].begin(), values[h].end());
  }
}

void KvCache::append_packed(std::size_t layer, std::span<const float> keys,
                            std::span<const float> values, const TokenMeta& meta) {
  Layer& l = layer_at(layer);
  if (keys.size() != heads_ * head_dim_ || values.size() != heads_ * head_dim_) {
    throw DomainError("KvCache::append: packed key/value size mismatch");
  }
  push_meta(l, meta);
  for (std::size_t h = 0; h < heads_; ++h) {
    const auto k = keys.subspan(h * head_dim_, head_dim_);
    const auto v = values.subspan(h * head_dim_, head_dim_);
    l.keys[h].insert(l.keys[h].end(), k.begin(), k.end());
    l.values[h].insert(l.values[h].end(), v.begin(), v.end());
  }
}

void KvCache::gather_keep(std::size_t layer, std::span<const std::size_t> kept) {
  Layer& l = layer_at(layer);
  validate_kept(kept, l.meta.size());
  if (kept.size() == l.meta.size()) return;  // strictly ascending + full size => identity

  // kept is ascending, so kept[i] >= i and forward in-place compaction is safe.
  auto compact = [&](std::vector<float>& rows) {
    for (std::size_t i = 0; i < kept.size(); ++i) {
      if (kept[i] == i) continue;
      std::copy_n(rows.begin() + static_cast<std::ptrdiff_t>(kept[i] * head_dim_), head_dim_,
                  rows.begin() + static_cast<std::ptrdiff_t>(i * head_dim_));
    }
    rows.resize(kept.size() * head_dim_);
    rows.shrink_to_fit();
  };
  for (std::size_t h = 0; h < heads_; ++h) {
    compact(l.keys[h]);
    compact(l.values[h]);
  }
  for (std::size_t i = 0; i < kept.size(); ++i) l.meta[i] = l.meta[kept[i]];
  l.meta.resize(kept.size());
}

std::vector<std::uint64_t> KvCache::positions_for(std::size_t layer, PositionMode mode) const {
  const Layer& l = layer_at(layer);
  std::vector<std::uint64_t> out(l.meta.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = mode == PositionMode::original ? l.meta[i].original_position : i;
  }
  return out;
}

std::uint64_t KvCache::memory_bytes() const noexcept {
  std::uint64_t entries = 0;
  for (const auto& l : layers_) entries += l.meta.size();
  return 2ULL * entries * head_dim_ * heads_ * sizeof(float);
}

std::span<const float> KvCache::keys(std::size_t layer, std::size_t head) const {
  const Layer& l = layer_at(layer);
  if (head >= heads_) throw DomainError("KvCache: head out of range");
  return l.keys[head];
}

std::span<const float> KvCache::values(std::size_t layer, std::size_t head) const {
  const Layer& l = layer_at(layer);
  if (head >= heads_) throw DomainError("KvCache: head out of range");
  return l.values[head];
}

std::span<const float> KvCache::key(std::size_t layer, std::size_t head,
                                    std::size_t slot) const {
  if (slot >= size(layer)) throw DomainError("KvCache: slot out of range");
  return keys(layer, head).subspan(slot * head_dim_, head_dim_);
}

std::span<const float> KvCache::value(std::size_t layer, std::size_t head,
                                      std::size_t slot) const {
  if (slot >= size(layer)) throw DomainError("KvCache: slot out of range");
  return values(layer, head).subspan(slot * head_dim_, head_dim_);
}

std::span<const TokenMeta> KvCache::meta(std::size_t layer) const {
  return layer_at(layer).meta;
}

void KvCache::dump(std::ostream& os) const {
  os << "KvCache layers=" << layers() << " heads=" << heads_ << " head_dim=" << head_dim_
     << " bytes=" << memory_bytes() << '\n';
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const Layer& l = layers_[li];
    os << "  layer " << li << " n=" << l.meta.size() << " positions:";
    for (const auto& m : l.meta) os << ' ' << m.original_position;
    os << '\n';
  }
}

}  // namespace saddlekv
