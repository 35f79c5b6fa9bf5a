#pragma once

// .imtrace: append-only little-endian attention trace.
//
//   header   "IMT1" | version u32 (=1) | layers u32 | heads u32 | flags u32   (20 bytes)
//   event    tag u8 | payload
//     1 ROUND_START   round_id u32 | prompt_len u32
//     2 TOKENS        count u32 | count x modality u8 (0 text, 1 visual)
//     3 ATTN_ROW      layer u32 | n u32 | n x f32
//     4 SADDLE_TRUTH  round_id u32 | count u32 | count x column u32
//
// flags bit 0: rows are head-aggregated.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "saddlekv/kv_cache.hpp"

namespace saddlekv {

inline constexpr std::array<char, 4> kTraceMagic = {'I', 'M', 'T', '1'};
inline constexpr std::uint32_t kTraceVersion = 1;
inline constexpr std::uint32_t kFlagHeadAggregated = 1U << 0;
inline constexpr std::size_t kTraceHeaderBytes = 20;
inline constexpr float kTraceRowTolerance = 1e-3F;

enum class EventTag : std::uint8_t {
  round_start = 1,
  tokens = 2,
  attn_row = 3,
  saddle_truth = 4,
};

struct TraceHeader {
  std::uint32_t version = kTraceVersion;
  std::uint32_t layers = 1;
  std::uint32_t heads = 1;
  std::uint32_t flags = kFlagHeadAggregated;

  friend bool operator==(const TraceHeader&, const TraceHeader&) = default;
};

struct RoundStart {
  std::uint32_t round_id = 0;
  std::uint32_t prompt_len = 0;
  friend bool operator==(const RoundStart&, const RoundStart&) = default;
};

struct Tokens {
  std::vector<Modality> modality;  // count == modality.size()
  friend bool operator==(const Tokens&, const Tokens&) = default;
};

struct AttnRow {
  std::uint32_t layer = 0;
  std::vector<float> probs;  // n == probs.size()
  friend bool operator==(const AttnRow&, const AttnRow&) = default;
};

// Ground-truth active saddle columns (stream positions). Never shown to policies.
struct SaddleTruth {
  std::uint32_t round_id = 0;
  std::vector<std::uint32_t> columns;
  friend bool operator==(const SaddleTruth&, const SaddleTruth&) = default;
};

using TraceEvent = std::variant<RoundStart, Tokens, AttnRow, SaddleTruth>;

struct Trace {
  TraceHeader header;
  std::vector<TraceEvent> events;
  friend bool operator==(const Trace&, const Trace&) = default;
};

class TraceWriter {
 public:
  // Writes the header immediately.
  TraceWriter(std::ostream& sink, const TraceHeader& header);

  void write(const TraceEvent& event);
  std::uint64_t bytes_written() const noexcept { return bytes_; }

 private:
  void put_u8(std::uint8_t v);
  void put_u32(std::uint32_t v);
  void put_f32(float v);
  void check();

  std::ostream& sink_;
  std::uint64_t bytes_ = 0;
};

// Returns the total byte count (header included). Throws IoError on sink failure.
std::uint64_t write_trace(const TraceHeader& header, std::span<const TraceEvent> events,
                          std::ostream& sink);

enum class Validation {
  strict,   // rows must be distributions (±1e-3), n non-decreasing per layer in a round
  lenient,  // structural checks only
};

// Streaming decoder. The constructor reads and checks the header, so a bad
// magic or version fails before any event is produced.
class TraceReader {
 public:
  explicit TraceReader(std::istream& source, Validation validation = Validation::strict);

  const TraceHeader& header() const noexcept { return header_; }
  // Next event, or nullopt at a clean end of stream. Throws ParseError
  // (or ValidationError) naming the byte offset.
  std::optional<TraceEvent> next();
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  bool read_bytes(void* dst, std::size_t count);
  void read_exact(void* dst, std::size_t count, const char* what);
  std::uint32_t get_u32(const char* what);

  std::istream& source_;
  Validation validation_;
  TraceHeader header_;
  std::uint64_t offset_ = 0;
  std::vector<std::uint32_t> last_n_;  // per layer, reset at ROUND_START
};

Trace read_trace(std::istream& source, Validation validation = Validation::strict);

Trace read_trace_file(const std::filesystem::path& path,
                      Validation validation = Validation::strict);
std::uint64_t write_trace_file(const std::filesystem::path& path, const Trace& trace);

}  // namespace saddlekv
