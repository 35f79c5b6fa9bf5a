#include "saddlekv/trace.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "saddlekv/errors.hpp"

namespace saddlekv {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::uint32_t load_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > UINT32_MAX) throw DomainError(std::string("trace: ") + what + " exceeds u32");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

// ---------------------------------------------------------------------------
// Writer

TraceWriter::TraceWriter(std::ostream& sink, const TraceHeader& header) : sink_(sink) {
  sink_.write(kTraceMagic.data(), kTraceMagic.size());
  bytes_ += kTraceMagic.size();
  put_u32(header.version);
  put_u32(header.layers);
  put_u32(header.heads);
  put_u32(header.flags);
  check();
}

void TraceWriter::put_u8(std::uint8_t v) {
  sink_.put(static_cast<char>(v));
  bytes_ += 1;
}

void TraceWriter::put_u32(std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                     static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  sink_.write(b, 4);
  bytes_ += 4;
}

void TraceWriter::put_f32(float v) { put_u32(std::bit_cast<std::uint32_t>(v)); }

void TraceWriter::check() {
  if (!sink_) throw IoError("trace: write to sink failed");
}

void TraceWriter::write(const TraceEvent& event) {
  std::visit(Overloaded{
                 [&](const RoundStart& e) {
                   put_u8(static_cast<std::uint8_t>(EventTag::round_start));
                   put_u32(e.round_id);
                   put_u32(e.prompt_len);
                 },
                 [&](const Tokens& e) {
                   put_u8(static_cast<std::uint8_t>(EventTag::tokens));
                   put_u32(checked_u32(e.modality.size(), "token count"));
                   for (Modality m : e.modality) put_u8(static_cast<std::uint8_t>(m));
                 },
                 [&](const AttnRow& e) {
                   put_u8(static_cast<std::uint8_t>(EventTag::attn_row));
                   put_u32(e.layer);
                   put_u32(checked_u32(e.probs.size(), "row length"));
                   for (float p : e.probs) put_f32(p);
                 },
                 [&](const SaddleTruth& e) {
                   put_u8(static_cast<std::uint8_t>(EventTag::saddle_truth));
                   put_u32(e.round_id);
                   put_u32(checked_u32(e.columns.size(), "saddle count"));
                   for (std::uint32_t c : e.columns) put_u32(c);
                 },
             },
             event);
  check();
}

std::uint64_t write_trace(const TraceHeader& header, std::span<const TraceEvent> events,
                          std::ostream& sink) {
  TraceWriter w(sink, header);
  for (const auto& e : events) w.write(e);
  sink.flush();
  if (!sink) throw IoError("trace: flush failed");
  return w.bytes_written();
}

// ---------------------------------------------------------------------------
// Reader

TraceReader::TraceReader(std::istream& source, Validation validation)
    : source_(source), validation_(validation) {
  unsigned char raw[kTraceHeaderBytes];
  if (!read_bytes(raw, sizeof raw)) {
    throw ParseError("trace: truncated header", offset_);
  }
  if (std::memcmp(raw, kTraceMagic.data(), kTraceMagic.size()) != 0) {
    throw ParseError("trace: bad magic (expected IMT1)", 0);
  }
  header_.version = load_u32(raw + 4);
  header_.layers = load_u32(raw + 8);
  header_.heads = load_u32(raw + 12);
  header_.flags = load_u32(raw + 16);
  if (header_.version != kTraceVersion) {
    throw ParseError("trace: unsupported version " + std::to_string(header_.version), 4);
  }
  if (header_.layers == 0 || header_.heads == 0) {
    throw ParseError("trace: layers and heads must be positive", 8);
  }
  last_n_.assign(header_.layers, 0);
}

bool TraceReader::read_bytes(void* dst, std::size_t count) {
  source_.read(static_cast<char*>(dst), static_cast<std::streamsize>(count));
  const auto got = static_cast<std::size_t>(source_.gcount());
  offset_ += got;
  return got == count;
}

void TraceReader::read_exact(void* dst, std::size_t count, const char* what) {
  const std::uint64_t start = offset_;
  if (!read_bytes(dst, count)) {
    throw ParseError(std::string("trace: truncated ") + what, start);
  }
}

std::uint32_t TraceReader::get_u32(const char* what) {
  unsigned char b[4];
  read_exact(b, 4, what);
  return load_u32(b);
}

std::optional<TraceEvent> TraceReader::next() {
  const std::uint64_t event_offset = offset_;
  unsigned char tag = 0;
  source_.read(reinterpret_cast<char*>(&tag), 1);
  if (source_.gcount() == 0) return std::nullopt;
  offset_ += 1;

  switch (static_cast<EventTag>(tag)) {
    case EventTag::round_start: {
      RoundStart e;
      e.round_id = get_u32("ROUND_START");
      e.prompt_len = get_u32("ROUND_START");
      std::fill(last_n_.begin(), last_n_.end(), 0);
      return e;
    }
    case EventTag::tokens: {
      const std::uint32_t count = get_u32("TOKENS");
      Tokens e;
      for (std::uint32_t i = 0; i < count; ++i) {
        unsigned char m = 0;
        const std::uint64_t at = offset_;
        read_exact(&m, 1, "TOKENS");
        if (m > 1) throw ParseError("trace: invalid modality byte", at);
        e.modality.push_back(static_cast<Modality>(m));
      }
      return e;
    }
    case EventTag::attn_row: {
      AttnRow e;
      e.layer = get_u32("ATTN_ROW");
      const std::uint32_t n = get_u32("ATTN_ROW");
      if (e.layer >= header_.layers) {
        throw ParseError("trace: ATTN_ROW layer out of range", event_offset);
      }
      // Chunked so a corrupted length cannot trigger a huge up-front allocation.
      constexpr std::uint32_t kChunk = 4096;
      unsigned char raw[kChunk * 4];
      for (std::uint32_t done = 0; done < n;) {
        const std::uint32_t take = std::min(kChunk, n - done);
        read_exact(raw, static_cast<std::size_t>(take) * 4, "ATTN_ROW");
        for (std::uint32_t i = 0; i < take; ++i) {
          e.probs.push_back(std::bit_cast<float>(load_u32(raw + 4 * i)));
        }
        done += take;
      }
      if (validation_ == Validation::strict) {
        double sum = 0.0;
        for (float p : e.probs) {
          if (!std::isfinite(p) || p < 0.0F) {
            throw ValidationError("trace: ATTN_ROW has a negative or non-finite entry",
                                  event_offset);
          }
          sum += p;
        }
        if (n == 0 || std::abs(sum - 1.0) > kTraceRowTolerance) {
          throw ValidationError("trace: ATTN_ROW sums to " + std::to_string(sum) +
                                    ", expected 1 within 1e-3",
                                event_offset);
        }
        if (n < last_n_[e.layer]) {
          throw ValidationError("trace: ATTN_ROW length decreased within a round",
                                event_offset);
        }
        last_n_[e.layer] = n;
      }
      return e;
    }
    case EventTag::saddle_truth: {
      SaddleTruth e;
      e.round_id = get_u32("SADDLE_TRUTH");
      const std::uint32_t count = get_u32("SADDLE_TRUTH");
      e.columns.reserve(std::min<std::uint32_t>(count, 4096));
      for (std::uint32_t i = 0; i < count; ++i) e.columns.push_back(get_u32("SADDLE_TRUTH"));
      return e;
    }
  }
  throw ParseError("trace: unknown event tag " + std::to_string(tag), event_offset);
}

Trace read_trace(std::istream& source, Validation validation) {
  TraceReader reader(source, validation);
  Trace t;
  t.header = reader.header();
  while (auto e = reader.next()) t.events.push_back(std::move(*e));
  return t;
}

Trace read_trace_file(const std::filesystem::path& path, Validation validation) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open trace file: " + path.string());
  return read_trace(in, validation);
}

std::uint64_t write_trace_file(const std::filesystem::path& path, const Trace& trace) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open trace file for writing: " + path.string());
  return write_trace(trace.header, trace.events, out);
}

}  // namespace saddlekv
