#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "saddlekv/errors.hpp"
#include "saddlekv/rng.hpp"
#include "saddlekv/trace.hpp"

using namespace saddlekv;

namespace {

std::string encode(const Trace& t) {
  std::ostringstream os(std::ios::binary);
  write_trace(t.header, t.events, os);
  return os.str();
}

Trace decode(const std::string& bytes, Validation v = Validation::strict) {
  std::istringstream is(bytes, std::ios::binary);
  return read_trace(is, v);
}

ProbRow random_row(Rng& rng, std::size_t n) {
  ProbRow row(n);
  double sum = 0.0;
  for (float& x : row) {
    x = static_cast<float>(uniform01(rng) + 1e-3);
    sum += x;
  }
  for (float& x : row) x = static_cast<float>(x / sum);
  return row;
}

// Random well-formed stream: row lengths never shrink within a round.
Trace random_trace(Rng& rng, std::size_t events, std::uint32_t layers) {
  Trace t;
  t.header.layers = layers;
  t.header.heads = 1 + static_cast<std::uint32_t>(uniform_index(rng, 8));
  std::vector<std::uint32_t> len(layers, 1);
  std::uint32_t round = 0;
  for (std::size_t i = 0; i < events; ++i) {
    switch (uniform_index(rng, 4)) {
      case 0:
        t.events.push_back(RoundStart{round++, static_cast<std::uint32_t>(uniform_index(rng, 99))});
        std::fill(len.begin(), len.end(), 1);
        break;
      case 1: {
        Tokens tk;
        for (std::size_t j = uniform_index(rng, 10); j > 0; --j) {
          tk.modality.push_back(uniform01(rng) < 0.5 ? Modality::text : Modality::visual);
        }
        t.events.push_back(tk);
        break;
      }
      case 2: {
        const auto layer = static_cast<std::uint32_t>(uniform_index(rng, layers));
        len[layer] += static_cast<std::uint32_t>(uniform_index(rng, 3));
        t.events.push_back(AttnRow{layer, random_row(rng, len[layer])});
        break;
      }
      default: {
        SaddleTruth st{round, {}};
        for (std::size_t j = uniform_index(rng, 6); j > 0; --j) {
          st.columns.push_back(static_cast<std::uint32_t>(uniform_index(rng, 1000)));
        }
        t.events.push_back(st);
      }
    }
  }
  return t;
}

}  // namespace

TEST(TraceFormat, HeaderIsTwentyBytes) {
  Trace t;
  const std::string bytes = encode(t);
  ASSERT_EQ(bytes.size(), 20U);
  EXPECT_EQ(bytes.substr(0, 4), "IMT1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1U);
  EXPECT_EQ(decode(bytes), t);
}

TEST(TraceFormat, LittleEndianLayout) {
  Trace t;
  t.header.layers = 0x01020304;
  t.events.push_back(AttnRow{0, {1.0F}});
  const std::string b = encode(t);
  ASSERT_EQ(b.size(), 20U + 1 + 4 + 4 + 4);
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 0x04);
  EXPECT_EQ(static_cast<unsigned char>(b[11]), 0x01);
  EXPECT_EQ(static_cast<unsigned char>(b[20]), 3U);  // ATTN_ROW tag
  float one = 0.0F;
  std::memcpy(&one, b.data() + 29, 4);
  EXPECT_EQ(one, 1.0F);
}

TEST(TraceFormat, WriteThenReadIsIdentity) {
  Trace t;
  t.header.layers = 2;
  t.events = {RoundStart{0, 3},        Tokens{{Modality::text, Modality::visual, Modality::text}},
              SaddleTruth{0, {1, 2}},  AttnRow{0, {1.0F}},
              AttnRow{1, {0.25F, 0.75F}}};
  EXPECT_EQ(decode(encode(t)), t);
}

TEST(TraceFormat, RandomRoundTripProperty) {
  Rng rng(51);
  for (int t = 0; t < 20; ++t) {
    const Trace tr = random_trace(rng, 1000, 1 + static_cast<std::uint32_t>(uniform_index(rng, 3)));
    ASSERT_EQ(decode(encode(tr)), tr);
  }
}

TEST(TraceFormat, ByteCountMatchesStream) {
  Rng rng(52);
  const Trace tr = random_trace(rng, 200, 2);
  std::ostringstream os(std::ios::binary);
  const auto n = write_trace(tr.header, tr.events, os);
  EXPECT_EQ(n, os.str().size());
}

TEST(TraceReader, BadMagicSurfacesNoEvents) {
  Trace t;
  t.events.push_back(RoundStart{0, 1});
  std::string b = encode(t);
  b[0] = 'X';
  std::istringstream is(b, std::ios::binary);
  try {
    TraceReader r(is);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0U);
  }
}

TEST(TraceReader, BadVersion) {
  std::string b = encode(Trace{});
  b[4] = 2;
  EXPECT_THROW(decode(b), ParseError);
}

TEST(TraceReader, TruncatedRowNamesOffset) {
  Trace t;
  t.events.push_back(AttnRow{0, {0.5F, 0.5F}});
  std::string b = encode(t);
  b.resize(b.size() - 2);
  try {
    decode(b);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 29U);  // start of the probability payload
    EXPECT_NE(std::string(e.what()).find("offset 29"), std::string::npos);
  }
}

TEST(TraceReader, TruncatedHeader) {
  EXPECT_THROW(decode("IMT1\x01"), ParseError);
  EXPECT_THROW(decode(""), ParseError);
}

TEST(TraceReader, StrictRejectsRowSummingToPointNine) {
  Trace t;
  t.events.push_back(AttnRow{0, {0.45F, 0.45F}});
  const std::string b = encode(t);
  EXPECT_THROW(decode(b, Validation::strict), ValidationError);
  EXPECT_NO_THROW(decode(b, Validation::lenient));
}

TEST(TraceReader, StrictRejectsNegativesAndShrinkingRows) {
  Trace neg;
  neg.events.push_back(AttnRow{0, {1.5F, -0.5F}});
  EXPECT_THROW(decode(encode(neg)), ValidationError);

  Trace shrink;
  shrink.events = {AttnRow{0, {0.5F, 0.5F}}, AttnRow{0, {1.0F}}};
  EXPECT_THROW(decode(encode(shrink)), ValidationError);

  Trace new_round;
  new_round.events = {AttnRow{0, {0.5F, 0.5F}}, RoundStart{1, 1}, AttnRow{0, {1.0F}}};
  EXPECT_NO_THROW(decode(encode(new_round)));
}

TEST(TraceReader, EmptyBodyIsEmptyIterator) {
  const std::string b = encode(Trace{});
  std::istringstream is(b, std::ios::binary);
  TraceReader r(is);
  EXPECT_FALSE(r.next().has_value());
  EXPECT_FALSE(r.next().has_value());
}

TEST(TraceReader, UnknownTagAndBadModality) {
  std::string b = encode(Trace{});
  EXPECT_THROW(decode(b + '\x09'), ParseError);
  Trace t;
  t.events.push_back(Tokens{{Modality::text}});
  std::string tok = encode(t);
  tok.back() = '\x07';
  EXPECT_THROW(decode(tok), ParseError);
}

TEST(TraceReader, LayerOutOfRange) {
  Trace t;
  t.header.layers = 3;
  t.events.push_back(AttnRow{2, {1.0F}});
  std::string b = encode(t);
  b[8] = 2;  // header now claims 2 layers
  EXPECT_THROW(decode(b), ParseError);
}

TEST(TraceReader, HugeDeclaredLengthFailsCleanly) {
  std::string b = encode(Trace{});
  b += '\x04';
  b += std::string("\x00\x00\x00\x00", 4);
  b += std::string("\xff\xff\xff\x7f", 4);
  EXPECT_THROW(decode(b), ParseError);
}

TEST(TraceFile, MissingFileIsIoError) {
  EXPECT_THROW(read_trace_file("/nonexistent/dir/x.imtrace"), IoError);
  EXPECT_THROW(write_trace_file("/nonexistent/dir/x.imtrace", Trace{}), IoError);
}
