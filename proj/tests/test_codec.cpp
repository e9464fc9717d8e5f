#include <gtest/gtest.h>

#include "xtok/codec.hpp"
#include "xtok/fixtures.hpp"
#include "xtok/oracle.hpp"

namespace xtok {
namespace {

// Token ids in the two-merge vocabulary.
constexpr TokenId A = 1, B = 2, AB = 3, ABA = 4;

class CodecTwoMerge : public ::testing::Test {
 protected:
  BpeVocab v = fixtures::two_merge_vocab();
  SubsetView v0{v, 0}, v1{v, 1}, v2{v, 2};
};

TEST_F(CodecTwoMerge, MergeStepCombinesPairs) {
  EXPECT_EQ(merge_step(Encoding{{A, B, A}, 0}, v.merge(1)), (Encoding{{AB, A}, 1}));
  EXPECT_EQ(merge_step(Encoding{{B, B}, 0}, v.merge(1)), (Encoding{{B, B}, 1}));
  EXPECT_EQ(merge_step(Encoding{{A, B, A, B}, 0}, v.merge(1)), (Encoding{{AB, AB}, 1}));
}

TEST_F(CodecTwoMerge, MergeStepSkipsConsumedPositions) {
  // With rule a.a, "aaa" merges once from the left.
  const auto w = build_vocab({"a"}, {{1, 1}});
  EXPECT_EQ(merge_step(Encoding{{1, 1, 1}, 0}, w.merge(1)).ids, (std::vector<TokenId>{2, 1}));
}

TEST_F(CodecTwoMerge, MergeStepChecksLevel) {
  EXPECT_THROW(merge_step(Encoding{{A}, 1}, v.merge(1)), Error);
  EXPECT_THROW(demerge_step(Encoding{{A}, 0}, v.merge(1)), Error);
}

TEST_F(CodecTwoMerge, DemergeStepSplitsResult) {
  EXPECT_EQ(demerge_step(Encoding{{AB, A}, 1}, v.merge(1)), (Encoding{{A, B, A}, 0}));
  EXPECT_EQ(demerge_step(Encoding{{B}, 1}, v.merge(1)), (Encoding{{B}, 0}));
}

TEST_F(CodecTwoMerge, EncodeExamples) {
  EXPECT_EQ(encode_text("aab", v2).ids, (std::vector<TokenId>{A, AB}));
  EXPECT_EQ(encode_text("aabaa", v2).ids, (std::vector<TokenId>{A, ABA, A}));
  EXPECT_TRUE(encode_text("", v2).empty());
  EXPECT_EQ(encode_text("aab", v2).level, 2u);
  EXPECT_THROW(encode(SymbolString{7}, v2), Error);
  EXPECT_THROW(encode_text("c", v2), Error);
}

TEST_F(CodecTwoMerge, DecodeExamples) {
  EXPECT_EQ(decode_text(Encoding{{A, AB}, 2}, v2), "aab");
  EXPECT_TRUE(decode(Encoding{{}, 2}, v2).empty());
  EXPECT_EQ(decode_text(Encoding{{A, 0}, 2}, v2, "$"), "a$");
  try {
    decode(Encoding{{A}, 1}, v2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::LevelMismatch);
  }
}

TEST_F(CodecTwoMerge, RelativeEncodeDecode) {
  EXPECT_EQ(relative_encode(Encoding{{A, B, A}, 0}, v, 2), (Encoding{{ABA}, 2}));
  EXPECT_EQ(relative_encode(Encoding{{A, AB}, 2}, v, 2), (Encoding{{A, AB}, 2}));
  EXPECT_EQ(relative_decode(Encoding{{ABA}, 2}, v, 1), (Encoding{{AB, A}, 1}));
  EXPECT_EQ(relative_decode(Encoding{{A, AB}, 2}, v, 1), (Encoding{{A, AB}, 1}));
  EXPECT_EQ(relative_decode(Encoding{{A, AB}, 2}, v, 2), (Encoding{{A, AB}, 2}));
  EXPECT_THROW(relative_encode(Encoding{{A}, 2}, v, 1), Error);
  EXPECT_THROW(relative_encode(Encoding{{A}, 0}, v, 3), Error);
  EXPECT_THROW(relative_decode(Encoding{{A}, 1}, v, 2), Error);
}

TEST_F(CodecTwoMerge, DecomposeToken) {
  EXPECT_EQ(decompose_token(v, ABA, 1), (std::vector<TokenId>{AB, A}));
  EXPECT_EQ(decompose_token(v, ABA, 0), (std::vector<TokenId>{A, B, A}));
  EXPECT_EQ(decompose_token(v, A, 0), (std::vector<TokenId>{A}));
}

TEST(Codec, ValidityOnSingleMergeVocab) {
  const auto v = fixtures::single_merge_vocab();
  const SubsetView vb(v, 1);
  EXPECT_FALSE(is_valid(Encoding{{B, A, B}, 1}, vb));
  EXPECT_TRUE(is_valid(Encoding{{B, AB}, 1}, vb));
  EXPECT_EQ(encode_text("bab", vb).ids, (std::vector<TokenId>{B, AB}));
  for (TokenId t = 0; t < vb.size(); ++t) EXPECT_TRUE(is_valid(Encoding{{t}, 1}, vb));
  EXPECT_FALSE(is_valid(Encoding{{9}, 1}, vb));
  EXPECT_TRUE(is_valid(Encoding{{}, 1}, vb));
}

TEST(Codec, FormatIds) {
  EXPECT_EQ(format_ids({}), "");
  EXPECT_EQ(format_ids({1, 3}), "1 3");
}

TEST(Codec, EosHelpers) {
  EXPECT_TRUE(ends_with_eos(Encoding{{1, 0}, 0}));
  EXPECT_FALSE(ends_with_eos(Encoding{{}, 0}));
  EXPECT_TRUE(contains_eos(std::vector<TokenId>{0, 1}));
  EXPECT_TRUE(starts_with({1, 2, 3}, {1, 2}));
  EXPECT_FALSE(starts_with({1}, {1, 2}));
}

// Properties, exhaustive over small random vocabularies.

TEST(CodecProperties, RoundTripAndPathIndependence) {
  fixtures::Rng rng(21);
  for (int trial = 0; trial < 12; ++trial) {
    const auto v = fixtures::random_vocab(rng, 3, 6);
    for (const auto& s : fixtures::all_strings(v, 7)) {
      for (std::size_t m = 0; m <= v.num_merges(); ++m) {
        const SubsetView view(v, m);
        const auto e = encode(s, view);
        ASSERT_EQ(decode(e, view), s);
        ASSERT_TRUE(is_valid(e, view));
        for (std::size_t m2 = m; m2 <= v.num_merges(); ++m2) {
          ASSERT_EQ(relative_encode(e, v, m2), encode(s, SubsetView(v, m2)));
        }
        ASSERT_EQ(relative_encode(relative_decode(e, v, 0), v, m), e);
      }
    }
  }
}

TEST(CodecProperties, StepsChangeLengthMonotonically) {
  fixtures::Rng rng(22);
  for (int trial = 0; trial < 300; ++trial) {
    const auto v = fixtures::random_vocab(rng, 3, 6);
    if (v.num_merges() == 0) continue;
    const auto s = fixtures::random_symbols(rng, v, 10);
    Encoding e{s, 0};
    for (std::size_t r = 1; r <= v.num_merges(); ++r) {
      const auto next = merge_step(e, v.merge(r));
      ASSERT_LE(next.size(), e.size());
      ASSERT_GE(demerge_step(next, v.merge(r)).size(), next.size());
      e = next;
    }
  }
}

TEST(CodecProperties, DemergeInvertsMergeWhenResultAbsent) {
  fixtures::Rng rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    const auto v = fixtures::random_vocab(rng, 3, 6);
    for (std::size_t r = 1; r <= v.num_merges(); ++r) {
      const auto s = fixtures::random_symbols(rng, v, 8);
      const auto e = encode(s, SubsetView(v, r - 1));
      ASSERT_EQ(demerge_step(merge_step(e, v.merge(r)), v.merge(r)), e);
    }
  }
}

TEST(CodecProperties, ValidityMatchesNaiveDefinition) {
  fixtures::Rng rng(24);
  for (int trial = 0; trial < 20; ++trial) {
    const auto v = fixtures::random_vocab(rng, 3, 5);
    const oracle::NaiveEncoder ne(v);
    for (std::size_t m = 0; m <= v.num_merges(); ++m) {
      const SubsetView view(v, m);
      // Every id sequence of length <= 3 over the view.
      std::vector<std::vector<TokenId>> seqs{{}};
      for (std::size_t i = 0; i < seqs.size(); ++i) {
        if (seqs[i].size() == 3) continue;
        for (TokenId t = 1; t < view.size(); ++t) {
          auto s = seqs[i];
          s.push_back(t);
          seqs.push_back(std::move(s));
        }
      }
      for (const auto& ids : seqs) {
        ASSERT_EQ(is_valid(Encoding{ids, m}, view), ne.valid(ids, m)) << format_ids(ids);
      }
    }
  }
}

TEST(CodecProperties, EncodeMatchesNaiveEncoder) {
  fixtures::Rng rng(25);
  for (int trial = 0; trial < 500; ++trial) {
    const auto v = fixtures::random_vocab(rng, 3, 6);
    const oracle::NaiveEncoder ne(v);
    const auto s = fixtures::random_symbols(rng, v, 9);
    const std::size_t m = v.num_merges();
    ASSERT_EQ(encode(s, SubsetView(v, m)).ids, ne.encode(s, m));
  }
}

}  // namespace
}  // namespace xtok
