#include <gtest/gtest.h>

#include <set>

#include "xtok/cover.hpp"
#include "xtok/fixtures.hpp"
#include "xtok/oracle.hpp"

namespace xtok {
namespace {

constexpr TokenId A = 1, B = 2, AB = 3, ABA = 4;

std::set<std::vector<TokenId>> id_set(const CoverSet& cs) {
  std::set<std::vector<TokenId>> out;
  for (const auto& e : cs.entries) out.insert(e.enc.ids);
  return out;
}

TEST(PrefixIndex, TwoMergeVocab) {
  const auto v = fixtures::two_merge_vocab();
  const auto idx = token_prefix_index(SubsetView(v, 2));
  EXPECT_EQ(idx.lookup_text("ab"), (std::vector<TokenId>{AB, ABA}));
  EXPECT_EQ(idx.lookup_text("a"), (std::vector<TokenId>{A, AB, ABA}));
  EXPECT_TRUE(idx.lookup_text("zz").empty());
  EXPECT_TRUE(idx.lookup_text("bb").empty());
  for (TokenId t = 1; t < v.size(); ++t) {
    const auto& hits = idx.lookup_text(v.token(t).bytes);
    EXPECT_NE(std::find(hits.begin(), hits.end(), t), hits.end());
  }
}

TEST(PrefixIndex, MatchesDirectScan) {
  fixtures::Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const auto v = fixtures::random_vocab(rng, 3, 6);
    const SubsetView full(v, v.num_merges());
    const TokenPrefixIndex idx(full);
    for (const auto& s : fixtures::all_strings(v, 4)) {
      std::vector<TokenId> want;
      for (TokenId t = 0; t < full.size(); ++t) {
        const auto& sym = v.token(t).symbols;
        if (sym.size() >= s.size() && std::equal(s.begin(), s.end(), sym.begin())) want.push_back(t);
      }
      ASSERT_EQ(idx.lookup(s), want);
    }
  }
}

TEST(CoverSearch, WorkedExample) {
  const auto v = fixtures::two_merge_vocab();
  const auto cs = relative_cover_search(Encoding{{A, AB}, 1}, v);
  EXPECT_EQ(id_set(cs), (std::set<std::vector<TokenId>>{{A, AB}, {A, ABA}}));
  EXPECT_EQ(cs.level, 2u);
  EXPECT_EQ(cs.basis, (Encoding{{A, AB}, 1}));
  for (const auto& e : cs.entries) {
    EXPECT_EQ(e.tail, e.enc.ids.back() == ABA ? std::vector<TokenId>{A} : std::vector<TokenId>{});
  }
}

TEST(CoverSearch, SameLevelIsIdentity) {
  const auto v = fixtures::two_merge_vocab();
  for (const auto& ids : {std::vector<TokenId>{A, ABA}, {A, AB}, {B}}) {
    const auto cs = relative_cover_search(Encoding{ids, 2}, v);
    EXPECT_EQ(id_set(cs), (std::set<std::vector<TokenId>>{ids}));
  }
}

TEST(CoverSearch, EosBasisCoversItself) {
  const auto v = fixtures::two_merge_vocab();
  const auto cs = relative_cover_search(Encoding{{A, AB, 0}, 1}, v);
  EXPECT_EQ(id_set(cs), (std::set<std::vector<TokenId>>{{A, AB, 0}}));
}

TEST(CoverSearch, EmptyBasis) {
  const auto v = fixtures::two_merge_vocab();
  const auto cs = relative_cover_search(Encoding{{}, 1}, v);
  EXPECT_EQ(id_set(cs), (std::set<std::vector<TokenId>>{{}}));
}

TEST(CoverSearch, InvalidBasisIsRejected) {
  const auto v = fixtures::two_merge_vocab();
  try {
    relative_cover_search(Encoding{{A, B}, 1}, v);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidBasis);
  }
}

TEST(CoverSearch, SubsetAboveFullIsRejected) {
  const auto v = fixtures::two_merge_vocab();
  EXPECT_THROW(relative_cover_search(Encoding{{A}, 2}, SubsetView(v, 2), SubsetView(v, 1)), Error);
}

TEST(CoverSearch, MatchesDefinitionExhaustively) {
  fixtures::Rng rng(42);
  std::size_t compared = 0;
  for (int trial = 0; trial < 25; ++trial) {
    const auto v = fixtures::random_vocab(rng, 3, 5, 3);
    const std::size_t m = v.num_merges();
    for (std::size_t sub = 0; sub <= m; ++sub) {
      const TokenPrefixIndex idx(SubsetView(v, m));
      for (const auto& e : fixtures::all_valid_encodings(v, sub, 6)) {
        const auto got = id_set(relative_cover_search(e, SubsetView(v, sub), idx));
        ASSERT_EQ(got, oracle::oracle_cover_set(e, v, m)) << "basis " << format_ids(e.ids) << " sub " << sub;
        ++compared;
      }
    }
  }
  EXPECT_GT(compared, 1000u);
}

TEST(CoverSearch, LastTokenStartsNearTheEnd) {
  fixtures::Rng rng(43);
  for (int trial = 0; trial < 300; ++trial) {
    const auto v = fixtures::random_vocab(rng, 3, 6);
    const std::size_t m = v.num_merges();
    const std::size_t sub = std::uniform_int_distribution<std::size_t>(0, m)(rng);
    const auto e = fixtures::random_encoding(rng, v, sub, 8, 0.0, 1);
    const std::size_t s_len = decode(e, SubsetView(v, sub)).size();
    const std::size_t last_start = s_len - v.token(e.back()).symbols.size();
    const std::size_t lmax = v.max_token_length(m);
    for (const auto& c : relative_cover_search(e, v).entries) {
      std::size_t start = 0;
      for (std::size_t i = 0; i + 1 < c.enc.size(); ++i) start += v.token(c.enc.ids[i]).symbols.size();
      ASSERT_GE(start + lmax, last_start);
      ASSERT_LT(start, s_len);
    }
  }
}

TEST(CoverSearch, TailsMatchRelativeDecoding) {
  fixtures::Rng rng(44);
  for (int trial = 0; trial < 300; ++trial) {
    const auto v = fixtures::random_vocab(rng, 3, 6);
    const std::size_t m = v.num_merges();
    const std::size_t sub = std::uniform_int_distribution<std::size_t>(0, m)(rng);
    const auto e = fixtures::random_encoding(rng, v, sub, 7);
    for (const auto& c : relative_cover_search(e, v).entries) {
      const auto dec = relative_decode(c.enc, v, sub);
      ASSERT_TRUE(starts_with(dec.ids, e.ids));
      ASSERT_EQ(c.tail, std::vector<TokenId>(dec.ids.begin() + static_cast<std::ptrdiff_t>(e.size()), dec.ids.end()));
    }
  }
}

TEST(CoverSearch, Deterministic) {
  fixtures::Rng rng(45);
  for (int trial = 0; trial < 100; ++trial) {
    const auto v = fixtures::random_vocab(rng, 3, 6);
    const auto e = fixtures::random_encoding(rng, v, 0, 7);
    const auto a = relative_cover_search(e, v);
    const auto b = relative_cover_search(e, v);
    ASSERT_EQ(a.encodings(), b.encodings());
  }
}

}  // namespace
}  // namespace xtok
