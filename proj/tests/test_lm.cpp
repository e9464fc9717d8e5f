#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "xtok/fixtures.hpp"
#include "xtok/lm.hpp"
#include "xtok/oracle.hpp"

namespace xtok {
namespace {

constexpr TokenId A = 1, B = 2, AB = 3;

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an xtok::Error";
  return ErrorKind::ParseError;
}

double sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

TEST(TableLm, UniformByteModel) {
  const auto v = fixtures::two_merge_vocab();
  const TableLm lm(v, 0);
  for (const auto& prefix : {std::vector<TokenId>{}, {A}, {B, A, B}}) {
    const auto d = lm.next_dist(Encoding{prefix, 0});
    ASSERT_EQ(d.size(), 3u);
    for (double p : d) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
  }
  EXPECT_NEAR(lm.joint_prob(Encoding{{A, B}, 0}), 1.0 / 9.0, 1e-15);
  EXPECT_EQ(lm.joint_prob(Encoding{{}, 0}), 1.0);
}

TEST(TableLm, ExplicitRowIsReturned) {
  const auto v = fixtures::two_merge_vocab();
  const TableLm lm(v, 0, {{{A}, {0.2, 0.5, 0.3}}});
  const auto d = lm.next_dist(Encoding{{A}, 0});
  EXPECT_NEAR(d[0], 0.2, 1e-15);
  EXPECT_NEAR(d[1], 0.5, 1e-15);
  EXPECT_NEAR(d[2], 0.3, 1e-15);
  EXPECT_EQ(lm.raw_row(std::vector<TokenId>{A}), (std::vector<double>{0.2, 0.5, 0.3}));
}

TEST(TableLm, RowsAreRenormalized) {
  const auto v = fixtures::two_merge_vocab();
  const TableLm lm(v, 0, {{{}, {2.0, 1.0, 1.0}}});
  EXPECT_NEAR(lm.next_dist(Encoding{{}, 0})[0], 0.5, 1e-15);
}

TEST(TableLm, ValidityMaskingAtBoundOne) {
  const auto v = fixtures::two_merge_vocab();
  const std::vector<double> raw{0.1, 0.2, 0.3, 0.4};
  const TableLm lm(v, 1, {{{A}, raw}});
  const auto d = lm.next_dist(Encoding{{A}, 1});
  // Oracle: keep continuations whose extended sequence is canonical.
  const oracle::NaiveEncoder ne(v);
  double kept = 0.0;
  for (TokenId t = 0; t < 4; ++t) kept += ne.valid({A, t}, 1) ? raw[t] : 0.0;
  for (TokenId t = 0; t < 4; ++t) {
    const double want = ne.valid({A, t}, 1) ? raw[t] / kept : 0.0;
    EXPECT_NEAR(d[t], want, 1e-15) << t;
  }
  EXPECT_EQ(d[B], 0.0);
  EXPECT_GT(d[AB], 0.0);
}

TEST(TableLm, FallsBackToUniformOverValidWhenRowHasNoValidMass) {
  const auto v = fixtures::two_merge_vocab();
  const TableLm lm(v, 1, {{{A}, {0.0, 0.0, 1.0, 0.0}}});
  const auto d = lm.next_dist(Encoding{{A}, 1});
  EXPECT_EQ(d[B], 0.0);
  EXPECT_NEAR(d[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(d[A], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(d[AB], 1.0 / 3.0, 1e-15);
}

TEST(TableLm, InvalidEncodingHasZeroProbability) {
  const auto v = fixtures::single_merge_vocab();
  const TableLm lm(v, 1);
  EXPECT_EQ(lm.joint_prob(Encoding{{B, A, B}, 1}), 0.0);
  EXPECT_GT(lm.joint_prob(Encoding{{B, AB}, 1}), 0.0);
}

TEST(TableLm, NonCanonicalPrefixIsRejected) {
  const auto v = fixtures::single_merge_vocab();
  const TableLm lm(v, 1);
  EXPECT_EQ(kind_of([&] { lm.next_dist(Encoding{{A, B}, 1}); }), ErrorKind::InvalidEncoding);
}

TEST(TableLm, MaxBytesForcesEos) {
  const auto v = fixtures::two_merge_vocab();
  TableLmOptions o;
  o.max_bytes = 3;
  const TableLm lm(v, 2, {}, o);
  const auto d = lm.next_dist(Encoding{{A, AB}, 2});
  EXPECT_EQ(d[0], 1.0);
  EXPECT_LT(lm.next_dist(Encoding{{AB}, 2})[0], 1.0);
}

TEST(TableLm, ShapeAndBoundErrors) {
  const auto v = fixtures::two_merge_vocab();
  EXPECT_EQ(kind_of([&] { TableLm(v, 0, {{{}, {1.0, 1.0}}}); }), ErrorKind::ShapeMismatch);
  EXPECT_EQ(kind_of([&] { TableLm(v, 3); }), ErrorKind::BoundOutOfRange);
  const TableLm lm(v, 1);
  EXPECT_EQ(kind_of([&] { lm.next_dist(Encoding{{A}, 0}); }), ErrorKind::LevelMismatch);
  EXPECT_EQ(kind_of([&] { lm.next_dist(Encoding{{A, 0}, 1}); }), ErrorKind::PrefixContainsEos);
  EXPECT_EQ(kind_of([&] { lm.next_dist(Encoding{{4}, 1}); }), ErrorKind::InvalidEncoding);
}

TEST(TableLm, EosAbsorption) {
  const auto v = fixtures::two_merge_vocab();
  const TableLm lm(v, 0);
  const double p = lm.joint_prob(Encoding{{A, 0}, 0});
  EXPECT_NEAR(p, 1.0 / 9.0, 1e-15);
  EXPECT_EQ(lm.joint_prob(Encoding{{A, 0, 0}, 0}), p);
  EXPECT_EQ(lm.joint_prob(Encoding{{A, 0, A}, 0}), 0.0);
}

TEST(TableLm, CallCounter) {
  const auto v = fixtures::two_merge_vocab();
  const TableLm lm(v, 2);
  lm.reset_call_count();
  lm.next_dist(Encoding{{}, 2});
  lm.joint_prob(Encoding{{A, AB}, 2});
  EXPECT_EQ(lm.call_count(), 3u);
  lm.reset_call_count();
  EXPECT_EQ(lm.call_count(), 0u);
}

TEST(NgramByteLm, UsesOnlyRecentContext) {
  const auto v = fixtures::two_merge_vocab();
  const NgramByteLm lm(v, 2, {{{A}, {0.0, 0.0, 1.0}}, {{B}, {1.0, 0.0, 0.0}}});
  EXPECT_EQ(lm.next_dist(Encoding{{B, B, A}, 0})[B], 1.0);
  EXPECT_EQ(lm.next_dist(Encoding{{A, B}, 0})[0], 1.0);
  EXPECT_NEAR(lm.next_dist(Encoding{{}, 0})[A], 1.0 / 3.0, 1e-15);
  EXPECT_EQ(lm.vocab_bound(), 0u);
  EXPECT_EQ(kind_of([&] { NgramByteLm(v, 0); }), ErrorKind::ParseError);
  EXPECT_EQ(kind_of([&] { NgramByteLm(v, 2, {{{A, A}, {1.0, 1.0, 1.0}}}); }), ErrorKind::ShapeMismatch);
}

// Properties over seeded random tables.

TEST(LmProperties, NormalizationFactorizationAndZeroMass) {
  fixtures::Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const auto v = fixtures::random_vocab(rng, 3, 5);
    const std::size_t m = std::uniform_int_distribution<std::size_t>(0, v.num_merges())(rng);
    const auto lm = fixtures::random_table_lm(v, m, rng());
    const SubsetView view(v, m);
    std::vector<std::vector<TokenId>> seqs{{}};
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      if (seqs[i].size() == 3) continue;
      for (TokenId t = 0; t < view.size(); ++t) {
        auto s = seqs[i];
        s.push_back(t);
        seqs.push_back(std::move(s));
      }
    }
    for (const auto& ids : seqs) {
      const Encoding e{ids, m};
      const double jp = lm->joint_prob(e);
      if (!is_valid(e, view)) {
        ASSERT_EQ(jp, 0.0) << format_ids(ids);
        continue;
      }
      if (!contains_eos(ids)) {
        ASSERT_NEAR(sum(lm->next_dist(e)), 1.0, 1e-12);
      }
      double prod = 1.0;
      bool ended = false;
      for (std::size_t l = 0; l < ids.size(); ++l) {
        if (ended) {
          if (ids[l] != kEos) prod = 0.0;
          continue;
        }
        ended = ids[l] == kEos;
        prod *= lm->next_dist(Encoding{{ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(l)}, m})[ids[l]];
      }
      ASSERT_NEAR(jp, prod, 1e-14) << format_ids(ids);
    }
  }
}

TEST(LmProperties, SeededRowsAreDeterministic) {
  const auto v = fixtures::two_merge_vocab();
  const auto a = fixtures::random_table_lm(v, 2, 99);
  const auto b = fixtures::random_table_lm(v, 2, 99);
  const auto c = fixtures::random_table_lm(v, 2, 100);
  const Encoding e{{A, AB}, 2};
  EXPECT_EQ(a->next_dist(e), b->next_dist(e));
  EXPECT_NE(a->next_dist(e), c->next_dist(e));
}

// External logits exchange.

TEST(LogitsProtocol, FullResponse) {
  const auto d = parse_logits_response("A 0:-1.0986122886681098 1:-1.0986122886681098 2:-1.0986122886681098", 3);
  for (double x : d) EXPECT_NEAR(std::exp(x), 1.0 / 3.0, 1e-15);
}

TEST(LogitsProtocol, TopKWithRestSpreadsUniformly) {
  const auto d = parse_logits_response("A 1:-0.6931471805599453 REST:-0.6931471805599453", 3);
  EXPECT_NEAR(std::exp(d[1]), 0.5, 1e-15);
  EXPECT_NEAR(std::exp(d[0]), 0.25, 1e-15);
  EXPECT_NEAR(std::exp(d[2]), 0.25, 1e-15);
}

TEST(LogitsProtocol, TopKWithoutRestLeavesOthersAtZero) {
  const auto d = parse_logits_response("A 2:-5", 3);
  EXPECT_EQ(d[2], 0.0);
  EXPECT_EQ(d[0], kLogZero);
}

TEST(LogitsProtocol, MalformedResponses) {
  for (const char* bad : {"B 1:0", "A 1", "A x:0", "A 7:0", "A 1:abc", "A", "Ax 1:0"}) {
    EXPECT_EQ(kind_of([&] { parse_logits_response(bad, 3); }), ErrorKind::ParseError) << bad;
  }
  EXPECT_EQ(format_logits_request(std::vector<TokenId>{}), "Q");
  EXPECT_EQ(format_logits_request(std::vector<TokenId>{1, 3}), "Q 1 3");
}

TEST(ExternalLogitsLm, ReplayAnswersKnownPrefixes) {
  const auto v = fixtures::two_merge_vocab();
  std::istringstream replay("Q\nA 0:-1.6094379124341003 1:-0.916290731874155 2:-1.2039728043259361 3:-2.3025850929940455 "
                            "4:-2.3025850929940455\n\nQ 1\nA 1:-0.5 REST:-0.9\n");
  const ExternalLogitsLm lm(v, 2, replay);
  EXPECT_EQ(lm.cached_prefixes(), 2u);
  EXPECT_NEAR(sum(lm.next_dist(Encoding{{}, 2})), 1.0, 1e-12);
  EXPECT_NEAR(sum(lm.next_dist(Encoding{{A}, 2})), 1.0, 1e-12);
  EXPECT_EQ(kind_of([&] { lm.next_dist(Encoding{{B}, 2}); }), ErrorKind::BackendUnavailable);
}

TEST(ExternalLogitsLm, ReplayFileFromSamples) {
  const auto v = fixtures::two_merge_vocab();
  auto lm = make_backend(std::string("replay:") + XTOK_SAMPLES_DIR + "/example.replay", v, 2);
  EXPECT_NEAR(lm->next_dist(Encoding{{}, 2})[0], 0.1, 1e-12);
}

TEST(ExternalLogitsLm, MalformedReplay) {
  const auto v = fixtures::two_merge_vocab();
  for (const char* bad : {"Q\nQ\n", "A 0:0\n", "Q\n", "X\n"}) {
    std::istringstream in(bad);
    EXPECT_EQ(kind_of([&] { ExternalLogitsLm(v, 2, in); }), ErrorKind::ParseError) << bad;
  }
}

TEST(ExternalLogitsLm, LiveChannelCachesAndReportsClosure) {
  const auto v = fixtures::two_merge_vocab();
  std::istringstream responses("A 0:0\nA 1:0\n");
  std::ostringstream requests;
  const ExternalLogitsLm lm(v, 0, responses, requests);
  EXPECT_EQ(lm.next_dist(Encoding{{}, 0})[0], 1.0);
  EXPECT_EQ(lm.next_dist(Encoding{{}, 0})[0], 1.0);  // cached, no second request
  EXPECT_EQ(lm.next_dist(Encoding{{A}, 0})[A], 1.0);
  EXPECT_EQ(requests.str(), "Q\nQ 1\n");
  EXPECT_EQ(kind_of([&] { lm.next_dist(Encoding{{B}, 0}); }), ErrorKind::BackendUnavailable);
}

TEST(ExternalLogitsLm, ReplayRecordRoundTrip) {
  const auto v = fixtures::two_merge_vocab();
  const auto src = fixtures::random_table_lm(v, 2, 5);
  std::ostringstream out;
  for (const auto& prefix : {std::vector<TokenId>{}, {A}, {A, AB}}) {
    write_replay_record(out, prefix, src->next_log_dist(Encoding{prefix, 2}));
  }
  std::istringstream in(out.str());
  const ExternalLogitsLm lm(v, 2, in);
  for (const auto& prefix : {std::vector<TokenId>{}, {A}, {A, AB}}) {
    const auto a = src->next_log_dist(Encoding{prefix, 2});
    const auto b = lm.next_log_dist(Encoding{prefix, 2});
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] == kLogZero) {
        EXPECT_EQ(b[i], kLogZero);
      } else {
        EXPECT_NEAR(a[i], b[i], 1e-14);
      }
    }
  }
}

// Table files and backend specs.

TEST(TableFile, ParsesHeaderAndRows) {
  std::istringstream in("xtok-table v1 bound=2 max_bytes=6 seed=3\n# comment\nctx | 1 1 1 1 1\nctx 1 3 | 0 1 0 0 0\n");
  const auto f = detail::parse_table_file(in);
  EXPECT_EQ(f.kind, "xtok-table");
  EXPECT_EQ(f.param, 2u);
  EXPECT_EQ(f.options.max_bytes, std::optional<std::size_t>(6));
  EXPECT_EQ(f.options.row_seed, std::optional<std::uint64_t>(3));
  ASSERT_EQ(f.rows.size(), 2u);
  EXPECT_EQ(f.rows.at({1, 3})[1], 1.0);
}

TEST(TableFile, Errors) {
  for (const char* bad : {"", "xtok-table v2 bound=1\n", "xtok-table v1\n", "xtok-table v1 bound=1 color=2\n",
                          "xtok-table v1 bound=1\nrow | 1\n", "xtok-table v1 bound=1\nctx 1 1 1\n",
                          "xtok-table v1 bound=1\nctx | 1 x\n"}) {
    std::istringstream in(bad);
    EXPECT_EQ(kind_of([&] { detail::parse_table_file(in); }), ErrorKind::ParseError) << bad;
  }
}

TEST(MakeBackend, Kinds) {
  const auto v = fixtures::two_merge_vocab();
  const std::string dir = XTOK_SAMPLES_DIR;
  auto t = make_backend("table:" + dir + "/example.table", v);
  EXPECT_EQ(t->vocab_bound(), 2u);
  EXPECT_NEAR(t->next_dist(Encoding{{}, 2})[A], 0.3, 1e-15);
  auto n = make_backend("ngram:" + dir + "/byte.ngram", v);
  EXPECT_EQ(n->vocab_bound(), 0u);
  EXPECT_NEAR(n->next_dist(Encoding{{A, B}, 0})[0], 0.2, 1e-15);
  auto u = make_backend("uniform:1", v);
  EXPECT_EQ(u->vocab_bound(), 1u);
  EXPECT_EQ(kind_of([&] { make_backend("table", v); }), ErrorKind::ParseError);
  EXPECT_EQ(kind_of([&] { make_backend("gpu:x", v); }), ErrorKind::BackendUnavailable);
  EXPECT_EQ(kind_of([&] { make_backend("table:" + dir + "/byte.ngram", v); }), ErrorKind::ParseError);
  EXPECT_EQ(kind_of([&] { make_backend("ngram:" + dir + "/example.table", v); }), ErrorKind::ParseError);
  EXPECT_EQ(kind_of([&] { make_backend("table:/nonexistent/file", v); }), ErrorKind::BackendUnavailable);
}

}  // namespace
}  // namespace xtok
