#include <gtest/gtest.h>

#include <cmath>

#include "xtok/xtok.hpp"

namespace xtok {
namespace {

// Byte-level view of a token-level model, built from subset scores:
// P(c | s) = score(s c) / score(s).
class DerivedByteLm : public LmBackend {
 public:
  explicit DerivedByteLm(const LmBackend& inner) : LmBackend(inner.vocab(), 0), inner_(&inner) {}

 protected:
  std::vector<double> compute_next_log_dist(std::span<const TokenId> prefix) const override {
    const TokenPrefixIndex& idx = index();
    std::vector<TokenId> ids(prefix.begin(), prefix.end());
    const double base = score_subset_log(*inner_, Encoding{ids, 0}, idx);
    std::vector<double> out(dist_size());
    ids.push_back(0);
    for (TokenId c = 0; c < dist_size(); ++c) {
      ids.back() = c;
      out[c] = score_subset_log(*inner_, Encoding{ids, 0}, idx) - base;
    }
    return out;
  }

 private:
  const TokenPrefixIndex& index() const {
    if (!index_) index_.emplace(inner_->view());
    return *index_;
  }
  const LmBackend* inner_;
  mutable std::optional<TokenPrefixIndex> index_;
};

TEST(CrossModule, DownThenUpRecoversJointProbability) {
  fixtures::Rng rng(91);
  std::size_t checked = 0;
  for (int trial = 0; trial < 25; ++trial) {
    const auto v = fixtures::random_vocab(rng, 3, 4);
    const std::size_t m = v.num_merges();
    TableLmOptions o;
    o.row_seed = rng();
    o.max_bytes = 5;
    const TableLm lm(v, m, {}, o);
    const DerivedByteLm bytes(lm);
    for (int q = 0; q < 6; ++q) {
      const auto e = fixtures::random_encoding(rng, v, m, 3, 0.0, 1);
      const double joint = lm.joint_prob(e);
      const double up = convert_prob_exact(bytes, e);
      ASSERT_NEAR(up, joint, 1e-9) << format_ids(e.ids);
      ++checked;
    }
  }
  EXPECT_EQ(checked, 150u);
}

TEST(CrossModule, SubsetScoresAreAdditiveOverNextToken) {
  fixtures::Rng rng(92);
  for (int trial = 0; trial < 40; ++trial) {
    const auto v = fixtures::random_vocab(rng, 3, 5);
    const std::size_t m = v.num_merges();
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, m)(rng);
    const auto lm = fixtures::random_table_lm(v, m, rng(), 8);
    const auto e = fixtures::random_encoding(rng, v, k, 4, 0.0, 1);
    const SubsetView sub(v, k);
    double total = 0.0;
    for (TokenId t = 0; t < sub.size(); ++t) total += score_subset(*lm, e.appended(t));
    ASSERT_NEAR(total, score_subset(*lm, e), 1e-12) << format_ids(e.ids);
  }
}

TEST(CrossModule, UpConversionIsAdditiveOverNextToken) {
  fixtures::Rng rng(93);
  for (int trial = 0; trial < 40; ++trial) {
    const auto v = fixtures::random_vocab(rng, 3, 5);
    const std::size_t m = v.num_merges();
    const auto lm = fixtures::random_ngram_lm(v, 2, rng(), 7);
    const auto e = fixtures::random_encoding(rng, v, m, 3, 0.0, 1);
    double total = 0.0;
    for (TokenId t = 0; t < v.size(); ++t) total += convert_prob_exact(*lm, e.appended(t));
    ASSERT_NEAR(total, convert_prob_exact(*lm, e), 1e-12) << format_ids(e.ids);
  }
}

TEST(CrossModule, SamplerChainRuleMatchesScore) {
  fixtures::Rng rng(94);
  for (int trial = 0; trial < 30; ++trial) {
    const auto v = fixtures::random_vocab(rng, 3, 5);
    const std::size_t m = v.num_merges();
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, m)(rng);
    const auto lm = fixtures::random_table_lm(v, m, rng(), 10);
    const SubtokenSampler sampler(*lm, k);
    auto st = init_sampler(sampler, Encoding{{}, k});
    Encoding path{{}, k};
    double log_p = 0.0;
    for (int step = 0; step < 8; ++step) {
      const auto d = next_subtoken_dist(sampler, st);
      const TokenId t = draw(d, rng);
      log_p += std::log(d[t]);
      path = path.appended(t);
      ASSERT_NEAR(log_p, score_subset_log(*lm, path), 1e-10);
      if (t == kEos) break;
      st = advance(sampler, st, t);
    }
  }
}

TEST(CrossModule, KlOfConvertedDistributionAgainstItselfIsZero) {
  const auto v = fixtures::two_merge_vocab();
  const auto lm = fixtures::random_ngram_lm(v, 2, 95, 6);
  const Encoding e{{1}, 2};
  const double base = convert_prob_exact(*lm, e);
  std::vector<double> row;
  for (TokenId t = 0; t < v.size(); ++t) row.push_back(convert_prob_exact(*lm, e.appended(t)) / base);
  EXPECT_NEAR(kl_divergence(row, row).value, 0.0, 1e-15);
  SoftLabelStep step{{1, 3}, {row[1], row[3]}, {row[1], row[3]}};
  EXPECT_NEAR(pkl_step_loss(step), pkl_step_minimum(step), 1e-12);
}

class VerifySuite : public ::testing::TestWithParam<std::string> {};

TEST_P(VerifySuite, PassesOnSmallBudget) {
  verify::SuiteOptions o;
  o.seed = 11;
  o.trials = GetParam() == "codec" || GetParam() == "examples" ? 0 : 40;
  const auto r = verify::suites().at(GetParam())(o);
  EXPECT_TRUE(r.passed()) << r.name << ": " << r.failures << " of " << r.checks << " failed, max " << r.max_error
                          << " " << r.note;
}

INSTANTIATE_TEST_SUITE_P(All, VerifySuite,
                         ::testing::Values("examples", "codec", "cover", "subset", "convert", "sampler", "approx",
                                           "rejection", "losses"),
                         [](const auto& info) { return info.param; });

}  // namespace
}  // namespace xtok
