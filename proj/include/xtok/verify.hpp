#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "xtok/codec.hpp"
#include "xtok/convert_down.hpp"
#include "xtok/convert_up.hpp"
#include "xtok/cover.hpp"
#include "xtok/fixtures.hpp"
#include "xtok/losses.hpp"
#include "xtok/oracle.hpp"

// Randomized equivalence suites. Each suite draws its fixtures from a seeded
// generator, compares the library against an independent computation and
// reports the largest discrepancy seen.

namespace xtok::verify {

struct SuiteOptions {
  std::size_t trials = 0;  // 0 selects the suite default
  std::uint64_t seed = 7;
};

struct SuiteReport {
  std::string name;
  std::size_t trials = 0;
  std::size_t checks = 0;
  std::size_t failures = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  double seconds = 0.0;
  std::string note;

  bool passed() const { return failures == 0 && checks > 0; }

  void observe(double err) {
    ++checks;
    if (err > max_error) max_error = err;
    if (!(err <= tolerance)) ++failures;
  }
  void expect(bool ok) {
    ++checks;
    if (!ok) ++failures;
  }
};

namespace detail {

inline std::string short_num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline std::size_t pick_trials(const SuiteOptions& o, std::size_t dflt) { return o.trials ? o.trials : dflt; }

inline double rel_err(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

}  // namespace detail

/// Codec identities on every string up to length 8: roundtrip, agreement
/// with the naive encoder, and path independence of relative encoding.
inline SuiteReport run_codec(const SuiteOptions& o) {
  detail::Timer timer;
  SuiteReport r;
  r.name = "codec";
  r.trials = detail::pick_trials(o, 10);
  fixtures::Rng rng(o.seed);
  for (std::size_t f = 0; f < r.trials; ++f) {
    const auto v = fixtures::random_vocab(rng);
    const oracle::NaiveEncoder ne(v);
    const std::size_t m = v.num_merges();
    for (const auto& s : fixtures::all_strings(v, 8)) {
      const std::size_t sub = std::uniform_int_distribution<std::size_t>(0, m)(rng);
      const auto full = encode(s, SubsetView(v, m));
      const auto low = encode(s, SubsetView(v, sub));
      r.expect(decode(full, SubsetView(v, m)) == s);
      r.expect(full.ids == ne.encode(s, m));
      r.expect(relative_encode(low, v, m) == full);
      r.expect(relative_decode(full, v, sub) == low);
      r.expect(is_valid(full, SubsetView(v, m)));
    }
  }
  r.seconds = timer.seconds();
  return r;
}

/// Cover search against the definition applied literally.
inline SuiteReport run_cover(const SuiteOptions& o) {
  detail::Timer timer;
  SuiteReport r;
  r.name = "cover";
  r.trials = detail::pick_trials(o, 1000);
  fixtures::Rng rng(o.seed);
  for (std::size_t f = 0; f < r.trials; ++f) {
    const auto v = fixtures::random_vocab(rng, 3, 5);
    const std::size_t m = v.num_merges();
    const std::size_t sub = std::uniform_int_distribution<std::size_t>(0, m)(rng);
    const auto e = fixtures::random_encoding(rng, v, sub, 6, 0.15);
    const auto found = relative_cover_search(e, v);
    std::set<std::vector<TokenId>> got;
    for (const auto& c : found.entries) got.insert(c.enc.ids);
    r.expect(got == oracle::oracle_cover_set(e, v, m));
  }
  r.seconds = timer.seconds();
  return r;
}

/// Subset-level scores against exhaustive enumeration of a full-level
/// table model whose strings all end by length max_bytes.
inline SuiteReport run_subset(const SuiteOptions& o) {
  detail::Timer timer;
  SuiteReport r;
  r.name = "subset";
  r.tolerance = 1e-9;
  r.trials = detail::pick_trials(o, 500);
  fixtures::Rng rng(o.seed);
  for (std::size_t f = 0; f < r.trials; ++f) {
    const auto v = fixtures::random_vocab(rng, 3, 6);
    const std::size_t m = v.num_merges();
    const std::size_t sub = std::uniform_int_distribution<std::size_t>(0, m)(rng);
    const auto lm = fixtures::random_table_lm(v, m, rng(), 7);
    const auto e = fixtures::random_encoding(rng, v, sub, 6, 0.15);
    oracle::EnumerationBudget b;
    b.max_string_len = 64;
    const auto truth = oracle::oracle_conversion_prob(*lm, e, b);
    r.observe(std::abs(score_subset(*lm, e) - truth.yes));
    r.expect(truth.residual <= 1e-12);
  }
  r.seconds = timer.seconds();
  return r;
}

/// Full-level probabilities from byte-level n-gram models against
/// enumeration to length 10. Half of the fixtures cap string length so the
/// enumeration is complete; the rest must land inside the residual interval.
inline SuiteReport run_convert(const SuiteOptions& o) {
  detail::Timer timer;
  SuiteReport r;
  r.name = "convert";
  r.tolerance = 1e-9;
  r.trials = detail::pick_trials(o, 200);
  fixtures::Rng rng(o.seed);
  std::size_t complete = 0;
  for (std::size_t f = 0; f < r.trials; ++f) {
    const auto v = fixtures::random_vocab(rng, 3, 5);
    const std::size_t m = v.num_merges();
    const bool capped = f % 2 == 0;
    const std::size_t order = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    std::optional<std::size_t> cap;
    if (capped) cap = std::uniform_int_distribution<std::size_t>(3, 9)(rng);
    const auto lm = fixtures::random_ngram_lm(v, order, rng(), cap);
    const auto e = fixtures::random_encoding(rng, v, m, 6, 0.15);
    oracle::EnumerationBudget b;
    b.max_string_len = 10;
    const auto truth = oracle::oracle_conversion_prob(*lm, e, b);
    const double got = convert_prob_exact(*lm, e);
    if (truth.residual <= 1e-12) {
      ++complete;
      r.observe(std::abs(got - truth.yes));
    } else {
      r.expect(truth.contains(got, 1e-9));
    }
    if (capped) r.expect(truth.residual <= 1e-12);
  }
  r.note = std::to_string(complete) + " fully enumerable";
  r.seconds = timer.seconds();
  return r;
}

/// Sub-token sampling: exactly one model call per advance, and every step's
/// distribution agrees with independent subset scores through the chain rule.
inline SuiteReport run_sampler(const SuiteOptions& o) {
  detail::Timer timer;
  SuiteReport r;
  r.name = "sampler";
  r.tolerance = 1e-10;
  const std::size_t per_bound = detail::pick_trials(o, 10000);
  fixtures::Rng rng(o.seed);
  BpeVocab v;
  do {
    v = fixtures::random_vocab(rng, 3, 6, 3);
  } while (v.num_merges() < 6);
  const std::size_t m = v.num_merges();
  const auto lm = fixtures::random_table_lm(v, m, rng(), 10);
  std::size_t advances = 0;
  std::size_t bad_calls = 0;
  for (std::size_t sub : {std::size_t{0}, m / 2, m - 1}) {
    const SubtokenSampler sampler(*lm, sub);
    const TokenPrefixIndex index(lm->view());
    std::size_t drawn = 0;
    while (drawn < per_bound) {
      auto st = sampler.init(Encoding{{}, sub});
      double score = 1.0;
      while (drawn < per_bound) {
        const auto dist = sampler.next_subtoken_dist(st);
        const TokenId t = draw(dist, rng);
        ++drawn;
        if (t == kEos) break;
        const double next = std::exp(score_subset_log(*lm, st.basis.appended(t), index));
        r.observe(detail::rel_err(next, score * dist[t]));
        lm->reset_call_count();
        st = sampler.advance(st, t);
        ++advances;
        if (lm->call_count() != 1) ++bad_calls;
        score = next;
      }
    }
  }
  r.trials = advances;
  r.expect(bad_calls == 0);
  r.note = std::to_string(advances) + " advances, " + std::to_string(bad_calls) + " with a call count other than 1";
  r.seconds = timer.seconds();
  return r;
}

/// Beam approximation: non-increasing in the beam count and equal to the
/// exact value once every stopped continuation has been examined.
inline SuiteReport run_approx(const SuiteOptions& o) {
  detail::Timer timer;
  SuiteReport r;
  r.name = "approx";
  r.tolerance = 1e-9;
  r.trials = detail::pick_trials(o, 100);
  fixtures::Rng rng(o.seed);
  for (std::size_t f = 0; f < r.trials; ++f) {
    const auto v = fixtures::random_vocab(rng, 3, 5);
    const std::size_t cap = std::uniform_int_distribution<std::size_t>(3, 6)(rng);
    const auto lm = fixtures::random_ngram_lm(v, 2, rng(), cap);
    const auto e = fixtures::random_encoding(rng, v, v.num_merges(), 4, 0.0, 1);
    const double exact = convert_prob_exact(*lm, e);
    ApproxOptions ao;
    ao.max_len = cap + 2;
    double prev = 2.0;
    for (std::size_t n = 1;; n *= 2) {
      ao.beams = n;
      const auto a = convert_prob_approx_full(*lm, e, ao);
      r.expect(a.prob <= prev + 1e-15);
      r.expect(a.prob >= exact - 1e-12);
      prev = a.prob;
      if (a.exhausted) {
        r.observe(std::abs(a.prob - exact));
        break;
      }
    }
  }
  r.seconds = timer.seconds();
  return r;
}

/// Rejection sampling frequencies against exact conversion ratios, each
/// within three standard deviations.
inline SuiteReport run_rejection(const SuiteOptions& o) {
  detail::Timer timer;
  SuiteReport r;
  r.name = "rejection";
  r.trials = detail::pick_trials(o, 100000);
  fixtures::Rng rng(o.seed);
  const auto v = fixtures::two_merge_vocab();
  const auto lm = fixtures::random_ngram_lm(v, 2, rng(), 6);
  const std::size_t m = v.num_merges();
  const Encoding prefix = encode(v.to_symbols("a"), SubsetView(v, m));
  const double base = convert_prob_exact(*lm, prefix);
  std::vector<double> expected(v.size_at(m), 0.0);
  for (TokenId t = 0; t < expected.size(); ++t) expected[t] = convert_prob_exact(*lm, prefix.appended(t)) / base;
  std::vector<std::size_t> counts(expected.size(), 0);
  RejectionOptions ro;
  ro.max_len = 16;
  for (std::size_t i = 0; i < r.trials; ++i) ++counts[sample_token_rejection(*lm, prefix, ro, rng)];
  double worst = 0.0;
  for (TokenId t = 0; t < expected.size(); ++t) {
    const double p = expected[t];
    const double freq = static_cast<double>(counts[t]) / static_cast<double>(r.trials);
    const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(r.trials));
    if (p == 0.0) {
      r.expect(counts[t] == 0);
    } else {
      worst = std::max(worst, std::abs(freq - p) / sigma);
      r.expect(std::abs(freq - p) <= 3.0 * sigma);
    }
  }
  r.max_error = worst;
  r.note = "largest deviation " + detail::short_num(worst) + " sigma";
  r.seconds = timer.seconds();
  return r;
}

namespace detail {

inline std::vector<double> random_simplex(fixtures::Rng& rng, std::size_t n, bool allow_zero) {
  std::vector<double> p(n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double total = 0.0;
  for (auto& x : p) {
    x = -std::log(1.0 - u(rng));
    if (allow_zero && u(rng) < 0.2) x = 0.0;
    total += x;
  }
  if (total == 0.0) {
    p[0] = 1.0;
    return p;
  }
  for (auto& x : p) x /= total;
  return p;
}

/// Independent KL: cross-entropy minus entropy, summed separately.
inline double kl_two_pass(const std::vector<double>& p, const std::vector<double>& q) {
  double neg_entropy = 0.0;
  double cross = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) neg_entropy += p[i] * std::log(p[i]);
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) cross += p[i] * std::log(q[i]);
  }
  return neg_entropy - cross;
}

/// Coarse-to-fine grid search of the step loss over the student's queried
/// probabilities (one or two free bins, the complement taking the rest).
inline std::vector<double> grid_minimize(SoftLabelStep step) {
  const std::size_t k = step.ids.size();
  std::vector<double> centre(k, 0.5);
  double half = 0.5;
  for (int round = 0; round < 7; ++round) {
    const double h = half / 10.0;
    std::vector<double> best = centre;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<int> idx(k, -10);
    while (true) {
      std::vector<double> p(k);
      double sum = 0.0;
      bool ok = true;
      for (std::size_t i = 0; i < k; ++i) {
        p[i] = centre[i] + idx[i] * h;
        sum += p[i];
        ok = ok && p[i] > 0.0;
      }
      if (ok && sum < 1.0 - 1e-9) {
        step.student = p;
        const double val = pkl_step_loss(step);
        if (val < best_val) {
          best_val = val;
          best = p;
        }
      }
      std::size_t d = 0;
      while (d < k && ++idx[d] > 10) idx[d++] = -10;
      if (d == k) break;
    }
    centre = best;
    half = h * 2.0;
  }
  return centre;
}

}  // namespace detail

/// KL and partial-KL identities: zero at equality, non-negativity,
/// agreement with a second summation, minimizer location, and analytic
/// gradients against central differences.
inline SuiteReport run_losses(const SuiteOptions& o) {
  detail::Timer timer;
  SuiteReport r;
  r.name = "losses";
  r.trials = detail::pick_trials(o, 1000);
  r.tolerance = 1e-6;
  fixtures::Rng rng(o.seed);
  std::uniform_int_distribution<std::size_t> width(2, 8);
  double worst_kl = 0.0, worst_min = 0.0, worst_grad = 0.0;
  for (std::size_t f = 0; f < r.trials; ++f) {
    const std::size_t n = width(rng);
    const auto p = detail::random_simplex(rng, n, true);
    const auto q = detail::random_simplex(rng, n, false);
    r.expect(kl_loss({p}, {p}).value == 0.0);
    const auto kl = kl_loss({p}, {q});
    r.expect(!kl.infinite && kl.value >= 0.0);
    worst_kl = std::max(worst_kl, std::abs(kl.value - detail::kl_two_pass(p, q)));
    r.expect(std::abs(kl.value - detail::kl_two_pass(p, q)) <= 1e-12);

    // Analytic KL gradient against central differences.
    const auto kg = kl_gradient({p}, {q});
    for (std::size_t i = 0; i < n; ++i) {
      auto up = q, dn = q;
      const double h = 1e-5 * q[i];
      up[i] += h;
      dn[i] -= h;
      const double fd = (kl_divergence(p, up).value - kl_divergence(p, dn).value) / (2.0 * h);
      const double err = detail::rel_err(kg[0][i], fd);
      if (std::abs(kg[0][i]) > 0.0) {
        worst_grad = std::max(worst_grad, err);
        r.expect(err <= 1e-6);
      }
    }

    // Partial KL on one or two queried bins plus the complement.
    const std::size_t k = 1 + f % 2;
    auto bins = detail::random_simplex(rng, k + 1, false);
    SoftLabelStep step;
    for (std::size_t i = 0; i < k; ++i) {
      step.ids.push_back(static_cast<TokenId>(10 + i));
      step.teacher.push_back(bins[i]);
    }
    step.student = step.teacher;
    const double at_q = pkl_step_loss(step);
    r.expect(std::abs(at_q - pkl_step_minimum(step)) <= 1e-12);
    const auto argmin = detail::grid_minimize(step);
    for (std::size_t i = 0; i < k; ++i) {
      worst_min = std::max(worst_min, std::abs(argmin[i] - step.teacher[i]));
      r.expect(std::abs(argmin[i] - step.teacher[i]) <= 1e-4);
    }

    auto moved = detail::random_simplex(rng, k + 1, false);
    step.student.assign(moved.begin(), moved.begin() + static_cast<std::ptrdiff_t>(k));
    const auto g = pkl_gradient({step});
    for (std::size_t i = 0; i < k; ++i) {
      auto up = step, dn = step;
      const double h = 1e-5 * std::min(step.student[i], moved[k]);
      up.student[i] += h;
      dn.student[i] -= h;
      const double fd = (pkl_step_loss(up) - pkl_step_loss(dn)) / (2.0 * h);
      const double err = detail::rel_err(g[0][i], fd);
      worst_grad = std::max(worst_grad, err);
      r.expect(err <= 1e-6);
    }
  }
  r.max_error = worst_grad;
  r.note = "kl two-pass " + detail::short_num(worst_kl) + ", minimizer offset " + detail::short_num(worst_min) +
           ", gradient rel " + detail::short_num(worst_grad);
  r.seconds = timer.seconds();
  return r;
}

/// The hand-worked small cases: cover set, signed expansion, encodings,
/// canonicality and the cover-sum identity.
inline SuiteReport run_examples(const SuiteOptions& o) {
  detail::Timer timer;
  SuiteReport r;
  r.name = "examples";
  r.trials = 1;
  const auto v = fixtures::two_merge_vocab();
  const SubsetView v2(v, 2);
  // Tokens: 0 EOS, 1 a, 2 b, 3 ab, 4 aba.
  const auto covers = relative_cover_search(Encoding{{1, 3}, 1}, v);
  r.expect(covers.encodings() == std::vector<Encoding>{Encoding{{1, 3}, 2}, Encoding{{1, 4}, 2}});

  ExactOptions eo;
  eo.collect_alphabet = std::vector<TokenId>{1, 2};
  const auto expansion = expand_convert(Encoding{{1, 3}, 2}, v, 0, eo);
  r.expect(expansion.leaves == std::vector<SignedLeaf>{{Encoding{{1, 1, 2}, 0}, 1}, {Encoding{{1, 1, 2, 1, 1}, 0}, -1}});

  r.expect(encode_text("aab", v2).ids == std::vector<TokenId>{1, 3});
  r.expect(encode_text("aabaa", v2).ids == std::vector<TokenId>{1, 4, 1});
  const auto beta = fixtures::single_merge_vocab();
  r.expect(!is_valid(Encoding{{2, 1, 2}, 1}, SubsetView(beta, 1)));
  r.expect(is_valid(Encoding{{2, 3}, 1}, SubsetView(beta, 1)));

  fixtures::Rng rng(o.seed);
  const auto lm = fixtures::random_table_lm(v, 2, rng(), 8);
  const double lhs = score_subset(*lm, Encoding{{1, 3}, 1});
  const double rhs = lm->joint_prob(Encoding{{1, 3}, 2}) + lm->joint_prob(Encoding{{1, 4}, 2});
  r.tolerance = 1e-15;
  r.observe(std::abs(lhs - rhs));
  r.seconds = timer.seconds();
  return r;
}

inline const std::map<std::string, std::function<SuiteReport(const SuiteOptions&)>>& suites() {
  static const std::map<std::string, std::function<SuiteReport(const SuiteOptions&)>> table{
      {"examples", run_examples}, {"codec", run_codec},     {"cover", run_cover},         {"subset", run_subset},
      {"convert", run_convert},         {"sampler", run_sampler}, {"approx", run_approx},       {"rejection", run_rejection},
      {"losses", run_losses},
  };
  return table;
}

}  // namespace xtok::verify
