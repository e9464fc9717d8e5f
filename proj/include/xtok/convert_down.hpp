#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "xtok/codec.hpp"
#include "xtok/cover.hpp"
#include "xtok/error.hpp"
#include "xtok/lm.hpp"
#include "xtok/log_math.hpp"
#include "xtok/vocab.hpp"

namespace xtok {

/// Q[i, j] = 1 iff sub-token i is the first piece of full token j after
/// relative decoding. Each column has exactly one 1, so the matrix is stored
/// as that row index per column.
class PrefixMatrix {
 public:
  PrefixMatrix(const SubsetView& sub, const SubsetView& full) : rows_(sub.size()), cols_(full.size()) {
    if (sub.bound() > full.bound()) throw Error(ErrorKind::BoundOutOfRange, "subset bound exceeds full bound");
    first_sub_.resize(cols_);
    for (TokenId j = 0; j < cols_; ++j) {
      TokenId t = j;
      while (t >= sub.size()) t = full.base().merge(t - full.base().alphabet_size() + 1).left;
      first_sub_[j] = t;
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool at(TokenId i, TokenId j) const { return first_sub_.at(j) == i; }
  TokenId first_sub(TokenId j) const { return first_sub_[j]; }

  /// (Q · v)[i] in log space.
  std::vector<double> apply_log(const std::vector<double>& log_v) const {
    if (log_v.size() != cols_) throw Error(ErrorKind::ShapeMismatch, "vector width does not match Q");
    std::vector<std::vector<double>> bins(rows_);
    for (std::size_t j = 0; j < cols_; ++j) bins[first_sub_[j]].push_back(log_v[j]);
    std::vector<double> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) out[i] = log_sum_exp(bins[i]);
    return out;
  }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<TokenId> first_sub_;
};

inline PrefixMatrix build_prefix_matrix(const SubsetView& sub, const SubsetView& full) { return PrefixMatrix(sub, full); }

namespace detail {

inline void require_down(const LmBackend& backend, const Encoding& enc) {
  if (enc.level > backend.vocab_bound()) {
    throw Error(ErrorKind::LevelMismatch, "encoding level " + std::to_string(enc.level) + " above backend bound " +
                                              std::to_string(backend.vocab_bound()));
  }
}

}  // namespace detail

/// log P(enc) for a subset-level encoding, marginalized over its covers.
inline double score_subset_log(const LmBackend& backend, const Encoding& enc, const TokenPrefixIndex& index) {
  detail::require_down(backend, enc);
  const SubsetView sub(backend.vocab(), enc.level);
  if (enc.empty()) return 0.0;
  if (!is_valid(enc, sub)) return kLogZero;
  auto covers = relative_cover_search(enc, sub, index);
  for (auto& c : covers.entries) c.log_prob = backend.joint_log_prob(c.enc);
  return covers.log_total();
}

inline double score_subset_log(const LmBackend& backend, const Encoding& enc) {
  return score_subset_log(backend, enc, TokenPrefixIndex(backend.view()));
}

inline double score_subset(const LmBackend& backend, const Encoding& enc) {
  return std::exp(score_subset_log(backend, enc));
}

/// Carries everything needed to produce the next sub-token distribution
/// with a single model call per step.
struct SubtokenSamplerState {
  Encoding basis;               // at the subset level
  CoverSet covers;              // covers of basis with probabilities and tails
  Encoding full_basis;          // relative_encode(basis) at the model level
  double full_basis_log_prob = kLogZero;
  std::vector<double> cond;     // log next-token distribution after full_basis, invalid continuations at -inf
};

class SubtokenSampler {
 public:
  SubtokenSampler(const LmBackend& backend, std::size_t sub_bound)
      : backend_(&backend),
        sub_(backend.vocab(), sub_bound),
        full_(backend.view()),
        index_(full_),
        q_(sub_, full_) {}

  const SubsetView& sub_view() const { return sub_; }
  const PrefixMatrix& prefix_matrix() const { return q_; }
  const TokenPrefixIndex& index() const { return index_; }

  /// Builds the state from scratch. Cover probabilities come from joint
  /// probabilities, so this is the only step whose model-call count grows
  /// with the prompt.
  SubtokenSamplerState init(const Encoding& prompt) const {
    if (prompt.level != sub_.bound()) {
      throw Error(ErrorKind::LevelMismatch, "prompt level does not match the sampler subset bound");
    }
    if (!is_valid(prompt, sub_)) throw Error(ErrorKind::InvalidBasis, "prompt is not canonical");
    SubtokenSamplerState st;
    st.basis = prompt;
    st.covers = relative_cover_search(prompt, sub_, index_);
    for (auto& c : st.covers.entries) c.log_prob = backend_->joint_log_prob(c.enc);
    st.full_basis = relative_encode(prompt, sub_.base(), full_.bound());
    st.full_basis_log_prob = backend_->joint_log_prob(st.full_basis);
    fill_cond(st);
    return st;
  }

  /// Unnormalized log-mass per sub-token; its log-sum-exp equals
  /// score_subset_log(basis).
  std::vector<double> next_subtoken_log_mass(const SubtokenSamplerState& st) const {
    auto mass = q_.apply_log(st.cond);
    for (auto& m : mass) m += st.full_basis_log_prob;
    std::vector<std::vector<double>> extra(sub_.size());
    for (const auto& c : st.covers.entries) {
      if (!c.tail.empty()) extra[c.tail.front()].push_back(c.log_prob);
    }
    for (std::size_t i = 0; i < mass.size(); ++i) {
      if (!extra[i].empty()) {
        extra[i].push_back(mass[i]);
        mass[i] = log_sum_exp(extra[i]);
      }
    }
    return mass;
  }

  /// Normalized next sub-token distribution (linear domain).
  std::vector<double> next_subtoken_dist(const SubtokenSamplerState& st) const {
    auto mass = next_subtoken_log_mass(st);
    const double total = log_sum_exp(mass);
    if (total == kLogZero) throw Error(ErrorKind::DeadEnd, "no sub-token has positive mass");
    for (auto& m : mass) m = std::exp(m - total);
    return mass;
  }

  /// Extends the basis by `chosen`, performing exactly one model call unless
  /// the new basis ends in EOS (then no call is needed).
  SubtokenSamplerState advance(const SubtokenSamplerState& st, TokenId chosen) const {
    if (!sub_.contains(chosen)) throw Error(ErrorKind::InvalidEncoding, "chosen sub-token out of range");
    if (ends_with_eos(st.basis)) {
      throw Error(ErrorKind::PrefixContainsEos, "cannot extend a basis that already ended");
    }
    SubtokenSamplerState next;
    next.basis = st.basis.appended(chosen);
    next.covers.basis = next.basis;
    next.covers.level = full_.bound();
    if (!is_valid(next.basis, sub_)) {
      throw Error(ErrorKind::ZeroProbabilityChoice, "basis extended by " + std::to_string(chosen) + " is not canonical");
    }

    for (const auto& c : st.covers.entries) {
      if (c.tail.empty() || c.tail.front() != chosen) continue;
      next.covers.entries.push_back(CoverEntry{c.enc, c.log_prob, {c.tail.begin() + 1, c.tail.end()}});
    }
    Encoding cand = st.full_basis;
    cand.ids.push_back(0);
    for (TokenId t = 0; t < full_.size(); ++t) {
      if (q_.first_sub(t) != chosen) continue;
      cand.ids.back() = t;
      if (!is_valid(cand, full_)) continue;
      auto tail = decompose_token(sub_.base(), t, sub_.bound());
      tail.erase(tail.begin());
      next.covers.entries.push_back(CoverEntry{cand, st.full_basis_log_prob + st.cond[t], std::move(tail)});
    }
    std::sort(next.covers.entries.begin(), next.covers.entries.end(),
              [](const CoverEntry& a, const CoverEntry& b) { return a.enc < b.enc; });
    if (next.covers.log_total() == kLogZero) {
      throw Error(ErrorKind::ZeroProbabilityChoice, "sub-token " + std::to_string(chosen) + " has zero probability");
    }

    next.full_basis = relative_encode(next.basis, sub_.base(), full_.bound());
    bool found = false;
    for (const auto& c : next.covers.entries) {
      if (c.tail.empty() && c.enc == next.full_basis) {
        next.full_basis_log_prob = c.log_prob;
        found = true;
        break;
      }
    }
    if (!found) throw Error(ErrorKind::DeadEnd, "re-encoded basis missing from its own cover set");
    fill_cond(next);
    return next;
  }

 private:
  void fill_cond(SubtokenSamplerState& st) const {
    const std::size_t n = full_.size();
    if (ends_with_eos(st.full_basis)) {
      st.cond.assign(n, kLogZero);
      st.cond[kEos] = 0.0;
      return;
    }
    st.cond = backend_->next_log_dist(st.full_basis);
    Encoding cand = st.full_basis;
    cand.ids.push_back(0);
    for (TokenId t = 0; t < n; ++t) {
      if (st.cond[t] == kLogZero) continue;
      cand.ids.back() = t;
      if (!is_valid(cand, full_)) st.cond[t] = kLogZero;
    }
  }

  const LmBackend* backend_;
  SubsetView sub_;
  SubsetView full_;
  TokenPrefixIndex index_;
  PrefixMatrix q_;
};

inline SubtokenSamplerState init_sampler(const SubtokenSampler& sampler, const Encoding& prompt) {
  return sampler.init(prompt);
}

inline std::vector<double> next_subtoken_dist(const SubtokenSampler& sampler, const SubtokenSamplerState& st) {
  return sampler.next_subtoken_dist(st);
}

inline SubtokenSamplerState advance(const SubtokenSampler& sampler, const SubtokenSamplerState& st, TokenId chosen) {
  return sampler.advance(st, chosen);
}

/// Draws an index from a linear-domain distribution.
template <class Rng>
TokenId draw(const std::vector<double>& dist, Rng& rng) {
  std::discrete_distribution<TokenId> pick(dist.begin(), dist.end());
  return pick(rng);
}

/// Samples up to `max_tokens` sub-tokens after `prompt`, stopping after EOS.
/// The EOS draw ends the sequence without a further advance.
template <class Rng>
std::vector<TokenId> sample_subtokens(const SubtokenSampler& sampler, const Encoding& prompt, std::size_t max_tokens,
                                      Rng& rng) {
  std::vector<TokenId> out;
  auto st = sampler.init(prompt);
  if (ends_with_eos(prompt)) return out;
  while (out.size() < max_tokens) {
    const TokenId t = draw(sampler.next_subtoken_dist(st), rng);
    out.push_back(t);
    if (t == kEos) break;
    st = sampler.advance(st, t);
  }
  return out;
}

}  // namespace xtok
