#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <vector>

#include "xtok/codec.hpp"
#include "xtok/error.hpp"
#include "xtok/lm.hpp"
#include "xtok/log_math.hpp"
#include "xtok/vocab.hpp"

namespace xtok {

/// One term of the signed expansion: coefficient times the model
/// probability of `enc` at the model level.
struct SignedLeaf {
  Encoding enc;
  std::int64_t coeff = 0;

  friend bool operator==(const SignedLeaf&, const SignedLeaf&) = default;
};

struct ExactOptions {
  /// Maximum number of recursion nodes across all levels; 0 disables the cap.
  std::size_t max_nodes = 0;
  /// At model level 0, rewrite -x + sum_{c in S} x.c as -sum_{c not in S} x.c
  /// over this continuation alphabet whenever it shortens the expansion.
  /// The rewrite preserves the value only if the alphabet covers everything
  /// the model can emit after x; leaving EOS out gives the EOS-free
  /// symbolic form, which is exact only where the model puts no mass on EOS.
  std::optional<std::vector<TokenId>> collect_alphabet;
};

struct ExactResult {
  double prob = 0.0;
  double log_prob = kLogZero;
  std::size_t nodes = 0;
  std::vector<SignedLeaf> leaves;  // sorted by encoding
};

namespace detail {

using LeafMap = std::map<std::vector<TokenId>, std::int64_t>;

inline void add_term(LeafMap& m, std::vector<TokenId> ids, std::int64_t c) {
  auto [it, inserted] = m.try_emplace(std::move(ids), c);
  if (!inserted) {
    it->second += c;
    if (it->second == 0) m.erase(it);
  }
}

/// Repeatedly folds groups {x: -k, x.c: +k for c in S} into -k * sum over
/// the complement of S when that yields fewer terms. Longer x are folded
/// first so that nested groups collapse from the inside out.
inline void collect_continuations(LeafMap& leaves, const std::vector<TokenId>& alphabet) {
  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<LeafMap::iterator> order;
    for (auto it = leaves.begin(); it != leaves.end(); ++it) order.push_back(it);
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& a, const auto& b) { return a->first.size() > b->first.size(); });
    for (auto it : order) {
      const auto& x = it->first;
      const std::int64_t k = -it->second;
      if (k == 0 || (!x.empty() && x.back() == kEos)) continue;
      std::vector<TokenId> present;
      for (TokenId c : alphabet) {
        auto ext = x;
        ext.push_back(c);
        auto f = leaves.find(ext);
        if (f != leaves.end() && f->second == k) present.push_back(c);
      }
      const std::size_t before = 1 + present.size();
      const std::size_t after = alphabet.size() - present.size();
      if (present.empty() || after >= before) continue;
      const auto base = x;
      leaves.erase(it);
      for (TokenId c : present) {
        auto ext = base;
        ext.push_back(c);
        leaves.erase(ext);
      }
      for (TokenId c : alphabet) {
        if (std::find(present.begin(), present.end(), c) != present.end()) continue;
        auto ext = base;
        ext.push_back(c);
        add_term(leaves, std::move(ext), -k);
      }
      changed = true;
      break;
    }
  }
}

}  // namespace detail

/// Expands P_M(enc) into signed model-level leaves without evaluating the
/// model. Invalid intermediate encodings contribute nothing and are pruned.
inline ExactResult expand_convert(const Encoding& enc, const BpeVocab& vocab, std::size_t model_bound,
                                  const ExactOptions& opts = {}) {
  if (enc.level < model_bound) {
    throw Error(ErrorKind::LevelMismatch, "encoding level " + std::to_string(enc.level) + " below model bound " +
                                              std::to_string(model_bound));
  }
  ExactResult res;
  if (!is_valid(enc, SubsetView(vocab, enc.level))) return res;

  detail::LeafMap frontier;
  frontier.emplace(enc.ids, 1);
  res.nodes = 1;
  for (std::size_t level = enc.level; level > model_bound; --level) {
    const MergeRule& rule = vocab.merge(level);
    const SubsetView lower(vocab, level - 1);
    detail::LeafMap next;
    for (const auto& [ids, coeff] : frontier) {
      const Encoding node{ids, level};
      Encoding d = demerge_step(node, rule);
      const bool branch = !ids.empty() && ids.back() == rule.left;
      if (branch) {
        Encoding ext = d.appended(rule.right);
        if (is_valid(ext, lower)) detail::add_term(next, std::move(ext.ids), -coeff);
      }
      if (is_valid(d, lower)) detail::add_term(next, std::move(d.ids), coeff);
      res.nodes += branch ? 2 : 1;
      if (opts.max_nodes && res.nodes > opts.max_nodes) {
        throw Error(ErrorKind::BudgetExceeded, "expansion exceeded " + std::to_string(opts.max_nodes) + " nodes");
      }
    }
    frontier = std::move(next);
  }
  if (opts.collect_alphabet && model_bound == 0) detail::collect_continuations(frontier, *opts.collect_alphabet);
  for (auto& [ids, coeff] : frontier) res.leaves.push_back(SignedLeaf{Encoding{ids, model_bound}, coeff});
  return res;
}

/// Probability that the model's output re-encodes at enc.level to a sequence
/// beginning with `enc`.
inline ExactResult convert_prob_exact_full(const LmBackend& backend, const Encoding& enc,
                                           const ExactOptions& opts = {}) {
  auto res = expand_convert(enc, backend.vocab(), backend.vocab_bound(), opts);
  std::vector<double> pos, neg;
  for (const auto& leaf : res.leaves) {
    const double lp = backend.joint_log_prob(leaf.enc);
    if (lp == kLogZero) continue;
    const double w = std::log(static_cast<double>(leaf.coeff > 0 ? leaf.coeff : -leaf.coeff));
    (leaf.coeff > 0 ? pos : neg).push_back(lp + w);
  }
  const double lp = log_sum_exp(pos);
  const double ln = log_sum_exp(neg);
  if (ln == kLogZero) {
    res.log_prob = lp;
    res.prob = std::exp(lp);
    return res;
  }
  if (ln >= lp) {
    const double deficit = std::exp(ln) - std::exp(lp);
    if (deficit > 1e-9) {
      throw Error(ErrorKind::NegativeResult, "signed expansion is negative by " + std::to_string(deficit));
    }
    res.prob = 0.0;
    res.log_prob = kLogZero;
    return res;
  }
  res.log_prob = log_diff_exp(lp, ln);
  res.prob = std::exp(res.log_prob);
  if (res.prob < 1e-12) {
    res.prob = 0.0;
    res.log_prob = kLogZero;
  }
  return res;
}

inline double convert_prob_exact(const LmBackend& backend, const Encoding& enc, const ExactOptions& opts = {}) {
  return convert_prob_exact_full(backend, enc, opts).prob;
}

/// Symbols that end a candidate continuation. EOS always does.
class StopSet {
 public:
  StopSet() = default;
  explicit StopSet(std::vector<TokenId> symbols) {
    for (TokenId s : symbols) symbols_.insert(s);
  }

  /// Whitespace and EOS, the usual pre-tokenization boundary.
  static StopSet default_for(const BpeVocab& vocab) {
    StopSet s;
    for (TokenId a = 1; a < vocab.alphabet_size(); ++a) {
      if (vocab.token(a).bytes == " ") s.symbols_.insert(a);
    }
    return s;
  }

  bool stops(TokenId symbol) const { return symbol == kEos || symbols_.count(symbol) > 0; }
  const std::set<TokenId>& symbols() const { return symbols_; }

 private:
  std::set<TokenId> symbols_;
};

struct ApproxOptions {
  std::size_t beams = 16;
  std::size_t max_len = 16;  // appended symbols before a candidate is cut
  StopSet stop;
};

struct ApproxResult {
  double prob = 0.0;
  double prefix_prob = 0.0;        // P_0(s)
  std::size_t terminated = 0;      // candidates examined
  std::size_t subtracted = 0;      // candidates whose re-encoding diverges
  bool exhausted = false;          // no candidates remained
};

/// Beam approximation: P_0(s) minus the mass of the N most probable stopped
/// continuations whose re-encoding no longer begins with `enc`. Candidates
/// are visited best-first, so the set used for N is a subset of the set used
/// for N + 1.
inline ApproxResult convert_prob_approx_full(const LmBackend& backend, const Encoding& enc,
                                             const ApproxOptions& opts) {
  if (backend.vocab_bound() != 0) throw Error(ErrorKind::LevelMismatch, "approximation needs a byte-level backend");
  const BpeVocab& vocab = backend.vocab();
  const SubsetView target(vocab, enc.level);
  ApproxResult res;
  if (!is_valid(enc, target)) return res;
  const SymbolString s = decode(enc, target);
  const double lps = backend.joint_log_prob(Encoding{s, 0});
  res.prefix_prob = std::exp(lps);
  if (lps == kLogZero || enc.empty() || ends_with_eos(enc)) {
    res.prob = res.prefix_prob;
    res.exhausted = true;
    return res;
  }

  struct Node {
    double lp;
    SymbolString ext;
  };
  auto worse = [](const Node& a, const Node& b) {
    if (a.lp != b.lp) return a.lp < b.lp;
    return a.ext > b.ext;
  };
  std::priority_queue<Node, std::vector<Node>, decltype(worse)> heap(worse);
  heap.push(Node{lps, {}});
  std::vector<double> removed;
  while (!heap.empty() && res.terminated < opts.beams) {
    Node n = heap.top();
    heap.pop();
    const bool stopped = !n.ext.empty() && opts.stop.stops(n.ext.back());
    if (stopped || n.ext.size() >= opts.max_len) {
      ++res.terminated;
      SymbolString full = s;
      full.insert(full.end(), n.ext.begin(), n.ext.end());
      if (!starts_with(encode(full, target).ids, enc.ids)) {
        ++res.subtracted;
        removed.push_back(n.lp);
      }
      continue;
    }
    SymbolString prefix = s;
    prefix.insert(prefix.end(), n.ext.begin(), n.ext.end());
    const auto d = backend.next_log_dist(Encoding{prefix, 0});
    for (TokenId c = 0; c < d.size(); ++c) {
      if (d[c] == kLogZero) continue;
      Node child{n.lp + d[c], n.ext};
      child.ext.push_back(c);
      heap.push(std::move(child));
    }
  }
  res.exhausted = heap.empty();
  const double lr = log_sum_exp(removed);
  res.prob = lr >= lps ? 0.0 : std::exp(log_diff_exp(lps, lr));
  res.prob = std::clamp(res.prob, 0.0, 1.0);
  return res;
}

inline double convert_prob_approx(const LmBackend& backend, const Encoding& enc, const ApproxOptions& opts) {
  return convert_prob_approx_full(backend, enc, opts).prob;
}

struct RejectionOptions {
  std::size_t max_len = 64;
  std::size_t max_rejections = 10000;
  StopSet stop;
};

/// Draws the next full-vocabulary token after `enc` by sampling byte-level
/// continuations and keeping only those that re-encode consistently.
/// `rejections`, when given, receives the number of discarded attempts.
template <class Rng>
TokenId sample_token_rejection(const LmBackend& backend, const Encoding& enc, const RejectionOptions& opts, Rng& rng,
                               std::size_t* rejections = nullptr) {
  if (backend.vocab_bound() != 0) throw Error(ErrorKind::LevelMismatch, "rejection sampling needs a byte-level backend");
  const SubsetView target(backend.vocab(), enc.level);
  if (!is_valid(enc, target)) throw Error(ErrorKind::InvalidEncoding, "prefix is not canonical");
  if (ends_with_eos(enc)) return kEos;
  const SymbolString s = decode(enc, target);
  for (std::size_t attempt = 0; attempt <= opts.max_rejections; ++attempt) {
    SymbolString cur = s;
    for (std::size_t k = 0; k < opts.max_len; ++k) {
      const auto d = backend.next_dist(Encoding{cur, 0});
      std::discrete_distribution<TokenId> pick(d.begin(), d.end());
      const TokenId c = pick(rng);
      cur.push_back(c);
      if (opts.stop.stops(c)) break;
    }
    const auto full = encode(cur, target);
    if (full.ids.size() > enc.ids.size() && starts_with(full.ids, enc.ids)) {
      if (rejections) *rejections = attempt;
      return full.ids[enc.ids.size()];
    }
  }
  throw Error(ErrorKind::MaxRejections, "no consistent continuation after " + std::to_string(opts.max_rejections) +
                                            " rejections");
}

}  // namespace xtok
