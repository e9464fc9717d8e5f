#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <vector>

#include "xtok/error.hpp"
#include "xtok/lm.hpp"
#include "xtok/log_math.hpp"
#include "xtok/vocab.hpp"

// Ground truth by exhaustive enumeration. Nothing here calls into the codec,
// cover or conversion code: encoding is redone on symbol contents so that a
// bug in the production path cannot hide itself.

namespace xtok::oracle {

/// Encodes by merging symbol *contents* one rule at a time. Each rule is
/// re-applied until the sequence stops changing.
class NaiveEncoder {
 public:
  explicit NaiveEncoder(const BpeVocab& vocab) : vocab_(&vocab) {
    for (const auto& t : vocab.tokens()) by_content_.emplace(t.symbols, t.id);
  }

  std::vector<TokenId> encode(const SymbolString& s, std::size_t bound) const {
    std::vector<SymbolString> pieces;
    for (TokenId c : s) pieces.push_back(SymbolString{c});
    for (std::size_t r = 1; r <= bound; ++r) {
      const auto& rule = vocab_->merges()[r - 1];
      const SymbolString& l = vocab_->tokens()[rule.left].symbols;
      const SymbolString& rt = vocab_->tokens()[rule.right].symbols;
      for (bool changed = true; changed;) {
        changed = false;
        std::vector<SymbolString> out;
        for (std::size_t i = 0; i < pieces.size();) {
          if (i + 1 < pieces.size() && pieces[i] == l && pieces[i + 1] == rt) {
            SymbolString m = l;
            m.insert(m.end(), rt.begin(), rt.end());
            out.push_back(std::move(m));
            i += 2;
            changed = true;
          } else {
            out.push_back(pieces[i]);
            i += 1;
          }
        }
        pieces = std::move(out);
      }
    }
    std::vector<TokenId> ids;
    for (const auto& p : pieces) ids.push_back(by_content_.at(p));
    return ids;
  }

  SymbolString symbols(const std::vector<TokenId>& ids) const {
    SymbolString s;
    for (TokenId t : ids) {
      const auto& sym = vocab_->tokens().at(t).symbols;
      s.insert(s.end(), sym.begin(), sym.end());
    }
    return s;
  }

  bool valid(const std::vector<TokenId>& ids, std::size_t bound) const {
    for (TokenId t : ids) {
      if (t >= vocab_->alphabet_size() + bound) return false;
    }
    return encode(symbols(ids), bound) == ids;
  }

  /// Longest token (in symbols) among the alphabet and first `bound` merges.
  std::size_t longest(std::size_t bound) const {
    std::size_t n = 1;
    for (std::size_t t = 0; t < vocab_->alphabet_size() + bound; ++t) n = std::max(n, vocab_->tokens()[t].symbols.size());
    return n;
  }

 private:
  const BpeVocab* vocab_;
  std::map<SymbolString, TokenId> by_content_;
};

struct EnumerationBudget {
  std::size_t max_string_len = 10;
  /// Only EOS-terminated strings are classified; open branches all count as
  /// residual.
  bool require_eos = false;
  /// Stop descending once a branch's answer can no longer change.
  bool prune = true;
  std::size_t max_nodes = 5'000'000;
};

/// Mass is split three ways: strings whose target encoding begins with the
/// query (`yes`), strings where it does not (`no`), and branches cut off
/// before the answer was settled (`residual`). The true value lies in
/// [yes, yes + residual].
struct OracleResult {
  double yes = 0.0;
  double no = 0.0;
  double residual = 0.0;
  std::size_t nodes = 0;

  double lower() const { return yes; }
  double upper() const { return yes + residual; }
  double enumerated() const { return yes + no; }
  bool contains(double x, double tol = 1e-9) const { return x >= lower() - tol && x <= upper() + tol; }
};

namespace detail {

enum class Verdict { Yes, No, Open };

/// Classifies a generated symbol prefix `u` against the query.
///
/// After BPE passes 1..M, the tokens lying wholly before symbol position
/// |u| - D are final for every continuation of u, where D is the sum of the
/// longest token lengths at levels 0..M-1: each pass can only revise its
/// last input token.
inline Verdict classify(const NaiveEncoder& ne, const SymbolString& u, bool complete, const SymbolString& s,
                        const std::vector<TokenId>& enc, std::size_t level, std::size_t horizon) {
  const std::size_t n = std::min(u.size(), s.size());
  if (!std::equal(u.begin(), u.begin() + static_cast<std::ptrdiff_t>(n), s.begin())) return Verdict::No;
  if (!complete && (u.size() < s.size() || u.size() < s.size() + horizon)) return Verdict::Open;
  if (complete && u.size() < s.size()) return Verdict::No;
  const auto e = ne.encode(u, level);
  return e.size() >= enc.size() && std::equal(enc.begin(), enc.end(), e.begin()) ? Verdict::Yes : Verdict::No;
}

inline std::size_t horizon(const NaiveEncoder& ne, std::size_t level) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < level; ++i) d += ne.longest(i);
  return d;
}

}  // namespace detail

/// Probability that `backend`'s output, re-encoded at enc.level, begins with
/// `enc`, by walking the backend's generation tree.
inline OracleResult oracle_conversion_prob(const LmBackend& backend, const Encoding& enc,
                                           const EnumerationBudget& budget = {}) {
  const BpeVocab& vocab = backend.vocab();
  const NaiveEncoder ne(vocab);
  OracleResult res;
  if (enc.ids.empty()) {
    res.yes = 1.0;
    return res;
  }
  if (!ne.valid(enc.ids, enc.level)) {
    res.no = 1.0;
    return res;
  }
  const SymbolString s = ne.symbols(enc.ids);
  const std::size_t hz = detail::horizon(ne, enc.level);

  struct Frame {
    std::vector<TokenId> ids;
    SymbolString u;
    double lp;
  };
  std::vector<Frame> stack{{{}, {}, 0.0}};
  while (!stack.empty()) {
    Frame f = std::move(stack.back());
    stack.pop_back();
    if (++res.nodes > budget.max_nodes) {
      throw Error(ErrorKind::BudgetIntractable, "enumeration exceeded " + std::to_string(budget.max_nodes) + " nodes");
    }
    const double p = std::exp(f.lp);
    const bool complete = !f.u.empty() && f.u.back() == kEos;
    const bool at_limit = f.u.size() >= budget.max_string_len;
    const bool decide_now = complete || at_limit || (budget.prune && !budget.require_eos);
    if (decide_now) {
      auto v = detail::classify(ne, f.u, complete, s, enc.ids, enc.level, hz);
      if (!complete && budget.require_eos) v = detail::Verdict::Open;
      if (v == detail::Verdict::Yes) {
        res.yes += p;
        continue;
      }
      if (v == detail::Verdict::No) {
        res.no += p;
        continue;
      }
      if (at_limit) {
        res.residual += p;
        continue;
      }
    }
    const auto d = backend.next_log_dist(Encoding{f.ids, backend.vocab_bound()});
    for (TokenId t = 0; t < d.size(); ++t) {
      if (d[t] == kLogZero) continue;
      Frame c{f.ids, f.u, f.lp + d[t]};
      c.ids.push_back(t);
      const auto& sym = vocab.tokens()[t].symbols;
      c.u.insert(c.u.end(), sym.begin(), sym.end());
      stack.push_back(std::move(c));
    }
  }
  return res;
}

/// The generation tree enumerated once to a fixed length, answering any
/// number of queries. Use when many encodings share one backend.
class OracleEnumeration {
 public:
  OracleEnumeration(const LmBackend& backend, EnumerationBudget budget = {})
      : vocab_(&backend.vocab()), ne_(backend.vocab()), budget_(budget) {
    struct Frame {
      std::vector<TokenId> ids;
      SymbolString u;
      double lp;
    };
    std::vector<Frame> stack{{{}, {}, 0.0}};
    std::size_t nodes = 0;
    while (!stack.empty()) {
      Frame f = std::move(stack.back());
      stack.pop_back();
      if (++nodes > budget.max_nodes) {
        throw Error(ErrorKind::BudgetIntractable, "enumeration exceeded " + std::to_string(budget.max_nodes) + " nodes");
      }
      const bool complete = !f.u.empty() && f.u.back() == kEos;
      if (complete || f.u.size() >= budget.max_string_len) {
        leaves_.push_back(Leaf{std::move(f.u), std::exp(f.lp), complete});
        continue;
      }
      const auto d = backend.next_log_dist(Encoding{f.ids, backend.vocab_bound()});
      for (TokenId t = 0; t < d.size(); ++t) {
        if (d[t] == kLogZero) continue;
        Frame c{f.ids, f.u, f.lp + d[t]};
        c.ids.push_back(t);
        const auto& sym = backend.vocab().tokens()[t].symbols;
        c.u.insert(c.u.end(), sym.begin(), sym.end());
        stack.push_back(std::move(c));
      }
    }
  }

  std::size_t leaf_count() const { return leaves_.size(); }

  double open_mass() const {
    double m = 0.0;
    for (const auto& l : leaves_) m += l.complete ? 0.0 : l.p;
    return m;
  }

  OracleResult query(const Encoding& enc) const {
    OracleResult res;
    res.nodes = leaves_.size();
    if (enc.ids.empty()) {
      res.yes = 1.0;
      return res;
    }
    if (!ne_.valid(enc.ids, enc.level)) {
      res.no = 1.0;
      return res;
    }
    const SymbolString s = ne_.symbols(enc.ids);
    const std::size_t hz = detail::horizon(ne_, enc.level);
    for (const auto& l : leaves_) {
      auto v = detail::classify(ne_, l.u, l.complete, s, enc.ids, enc.level, hz);
      if (!l.complete && budget_.require_eos) v = detail::Verdict::Open;
      (v == detail::Verdict::Yes ? res.yes : v == detail::Verdict::No ? res.no : res.residual) += l.p;
    }
    return res;
  }

 private:
  struct Leaf {
    SymbolString u;
    double p;
    bool complete;
  };
  const BpeVocab* vocab_;
  NaiveEncoder ne_;
  EnumerationBudget budget_;
  std::vector<Leaf> leaves_;
};

/// Covers of `enc` (level sub_bound) at level full_bound, straight from the
/// definition: a canonical left part decoding to a basis prefix, then one
/// token whose sub-token expansion begins with the remaining basis tokens.
/// Every split point and every token is tried.
inline std::set<std::vector<TokenId>> oracle_cover_set(const Encoding& enc, const BpeVocab& vocab,
                                                       std::size_t full_bound) {
  const NaiveEncoder ne(vocab);
  const std::size_t sub_bound = enc.level;
  std::set<std::vector<TokenId>> out;
  if (enc.ids.empty()) {
    out.insert(std::vector<TokenId>{});
    return out;
  }
  for (std::size_t i = 0; i < enc.ids.size(); ++i) {
    const std::vector<TokenId> head(enc.ids.begin(), enc.ids.begin() + static_cast<std::ptrdiff_t>(i));
    const std::vector<TokenId> rest(enc.ids.begin() + static_cast<std::ptrdiff_t>(i), enc.ids.end());
    const auto left = ne.encode(ne.symbols(head), full_bound);
    if (ne.encode(ne.symbols(left), sub_bound) != head) continue;
    for (TokenId t = 0; t < vocab.alphabet_size() + full_bound; ++t) {
      const auto pieces = ne.encode(vocab.tokens()[t].symbols, sub_bound);
      if (pieces.size() < rest.size() || !std::equal(rest.begin(), rest.end(), pieces.begin())) continue;
      auto cand = left;
      cand.push_back(t);
      if (!ne.valid(cand, full_bound)) continue;
      out.insert(std::move(cand));
    }
  }
  return out;
}

}  // namespace xtok::oracle
