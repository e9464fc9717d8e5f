#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "xtok/codec.hpp"
#include "xtok/error.hpp"
#include "xtok/log_math.hpp"
#include "xtok/vocab.hpp"

namespace xtok {

/// Trie over token symbol expansions: lookup(p) returns every token of the
/// indexed view whose expansion starts with p.
class TokenPrefixIndex {
 public:
  explicit TokenPrefixIndex(const SubsetView& view) : view_(view) {
    nodes_.emplace_back();
    for (TokenId t = 0; t < view.size(); ++t) {
      std::size_t cur = 0;
      nodes_[cur].tokens.push_back(t);
      for (TokenId sym : view.base().token(t).symbols) {
        auto it = nodes_[cur].children.find(sym);
        if (it == nodes_[cur].children.end()) {
          nodes_.emplace_back();
          it = nodes_[cur].children.emplace(sym, nodes_.size() - 1).first;
        }
        cur = it->second;
        nodes_[cur].tokens.push_back(t);
      }
    }
  }

  const SubsetView& view() const { return view_; }

  /// Tokens (ascending id) whose expansion has `prefix` as a prefix.
  const std::vector<TokenId>& lookup(std::span<const TokenId> prefix) const {
    std::size_t cur = 0;
    for (TokenId sym : prefix) {
      auto it = nodes_[cur].children.find(sym);
      if (it == nodes_[cur].children.end()) return empty_;
      cur = it->second;
    }
    return nodes_[cur].tokens;
  }

  const std::vector<TokenId>& lookup_text(std::string_view text) const {
    SymbolString syms;
    try {
      syms = view_.base().to_symbols(text);
    } catch (const Error&) {
      return empty_;
    }
    return lookup(syms);
  }

 private:
  struct Node {
    std::map<TokenId, std::size_t> children;
    std::vector<TokenId> tokens;
  };
  SubsetView view_;
  std::vector<Node> nodes_;
  std::vector<TokenId> empty_;
};

inline TokenPrefixIndex token_prefix_index(const SubsetView& full) { return TokenPrefixIndex(full); }

struct CoverEntry {
  Encoding enc;                  // cover encoding at the full level
  double log_prob = kLogZero;    // filled in by scoring; unset after search
  std::vector<TokenId> tail;     // sub-tokens of the last token past the basis
};

struct CoverSet {
  Encoding basis;
  std::size_t level = 0;
  std::vector<CoverEntry> entries;  // sorted by encoding

  std::size_t size() const { return entries.size(); }

  std::vector<Encoding> encodings() const {
    std::vector<Encoding> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.enc);
    return out;
  }

  double log_total() const {
    std::vector<double> lp;
    lp.reserve(entries.size());
    for (const auto& e : entries) lp.push_back(e.log_prob);
    return log_sum_exp(lp);
  }
};

/// Sub-tokens of relative_decode(cover) beyond the first basis_size.
inline std::vector<TokenId> cover_tail(const Encoding& cover, const BpeVocab& vocab, std::size_t sub_level,
                                       std::size_t basis_size) {
  std::vector<TokenId> dec;
  for (TokenId t : cover.ids) append_decomposition(vocab, t, sub_level, dec);
  return {dec.begin() + static_cast<std::ptrdiff_t>(std::min(basis_size, dec.size())), dec.end()};
}

/// Every encoding at the index level whose last token starts inside the
/// basis and whose relative decoding begins with the basis.
///
/// Only split positions within L_max symbols of the end are scanned: a token
/// starting earlier would have to be longer than the longest token.
inline CoverSet relative_cover_search(const Encoding& enc, const SubsetView& sub, const TokenPrefixIndex& index) {
  const SubsetView& full = index.view();
  const BpeVocab& vocab = full.base();
  if (&sub.base() != &vocab && !(sub.base() == vocab)) {
    throw Error(ErrorKind::LevelMismatch, "basis and target views use different vocabularies");
  }
  if (sub.bound() > full.bound()) {
    throw Error(ErrorKind::BoundOutOfRange, "subset bound exceeds target bound");
  }
  if (!is_valid(enc, sub)) throw Error(ErrorKind::InvalidBasis, "basis [" + format_ids(enc.ids) + "] is not canonical");

  CoverSet out;
  out.basis = enc;
  out.level = full.bound();
  if (enc.empty()) {
    out.entries.push_back(CoverEntry{Encoding{{}, full.bound()}, kLogZero, {}});
    return out;
  }

  SymbolString s;
  for (TokenId t : enc.ids) {
    const auto& sym = vocab.token(t).symbols;
    s.insert(s.end(), sym.begin(), sym.end());
  }
  const std::size_t lmax = vocab.max_token_length(full.bound());
  const std::size_t first = s.size() > lmax ? s.size() - lmax : 0;

  for (std::size_t i = first; i < s.size(); ++i) {
    const auto& candidates = index.lookup(std::span<const TokenId>(s).subspan(i));
    if (candidates.empty()) continue;
    const Encoding left = encode(SymbolString(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(i)), full);
    for (TokenId right : candidates) {
      Encoding cand = left.appended(right);
      if (!is_valid(cand, full)) continue;
      SymbolString sp(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(i));
      const auto& rs = vocab.token(right).symbols;
      sp.insert(sp.end(), rs.begin(), rs.end());
      if (!starts_with(encode(sp, sub).ids, enc.ids)) continue;
      auto tail = cover_tail(cand, vocab, sub.bound(), enc.size());
      out.entries.push_back(CoverEntry{std::move(cand), kLogZero, std::move(tail)});
    }
  }
  std::sort(out.entries.begin(), out.entries.end(),
            [](const CoverEntry& a, const CoverEntry& b) { return a.enc < b.enc; });
  return out;
}

inline CoverSet relative_cover_search(const Encoding& enc, const SubsetView& sub, const SubsetView& full) {
  return relative_cover_search(enc, sub, TokenPrefixIndex(full));
}

/// Convenience form: basis at its own level, covers at the full vocabulary.
inline CoverSet relative_cover_search(const Encoding& enc, const BpeVocab& full) {
  return relative_cover_search(enc, SubsetView(full, enc.level), SubsetView(full, full.num_merges()));
}

}  // namespace xtok
