#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xtok/error.hpp"
#include "xtok/vocab.hpp"

namespace xtok {

/// A token sequence tagged with the merge bound of the vocabulary it lives in.
struct Encoding {
  std::vector<TokenId> ids;
  std::size_t level = 0;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  TokenId back() const { return ids.back(); }

  Encoding appended(TokenId t) const {
    Encoding out = *this;
    out.ids.push_back(t);
    return out;
  }

  friend bool operator==(const Encoding&, const Encoding&) = default;
  friend auto operator<=>(const Encoding&, const Encoding&) = default;
};

inline bool ends_with_eos(const Encoding& e) { return !e.empty() && e.back() == kEos; }

inline bool contains_eos(std::span<const TokenId> ids) {
  for (TokenId t : ids) {
    if (t == kEos) return true;
  }
  return false;
}

inline bool starts_with(const std::vector<TokenId>& seq, const std::vector<TokenId>& prefix) {
  return seq.size() >= prefix.size() && std::equal(prefix.begin(), prefix.end(), seq.begin());
}

namespace detail {

inline void require_level(const Encoding& enc, const SubsetView& view) {
  if (enc.level != view.bound()) {
    throw Error(ErrorKind::LevelMismatch, "encoding at level " + std::to_string(enc.level) +
                                              " used with vocabulary bound " + std::to_string(view.bound()));
  }
  for (TokenId t : enc.ids) {
    if (!view.contains(t)) {
      throw Error(ErrorKind::InvalidEncoding, "token " + std::to_string(t) + " not in vocabulary bound " +
                                                  std::to_string(view.bound()));
    }
  }
}

}  // namespace detail

/// One left-to-right pass applying `rule`; after a replacement the scan
/// skips both consumed positions.
inline Encoding merge_step(const Encoding& enc, const MergeRule& rule) {
  if (enc.level + 1 != rule.rank) {
    throw Error(ErrorKind::LevelMismatch, "merge rank " + std::to_string(rule.rank) +
                                              " applied to encoding at level " + std::to_string(enc.level));
  }
  Encoding out;
  out.level = rule.rank;
  out.ids.reserve(enc.ids.size());
  const auto& e = enc.ids;
  std::size_t i = 0;
  while (i < e.size()) {
    if (i + 1 < e.size() && e[i] == rule.left && e[i + 1] == rule.right) {
      out.ids.push_back(rule.result);
      i += 2;
    } else {
      out.ids.push_back(e[i]);
      i += 1;
    }
  }
  return out;
}

inline Encoding demerge_step(const Encoding& enc, const MergeRule& rule) {
  if (enc.level != rule.rank) {
    throw Error(ErrorKind::LevelMismatch, "demerge rank " + std::to_string(rule.rank) +
                                              " applied to encoding at level " + std::to_string(enc.level));
  }
  Encoding out;
  out.level = rule.rank - 1;
  out.ids.reserve(enc.ids.size() + 4);
  for (TokenId t : enc.ids) {
    if (t == rule.result) {
      out.ids.push_back(rule.left);
      out.ids.push_back(rule.right);
    } else {
      out.ids.push_back(t);
    }
  }
  return out;
}

/// Composition merge_{target} o ... o merge_{level+1}.
inline Encoding relative_encode(const Encoding& enc, const BpeVocab& vocab, std::size_t target) {
  if (target < enc.level || target > vocab.num_merges()) {
    throw Error(ErrorKind::BoundOutOfRange, "cannot relative-encode from level " + std::to_string(enc.level) +
                                                " to " + std::to_string(target));
  }
  Encoding cur = enc;
  for (std::size_t i = enc.level + 1; i <= target; ++i) cur = merge_step(cur, vocab.merge(i));
  return cur;
}

/// Composition demerge_{target+1} o ... o demerge_{level}.
inline Encoding relative_decode(const Encoding& enc, const BpeVocab& vocab, std::size_t target) {
  if (target > enc.level || enc.level > vocab.num_merges()) {
    throw Error(ErrorKind::BoundOutOfRange, "cannot relative-decode from level " + std::to_string(enc.level) +
                                                " to " + std::to_string(target));
  }
  Encoding cur = enc;
  for (std::size_t i = enc.level; i > target; --i) cur = demerge_step(cur, vocab.merge(i));
  return cur;
}

/// Expansion of a single token into tokens of V_level. Equivalent to
/// relative_decode of the one-token encoding, without the per-rank passes.
inline void append_decomposition(const BpeVocab& vocab, TokenId t, std::size_t level, std::vector<TokenId>& out) {
  if (t < vocab.size_at(level)) {
    out.push_back(t);
    return;
  }
  const auto& rule = vocab.merge(t - vocab.alphabet_size() + 1);
  append_decomposition(vocab, rule.left, level, out);
  append_decomposition(vocab, rule.right, level, out);
}

inline std::vector<TokenId> decompose_token(const BpeVocab& vocab, TokenId t, std::size_t level) {
  std::vector<TokenId> out;
  append_decomposition(vocab, t, level, out);
  return out;
}

inline Encoding encode(const SymbolString& symbols, const SubsetView& target) {
  for (TokenId s : symbols) {
    if (s >= target.base().alphabet_size()) {
      throw Error(ErrorKind::UnknownSymbol, "symbol id " + std::to_string(s) + " is not in the alphabet");
    }
  }
  return relative_encode(Encoding{symbols, 0}, target.base(), target.bound());
}

inline Encoding encode_text(std::string_view text, const SubsetView& target) {
  return encode(target.base().to_symbols(text), target);
}

inline SymbolString decode(const Encoding& enc, const SubsetView& source) {
  detail::require_level(enc, source);
  return relative_decode(enc, source.base(), 0).ids;
}

inline std::string decode_text(const Encoding& enc, const SubsetView& source, std::string_view eos_marker = "") {
  return source.base().to_text(decode(enc, source), eos_marker);
}

/// Canonicality: enc == encode(decode(enc)). Out-of-vocabulary ids are
/// simply not canonical.
inline bool is_valid(const Encoding& enc, const SubsetView& view) {
  if (enc.level != view.bound()) {
    throw Error(ErrorKind::LevelMismatch, "encoding at level " + std::to_string(enc.level) +
                                              " checked against bound " + std::to_string(view.bound()));
  }
  for (TokenId t : enc.ids) {
    if (!view.contains(t)) return false;
  }
  // Concatenating token expansions equals the full demerge composition.
  Encoding dec;
  for (TokenId t : enc.ids) {
    const auto& sym = view.base().token(t).symbols;
    dec.ids.insert(dec.ids.end(), sym.begin(), sym.end());
  }
  return relative_encode(dec, view.base(), view.bound()) == enc;
}

/// Space-separated token ids, the CLI serialization of an encoding.
inline std::string format_ids(const std::vector<TokenId>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(ids[i]);
  }
  return out;
}

}  // namespace xtok
