#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xtok/error.hpp"

namespace xtok {

using TokenId = std::uint32_t;

/// Token id 0 is end-of-string. It is never part of a merge and never occurs
/// inside another token.
inline constexpr TokenId kEos = 0;

/// A string over the vocabulary alphabet, stored as alphabet token ids.
/// All prefix/suffix reasoning happens on these ids rather than raw bytes, so
/// EOS can never be confused with data.
using SymbolString = std::vector<TokenId>;

struct Token {
  TokenId id = 0;
  std::string bytes;     // surface form; empty for EOS
  SymbolString symbols;  // expansion into alphabet ids
};

struct MergeRule {
  TokenId left = 0;
  TokenId right = 0;
  TokenId result = 0;
  std::size_t rank = 0;  // 1-based merge index
};

using MergePair = std::pair<TokenId, TokenId>;

/// Ordered alphabet (EOS first) plus ordered merge list. Immutable once built.
class BpeVocab {
 public:
  BpeVocab() = default;

  /// `data_symbols` are the non-EOS alphabet symbols in order; EOS is
  /// prepended as id 0. Merge i (1-based) receives id alphabet_size() + i - 1.
  static BpeVocab build(const std::vector<std::string>& data_symbols,
                        const std::vector<MergePair>& merges) {
    BpeVocab v;
    if (data_symbols.empty()) {
      throw Error(ErrorKind::ParseError, "alphabet must contain at least one data symbol");
    }
    v.tokens_.push_back(Token{kEos, std::string{}, SymbolString{kEos}});
    std::map<std::string, TokenId> seen;
    for (const auto& sym : data_symbols) {
      if (sym.empty()) throw Error(ErrorKind::ParseError, "empty alphabet symbol");
      const auto id = static_cast<TokenId>(v.tokens_.size());
      if (!seen.emplace(sym, id).second) {
        throw Error(ErrorKind::DuplicateToken, "alphabet symbol repeated at id " + std::to_string(id));
      }
      v.tokens_.push_back(Token{id, sym, SymbolString{id}});
    }
    v.alphabet_size_ = v.tokens_.size();

    std::map<SymbolString, TokenId> expansions;
    for (std::size_t i = 1; i < v.alphabet_size_; ++i) expansions.emplace(v.tokens_[i].symbols, i);

    for (std::size_t k = 0; k < merges.size(); ++k) {
      const auto [l, r] = merges[k];
      const auto result = static_cast<TokenId>(v.tokens_.size());
      if (l == kEos || r == kEos || l >= result || r >= result) {
        throw Error(ErrorKind::MergeOrderViolation,
                    "merge " + std::to_string(k + 1) + " (" + std::to_string(l) + ", " +
                        std::to_string(r) + ") references EOS or an undefined token");
      }
      Token t;
      t.id = result;
      t.bytes = v.tokens_[l].bytes + v.tokens_[r].bytes;
      t.symbols = v.tokens_[l].symbols;
      t.symbols.insert(t.symbols.end(), v.tokens_[r].symbols.begin(), v.tokens_[r].symbols.end());
      if (!expansions.emplace(t.symbols, result).second) {
        throw Error(ErrorKind::DuplicateToken,
                    "merge " + std::to_string(k + 1) + " reproduces an existing token");
      }
      v.tokens_.push_back(std::move(t));
      v.merges_.push_back(MergeRule{l, r, result, k + 1});
    }

    // Surface bytes must also be unique among data tokens.
    std::map<std::string, TokenId> by_bytes;
    for (std::size_t i = 1; i < v.tokens_.size(); ++i) {
      if (!by_bytes.emplace(v.tokens_[i].bytes, static_cast<TokenId>(i)).second) {
        throw Error(ErrorKind::DuplicateToken, "token " + std::to_string(i) + " has the same bytes as token " +
                                                   std::to_string(by_bytes[v.tokens_[i].bytes]));
      }
    }

    v.max_len_at_.assign(v.merges_.size() + 1, 1);
    for (std::size_t m = 1; m <= v.merges_.size(); ++m) {
      v.max_len_at_[m] = std::max(v.max_len_at_[m - 1], v.tokens_[v.alphabet_size_ + m - 1].symbols.size());
    }
    return v;
  }

  std::size_t alphabet_size() const { return alphabet_size_; }
  std::size_t num_merges() const { return merges_.size(); }
  std::size_t size() const { return tokens_.size(); }

  const Token& token(TokenId id) const {
    if (id >= tokens_.size()) throw Error(ErrorKind::InvalidEncoding, "token id " + std::to_string(id) + " out of range");
    return tokens_[id];
  }
  const std::vector<Token>& tokens() const { return tokens_; }

  /// Merge of the given 1-based rank.
  const MergeRule& merge(std::size_t rank) const {
    if (rank == 0 || rank > merges_.size()) {
      throw Error(ErrorKind::BoundOutOfRange, "merge rank " + std::to_string(rank) + " out of range");
    }
    return merges_[rank - 1];
  }
  const std::vector<MergeRule>& merges() const { return merges_; }

  /// Number of tokens in the truncated vocabulary with `bound` merges.
  std::size_t size_at(std::size_t bound) const { return alphabet_size_ + bound; }

  /// Longest token length (in alphabet symbols) among the first `bound` merges.
  std::size_t max_token_length(std::size_t bound) const { return max_len_at_.at(bound); }

  /// Splits text into alphabet symbols by longest match.
  SymbolString to_symbols(std::string_view text) const {
    SymbolString out;
    std::size_t pos = 0;
    while (pos < text.size()) {
      TokenId best = kEos;
      std::size_t best_len = 0;
      for (std::size_t a = 1; a < alphabet_size_; ++a) {
        const auto& b = tokens_[a].bytes;
        if (b.size() > best_len && text.substr(pos, b.size()) == b) {
          best = static_cast<TokenId>(a);
          best_len = b.size();
        }
      }
      if (best_len == 0) {
        throw Error(ErrorKind::UnknownSymbol, "no alphabet symbol matches at byte offset " + std::to_string(pos));
      }
      out.push_back(best);
      pos += best_len;
    }
    return out;
  }

  /// Surface bytes of a symbol string; EOS renders as `eos_marker`.
  std::string to_text(const SymbolString& symbols, std::string_view eos_marker = "") const {
    std::string out;
    for (TokenId s : symbols) {
      if (s == kEos) {
        out += eos_marker;
      } else {
        out += token(s).bytes;
      }
    }
    return out;
  }

  friend bool operator==(const BpeVocab& a, const BpeVocab& b) {
    if (a.alphabet_size_ != b.alphabet_size_ || a.tokens_.size() != b.tokens_.size()) return false;
    for (std::size_t i = 0; i < a.tokens_.size(); ++i) {
      if (a.tokens_[i].bytes != b.tokens_[i].bytes) return false;
    }
    for (std::size_t i = 0; i < a.merges_.size(); ++i) {
      if (a.merges_[i].left != b.merges_[i].left || a.merges_[i].right != b.merges_[i].right) return false;
    }
    return true;
  }

 private:
  std::vector<Token> tokens_;
  std::vector<MergeRule> merges_;
  std::size_t alphabet_size_ = 0;
  std::vector<std::size_t> max_len_at_;
};

inline BpeVocab build_vocab(const std::vector<std::string>& data_symbols, const std::vector<MergePair>& merges) {
  return BpeVocab::build(data_symbols, merges);
}

/// The truncated vocabulary holding the alphabet and the first `bound` merges.
/// Non-owning: the base vocabulary must outlive the view.
class SubsetView {
 public:
  SubsetView(const BpeVocab& base, std::size_t bound) : base_(&base), bound_(bound) {
    if (bound > base.num_merges()) {
      throw Error(ErrorKind::BoundOutOfRange, "bound " + std::to_string(bound) + " exceeds " +
                                                  std::to_string(base.num_merges()) + " merges");
    }
  }

  const BpeVocab& base() const { return *base_; }
  std::size_t bound() const { return bound_; }
  std::size_t size() const { return base_->size_at(bound_); }
  bool contains(TokenId id) const { return id < size(); }

 private:
  const BpeVocab* base_;
  std::size_t bound_;
};

inline SubsetView subset_view(const BpeVocab& vocab, std::size_t bound) { return SubsetView(vocab, bound); }

// ---------------------------------------------------------------------------
// Vocab file format
//
//   xtok-vocab v1 |A|=<n> M=<m>
//   EOS                       (alphabet[0])
//   <hex bytes>               (alphabet[1..n-1], lowercase hex)
//   <left_id> <right_id>      (m merge lines)
//
// Every line, including the last, ends with '\n'.

namespace detail {

inline std::string to_hex(std::string_view bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(kDigits[c >> 4]);
    out.push_back(kDigits[c & 0xf]);
  }
  return out;
}

inline int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

inline std::string from_hex(std::string_view hex, std::size_t line_no) {
  if (hex.empty() || hex.size() % 2 != 0) {
    throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": malformed hex symbol");
  }
  std::string out;
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    const int hi = hex_value(hex[i]);
    const int lo = hex_value(hex[i + 1]);
    if (hi < 0 || lo < 0) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": malformed hex symbol");
    }
    out.push_back(static_cast<char>((hi << 4) | lo));
  }
  return out;
}

inline std::size_t parse_count(std::string_view field, std::string_view key, std::size_t line_no) {
  if (field.substr(0, key.size()) != key || field.size() == key.size()) {
    throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": expected " + std::string(key));
  }
  std::size_t value = 0;
  for (char c : field.substr(key.size())) {
    if (c < '0' || c > '9') throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": bad count");
    value = value * 10 + static_cast<std::size_t>(c - '0');
  }
  return value;
}

}  // namespace detail

inline void export_vocab(const BpeVocab& vocab, std::ostream& out) {
  out << "xtok-vocab v1 |A|=" << vocab.alphabet_size() << " M=" << vocab.num_merges() << '\n';
  out << "EOS\n";
  for (std::size_t i = 1; i < vocab.alphabet_size(); ++i) {
    out << detail::to_hex(vocab.token(static_cast<TokenId>(i)).bytes) << '\n';
  }
  for (const auto& m : vocab.merges()) out << m.left << ' ' << m.right << '\n';
}

inline std::string export_vocab(const BpeVocab& vocab) {
  std::ostringstream os;
  export_vocab(vocab, os);
  return os.str();
}

inline BpeVocab import_merges(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw Error(ErrorKind::ParseError, "empty vocab file");
  std::istringstream header(line);
  std::string magic, version, a_field, m_field, extra;
  header >> magic >> version >> a_field >> m_field;
  if (magic != "xtok-vocab" || version != "v1" || (header >> extra)) {
    throw Error(ErrorKind::ParseError, "line 1: bad header");
  }
  const std::size_t n = detail::parse_count(a_field, "|A|=", line_no);
  const std::size_t m = detail::parse_count(m_field, "M=", line_no);
  if (n < 2) throw Error(ErrorKind::ParseError, "line 1: alphabet needs EOS and at least one symbol");

  std::vector<std::string> symbols;
  for (std::size_t i = 0; i < n; ++i) {
    ++line_no;
    if (!std::getline(in, line)) throw Error(ErrorKind::ParseError, "truncated alphabet at line " + std::to_string(line_no));
    if (i == 0) {
      if (line != "EOS") throw Error(ErrorKind::ParseError, "line 2: first alphabet entry must be EOS");
      continue;
    }
    symbols.push_back(detail::from_hex(line, line_no));
  }
  std::vector<MergePair> merges;
  for (std::size_t i = 0; i < m; ++i) {
    ++line_no;
    if (!std::getline(in, line)) throw Error(ErrorKind::ParseError, "truncated merges at line " + std::to_string(line_no));
    std::istringstream ls(line);
    long long l = -1, r = -1;
    std::string rest;
    if (!(ls >> l >> r) || (ls >> rest) || l < 0 || r < 0) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": expected '<left_id> <right_id>'");
    }
    merges.emplace_back(static_cast<TokenId>(l), static_cast<TokenId>(r));
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty()) throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": trailing content");
  }
  return BpeVocab::build(symbols, merges);
}

inline BpeVocab import_merges(std::string_view text) {
  std::istringstream is{std::string(text)};
  return import_merges(is);
}

}  // namespace xtok
