#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "xtok/codec.hpp"
#include "xtok/lm.hpp"
#include "xtok/vocab.hpp"

// Small seeded instances shared by the tests, the `verify` subcommand and
// the acceptance runner.

namespace xtok::fixtures {

using Rng = std::mt19937_64;

/// Alphabet {a, b}, merges a.b -> ab, ab.a -> aba.
inline BpeVocab two_merge_vocab() { return build_vocab({"a", "b"}, {{1, 2}, {3, 1}}); }

/// Alphabet {a, b} with the single merge a.b.
inline BpeVocab single_merge_vocab() { return build_vocab({"a", "b"}, {{1, 2}}); }

/// Random vocabulary with 1..max_symbols data symbols (named a, b, c, ...)
/// and up to max_merges merges. Fewer merges are produced only when the
/// alphabet cannot support more distinct tokens within the retry budget.
inline BpeVocab random_vocab(Rng& rng, std::size_t max_symbols = 3, std::size_t max_merges = 6,
                             std::size_t min_symbols = 2) {
  const std::size_t n_sym = std::uniform_int_distribution<std::size_t>(min_symbols, max_symbols)(rng);
  const std::size_t n_merge = std::uniform_int_distribution<std::size_t>(0, max_merges)(rng);
  std::vector<std::string> symbols;
  for (std::size_t i = 0; i < n_sym; ++i) symbols.push_back(std::string(1, static_cast<char>('a' + i)));
  std::vector<SymbolString> contents{{0}};
  for (std::size_t i = 1; i <= n_sym; ++i) contents.push_back({static_cast<TokenId>(i)});
  std::set<SymbolString> seen(contents.begin(), contents.end());
  std::vector<MergePair> merges;
  for (std::size_t attempt = 0; merges.size() < n_merge && attempt < 200; ++attempt) {
    std::uniform_int_distribution<TokenId> pick(1, static_cast<TokenId>(contents.size() - 1));
    const TokenId l = pick(rng);
    const TokenId r = pick(rng);
    SymbolString c = contents[l];
    c.insert(c.end(), contents[r].begin(), contents[r].end());
    if (c.size() > 5 || !seen.insert(c).second) continue;
    merges.emplace_back(l, r);
    contents.push_back(std::move(c));
  }
  return build_vocab(symbols, merges);
}

/// Random string of data symbols with length in [0, max_len].
inline SymbolString random_symbols(Rng& rng, const BpeVocab& vocab, std::size_t max_len, std::size_t min_len = 0) {
  const std::size_t n = std::uniform_int_distribution<std::size_t>(min_len, max_len)(rng);
  std::uniform_int_distribution<TokenId> pick(1, static_cast<TokenId>(vocab.alphabet_size() - 1));
  SymbolString s(n);
  for (auto& c : s) c = pick(rng);
  return s;
}

/// Canonical encoding of a random string, optionally ended by EOS.
inline Encoding random_encoding(Rng& rng, const BpeVocab& vocab, std::size_t bound, std::size_t max_len,
                                double eos_chance = 0.0, std::size_t min_len = 0) {
  auto s = random_symbols(rng, vocab, max_len, min_len);
  if (eos_chance > 0.0 && std::bernoulli_distribution(eos_chance)(rng)) {
    if (!s.empty()) s.back() = kEos;
  }
  return encode(s, SubsetView(vocab, bound));
}

/// Every string over the data symbols with length <= max_len.
inline std::vector<SymbolString> all_strings(const BpeVocab& vocab, std::size_t max_len) {
  std::vector<SymbolString> out{{}};
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].size() == max_len) continue;
    for (TokenId c = 1; c < vocab.alphabet_size(); ++c) {
      auto s = out[i];
      s.push_back(c);
      out.push_back(std::move(s));
    }
  }
  return out;
}

/// Every distinct canonical encoding at `bound` that is a token-prefix of
/// the encoding of some string of length <= max_len.
inline std::vector<Encoding> all_valid_encodings(const BpeVocab& vocab, std::size_t bound, std::size_t max_len) {
  std::set<Encoding> out;
  const SubsetView v(vocab, bound);
  for (const auto& s : all_strings(vocab, max_len)) {
    const auto e = encode(s, v);
    for (std::size_t k = 0; k <= e.size(); ++k) out.insert(Encoding{{e.ids.begin(), e.ids.begin() + k}, bound});
  }
  return {out.begin(), out.end()};
}

inline std::unique_ptr<TableLm> random_table_lm(const BpeVocab& vocab, std::size_t bound, std::uint64_t seed,
                                                std::optional<std::size_t> max_bytes = std::nullopt) {
  TableLmOptions o;
  o.row_seed = seed;
  o.max_bytes = max_bytes;
  return std::make_unique<TableLm>(vocab, bound, TableLm::Rows{}, o);
}

inline std::unique_ptr<NgramByteLm> random_ngram_lm(const BpeVocab& vocab, std::size_t order, std::uint64_t seed,
                                                    std::optional<std::size_t> max_bytes = std::nullopt) {
  TableLmOptions o;
  o.row_seed = seed;
  o.max_bytes = max_bytes;
  return std::make_unique<NgramByteLm>(vocab, order, NgramByteLm::Rows{}, o);
}

}  // namespace xtok::fixtures
