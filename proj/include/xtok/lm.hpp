#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "xtok/codec.hpp"
#include "xtok/error.hpp"
#include "xtok/log_math.hpp"
#include "xtok/vocab.hpp"

namespace xtok {

/// Autoregressive model over V_bound. Probabilities are handled in log space
/// internally; joint_prob/next_dist are the linear-domain API boundary.
///
/// Every call to next_log_dist increments a counter so callers can audit how
/// many model evaluations an algorithm performs.
class LmBackend {
 public:
  LmBackend(const BpeVocab& vocab, std::size_t bound) : vocab_(&vocab), bound_(bound) {
    if (bound > vocab.num_merges()) {
      throw Error(ErrorKind::BoundOutOfRange, "backend bound " + std::to_string(bound) + " exceeds vocabulary");
    }
  }
  LmBackend(const LmBackend&) = delete;
  LmBackend& operator=(const LmBackend&) = delete;
  virtual ~LmBackend() = default;

  const BpeVocab& vocab() const { return *vocab_; }
  std::size_t vocab_bound() const { return bound_; }
  SubsetView view() const { return SubsetView(*vocab_, bound_); }
  std::size_t dist_size() const { return vocab_->size_at(bound_); }

  std::vector<double> next_log_dist(const Encoding& prefix) const {
    if (prefix.level != bound_) {
      throw Error(ErrorKind::LevelMismatch, "prefix at level " + std::to_string(prefix.level) +
                                                " given to backend at bound " + std::to_string(bound_));
    }
    if (contains_eos(prefix.ids)) throw Error(ErrorKind::PrefixContainsEos, "next_dist after EOS is undefined");
    for (TokenId t : prefix.ids) {
      if (t >= dist_size()) throw Error(ErrorKind::InvalidEncoding, "token " + std::to_string(t) + " out of range");
    }
    calls_.fetch_add(1, std::memory_order_relaxed);
    return compute_next_log_dist(prefix.ids);
  }

  std::vector<double> next_dist(const Encoding& prefix) const {
    auto d = next_log_dist(prefix);
    for (auto& x : d) x = std::exp(x);
    return d;
  }

  /// Log-probability that generation begins with `enc`. Non-canonical
  /// encodings get zero mass; after EOS only EOS may follow.
  double joint_log_prob(const Encoding& enc) const {
    if (enc.empty()) return 0.0;
    if (!is_valid(enc, view())) return kLogZero;
    double acc = 0.0;
    Encoding prefix{{}, bound_};
    for (std::size_t i = 0; i < enc.ids.size(); ++i) {
      if (i > 0 && enc.ids[i - 1] == kEos) {
        if (enc.ids[i] != kEos) return kLogZero;
        continue;
      }
      const auto d = next_log_dist(prefix);
      acc += d[enc.ids[i]];
      if (acc == kLogZero) return kLogZero;
      prefix.ids.push_back(enc.ids[i]);
    }
    return acc;
  }

  double joint_prob(const Encoding& enc) const { return std::exp(joint_log_prob(enc)); }

  std::uint64_t call_count() const { return calls_.load(std::memory_order_relaxed); }
  void reset_call_count() const { calls_.store(0, std::memory_order_relaxed); }

 protected:
  virtual std::vector<double> compute_next_log_dist(std::span<const TokenId> prefix) const = 0;

 private:
  const BpeVocab* vocab_;
  std::size_t bound_;
  mutable std::atomic<std::uint64_t> calls_{0};
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic pseudo-random positive row keyed by (seed, context).
inline std::vector<double> seeded_row(std::uint64_t seed, std::span<const TokenId> ctx, std::size_t n) {
  std::uint64_t state = seed ^ 0x5851f42d4c957f2dULL;
  splitmix64(state);
  for (TokenId t : ctx) {
    state ^= static_cast<std::uint64_t>(t) + 1;
    splitmix64(state);
  }
  std::vector<double> row(n);
  for (auto& w : row) {
    const double u = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
    w = 0.05 + u * u;
  }
  return row;
}

inline std::vector<double> normalized_log(std::vector<double> row) {
  double total = 0.0;
  for (double w : row) total += w;
  for (auto& w : row) w = safe_log(w / total);
  return row;
}

inline std::size_t decoded_length(const BpeVocab& vocab, std::span<const TokenId> ids) {
  std::size_t n = 0;
  for (TokenId t : ids) n += vocab.token(t).symbols.size();
  return n;
}

}  // namespace detail

struct TableLmOptions {
  /// Once the decoded prefix reaches this many symbols, all mass goes to EOS.
  std::optional<std::size_t> max_bytes;
  /// Unlisted contexts draw a pseudo-random row from this seed instead of
  /// being uniform.
  std::optional<std::uint64_t> row_seed;
};

/// Explicit next-token tables keyed by the full prefix. At bound > 0 the raw
/// row is restricted to canonical continuations and renormalized, so every
/// emitted encoding is valid.
class TableLm : public LmBackend {
 public:
  using Rows = std::map<std::vector<TokenId>, std::vector<double>>;

  TableLm(const BpeVocab& vocab, std::size_t bound, Rows rows = {}, TableLmOptions options = {})
      : LmBackend(vocab, bound), rows_(std::move(rows)), options_(options) {
    for (const auto& [ctx, row] : rows_) {
      if (row.size() != dist_size()) {
        throw Error(ErrorKind::ShapeMismatch, "table row has " + std::to_string(row.size()) + " entries, expected " +
                                                  std::to_string(dist_size()));
      }
      for (double p : row) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw Error(ErrorKind::ParseError, "table row has a negative entry");
      }
    }
  }

  const Rows& rows() const { return rows_; }
  const TableLmOptions& options() const { return options_; }

  /// The unmasked row for a context.
  std::vector<double> raw_row(std::span<const TokenId> prefix) const {
    const std::vector<TokenId> key(prefix.begin(), prefix.end());
    if (auto it = rows_.find(key); it != rows_.end()) return it->second;
    if (options_.row_seed) return detail::seeded_row(*options_.row_seed, prefix, dist_size());
    return std::vector<double>(dist_size(), 1.0);
  }

 protected:
  std::vector<double> compute_next_log_dist(std::span<const TokenId> prefix) const override {
    const std::size_t n = dist_size();
    if (options_.max_bytes && detail::decoded_length(vocab(), prefix) >= *options_.max_bytes) {
      std::vector<double> out(n, kLogZero);
      out[kEos] = 0.0;
      return out;
    }
    auto row = raw_row(prefix);
    if (vocab_bound() > 0) {
      Encoding cand{std::vector<TokenId>(prefix.begin(), prefix.end()), vocab_bound()};
      cand.ids.push_back(0);
      std::vector<bool> valid(n);
      double kept = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        cand.ids.back() = static_cast<TokenId>(t);
        valid[t] = is_valid(cand, view());
        if (!valid[t]) row[t] = 0.0;
        kept += row[t];
      }
      if (kept <= 0.0) {
        // A canonical prefix always admits EOS, so an empty mask means the
        // prefix itself is not canonical.
        if (!valid[kEos]) throw Error(ErrorKind::InvalidEncoding, "prefix is not a canonical encoding");
        for (std::size_t t = 0; t < n; ++t) row[t] = valid[t] ? 1.0 : 0.0;
      }
    }
    return detail::normalized_log(std::move(row));
  }

 private:
  Rows rows_;
  TableLmOptions options_;
};

/// Byte-level (bound 0) n-gram model: the next symbol depends on the last
/// order-1 symbols. Rows are keyed by that context.
class NgramByteLm : public LmBackend {
 public:
  using Rows = std::map<std::vector<TokenId>, std::vector<double>>;

  NgramByteLm(const BpeVocab& vocab, std::size_t order, Rows rows = {}, TableLmOptions options = {})
      : LmBackend(vocab, 0), order_(order), rows_(std::move(rows)), options_(options) {
    if (order == 0) throw Error(ErrorKind::ParseError, "n-gram order must be at least 1");
    for (const auto& [ctx, row] : rows_) {
      if (row.size() != dist_size()) throw Error(ErrorKind::ShapeMismatch, "n-gram row has the wrong width");
      if (ctx.size() > order - 1) throw Error(ErrorKind::ShapeMismatch, "n-gram context longer than order - 1");
    }
  }

  std::size_t order() const { return order_; }

 protected:
  std::vector<double> compute_next_log_dist(std::span<const TokenId> prefix) const override {
    if (options_.max_bytes && prefix.size() >= *options_.max_bytes) {
      std::vector<double> out(dist_size(), kLogZero);
      out[kEos] = 0.0;
      return out;
    }
    const std::size_t k = std::min(order_ - 1, prefix.size());
    const auto ctx = prefix.subspan(prefix.size() - k);
    const std::vector<TokenId> key(ctx.begin(), ctx.end());
    if (auto it = rows_.find(key); it != rows_.end()) return detail::normalized_log(it->second);
    if (options_.row_seed) return detail::normalized_log(detail::seeded_row(*options_.row_seed, ctx, dist_size()));
    return detail::normalized_log(std::vector<double>(dist_size(), 1.0));
  }

 private:
  std::size_t order_;
  Rows rows_;
  TableLmOptions options_;
};

// ---------------------------------------------------------------------------
// External logits exchange
//
//   request:  Q <space-separated token ids>
//   response: A <id>:<logprob> ... [REST:<logprob>]
//
// A response may list the whole vocabulary or a top-K subset; REST carries
// the aggregate log-mass of the unlisted ids, which is spread uniformly over
// them. Responses are renormalized. No validity masking is applied: the
// zero-mass guarantee for non-canonical continuations holds only if the
// external model already respects it.

namespace detail {

inline std::vector<TokenId> parse_id_list(std::string_view text, std::string_view what) {
  std::vector<TokenId> ids;
  std::istringstream is{std::string(text)};
  std::string tok;
  while (is >> tok) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || tok.empty() || tok[0] == '-') {
      throw Error(ErrorKind::ParseError, std::string(what) + ": bad token id '" + tok + "'");
    }
    ids.push_back(static_cast<TokenId>(v));
  }
  return ids;
}

inline double parse_double(const std::string& s, std::string_view what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw Error(ErrorKind::ParseError, std::string(what) + ": bad number '" + s + "'");
  return v;
}

}  // namespace detail

inline std::vector<double> parse_logits_response(std::string_view line, std::size_t vocab_size) {
  if (line.substr(0, 1) != "A" || (line.size() > 1 && line[1] != ' ')) {
    throw Error(ErrorKind::ParseError, "logits response must start with 'A'");
  }
  std::vector<double> logp(vocab_size, kLogZero);
  std::vector<bool> listed(vocab_size, false);
  std::optional<double> rest;
  std::istringstream is{std::string(line.substr(1))};
  std::string item;
  while (is >> item) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw Error(ErrorKind::ParseError, "logits entry '" + item + "' lacks ':'");
    const std::string key = item.substr(0, colon);
    const double value = detail::parse_double(item.substr(colon + 1), "logits response");
    if (key == "REST") {
      rest = value;
      continue;
    }
    const auto ids = detail::parse_id_list(key, "logits response");
    if (ids.size() != 1 || ids[0] >= vocab_size) {
      throw Error(ErrorKind::ParseError, "logits entry id '" + key + "' out of range");
    }
    logp[ids[0]] = value;
    listed[ids[0]] = true;
  }
  std::size_t unlisted = 0;
  for (bool b : listed) unlisted += b ? 0 : 1;
  if (rest && unlisted > 0) {
    const double share = *rest - std::log(static_cast<double>(unlisted));
    for (std::size_t i = 0; i < vocab_size; ++i) {
      if (!listed[i]) logp[i] = share;
    }
  }
  const double total = log_sum_exp(logp);
  if (total == kLogZero || !std::isfinite(total)) throw Error(ErrorKind::ParseError, "logits response has no mass");
  for (auto& x : logp) x -= total;
  return logp;
}

inline std::string format_logits_request(std::span<const TokenId> prefix) {
  std::string out = "Q";
  for (TokenId t : prefix) out += ' ' + std::to_string(t);
  return out;
}

/// Model answered by an external process (live channel) or a replay file.
/// Answers are cached per prefix, so identical prefixes always get identical
/// distributions. The channel is serialized by a mutex.
class ExternalLogitsLm : public LmBackend {
 public:
  /// Replay mode: `replay` holds Q/A line pairs. Unknown prefixes raise
  /// BackendUnavailable.
  ExternalLogitsLm(const BpeVocab& vocab, std::size_t bound, std::istream& replay) : LmBackend(vocab, bound) {
    std::string line;
    std::optional<std::vector<TokenId>> pending;
    std::size_t line_no = 0;
    while (std::getline(replay, line)) {
      ++line_no;
      if (line.empty()) continue;
      if (line[0] == 'Q') {
        if (pending) throw Error(ErrorKind::ParseError, "replay line " + std::to_string(line_no) + ": Q without answer");
        pending = detail::parse_id_list(std::string_view(line).substr(1), "replay request");
      } else if (line[0] == 'A') {
        if (!pending) throw Error(ErrorKind::ParseError, "replay line " + std::to_string(line_no) + ": A without Q");
        cache_[*pending] = parse_logits_response(line, dist_size());
        pending.reset();
      } else {
        throw Error(ErrorKind::ParseError, "replay line " + std::to_string(line_no) + ": expected Q or A record");
      }
    }
    if (pending) throw Error(ErrorKind::ParseError, "replay file ends with an unanswered request");
  }

  /// Live mode: requests are written to `requests`, answers read from
  /// `responses`.
  ExternalLogitsLm(const BpeVocab& vocab, std::size_t bound, std::istream& responses, std::ostream& requests)
      : LmBackend(vocab, bound), responses_(&responses), requests_(&requests) {}

  std::size_t cached_prefixes() const {
    std::lock_guard lock(mu_);
    return cache_.size();
  }

 protected:
  std::vector<double> compute_next_log_dist(std::span<const TokenId> prefix) const override {
    const std::vector<TokenId> key(prefix.begin(), prefix.end());
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    if (!requests_ || !responses_) {
      throw Error(ErrorKind::BackendUnavailable, "no replay record for prefix [" + format_ids(key) + "]");
    }
    *requests_ << format_logits_request(prefix) << '\n';
    requests_->flush();
    std::string line;
    if (!std::getline(*responses_, line)) {
      throw Error(ErrorKind::BackendUnavailable, "logits channel closed");
    }
    auto dist = parse_logits_response(line, dist_size());
    cache_.emplace(key, dist);
    return dist;
  }

 private:
  std::istream* responses_ = nullptr;
  std::ostream* requests_ = nullptr;
  mutable std::mutex mu_;
  mutable std::map<std::vector<TokenId>, std::vector<double>> cache_;
};

/// Writes a replay record answering `prefix` with the full distribution.
inline void write_replay_record(std::ostream& out, std::span<const TokenId> prefix, std::span<const double> log_probs) {
  out << format_logits_request(prefix) << "\nA";
  char buf[64];
  for (std::size_t i = 0; i < log_probs.size(); ++i) {
    if (log_probs[i] == kLogZero) continue;
    std::snprintf(buf, sizeof buf, " %zu:%.17g", i, log_probs[i]);
    out << buf;
  }
  out << '\n';
}

// ---------------------------------------------------------------------------
// Table / n-gram files
//
//   xtok-table v1 bound=<M> [max_bytes=<k>] [seed=<s>]
//   xtok-ngram v1 order=<n> [max_bytes=<k>] [seed=<s>]
//   ctx <ids...> | <p_0> <p_1> ... <p_{V-1}>
//
// Rows are renormalized on load.

namespace detail {

struct TableFile {
  std::string kind;
  std::size_t param = 0;  // bound for tables, order for n-grams
  TableLmOptions options;
  std::map<std::vector<TokenId>, std::vector<double>> rows;
};

inline TableFile parse_table_file(std::istream& in) {
  TableFile f;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::ParseError, "empty table file");
  std::istringstream header(line);
  std::string magic, version, field;
  header >> magic >> version;
  if ((magic != "xtok-table" && magic != "xtok-ngram") || version != "v1") {
    throw Error(ErrorKind::ParseError, "line 1: bad table header");
  }
  f.kind = magic;
  const std::string param_key = magic == "xtok-table" ? "bound=" : "order=";
  bool have_param = false;
  while (header >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::ParseError, "line 1: bad field '" + field + "'");
    const std::string key = field.substr(0, eq + 1);
    const auto value = static_cast<std::uint64_t>(parse_double(field.substr(eq + 1), "table header"));
    if (key == param_key) {
      f.param = value;
      have_param = true;
    } else if (key == "max_bytes=") {
      f.options.max_bytes = value;
    } else if (key == "seed=") {
      f.options.row_seed = value;
    } else {
      throw Error(ErrorKind::ParseError, "line 1: unknown field '" + field + "'");
    }
  }
  if (!have_param) throw Error(ErrorKind::ParseError, "line 1: missing " + param_key);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("ctx", 0) != 0) throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": expected ctx");
    const auto bar = line.find('|');
    if (bar == std::string::npos) throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": missing '|'");
    auto ctx = parse_id_list(std::string_view(line).substr(3, bar - 3), "table context");
    std::vector<double> row;
    std::istringstream ps(line.substr(bar + 1));
    std::string num;
    while (ps >> num) row.push_back(parse_double(num, "table row"));
    f.rows[std::move(ctx)] = std::move(row);
  }
  return f;
}

}  // namespace detail

/// Builds a backend from `kind:argument`:
///   table:<file>    TableLm
///   ngram:<file>    NgramByteLm
///   replay:<file>   ExternalLogitsLm in replay mode; `replay_bound` is its level
///   uniform:<M>     uniform TableLm at bound M (validity-masked when M > 0)
inline std::unique_ptr<LmBackend> make_backend(std::string_view spec, const BpeVocab& vocab,
                                               std::size_t replay_bound = 0) {
  const auto colon = spec.find(':');
  if (colon == std::string_view::npos) throw Error(ErrorKind::ParseError, "backend spec needs kind:argument");
  const std::string kind(spec.substr(0, colon));
  const std::string arg(spec.substr(colon + 1));
  if (kind == "uniform") {
    return std::make_unique<TableLm>(vocab, static_cast<std::size_t>(detail::parse_double(arg, "uniform bound")));
  }
  std::ifstream file(arg);
  if (!file) throw Error(ErrorKind::BackendUnavailable, "cannot open backend file '" + arg + "'");
  if (kind == "replay") return std::make_unique<ExternalLogitsLm>(vocab, replay_bound, file);
  if (kind == "table" || kind == "ngram") {
    auto f = detail::parse_table_file(file);
    if (kind == "table") {
      if (f.kind != "xtok-table") throw Error(ErrorKind::ParseError, "'" + arg + "' is not a table file");
      return std::make_unique<TableLm>(vocab, f.param, std::move(f.rows), f.options);
    }
    if (f.kind != "xtok-ngram") throw Error(ErrorKind::ParseError, "'" + arg + "' is not an n-gram file");
    return std::make_unique<NgramByteLm>(vocab, f.param, std::move(f.rows), f.options);
  }
  throw Error(ErrorKind::ParseError, "unknown backend kind '" + kind + "'");
}

}  // namespace xtok
