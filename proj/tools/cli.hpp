#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "xtok/xtok.hpp"

namespace xtok::cli {

/// One subcommand and the library operations it exercises.
struct CommandInfo {
  std::string name;
  std::vector<std::string> operations;
};

inline const std::vector<CommandInfo>& commands() {
  static const std::vector<CommandInfo> table{
      {"vocab", {"build_vocab", "subset_view", "import_merges", "export_vocab"}},
      {"encode", {"encode", "merge_step", "relative_encode"}},
      {"decode", {"decode", "demerge_step", "relative_decode"}},
      {"valid", {"is_valid"}},
      {"cover", {"relative_cover_search", "token_prefix_index"}},
      {"score", {"score_subset", "joint_prob", "next_dist"}},
      {"sample", {"build_prefix_matrix", "init_sampler", "next_subtoken_dist", "advance"}},
      {"convert-up", {"convert_prob_exact", "convert_prob_approx", "sample_token_rejection"}},
      {"loss", {"kl_loss", "kl_gradient", "pkl_loss", "pkl_gradient", "combine_losses"}},
      {"verify", {"oracle_conversion_prob", "oracle_cover_set"}},
  };
  return table;
}

namespace detail {

inline std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Printable rendering of token bytes: ASCII as-is, other bytes as \xNN.
inline std::string show_bytes(std::string_view bytes) {
  std::string out;
  char buf[8];
  for (unsigned char c : bytes) {
    if (c >= 0x20 && c < 0x7f && c != '\\') {
      out.push_back(static_cast<char>(c));
    } else {
      std::snprintf(buf, sizeof buf, "\\x%02x", c);
      out += buf;
    }
  }
  return out;
}

inline std::string show_text(const BpeVocab& v, const Encoding& e) {
  std::string out;
  for (TokenId t : e.ids) out += t == kEos ? std::string("<eos>") : show_bytes(v.token(t).bytes);
  return out;
}

inline std::vector<TokenId> parse_ids(const std::string& text, const std::string& flag) {
  try {
    return xtok::detail::parse_id_list(text, flag);
  } catch (const Error& e) {
    throw CLI::ValidationError(flag, e.what());
  }
}

inline BpeVocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ParseError, "cannot open vocab file '" + path + "'");
  return import_merges(in);
}

struct Common {
  std::string vocab_path;
  std::string format = "human";
  bool records() const { return format == "records"; }
};

/// Emits one result either as `key: value` lines or as one JSON record.
class Emitter {
 public:
  Emitter(std::ostream& out, bool records) : out_(out), records_(records) {}

  template <class T>
  Emitter& field(const std::string& key, const T& value, const std::string& human) {
    if (records_) {
      rec_[key] = value;
    } else {
      out_ << key << ": " << human << '\n';
    }
    return *this;
  }
  Emitter& field(const std::string& key, double value) { return field(key, value, num(value)); }
  Emitter& field(const std::string& key, const std::string& value) { return field(key, value, value); }
  Emitter& ids(const std::string& key, const std::vector<TokenId>& v) { return field(key, v, format_ids(v)); }

  void flush() {
    if (records_ && !rec_.empty()) out_ << rec_.dump() << '\n';
    rec_ = nlohmann::ordered_json::object();
  }

 private:
  std::ostream& out_;
  bool records_;
  nlohmann::ordered_json rec_ = nlohmann::ordered_json::object();
};

inline void write_scatter(const std::string& path, const std::vector<std::array<double, 2>>& pts) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::ParseError, "cannot write '" + path + "'");
  const bool svg = path.size() >= 4 && path.substr(path.size() - 4) == ".svg";
  if (!svg) {
    f << "exact,approx\n";
    for (const auto& p : pts) f << num(p[0]) << ',' << num(p[1]) << '\n';
    return;
  }
  // log10 axes from 1e-12 to 1, diagonal for reference.
  const double lo = -12.0, size = 480.0, pad = 40.0;
  auto pos = [&](double v) {
    const double l = std::clamp(v > 0.0 ? std::log10(v) : lo, lo, 0.0);
    return pad + (l - lo) / -lo * size;
  };
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size + 2 * pad << "\" height=\"" << size + 2 * pad
    << "\">\n";
  f << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << size << "\" height=\"" << size
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << pad << "\" y1=\"" << pad + size << "\" x2=\"" << pad + size << "\" y2=\"" << pad
    << "\" stroke=\"gray\" stroke-dasharray=\"4\"/>\n";
  f << "<text x=\"" << pad + size / 2 << "\" y=\"" << size + 1.7 * pad
    << "\" text-anchor=\"middle\" font-size=\"12\">exact (log10)</text>\n";
  f << "<text x=\"12\" y=\"" << pad + size / 2 << "\" font-size=\"12\" transform=\"rotate(-90 12 " << pad + size / 2
    << ")\" text-anchor=\"middle\">approx (log10)</text>\n";
  for (const auto& p : pts) {
    f << "<circle cx=\"" << pos(p[0]) << "\" cy=\"" << (2 * pad + size) - pos(p[1])
      << "\" r=\"2.5\" fill=\"steelblue\"/>\n";
  }
  f << "</svg>\n";
}

}  // namespace detail

/// Runs the command line `args` (without the program name). Returns the
/// process exit code: 0 success, 1 library error, 2 usage error.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-tokenizer BPE likelihood scoring", "xtok"};
  app.require_subcommand(1);
  detail::Common common;
  auto add_common = [&](CLI::App* sc, bool need_vocab) {
    auto* o = sc->add_option("--vocab,--from-vocab", common.vocab_path, "Vocabulary file");
    if (need_vocab) o->required();
    sc->add_option("--format", common.format, "Output format")->check(CLI::IsMember({"human", "records"}));
  };
  std::function<void()> action;

  // vocab ------------------------------------------------------------------
  auto* vocab_cmd = app.add_subcommand("vocab", "Show a vocabulary, or build one from symbols and merges");
  add_common(vocab_cmd, false);
  std::vector<std::string> symbols;
  std::vector<std::string> merge_specs;
  std::string out_path;
  std::optional<std::size_t> vocab_bound;
  vocab_cmd->add_option("--symbols", symbols, "Alphabet symbols in order (EOS is implicit)");
  vocab_cmd->add_option("--merge", merge_specs, "Merge as 'left,right' token ids, in order");
  vocab_cmd->add_option("--out", out_path, "Write the vocabulary file here instead of stdout");
  vocab_cmd->add_option("--bound", vocab_bound, "Show only the first N merges");
  vocab_cmd->callback([&] {
    action = [&] {
      if (!symbols.empty()) {
        std::vector<MergePair> merges;
        for (const auto& m : merge_specs) {
          std::string spaced = m;
          std::replace(spaced.begin(), spaced.end(), ',', ' ');
          const auto ids = detail::parse_ids(spaced, "--merge");
          if (ids.size() != 2) throw CLI::ValidationError("--merge", "expected 'left,right'");
          merges.emplace_back(ids[0], ids[1]);
        }
        const auto v = build_vocab(symbols, merges);
        if (out_path.empty()) {
          export_vocab(v, out);
        } else {
          std::ofstream f(out_path);
          export_vocab(v, f);
        }
        return;
      }
      if (common.vocab_path.empty()) throw CLI::RequiredError("--vocab or --symbols");
      const auto v = detail::load_vocab(common.vocab_path);
      const SubsetView view(v, vocab_bound.value_or(v.num_merges()));
      if (!common.records()) {
        out << "alphabet: " << v.alphabet_size() << " merges: " << v.num_merges() << " shown: " << view.size() << '\n';
      }
      for (TokenId t = 0; t < view.size(); ++t) {
        const std::string text = t == kEos ? std::string("<eos>") : detail::show_bytes(v.token(t).bytes);
        const bool merged = t >= v.alphabet_size();
        const MergeRule* m = merged ? &v.merge(t - v.alphabet_size() + 1) : nullptr;
        if (!common.records()) {
          out << t << '\t' << text;
          if (m) out << "\t= " << m->left << ' ' << m->right << " (rank " << m->rank << ')';
          out << '\n';
          continue;
        }
        nlohmann::ordered_json rec{{"id", t}, {"text", text}};
        if (m) rec["merge"] = {{"rank", m->rank}, {"left", m->left}, {"right", m->right}};
        out << rec.dump() << '\n';
      }
    };
  });

  // encode / decode / valid -------------------------------------------------
  std::optional<std::size_t> bound;
  std::string text;
  std::string ids_text;
  bool with_eos = false;
  auto* encode_cmd = app.add_subcommand("encode", "Encode text at a merge bound");
  add_common(encode_cmd, true);
  encode_cmd->add_option("--bound", bound, "Merge bound (default: all merges)");
  encode_cmd->add_option("--text", text, "Text to encode")->required();
  encode_cmd->add_flag("--eos", with_eos, "Append end-of-string");
  encode_cmd->callback([&] {
    action = [&] {
      const auto v = detail::load_vocab(common.vocab_path);
      const SubsetView view(v, bound.value_or(v.num_merges()));
      auto syms = v.to_symbols(text);
      if (with_eos) syms.push_back(kEos);
      const auto e = encode(syms, view);
      detail::Emitter em(out, common.records());
      em.ids("ids", e.ids).field("level", e.level, std::to_string(e.level));
      em.flush();
    };
  });

  auto* decode_cmd = app.add_subcommand("decode", "Decode token ids at a merge bound");
  add_common(decode_cmd, true);
  decode_cmd->add_option("--bound", bound, "Merge bound (default: all merges)");
  decode_cmd->add_option("--ids", ids_text, "Space-separated token ids")->required();
  decode_cmd->callback([&] {
    action = [&] {
      const auto v = detail::load_vocab(common.vocab_path);
      const SubsetView view(v, bound.value_or(v.num_merges()));
      const Encoding e{detail::parse_ids(ids_text, "--ids"), view.bound()};
      const auto syms = decode(e, view);
      detail::Emitter em(out, common.records());
      em.field("text", detail::show_text(v, Encoding{syms, 0})).ids("symbols", syms);
      em.flush();
    };
  });

  auto* valid_cmd = app.add_subcommand("valid", "Check whether token ids are the canonical encoding");
  add_common(valid_cmd, true);
  valid_cmd->add_option("--bound", bound, "Merge bound (default: all merges)");
  valid_cmd->add_option("--ids", ids_text, "Space-separated token ids")->required();
  valid_cmd->callback([&] {
    action = [&] {
      const auto v = detail::load_vocab(common.vocab_path);
      const SubsetView view(v, bound.value_or(v.num_merges()));
      const Encoding e{detail::parse_ids(ids_text, "--ids"), view.bound()};
      const bool ok = is_valid(e, view);
      detail::Emitter em(out, common.records());
      em.field("valid", ok, ok ? "true" : "false");
      em.flush();
    };
  });

  // cover ------------------------------------------------------------------
  std::optional<std::size_t> to_bound;
  auto* cover_cmd = app.add_subcommand("cover", "List relative cover encodings of a subset encoding");
  add_common(cover_cmd, true);
  cover_cmd->add_option("--bound", bound, "Merge bound of the given ids")->required();
  cover_cmd->add_option("--to-bound", to_bound, "Merge bound of the covers (default: all merges)");
  cover_cmd->add_option("--ids", ids_text, "Space-separated token ids")->required();
  cover_cmd->callback([&] {
    action = [&] {
      const auto v = detail::load_vocab(common.vocab_path);
      const SubsetView sub(v, *bound);
      const SubsetView full(v, to_bound.value_or(v.num_merges()));
      const Encoding e{detail::parse_ids(ids_text, "--ids"), sub.bound()};
      const auto cs = relative_cover_search(e, sub, TokenPrefixIndex(full));
      detail::Emitter em(out, common.records());
      for (const auto& c : cs.entries) {
        em.ids("ids", c.enc.ids).field("text", detail::show_text(v, c.enc));
        em.flush();
      }
    };
  });

  // score ------------------------------------------------------------------
  std::string backend_spec;
  std::string replay_path;
  std::optional<std::size_t> backend_bound;
  auto add_backend = [&](CLI::App* sc) {
    sc->add_option("--backend", backend_spec, "table:FILE | ngram:FILE | replay:FILE | uniform:M");
    sc->add_option("--replay", replay_path, "Logits replay file (same as --backend replay:FILE)");
    sc->add_option("--backend-bound", backend_bound, "Merge bound of a replay backend (default: all merges)");
  };
  auto make = [&](const BpeVocab& v) {
    std::string spec = backend_spec;
    if (!replay_path.empty()) spec = "replay:" + replay_path;
    if (spec.empty()) throw CLI::RequiredError("--backend");
    return make_backend(spec, v, backend_bound.value_or(v.num_merges()));
  };
  auto* score_cmd = app.add_subcommand("score", "Probability of a subset-level prefix under a full-level model");
  add_common(score_cmd, true);
  add_backend(score_cmd);
  score_cmd->add_option("--to-bound", to_bound, "Merge bound of the ids (default: the backend's)");
  score_cmd->add_option("--enc", ids_text, "Space-separated token ids")->required();
  score_cmd->callback([&] {
    action = [&] {
      const auto v = detail::load_vocab(common.vocab_path);
      const auto lm = make(v);
      const Encoding e{detail::parse_ids(ids_text, "--enc"), to_bound.value_or(lm->vocab_bound())};
      const double lp = score_subset_log(*lm, e);
      detail::Emitter em(out, common.records());
      em.field("prob", std::exp(lp)).field("log_prob", lp, detail::num(lp));
      em.flush();
    };
  });

  // sample -----------------------------------------------------------------
  std::uint64_t seed = 0;
  std::size_t max_tokens = 32;
  std::string prompt_text;
  auto* sample_cmd = app.add_subcommand("sample", "Sample subset-level tokens from a full-level model");
  add_common(sample_cmd, true);
  add_backend(sample_cmd);
  sample_cmd->add_option("--to-bound", to_bound, "Merge bound of the sampled tokens")->required();
  sample_cmd->add_option("--seed", seed, "Random seed");
  sample_cmd->add_option("--max-tokens", max_tokens, "Stop after this many tokens");
  sample_cmd->add_option("--prompt", prompt_text, "Prompt token ids at the sampled bound");
  sample_cmd->callback([&] {
    action = [&] {
      const auto v = detail::load_vocab(common.vocab_path);
      const auto lm = make(v);
      const SubtokenSampler sampler(*lm, *to_bound);
      std::mt19937_64 rng(seed);
      auto st = sampler.init(Encoding{detail::parse_ids(prompt_text, "--prompt"), *to_bound});
      detail::Emitter em(out, common.records());
      for (std::size_t step = 0; step < max_tokens && !ends_with_eos(st.basis); ++step) {
        const auto dist = sampler.next_subtoken_dist(st);
        const TokenId t = draw(dist, rng);
        em.field("step", step, std::to_string(step))
            .field("token", t, std::to_string(t))
            .field("text", detail::show_text(v, Encoding{{t}, *to_bound}))
            .field("prob", dist[t]);
        if (t == kEos) {
          em.flush();
          break;
        }
        const auto before = lm->call_count();
        st = sampler.advance(st, t);
        const std::size_t calls = lm->call_count() - before;
        em.field("model_calls", calls, std::to_string(calls));
        em.flush();
      }
    };
  });

  // convert-up -------------------------------------------------------------
  bool exact = false, approx = false, trace = false, collect = false, reject = false;
  std::size_t beams = 16, max_len = 16, max_symbols = 4, draws = 1;
  std::optional<std::size_t> max_nodes;
  std::string scatter_path;
  std::vector<std::string> stop_hex;
  auto* up_cmd = app.add_subcommand("convert-up", "Probability of a full-level prefix under a smaller-vocabulary model");
  add_common(up_cmd, true);
  add_backend(up_cmd);
  auto* mode = up_cmd->add_option_group("mode");
  mode->add_flag("--exact", exact, "Exact signed recursion");
  mode->add_flag("--approx", approx, "Beam approximation (byte-level backend)");
  mode->add_flag("--sample", reject, "Draw next tokens by rejection sampling (byte-level backend)");
  mode->require_option(1);
  up_cmd->add_option("--bound", bound, "Merge bound of the ids (default: all merges)");
  up_cmd->add_option("--enc", ids_text, "Space-separated token ids");
  up_cmd->add_option("--beams", beams, "Number of stopped candidates examined");
  up_cmd->add_option("--max-len", max_len, "Longest continuation considered");
  up_cmd->add_option("--stop", stop_hex, "Stop symbols as hex bytes, or 'eos' for EOS only (default: 20); EOS always stops");
  up_cmd->add_flag("--trace", trace, "Print the signed leaf expansion");
  up_cmd->add_flag("--collect", collect, "Show the trace folded over data-symbol continuations (EOS-free form)");
  up_cmd->add_option("--max-nodes", max_nodes, "Abort the recursion beyond this many nodes");
  up_cmd->add_option("--scatter", scatter_path, "Write exact-vs-approx points (.csv or .svg) for all short prefixes");
  up_cmd->add_option("--max-symbols", max_symbols, "Longest string used by --scatter");
  up_cmd->add_option("--draws", draws, "Number of tokens drawn with --sample");
  up_cmd->add_option("--seed", seed, "Random seed for --sample");
  up_cmd->callback([&] {
    action = [&] {
      const auto v = detail::load_vocab(common.vocab_path);
      const auto lm = make(v);
      const std::size_t level = bound.value_or(v.num_merges());
      StopSet stop = StopSet::default_for(v);
      if (!stop_hex.empty()) {
        std::vector<TokenId> syms;
        for (const auto& h : stop_hex) {
          if (h == "eos") continue;
          const auto bytes = xtok::detail::from_hex(h, 0);
          const auto s = v.to_symbols(bytes);
          syms.insert(syms.end(), s.begin(), s.end());
        }
        stop = StopSet(syms);
      }
      ApproxOptions ao;
      ao.beams = beams;
      ao.max_len = max_len;
      ao.stop = stop;
      detail::Emitter em(out, common.records());
      if (!scatter_path.empty()) {
        std::vector<std::array<double, 2>> pts;
        for (const auto& e : fixtures::all_valid_encodings(v, level, max_symbols)) {
          if (e.empty()) continue;
          pts.push_back({convert_prob_exact(*lm, e), convert_prob_approx(*lm, e, ao)});
        }
        detail::write_scatter(scatter_path, pts);
        em.field("points", pts.size(), std::to_string(pts.size()))
            .field("file", scatter_path);
        em.flush();
        return;
      }
      const Encoding e{detail::parse_ids(ids_text, "--enc"), level};
      if (exact) {
        ExactOptions eo;
        if (max_nodes) eo.max_nodes = *max_nodes;
        const auto r = convert_prob_exact_full(*lm, e, eo);
        em.field("prob", r.prob).field("leaves", r.leaves.size(), std::to_string(r.leaves.size()));
        if (trace) {
          // The folded form drops EOS continuations, so it is shown but never evaluated.
          auto shown = r.leaves;
          if (collect) {
            ExactOptions co = eo;
            std::vector<TokenId> alpha;
            for (TokenId a = 1; a < v.alphabet_size(); ++a) alpha.push_back(a);
            co.collect_alphabet = alpha;
            shown = expand_convert(e, v, lm->vocab_bound(), co).leaves;
          }
          std::vector<std::string> terms;
          for (const auto& l : shown) {
            terms.push_back((l.coeff > 0 ? "+" : "") + std::to_string(l.coeff) + " [" + format_ids(l.enc.ids) + "] " +
                            detail::show_text(v, l.enc));
          }
          std::string joined;
          for (const auto& t : terms) joined += "\n  " + t;
          em.field(collect ? "trace_collected" : "trace", terms, joined);
        }
        em.flush();
      } else if (approx) {
        const auto r = convert_prob_approx_full(*lm, e, ao);
        em.field("prob", r.prob)
            .field("prefix_prob", r.prefix_prob)
            .field("beams_examined", r.terminated, std::to_string(r.terminated))
            .field("subtracted", r.subtracted, std::to_string(r.subtracted))
            .field("exhausted", r.exhausted, r.exhausted ? "true" : "false");
        em.flush();
      } else {
        RejectionOptions ro;
        ro.max_len = max_len;
        ro.stop = stop;
        std::mt19937_64 rng(seed);
        for (std::size_t i = 0; i < draws; ++i) {
          std::size_t rejected = 0;
          const TokenId t = sample_token_rejection(*lm, e, ro, rng, &rejected);
          em.field("token", t, std::to_string(t))
              .field("text", detail::show_text(v, Encoding{{t}, level}))
              .field("rejections", rejected, std::to_string(rejected));
          em.flush();
        }
      }
    };
  });

  // loss -------------------------------------------------------------------
  std::string labels_path, teacher_path, student_path;
  bool grad = false;
  std::optional<double> omega, sft;
  auto* loss_cmd = app.add_subcommand("loss", "Distillation losses from soft labels or full distributions");
  loss_cmd->add_option("--format", common.format, "Output format")->check(CLI::IsMember({"human", "records"}));
  loss_cmd->add_option("--labels", labels_path, "Soft-label file for the partial KL loss");
  loss_cmd->add_option("--teacher", teacher_path, "Teacher rows (one distribution per line) for KL");
  loss_cmd->add_option("--student", student_path, "Student rows matching --teacher");
  loss_cmd->add_flag("--grad", grad, "Also print analytic gradients");
  loss_cmd->add_option("--omega", omega, "Weight of the distillation term when combining with --sft");
  loss_cmd->add_option("--sft", sft, "Supervised loss value to combine with");
  loss_cmd->callback([&] {
    action = [&] {
      detail::Emitter em(out, common.records());
      auto read_rows = [](const std::string& path) {
        std::ifstream f(path);
        if (!f) throw Error(ErrorKind::ParseError, "cannot open '" + path + "'");
        std::vector<std::vector<double>> rows;
        std::string line;
        while (std::getline(f, line)) {
          if (line.empty() || line[0] == '#') continue;
          std::istringstream is(line);
          std::vector<double> row;
          std::string tok;
          while (is >> tok) row.push_back(xtok::detail::parse_double(tok, path));
          rows.push_back(std::move(row));
        }
        return rows;
      };
      double distill = 0.0;
      bool any = false;
      if (!labels_path.empty()) {
        std::ifstream f(labels_path);
        if (!f) throw Error(ErrorKind::ParseError, "cannot open '" + labels_path + "'");
        const auto steps = parse_soft_labels(f);
        distill = pkl_loss(steps);
        any = true;
        em.field("pkl", distill);
        if (grad) {
          std::string h;
          nlohmann::ordered_json j = nlohmann::ordered_json::array();
          const auto g = pkl_gradient(steps);
          for (std::size_t l = 0; l < g.size(); ++l) {
            nlohmann::ordered_json row = nlohmann::ordered_json::object();
            h += "\n  step " + std::to_string(l) + ":";
            for (std::size_t i = 0; i < g[l].size(); ++i) {
              row[std::to_string(steps[l].ids[i])] = g[l][i];
              h += " " + std::to_string(steps[l].ids[i]) + ":" + detail::num(g[l][i]);
            }
            j.push_back(row);
          }
          em.field("pkl_grad", j, h);
        }
      }
      if (!teacher_path.empty() || !student_path.empty()) {
        if (teacher_path.empty() || student_path.empty()) throw CLI::RequiredError("--teacher and --student");
        const auto t = read_rows(teacher_path);
        const auto s = read_rows(student_path);
        const auto kl = kl_loss(t, s);
        distill = kl.value;
        any = true;
        em.field("kl", kl.value, kl.infinite ? std::string("inf") : detail::num(kl.value));
        em.field("kl_infinite", kl.infinite, kl.infinite ? "true" : "false");
        if (grad) {
          const auto g = kl_gradient(t, s);
          std::string h;
          for (std::size_t l = 0; l < g.size(); ++l) {
            h += "\n  step " + std::to_string(l) + ":";
            for (double x : g[l]) h += " " + detail::num(x);
          }
          em.field("kl_grad", nlohmann::ordered_json(g), h);
        }
      }
      if (!any) throw CLI::RequiredError("--labels or --teacher/--student");
      if (omega || sft) {
        if (!omega || !sft) throw CLI::RequiredError("--omega and --sft");
        em.field("combined", combine_losses(distill, *sft, *omega));
      }
      em.flush();
    };
  });

  // verify -----------------------------------------------------------------
  std::string suite = "all";
  std::size_t trials = 0;
  std::uint64_t verify_seed = 7;
  auto* verify_cmd = app.add_subcommand("verify", "Run randomized oracle-equivalence suites");
  verify_cmd->add_option("--format", common.format, "Output format")->check(CLI::IsMember({"human", "records"}));
  std::vector<std::string> suite_names{"all"};
  for (const auto& [name, fn] : verify::suites()) suite_names.push_back(name);
  verify_cmd->add_option("--suite", suite, "Suite to run")->check(CLI::IsMember(suite_names));
  verify_cmd->add_option("--trials", trials, "Fixture count (0 = suite default)");
  verify_cmd->add_option("--seed", verify_seed, "Fixture seed");
  int verify_status = 0;
  verify_cmd->callback([&] {
    action = [&] {
      detail::Emitter em(out, common.records());
      for (const auto& [name, fn] : verify::suites()) {
        if (suite != "all" && suite != name) continue;
        const auto r = fn(verify::SuiteOptions{trials, verify_seed});
        if (!r.passed()) verify_status = 1;
        if (common.records()) {
          em.field("suite", r.name)
              .field("pass", r.passed(), "")
              .field("trials", r.trials, "")
              .field("checks", r.checks, "")
              .field("failures", r.failures, "")
              .field("max_error", r.max_error)
              .field("seconds", r.seconds)
              .field("note", r.note);
          em.flush();
        } else {
          out << (r.passed() ? "PASS " : "FAIL ") << r.name << " trials=" << r.trials << " checks=" << r.checks
              << " failures=" << r.failures << " max_error=" << detail::num(r.max_error);
          if (!r.note.empty()) out << " (" << r.note << ")";
          out << '\n';
        }
      }
    };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  }
  try {
    if (action) action();
  } catch (const CLI::Error& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return verify_status;
}

}  // namespace xtok::cli
