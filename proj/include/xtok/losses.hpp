#pragma once

#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "xtok/error.hpp"
#include "xtok/lm.hpp"
#include "xtok/vocab.hpp"

namespace xtok {

struct KlResult {
  double value = 0.0;
  bool infinite = false;  // some teacher mass sits where the student has none
};

inline KlResult kl_divergence(const std::vector<double>& teacher, const std::vector<double>& student) {
  if (teacher.size() != student.size()) {
    throw Error(ErrorKind::ShapeMismatch, "teacher has " + std::to_string(teacher.size()) + " entries, student " +
                                              std::to_string(student.size()));
  }
  KlResult r;
  for (std::size_t t = 0; t < teacher.size(); ++t) {
    if (teacher[t] <= 0.0) continue;
    if (student[t] <= 0.0) {
      r.infinite = true;
      continue;
    }
    r.value += teacher[t] * std::log(teacher[t] / student[t]);
  }
  if (r.infinite) r.value = std::numeric_limits<double>::infinity();
  return r;
}

/// Sum over steps of KL(teacher || student).
inline KlResult kl_loss(const std::vector<std::vector<double>>& teacher,
                        const std::vector<std::vector<double>>& student) {
  if (teacher.size() != student.size()) throw Error(ErrorKind::ShapeMismatch, "step counts differ");
  KlResult total;
  for (std::size_t l = 0; l < teacher.size(); ++l) {
    const auto r = kl_divergence(teacher[l], student[l]);
    total.infinite = total.infinite || r.infinite;
    total.value += r.value;
  }
  return total;
}

/// d KL / d p_S(t) = -p_T(t) / p_S(t), treating each student entry as free.
inline std::vector<std::vector<double>> kl_gradient(const std::vector<std::vector<double>>& teacher,
                                                    const std::vector<std::vector<double>>& student) {
  if (teacher.size() != student.size()) throw Error(ErrorKind::ShapeMismatch, "step counts differ");
  std::vector<std::vector<double>> g(teacher.size());
  for (std::size_t l = 0; l < teacher.size(); ++l) {
    if (teacher[l].size() != student[l].size()) throw Error(ErrorKind::ShapeMismatch, "row widths differ");
    g[l].resize(teacher[l].size());
    for (std::size_t t = 0; t < teacher[l].size(); ++t) {
      g[l][t] = teacher[l][t] == 0.0 ? 0.0 : -teacher[l][t] / student[l][t];
    }
  }
  return g;
}

/// Queried tokens at one step with teacher and student probabilities.
struct SoftLabelStep {
  std::vector<TokenId> ids;
  std::vector<double> teacher;
  std::vector<double> student;
};

namespace detail {

inline void check_step(const SoftLabelStep& s) {
  if (s.ids.size() != s.teacher.size() || s.ids.size() != s.student.size()) {
    throw Error(ErrorKind::ShapeMismatch, "soft-label step has mismatched lengths");
  }
  std::set<TokenId> seen(s.ids.begin(), s.ids.end());
  if (seen.size() != s.ids.size()) throw Error(ErrorKind::ShapeMismatch, "soft-label step repeats a token id");
  double sq = 0.0;
  for (std::size_t i = 0; i < s.ids.size(); ++i) {
    if (!(s.teacher[i] >= 0.0 && s.teacher[i] <= 1.0) || !(s.student[i] >= 0.0 && s.student[i] <= 1.0)) {
      throw Error(ErrorKind::ShapeMismatch, "soft-label probabilities must lie in [0, 1]");
    }
    sq += s.teacher[i];
  }
  if (sq > 1.0 + 1e-12) throw Error(ErrorKind::ShapeMismatch, "teacher mass over queried tokens exceeds 1");
}

inline double complement(const std::vector<double>& p) {
  double s = 0.0;
  for (double x : p) s += x;
  return 1.0 - s;
}

inline double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

}  // namespace detail

inline double pkl_step_loss(const SoftLabelStep& s) {
  detail::check_step(s);
  const double rest_p = detail::complement(s.student);
  if (rest_p < 1e-12) {
    throw Error(ErrorKind::ComplementUnderflow, "student mass over queried tokens reaches 1");
  }
  const double rest_q = std::max(0.0, detail::complement(s.teacher));
  double acc = 0.0;
  for (std::size_t i = 0; i < s.ids.size(); ++i) acc += detail::xlogy(s.teacher[i], s.student[i]);
  acc += detail::xlogy(rest_q, rest_p);
  return -acc;
}

inline double pkl_loss(const std::vector<SoftLabelStep>& steps) {
  double total = 0.0;
  for (const auto& s : steps) total += pkl_step_loss(s);
  return total;
}

/// Partials of the loss with respect to each queried student probability:
/// -q_t / p_t + (1 - sum q) / (1 - sum p).
inline std::vector<std::vector<double>> pkl_gradient(const std::vector<SoftLabelStep>& steps) {
  std::vector<std::vector<double>> g;
  g.reserve(steps.size());
  for (const auto& s : steps) {
    detail::check_step(s);
    const double rest_p = detail::complement(s.student);
    if (rest_p < 1e-12) throw Error(ErrorKind::ComplementUnderflow, "student mass over queried tokens reaches 1");
    const double rest_q = std::max(0.0, detail::complement(s.teacher));
    std::vector<double> row(s.ids.size());
    for (std::size_t i = 0; i < s.ids.size(); ++i) {
      row[i] = (s.teacher[i] == 0.0 ? 0.0 : -s.teacher[i] / s.student[i]) + rest_q / rest_p;
    }
    g.push_back(std::move(row));
  }
  return g;
}

/// Entropy of the binned teacher distribution (queried tokens plus the
/// complement bin): the smallest value the step loss can take.
inline double pkl_step_minimum(const SoftLabelStep& s) {
  detail::check_step(s);
  const double rest_q = std::max(0.0, detail::complement(s.teacher));
  double h = -detail::xlogy(rest_q, rest_q);
  for (double q : s.teacher) h -= detail::xlogy(q, q);
  return h;
}

/// omega * distill + (1 - omega) * sft.
inline double combine_losses(double distill, double sft, double omega) { return omega * distill + (1.0 - omega) * sft; }

/// Parses `step <l> | <id>:<q> ... | student <id>:<p> ...` lines. Student
/// entries may appear in any order but must cover the same ids.
inline std::vector<SoftLabelStep> parse_soft_labels(std::istream& in) {
  std::vector<SoftLabelStep> steps;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw Error(ErrorKind::ParseError, "soft labels line " + std::to_string(line_no) + ": " + what);
  };
  auto parse_pairs = [&](const std::string& text, std::map<TokenId, double>& into, std::vector<TokenId>* order) {
    std::istringstream is(text);
    std::string item;
    while (is >> item) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) fail("entry '" + item + "' lacks ':'");
      const auto ids = detail::parse_id_list(item.substr(0, colon), "soft labels");
      if (ids.size() != 1) fail("bad id in '" + item + "'");
      const double v = detail::parse_double(item.substr(colon + 1), "soft labels");
      if (!into.emplace(ids[0], v).second) fail("token id repeated");
      if (order) order->push_back(ids[0]);
    }
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto bar1 = line.find('|');
    const auto bar2 = bar1 == std::string::npos ? bar1 : line.find('|', bar1 + 1);
    if (bar2 == std::string::npos) fail("expected two '|' separators");
    std::istringstream head(line.substr(0, bar1));
    std::string kw, idx, extra;
    head >> kw >> idx;
    if (kw != "step" || idx.empty() || (head >> extra)) fail("expected 'step <index>'");
    std::map<TokenId, double> teacher, student;
    std::vector<TokenId> order;
    parse_pairs(line.substr(bar1 + 1, bar2 - bar1 - 1), teacher, &order);
    std::istringstream tail(line.substr(bar2 + 1));
    std::string skw;
    tail >> skw;
    if (skw != "student") fail("expected 'student' after the second '|'");
    std::string rest;
    std::getline(tail, rest);
    parse_pairs(rest, student, nullptr);
    if (teacher.size() != student.size()) fail("teacher and student list different tokens");
    SoftLabelStep s;
    for (TokenId id : order) {
      auto it = student.find(id);
      if (it == student.end()) fail("student entry missing for token " + std::to_string(id));
      s.ids.push_back(id);
      s.teacher.push_back(teacher[id]);
      s.student.push_back(it->second);
    }
    steps.push_back(std::move(s));
  }
  return steps;
}

}  // namespace xtok
