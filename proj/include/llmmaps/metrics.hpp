#pragma once

// Scoring of model responses and every quantity a map displays.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hierarchy.hpp"
#include "qa_core.hpp"

namespace llmmaps {

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

enum class ScoreMode { choice_index, quasi_exact, f1_overlap };

inline std::optional<ScoreMode> parse_score_mode(std::string_view s) {
  if (s == "choice" || s == "choice_index") return ScoreMode::choice_index;
  if (s == "quasi_exact") return ScoreMode::quasi_exact;
  if (s == "f1" || s == "f1_overlap") return ScoreMode::f1_overlap;
  return std::nullopt;
}

inline std::string_view to_string(ScoreMode m) {
  switch (m) {
    case ScoreMode::choice_index: return "choice_index";
    case ScoreMode::quasi_exact: return "quasi_exact";
    case ScoreMode::f1_overlap: return "f1_overlap";
  }
  return "quasi_exact";
}

struct ScoreOptions {
  ScoreMode mode = ScoreMode::quasi_exact;
  double theta = 0.5;  // F1 correctness threshold
};

struct ScoreResult {
  bool correct = false;
  std::optional<double> f1;
};

/// Token-set F1 on normalized tokens. Two empty answers agree perfectly.
inline double token_f1(std::string_view predicted, std::string_view gold) {
  auto p = answer_token_set(predicted);
  auto g = answer_token_set(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& t : p) common += g.count(t);
  if (common == 0) return 0.0;
  double precision = static_cast<double>(common) / static_cast<double>(p.size());
  double recall = static_cast<double>(common) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

/// Option index named by an extracted answer: a decimal index, a letter
/// (bare, "(C)", "C)", "C.", "C:"), or the unique option whose
/// normalized text equals the answer.
inline std::optional<std::size_t> resolve_choice(const Question& q, std::string_view extracted) {
  auto t = trim(extracted);
  if (auto idx = parse_index(t)) {
    if (*idx < q.options.size()) return *idx;
    return std::nullopt;
  }
  auto letter_index = [&](char c) -> std::optional<std::size_t> {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (c < 'a' || c > 'z') return std::nullopt;
    auto i = static_cast<std::size_t>(c - 'a');
    if (i < q.options.size()) return i;
    return std::nullopt;
  };
  std::string_view s = t;
  if (s.size() >= 3 && s[0] == '(' && s[2] == ')' &&
      (s.size() == 3 || is_ascii_space(s[3])))
    return letter_index(s[1]);
  if (s.size() == 1) return letter_index(s[0]);
  if (s.size() >= 2 && (s[1] == ')' || s[1] == '.' || s[1] == ':') &&
      (s.size() == 2 || is_ascii_space(s[2])) && std::isalpha(static_cast<unsigned char>(s[0])))
    return letter_index(s[0]);
  auto na = normalize_answer_text(t);
  if (na.empty()) return std::nullopt;
  std::optional<std::size_t> hit;
  for (std::size_t i = 0; i < q.options.size(); ++i) {
    if (normalize_answer_text(q.options[i]) == na) {
      if (hit) return std::nullopt;
      hit = i;
    }
  }
  return hit;
}

/// choice_index applies to multiple-choice questions; other question types
/// are scored quasi-exactly in that mode.
inline ScoreResult score_response(const Question& q, const ModelResponse& r,
                                  const ScoreOptions& opts) {
  if (r.question_id != q.id)
    throw ValidationError("response for '" + r.question_id + "' scored against '" + q.id + "'");
  switch (opts.mode) {
    case ScoreMode::choice_index:
      if (q.question_type == QuestionType::multiple_choice) {
        auto idx = resolve_choice(q, r.extracted_answer);
        if (!idx)
          throw AnswerExtractionError("question '" + q.id + "': answer '" + r.extracted_answer +
                                      "' names no option");
        auto gold = parse_index(q.short_answer);
        return {gold && *gold == *idx, std::nullopt};
      }
      [[fallthrough]];
    case ScoreMode::quasi_exact:
      return {normalize_answer_text(r.extracted_answer) == normalize_answer_text(q.short_answer),
              std::nullopt};
    case ScoreMode::f1_overlap: {
      double f1 = token_f1(r.extracted_answer, q.short_answer);
      return {f1 >= opts.theta, f1};
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Hallucination index
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDifficultyLevels = 5;
using DifficultyProfile = std::array<std::optional<double>, kDifficultyLevels>;

/// Monotonicity index of accuracy over self-rated difficulty, mapped to
/// [0, 1]: mean sign of consecutive differences over the defined levels,
/// then (s + 1) / 2. 0 = accuracy strictly falls with difficulty,
/// 1 = strictly rises. Absent with fewer than two defined levels.
inline std::optional<double> hallucination_score(const DifficultyProfile& x) {
  std::vector<double> defined;
  for (const auto& v : x)
    if (v) defined.push_back(*v);
  if (defined.size() < 2) return std::nullopt;
  int sum = 0;
  for (std::size_t i = 0; i + 1 < defined.size(); ++i) {
    double d = defined[i + 1] - defined[i];
    sum += (d > 0) - (d < 0);
  }
  double raw = static_cast<double>(sum) / static_cast<double>(defined.size() - 1);
  return (raw + 1.0) / 2.0;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

// One evaluated question for one model.
struct ScoredItem {
  std::string question_id;
  bool correct = false;
  bool responded = false;
  std::optional<int> self_difficulty;
  std::optional<double> response_time_s;
};

inline ScoredItem unscored_item(const std::string& id) {
  ScoredItem it;
  it.question_id = id;
  return it;
}

struct SubfieldStats {
  std::string node_id;
  std::string model_id;
  std::size_t n_questions = 0;
  std::size_t n_correct = 0;
  std::optional<double> accuracy;
  DifficultyProfile difficulty_accuracy;
  std::array<std::size_t, kDifficultyLevels> difficulty_n{};
  std::array<std::size_t, kDifficultyLevels> difficulty_correct{};
  std::optional<double> hallucination;
  std::optional<double> mean_difficulty;
  std::optional<double> mean_response_time_s;
  std::optional<double> mean_response_time_norm;
  // Raw sums kept so parents fold from children without revisiting questions.
  // Latency is summed in whole microseconds so the total is exact whatever
  // the order questions or children are visited in.
  std::size_t n_timed = 0;
  std::int64_t time_sum_us = 0;
};

namespace detail {

inline void add_item(SubfieldStats& s, const ScoredItem& it) {
  ++s.n_questions;
  if (it.correct) ++s.n_correct;
  if (it.self_difficulty && *it.self_difficulty >= 1 && *it.self_difficulty <= 5) {
    auto k = static_cast<std::size_t>(*it.self_difficulty - 1);
    ++s.difficulty_n[k];
    if (it.correct) ++s.difficulty_correct[k];
  }
  if (it.response_time_s) {
    ++s.n_timed;
    s.time_sum_us += std::llround(*it.response_time_s * 1e6);
  }
}

inline void add_stats(SubfieldStats& into, const SubfieldStats& from) {
  into.n_questions += from.n_questions;
  into.n_correct += from.n_correct;
  for (std::size_t k = 0; k < kDifficultyLevels; ++k) {
    into.difficulty_n[k] += from.difficulty_n[k];
    into.difficulty_correct[k] += from.difficulty_correct[k];
  }
  into.n_timed += from.n_timed;
  into.time_sum_us += from.time_sum_us;
}

// Derives the ratio fields from the raw counts.
inline void finish(SubfieldStats& s) {
  s.accuracy = s.n_questions ? std::optional<double>(static_cast<double>(s.n_correct) /
                                                     static_cast<double>(s.n_questions))
                             : std::nullopt;
  std::size_t rated = 0;
  double weighted = 0.0;
  for (std::size_t k = 0; k < kDifficultyLevels; ++k) {
    if (s.difficulty_n[k]) {
      s.difficulty_accuracy[k] = static_cast<double>(s.difficulty_correct[k]) /
                                 static_cast<double>(s.difficulty_n[k]);
      rated += s.difficulty_n[k];
      weighted += static_cast<double>((k + 1) * s.difficulty_n[k]);
    } else {
      s.difficulty_accuracy[k] = std::nullopt;
    }
  }
  s.mean_difficulty = rated ? std::optional<double>(weighted / static_cast<double>(rated)) : std::nullopt;
  s.hallucination = hallucination_score(s.difficulty_accuracy);
  s.mean_response_time_s =
      s.n_timed ? std::optional<double>(static_cast<double>(s.time_sum_us) / 1e6 / static_cast<double>(s.n_timed)) : std::nullopt;
}

}  // namespace detail

using ScoredIndex = std::map<std::string, ScoredItem>;

/// Direct recomputation over every question in the node's subtree.
/// Questions without a scored item count as incorrect.
inline SubfieldStats aggregate_node_stats(const KnowledgeNode& node, const ScoredIndex& scored,
                                          const std::string& model_id) {
  SubfieldStats s;
  s.node_id = node.id;
  s.model_id = model_id;
  std::vector<std::string> ids;
  collect_question_ids(node, ids);
  for (const auto& id : ids) {
    auto it = scored.find(id);
    detail::add_item(s, it != scored.end() ? it->second : unscored_item(id));
  }
  detail::finish(s);
  return s;
}

/// Bottom-up fold: leaves from their questions, internal nodes from their
/// children. Returned in pre-order.
inline std::vector<SubfieldStats> aggregate_tree(const KnowledgeHierarchy& h,
                                                 const ScoredIndex& scored,
                                                 const std::string& model_id) {
  std::vector<SubfieldStats> out;
  std::function<SubfieldStats(const KnowledgeNode&)> fold = [&](const KnowledgeNode& n) {
    std::size_t slot = out.size();
    out.emplace_back();
    SubfieldStats s;
    s.node_id = n.id;
    s.model_id = model_id;
    for (const auto& id : n.question_ids) {
      auto it = scored.find(id);
      detail::add_item(s, it != scored.end() ? it->second : unscored_item(id));
    }
    for (const auto& c : n.children) detail::add_stats(s, fold(c));
    detail::finish(s);
    out[slot] = s;
    return s;
  };
  fold(h.root);
  return out;
}

/// Mean times divided by the largest mean among the displayed subfields.
/// All absent when no subfield has a positive mean.
inline std::vector<std::optional<double>> normalize_response_times(
    const std::vector<std::optional<double>>& means) {
  double max = 0.0;
  for (const auto& m : means)
    if (m && *m > max) max = *m;
  std::vector<std::optional<double>> out(means.size());
  if (max <= 0.0) return out;
  for (std::size_t i = 0; i < means.size(); ++i)
    if (means[i]) out[i] = *means[i] / max;
  return out;
}

inline void attach_normalized_times(std::vector<SubfieldStats>& stats) {
  std::vector<std::optional<double>> means;
  for (const auto& s : stats) means.push_back(s.mean_response_time_s);
  auto norm = normalize_response_times(means);
  for (std::size_t i = 0; i < stats.size(); ++i) stats[i].mean_response_time_norm = norm[i];
}

// ---------------------------------------------------------------------------
// Bloom levels
// ---------------------------------------------------------------------------

struct BloomLevelStats {
  std::size_t n_questions = 0;
  std::size_t n_correct = 0;
  std::optional<double> accuracy;
};

struct BloomStats {
  std::array<BloomLevelStats, 6> levels{};
  std::size_t total_questions = 0;  // classified questions
  std::size_t unclassified = 0;

  const BloomLevelStats& at(BloomLevel b) const { return levels[static_cast<std::size_t>(b)]; }
};

/// Micro-averaged accuracy per Bloom level over the evaluated questions.
inline BloomStats bloom_stats(const Dataset& ds, const ScoredIndex& scored) {
  BloomStats b;
  for (const auto& q : ds.questions) {
    if (q.split == Split::fewshot_reserved) continue;
    if (!q.bloom_level) {
      ++b.unclassified;
      continue;
    }
    auto& lvl = b.levels[static_cast<std::size_t>(*q.bloom_level)];
    ++lvl.n_questions;
    ++b.total_questions;
    if (auto it = scored.find(q.id); it != scored.end() && it->second.correct) ++lvl.n_correct;
  }
  if (b.total_questions == 0) throw NoClassifiedQuestionsError("no question carries a Bloom level");
  for (auto& lvl : b.levels)
    if (lvl.n_questions)
      lvl.accuracy = static_cast<double>(lvl.n_correct) / static_cast<double>(lvl.n_questions);
  return b;
}

// Dots for a share of all samples: one per percent, rounded half up.
inline std::size_t percent_dots(std::size_t count, std::size_t total) {
  if (total == 0) return 0;
  // floor(100 * count / total + 0.5) in exact integer arithmetic.
  return (200 * count + total) / (2 * total);
}

// ---------------------------------------------------------------------------
// Run reports
// ---------------------------------------------------------------------------

struct ReportFlag {
  std::string kind;  // missing_response, unresolvable_answer, unknown_question
  std::string question_id;
  std::string detail;
};

struct RunReport {
  std::string model_id;
  std::optional<double> overall_accuracy;
  std::vector<SubfieldStats> nodes;  // pre-order, root first
  std::optional<BloomStats> bloom;
  std::vector<ReportFlag> flags;
  std::vector<ModelResponse> scored_responses;  // with is_correct filled

  const SubfieldStats* find(std::string_view node_id) const {
    for (const auto& s : nodes)
      if (s.node_id == node_id) return &s;
    return nullptr;
  }
};

/// Scores one model's responses against every evaluated question in the
/// hierarchy and aggregates per node.
inline RunReport score_model(const Dataset& ds, const KnowledgeHierarchy& h,
                             const std::string& model_id,
                             const std::vector<ModelResponse>& responses,
                             const ScoreOptions& opts) {
  RunReport report;
  report.model_id = model_id;
  std::map<std::string, const ModelResponse*> by_question;
  for (const auto& r : responses) {
    if (r.model_id != model_id) continue;
    if (!ds.find(r.question_id)) {
      report.flags.push_back({"unknown_question", r.question_id, "response for a question not in the dataset"});
      continue;
    }
    by_question.try_emplace(r.question_id, &r);
  }
  std::vector<std::string> displayed;
  collect_question_ids(h.root, displayed);
  ScoredIndex scored;
  for (const auto& qid : displayed) {
    const Question* q = ds.find(qid);
    if (!q) throw ConsistencyError("hierarchy references unknown question '" + qid + "'");
    ScoredItem item = unscored_item(qid);
    auto it = by_question.find(qid);
    if (it == by_question.end()) {
      report.flags.push_back({"missing_response", qid, "counted as incorrect"});
    } else {
      const auto& r = *it->second;
      item.responded = true;
      item.self_difficulty = r.self_difficulty;
      item.response_time_s = r.response_time_s;
      try {
        item.correct = score_response(*q, r, opts).correct;
      } catch (const AnswerExtractionError& e) {
        report.flags.push_back({"unresolvable_answer", qid, e.what()});
      }
      ModelResponse copy = r;
      copy.is_correct = item.correct;
      report.scored_responses.push_back(std::move(copy));
    }
    scored.emplace(qid, std::move(item));
  }
  report.nodes = aggregate_tree(h, scored, model_id);
  attach_normalized_times(report.nodes);
  report.overall_accuracy = report.nodes.front().accuracy;
  try {
    report.bloom = bloom_stats(ds, scored);
  } catch (const NoClassifiedQuestionsError&) {
    report.bloom = std::nullopt;
  }
  return report;
}

/// Node statistics over the union of several models' scored items. Used for
/// glyphs that summarize all displayed models at once.
inline std::vector<SubfieldStats> pooled_stats(const KnowledgeHierarchy& h,
                                               const std::vector<RunReport>& reports) {
  std::vector<SubfieldStats> pooled;
  std::function<SubfieldStats(const KnowledgeNode&)> fold = [&](const KnowledgeNode& n) {
    std::size_t slot = pooled.size();
    pooled.emplace_back();
    SubfieldStats s;
    s.node_id = n.id;
    s.model_id = "*";
    if (n.is_leaf()) {
      for (const auto& r : reports)
        if (const auto* leaf = r.find(n.id)) detail::add_stats(s, *leaf);
    } else {
      for (const auto& c : n.children) detail::add_stats(s, fold(c));
    }
    detail::finish(s);
    pooled[slot] = s;
    return s;
  };
  fold(h.root);
  attach_normalized_times(pooled);
  return pooled;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace detail {
inline json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
inline std::optional<double> opt_double(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}
}  // namespace detail

inline json to_json(const SubfieldStats& s) {
  json da = json::array(), counts = json::array();
  for (std::size_t k = 0; k < kDifficultyLevels; ++k) {
    da.push_back(detail::opt(s.difficulty_accuracy[k]));
    counts.push_back({s.difficulty_n[k], s.difficulty_correct[k]});
  }
  return {{"node_id", s.node_id},
          {"model_id", s.model_id},
          {"n_questions", s.n_questions},
          {"n_correct", s.n_correct},
          {"accuracy", detail::opt(s.accuracy)},
          {"difficulty_accuracy", da},
          {"difficulty_counts", counts},
          {"hallucination", detail::opt(s.hallucination)},
          {"mean_difficulty", detail::opt(s.mean_difficulty)},
          {"mean_response_time_s", detail::opt(s.mean_response_time_s)},
          {"mean_response_time_norm", detail::opt(s.mean_response_time_norm)},
          {"n_timed", s.n_timed},
          {"time_sum_us", s.time_sum_us}};
}

inline SubfieldStats subfield_stats_from_json(const json& j) {
  SubfieldStats s;
  s.node_id = detail::get_string(j, "node_id", "stats", true);
  s.model_id = detail::get_string(j, "model_id", "stats");
  s.n_questions = j.value("n_questions", std::size_t{0});
  s.n_correct = j.value("n_correct", std::size_t{0});
  if (s.n_correct > s.n_questions) throw ParseError("stats '" + s.node_id + "': n_correct > n_questions");
  if (auto it = j.find("difficulty_counts"); it != j.end() && it->is_array()) {
    for (std::size_t k = 0; k < kDifficultyLevels && k < it->size(); ++k) {
      s.difficulty_n[k] = (*it)[k].at(0).get<std::size_t>();
      s.difficulty_correct[k] = (*it)[k].at(1).get<std::size_t>();
    }
  }
  s.n_timed = j.value("n_timed", std::size_t{0});
  s.time_sum_us = j.value("time_sum_us", std::int64_t{0});
  detail::finish(s);
  s.mean_response_time_norm = detail::opt_double(j, "mean_response_time_norm");
  return s;
}

inline json to_json(const BloomStats& b) {
  json levels = json::object();
  for (auto lvl : kBloomLevels) {
    const auto& s = b.at(lvl);
    levels[std::string(to_string(lvl))] = {
        {"n_questions", s.n_questions}, {"n_correct", s.n_correct}, {"accuracy", detail::opt(s.accuracy)}};
  }
  return {{"levels", levels}, {"total_questions", b.total_questions}, {"unclassified", b.unclassified}};
}

inline BloomStats bloom_stats_from_json(const json& j) {
  BloomStats b;
  const auto& levels = detail::require(j, "levels", "bloom stats");
  for (auto lvl : kBloomLevels) {
    auto& s = b.levels[static_cast<std::size_t>(lvl)];
    auto it = levels.find(std::string(to_string(lvl)));
    if (it == levels.end()) continue;
    s.n_questions = it->value("n_questions", std::size_t{0});
    s.n_correct = it->value("n_correct", std::size_t{0});
    if (s.n_questions)
      s.accuracy = static_cast<double>(s.n_correct) / static_cast<double>(s.n_questions);
  }
  b.total_questions = j.value("total_questions", std::size_t{0});
  b.unclassified = j.value("unclassified", std::size_t{0});
  return b;
}

inline json to_json(const RunReport& r) {
  json nodes = json::array(), flags = json::array();
  for (const auto& s : r.nodes) nodes.push_back(to_json(s));
  for (const auto& f : r.flags)
    flags.push_back({{"kind", f.kind}, {"question_id", f.question_id}, {"detail", f.detail}});
  return {{"model_id", r.model_id},
          {"overall_accuracy", detail::opt(r.overall_accuracy)},
          {"nodes", nodes},
          {"bloom", r.bloom ? to_json(*r.bloom) : json(nullptr)},
          {"flags", flags}};
}

inline RunReport run_report_from_json(const json& j) {
  RunReport r;
  r.model_id = detail::get_string(j, "model_id", "run report", true);
  r.overall_accuracy = detail::opt_double(j, "overall_accuracy");
  for (const auto& n : detail::require(j, "nodes", "run report")) r.nodes.push_back(subfield_stats_from_json(n));
  if (auto it = j.find("bloom"); it != j.end() && !it->is_null()) r.bloom = bloom_stats_from_json(*it);
  if (auto it = j.find("flags"); it != j.end() && it->is_array())
    for (const auto& f : *it)
      r.flags.push_back({f.value("kind", std::string()), f.value("question_id", std::string()),
                         f.value("detail", std::string())});
  return r;
}

// Everything the renderer needs: per-model reports plus pooled glyph stats.
struct StatsBundle {
  std::vector<std::string> datasets;
  std::string field_label;
  std::string score_mode;
  std::vector<RunReport> runs;
  std::vector<SubfieldStats> pooled;
};

inline json to_json(const StatsBundle& b) {
  json runs = json::array(), pooled = json::array();
  for (const auto& r : b.runs) runs.push_back(to_json(r));
  for (const auto& s : b.pooled) pooled.push_back(to_json(s));
  return {{"datasets", b.datasets}, {"field_label", b.field_label}, {"score_mode", b.score_mode},
          {"runs", runs},           {"pooled", pooled}};
}

inline StatsBundle stats_bundle_from_json(const json& j) {
  StatsBundle b;
  b.datasets = detail::get_string_list(j, "datasets", "stats");
  b.field_label = detail::get_string(j, "field_label", "stats");
  b.score_mode = detail::get_string(j, "score_mode", "stats");
  for (const auto& r : detail::require(j, "runs", "stats")) b.runs.push_back(run_report_from_json(r));
  if (auto it = j.find("pooled"); it != j.end() && it->is_array())
    for (const auto& s : *it) b.pooled.push_back(subfield_stats_from_json(s));
  return b;
}

inline StatsBundle build_stats_bundle(const Dataset& ds, const KnowledgeHierarchy& h,
                                      std::vector<RunReport> runs, ScoreMode mode) {
  StatsBundle b;
  b.datasets = {ds.name};
  b.field_label = ds.field_label;
  b.score_mode = std::string(to_string(mode));
  b.pooled = pooled_stats(h, runs);
  b.runs = std::move(runs);
  return b;
}

}  // namespace llmmaps
