#pragma once

// Import of third-party Q&A formats into the normalized Dataset via
// declarative field mappings.

#include <cstdint>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "parallel.hpp"
#include "qa_core.hpp"
#include "random.hpp"

namespace llmmaps {

enum class SourceFormat { pubmedqa_like, sciq_like, mcq_generic, normalized_passthrough };

inline std::string_view to_string(SourceFormat f) {
  switch (f) {
    case SourceFormat::pubmedqa_like: return "pubmedqa_like";
    case SourceFormat::sciq_like: return "sciq_like";
    case SourceFormat::mcq_generic: return "mcq_generic";
    case SourceFormat::normalized_passthrough: return "normalized_passthrough";
  }
  return "mcq_generic";
}

// Accepts both the enum names and the short CLI names.
inline std::optional<SourceFormat> parse_source_format(std::string_view s) {
  if (s == "pubmedqa" || s == "pubmedqa_like") return SourceFormat::pubmedqa_like;
  if (s == "sciq" || s == "sciq_like") return SourceFormat::sciq_like;
  if (s == "mcq" || s == "mcq_generic") return SourceFormat::mcq_generic;
  if (s == "normalized" || s == "normalized_passthrough") return SourceFormat::normalized_passthrough;
  return std::nullopt;
}

// Mapping targets. `correct_option` + `distractors` build a shuffled option
// list; `answer` is resolved against `options` (index, letter or text).
inline const std::set<std::string>& mapping_targets() {
  static const std::set<std::string> targets = {
      "id",     "text",        "options", "correct_option", "distractors", "answer",
      "long_answer", "context", "topic_path", "difficulty", "bloom_level"};
  return targets;
}

struct KeyMapEntry {
  std::vector<std::string> sources;  // several keys are concatenated in order
  std::string target;
  bool optional = false;
};

struct SplitRule {
  std::string source;
  std::string pattern;  // ECMAScript regex used as delimiter
  std::vector<std::string> targets;
  bool optional = false;
};

struct FieldMapping {
  SourceFormat source_format = SourceFormat::mcq_generic;
  std::vector<KeyMapEntry> key_map;
  std::vector<SplitRule> split_rules;
  int answer_index_base = 0;  // 1 for datasets with 1-based answer indices
};

/// Returns a description of every invariant violation (empty when valid).
inline std::vector<std::string> check_mapping(const FieldMapping& m) {
  std::vector<std::string> problems;
  std::set<std::string> used;
  auto use = [&](const std::string& t) {
    if (!mapping_targets().count(t)) problems.push_back("unknown target field '" + t + "'");
    if (!used.insert(t).second) problems.push_back("target field '" + t + "' mapped more than once");
  };
  for (const auto& e : m.key_map) {
    if (e.sources.empty()) problems.push_back("key_map entry for '" + e.target + "' has no source");
    use(e.target);
  }
  for (const auto& r : m.split_rules) {
    if (r.targets.empty()) problems.push_back("split rule on '" + r.source + "' has no targets");
    for (const auto& t : r.targets) use(t);
    try {
      std::regex re(r.pattern);
    } catch (const std::regex_error&) {
      problems.push_back("split rule on '" + r.source + "' has an invalid pattern");
    }
  }
  if (m.answer_index_base != 0 && m.answer_index_base != 1)
    problems.push_back("answer_index_base must be 0 or 1");
  return problems;
}

inline FieldMapping default_mapping(SourceFormat f) {
  FieldMapping m;
  m.source_format = f;
  switch (f) {
    case SourceFormat::sciq_like:
      m.key_map = {{{"question"}, "text"},
                   {{"correct_answer"}, "correct_option"},
                   {{"distractor1", "distractor2", "distractor3"}, "distractors"},
                   {{"support"}, "context", true}};
      break;
    case SourceFormat::pubmedqa_like:
      // "__key__" is the object key when the source is a {PMID: record} map.
      m.key_map = {{{"__key__"}, "id"},
                   {{"QUESTION"}, "text"},
                   {{"CONTEXTS"}, "context"},
                   {{"final_decision"}, "answer"},
                   {{"LONG_ANSWER"}, "long_answer", true}};
      break;
    case SourceFormat::mcq_generic:
      m.key_map = {{{"id"}, "id", true},
                   {{"question"}, "text"},
                   {{"options"}, "options"},
                   {{"answer"}, "answer"},
                   {{"context"}, "context", true},
                   {{"topic"}, "topic_path", true}};
      break;
    case SourceFormat::normalized_passthrough:
      break;
  }
  return m;
}

inline FieldMapping mapping_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("mapping: expected an object");
  FieldMapping m;
  auto fmt = detail::get_string(j, "source_format", "mapping", true);
  auto parsed = parse_source_format(fmt);
  if (!parsed) throw ParseError("mapping: unknown source_format '" + fmt + "'");
  m.source_format = *parsed;
  auto sources_of = [](const json& s) {
    std::vector<std::string> out;
    if (s.is_string()) {
      out.push_back(s.get<std::string>());
    } else if (s.is_array()) {
      for (const auto& e : s) {
        if (!e.is_string()) throw ParseError("mapping: source keys must be strings");
        out.push_back(e.get<std::string>());
      }
    } else {
      throw ParseError("mapping: 'source' must be a string or array of strings");
    }
    return out;
  };
  if (auto it = j.find("key_map"); it != j.end()) {
    if (!it->is_array()) throw ParseError("mapping: 'key_map' must be an array");
    for (const auto& e : *it) {
      KeyMapEntry entry;
      entry.sources = sources_of(detail::require(e, "source", "mapping key_map"));
      entry.target = detail::get_string(e, "target", "mapping key_map", true);
      entry.optional = e.value("optional", false);
      m.key_map.push_back(std::move(entry));
    }
  } else {
    m.key_map = default_mapping(m.source_format).key_map;
  }
  if (auto it = j.find("split_rules"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw ParseError("mapping: 'split_rules' must be an array");
    for (const auto& e : *it) {
      SplitRule r;
      r.source = detail::get_string(e, "source", "mapping split_rules", true);
      r.pattern = detail::get_string(e, "pattern", "mapping split_rules", true);
      r.targets = detail::get_string_list(e, "targets", "mapping split_rules");
      r.optional = e.value("optional", false);
      m.split_rules.push_back(std::move(r));
    }
  }
  m.answer_index_base = j.value("answer_index_base", 0);
  auto problems = check_mapping(m);
  if (!problems.empty()) throw ParseError("mapping: " + problems.front());
  return m;
}

inline json to_json(const FieldMapping& m) {
  json km = json::array();
  for (const auto& e : m.key_map) {
    json src = e.sources.size() == 1 ? json(e.sources.front()) : json(e.sources);
    km.push_back({{"source", src}, {"target", e.target}, {"optional", e.optional}});
  }
  json sr = json::array();
  for (const auto& r : m.split_rules)
    sr.push_back({{"source", r.source}, {"pattern", r.pattern}, {"targets", r.targets},
                  {"optional", r.optional}});
  return {{"source_format", std::string(to_string(m.source_format))},
          {"key_map", km},
          {"split_rules", sr},
          {"answer_index_base", m.answer_index_base}};
}

/// multiple_choice iff >= 2 options; yes_no_maybe iff no options and the
/// normalized answer is yes/no/maybe; free_form otherwise.
inline QuestionType infer_question_type(const std::vector<std::string>& options,
                                        std::string_view answer) {
  if (options.size() >= 2) return QuestionType::multiple_choice;
  if (options.empty() && is_yes_no_maybe(answer))
    return QuestionType::yes_no_maybe;
  return QuestionType::free_form;
}

struct RecordError {
  std::size_t record_index = 0;
  std::string key;
  std::string message;
};

struct ImportOptions {
  std::string name = "dataset";
  std::string field_label;
  std::uint64_t shuffle_seed = 0;
  std::size_t fewshot_count = 3;
  std::size_t workers = 1;
};

struct ImportResult {
  Dataset dataset;
  std::vector<RecordError> errors;  // records dropped with the reason
};

namespace detail {

inline std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_null()) return {};
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_array()) {
    std::vector<std::string> parts;
    for (const auto& e : v) parts.push_back(scalar_text(e));
    return join(parts, "\n");
  }
  return v.dump();
}

inline std::vector<std::string> list_text(const json& v) {
  std::vector<std::string> out;
  if (v.is_array()) {
    for (const auto& e : v) out.push_back(scalar_text(e));
  } else if (!v.is_null()) {
    out.push_back(scalar_text(v));
  }
  return out;
}

// Raw values gathered per target before resolution into a Question.
struct Gathered {
  std::map<std::string, std::vector<std::string>> lists;
  std::map<std::string, std::string> scalars;
};

inline bool is_list_target(const std::string& t) {
  return t == "options" || t == "distractors" || t == "topic_path";
}

struct RecordFailure {
  std::string key;
  std::string message;
};

inline std::optional<std::size_t> resolve_option(const std::vector<std::string>& options,
                                                 const std::string& answer, int base) {
  auto a = trim(answer);
  if (auto idx = parse_index(a)) {
    if (*idx < static_cast<std::size_t>(base)) return std::nullopt;
    auto i = *idx - static_cast<std::size_t>(base);
    if (i < options.size()) return i;
    return std::nullopt;
  }
  if (a.size() == 1 && std::isalpha(static_cast<unsigned char>(a[0]))) {
    auto i = static_cast<std::size_t>(fold_case(a)[0] - 'a');
    if (i < options.size()) return i;
  }
  auto na = normalize_answer_text(a);
  std::optional<std::size_t> hit;
  for (std::size_t i = 0; i < options.size(); ++i) {
    if (normalize_answer_text(options[i]) == na) {
      if (hit) return std::nullopt;  // ambiguous
      hit = i;
    }
  }
  return hit;
}

}  // namespace detail

/// Converts one source record. Throws nothing; failures are returned.
inline std::variant<Question, detail::RecordFailure> convert_record(
    const json& record, const std::string& implicit_key, std::size_t index,
    const FieldMapping& mapping, const ImportOptions& opts) {
  using detail::RecordFailure;
  if (!record.is_object()) return RecordFailure{"", "record is not an object"};
  detail::Gathered g;
  auto fetch = [&](const std::string& key) -> std::optional<json> {
    if (key == "__key__") {
      if (implicit_key.empty()) return std::nullopt;
      return json(implicit_key);
    }
    auto it = record.find(key);
    if (it == record.end()) return std::nullopt;
    return *it;
  };
  for (const auto& e : mapping.key_map) {
    std::vector<json> values;
    for (const auto& src : e.sources) {
      auto v = fetch(src);
      if (!v) {
        if (e.optional) continue;
        return RecordFailure{src, "mapped key '" + src + "' missing"};
      }
      values.push_back(std::move(*v));
    }
    if (values.empty()) continue;
    if (detail::is_list_target(e.target)) {
      auto& list = g.lists[e.target];
      for (const auto& v : values) {
        auto items = detail::list_text(v);
        list.insert(list.end(), items.begin(), items.end());
      }
    } else {
      std::vector<std::string> parts;
      for (const auto& v : values) parts.push_back(detail::scalar_text(v));
      g.scalars[e.target] = join(parts, "\n");
    }
  }
  for (const auto& rule : mapping.split_rules) {
    auto v = fetch(rule.source);
    if (!v) {
      if (rule.optional) continue;
      return RecordFailure{rule.source, "mapped key '" + rule.source + "' missing"};
    }
    std::string text = detail::scalar_text(*v);
    std::regex re(rule.pattern);
    std::vector<std::string> parts;
    for (std::sregex_token_iterator it(text.begin(), text.end(), re, -1), end; it != end; ++it) {
      auto p = trim(it->str());
      if (!p.empty()) parts.push_back(std::move(p));
    }
    if (parts.size() < rule.targets.size())
      return RecordFailure{rule.source, "split of '" + rule.source + "' yielded " +
                                            std::to_string(parts.size()) + " parts, expected " +
                                            std::to_string(rule.targets.size())};
    for (std::size_t t = 0; t < rule.targets.size(); ++t) {
      const auto& target = rule.targets[t];
      bool last = t + 1 == rule.targets.size();
      std::vector<std::string> chunk;
      if (last) {
        chunk.assign(parts.begin() + static_cast<std::ptrdiff_t>(t), parts.end());
      } else {
        chunk.push_back(parts[t]);
      }
      if (detail::is_list_target(target)) {
        auto& list = g.lists[target];
        list.insert(list.end(), chunk.begin(), chunk.end());
      } else {
        g.scalars[target] = join(chunk, " ");
      }
    }
  }

  Question q;
  auto scalar = [&](const char* k) {
    auto it = g.scalars.find(k);
    return it == g.scalars.end() ? std::string{} : trim(it->second);
  };
  q.id = scalar("id");
  if (q.id.empty()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%05zu",
                  std::string(to_string(mapping.source_format)).c_str(), index);
    q.id = buf;
  }
  q.text = scalar("text");
  if (q.text.empty()) return RecordFailure{"text", "empty question text"};
  q.context = scalar("context");
  q.long_answer = scalar("long_answer");
  for (auto& t : g.lists["topic_path"])
    if (auto s = trim(t); !s.empty()) q.topic_path.push_back(std::move(s));

  auto correct = scalar("correct_option");
  std::string answer = scalar("answer");
  auto& distractors = g.lists["distractors"];
  if (!correct.empty() || !distractors.empty()) {
    if (correct.empty()) return RecordFailure{"correct_option", "distractors without a correct option"};
    // Correct option plus distractors, shuffled with a permutation keyed on
    // the question id so the gold index is stable but not always 0.
    std::vector<std::string> shuffled{correct};
    for (auto& d : distractors)
      if (auto s = trim(d); !s.empty()) shuffled.push_back(std::move(s));
    Rng rng(derive_seed(opts.shuffle_seed, q.id));
    rng.shuffle(shuffled);
    std::size_t gold = 0;
    while (shuffled[gold] != correct) ++gold;
    q.options = std::move(shuffled);
    q.short_answer = std::to_string(gold);
    if (q.long_answer.empty()) q.long_answer = correct;
    q.question_type = QuestionType::multiple_choice;
  } else {
    for (auto& o : g.lists["options"])
      if (auto s = trim(o); !s.empty()) q.options.push_back(std::move(s));
    q.question_type = infer_question_type(q.options, answer);
    switch (q.question_type) {
      case QuestionType::multiple_choice: {
        auto idx = detail::resolve_option(q.options, answer, mapping.answer_index_base);
        if (!idx) return RecordFailure{"answer", "answer '" + answer + "' does not resolve to an option"};
        q.short_answer = std::to_string(*idx);
        if (q.long_answer.empty()) q.long_answer = q.options[*idx];
        break;
      }
      case QuestionType::yes_no_maybe:
        q.short_answer = normalize_answer_text(answer);
        break;
      case QuestionType::free_form:
        if (answer.empty()) return RecordFailure{"answer", "empty answer"};
        q.short_answer = answer;
        break;
    }
  }

  if (auto d = scalar("difficulty"); !d.empty()) {
    auto v = parse_index(d);
    if (!v || *v < 1 || *v > 5) return RecordFailure{"difficulty", "difficulty '" + d + "' outside 1..5"};
    q.difficulty = static_cast<int>(*v);
  }
  if (auto b = scalar("bloom_level"); !b.empty()) {
    q.bloom_level = parse_bloom_level(b);
    if (!q.bloom_level) return RecordFailure{"bloom_level", "unknown Bloom level '" + b + "'"};
  }
  if (auto v = validate_question(q); !v.empty())
    return RecordFailure{v.front().field, v.front().message};
  return q;
}

namespace detail {

// Source records in order, with the object key when the source is a map.
inline std::vector<std::pair<std::string, json>> source_records(const std::string& raw) {
  json doc;
  try {
    doc = json::parse(raw);
  } catch (const json::parse_error&) {
    // JSON Lines fallback.
    doc = json::array();
    for (auto& line : parse_jsonl(raw, "source")) doc.push_back(std::move(line));
  }
  std::vector<std::pair<std::string, json>> out;
  if (doc.is_array()) {
    for (auto& r : doc) out.emplace_back(std::string{}, std::move(r));
  } else if (doc.is_object()) {
    for (auto& [k, v] : doc.items()) out.emplace_back(k, v);
  } else {
    throw ParseError("source: expected an array, an object of records, or JSON Lines");
  }
  return out;
}

}  // namespace detail

/// One Question per source record that maps cleanly; failing records are
/// reported in `errors` and skipped. The first `fewshot_count` imported
/// questions are reserved for few-shot prompting.
inline ImportResult import_dataset(const std::string& raw, const FieldMapping& mapping,
                                   const ImportOptions& opts = {}) {
  ImportResult result;
  result.dataset.name = opts.name;
  result.dataset.field_label = opts.field_label;

  if (mapping.source_format == SourceFormat::normalized_passthrough) {
    result.dataset = parse_dataset(raw);
    auto violations = validate_dataset(result.dataset);
    if (!violations.empty())
      throw ValidationError("normalized dataset invalid: question '" + violations.front().question_id +
                            "' " + violations.front().field + ": " + violations.front().message);
    return result;
  }
  if (auto problems = check_mapping(mapping); !problems.empty())
    throw MappingError("invalid mapping: " + problems.front());

  auto records = detail::source_records(raw);
  std::vector<std::variant<Question, detail::RecordFailure>> converted(records.size());
  parallel_for(records.size(), opts.workers, [&](std::size_t i) {
    converted[i] = convert_record(records[i].second, records[i].first, i, mapping, opts);
  });

  std::set<std::string> ids;
  for (std::size_t i = 0; i < converted.size(); ++i) {
    if (auto* f = std::get_if<detail::RecordFailure>(&converted[i])) {
      result.errors.push_back({i, f->key, f->message});
      continue;
    }
    auto& q = std::get<Question>(converted[i]);
    if (!ids.insert(q.id).second) {
      result.errors.push_back({i, "id", "duplicate question id '" + q.id + "'"});
      continue;
    }
    q.split = result.dataset.questions.size() < opts.fewshot_count ? Split::fewshot_reserved
                                                                    : Split::test;
    result.dataset.questions.push_back(std::move(q));
  }
  result.dataset.metadata = {{"source_format", std::string(to_string(mapping.source_format))},
                             {"shuffle_seed", opts.shuffle_seed},
                             {"source_records", records.size()},
                             {"dropped_records", result.errors.size()}};
  return result;
}

inline json to_json(const RecordError& e) {
  return {{"record_index", e.record_index}, {"key", e.key}, {"message", e.message}};
}

}  // namespace llmmaps
