#pragma once

// Normalized Q&A data model shared by every stage: questions, datasets and
// per-model responses, plus validation and (de)serialization.

#include <array>
#include <charconv>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "text.hpp"

namespace llmmaps {

using json = nlohmann::json;

enum class QuestionType { multiple_choice, free_form, yes_no_maybe };

enum class BloomLevel { Remembering, Understanding, Applying, Analyzing, Evaluating, Creating };

inline constexpr std::array<BloomLevel, 6> kBloomLevels = {
    BloomLevel::Remembering, BloomLevel::Understanding, BloomLevel::Applying,
    BloomLevel::Analyzing,   BloomLevel::Evaluating,    BloomLevel::Creating};

enum class Split { train, test, fewshot_reserved };

inline std::string_view to_string(QuestionType t) {
  switch (t) {
    case QuestionType::multiple_choice: return "multiple_choice";
    case QuestionType::free_form: return "free_form";
    case QuestionType::yes_no_maybe: return "yes_no_maybe";
  }
  return "free_form";
}

inline std::string_view to_string(BloomLevel b) {
  static constexpr std::array<std::string_view, 6> names = {
      "Remembering", "Understanding", "Applying", "Analyzing", "Evaluating", "Creating"};
  return names[static_cast<std::size_t>(b)];
}

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::fewshot_reserved: return "fewshot_reserved";
  }
  return "test";
}

inline std::optional<QuestionType> parse_question_type(std::string_view s) {
  for (auto t : {QuestionType::multiple_choice, QuestionType::free_form, QuestionType::yes_no_maybe})
    if (to_string(t) == s) return t;
  return std::nullopt;
}

// Case-insensitive; accepts exactly the six level names.
inline std::optional<BloomLevel> parse_bloom_level(std::string_view s) {
  auto folded = fold_case(trim(s));
  for (auto b : kBloomLevels)
    if (fold_case(to_string(b)) == folded) return b;
  return std::nullopt;
}

inline std::optional<Split> parse_split(std::string_view s) {
  for (auto v : {Split::train, Split::test, Split::fewshot_reserved})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

/// Parses a non-negative decimal integer with no sign, spaces or trailing text.
inline std::optional<std::size_t> parse_index(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

struct Question {
  std::string id;
  std::string text;
  QuestionType question_type = QuestionType::free_form;
  std::vector<std::string> options;
  std::string short_answer;
  std::string long_answer;
  std::string context;
  std::vector<std::string> topic_path;
  std::optional<BloomLevel> bloom_level;
  std::optional<int> difficulty;
  Split split = Split::test;

  bool operator==(const Question&) const = default;
};

struct Dataset {
  std::string name;
  std::string field_label;
  std::vector<Question> questions;
  // Free-form provenance (source format, shuffle seed, ...). Always an object.
  json metadata = json::object();

  bool operator==(const Dataset&) const = default;

  const Question* find(std::string_view id) const {
    for (const auto& q : questions)
      if (q.id == id) return &q;
    return nullptr;
  }
};

struct ModelResponse {
  std::string question_id;
  std::string model_id;
  std::string raw_text;
  std::string extracted_answer;
  std::optional<bool> is_correct;
  double response_time_s = 0.0;
  std::optional<int> self_difficulty;

  bool operator==(const ModelResponse&) const = default;
};

struct Violation {
  std::string question_id;  // empty for dataset-level violations
  std::string field;
  std::string message;

  bool operator==(const Violation&) const = default;
};

inline bool is_yes_no_maybe(std::string_view answer) {
  auto a = normalize_answer_text(answer);
  return a == "yes" || a == "no" || a == "maybe";
}

inline std::vector<Violation> validate_question(const Question& q) {
  std::vector<Violation> out;
  auto add = [&](std::string field, std::string msg) {
    out.push_back({q.id, std::move(field), std::move(msg)});
  };
  if (q.id.empty()) add("id", "empty id");
  if (q.question_type == QuestionType::multiple_choice) {
    if (q.options.empty()) add("options", "multiple choice question without options");
    auto idx = parse_index(q.short_answer);
    if (!idx) {
      add("short_answer", "multiple choice answer is not an integer index");
    } else if (*idx >= q.options.size()) {
      add("short_answer", "index out of range");
    }
  }
  if (q.question_type == QuestionType::yes_no_maybe) {
    auto a = fold_case(trim(q.short_answer));
    if (a != "yes" && a != "no" && a != "maybe")
      add("short_answer", "yes_no_maybe answer not in {yes, no, maybe}");
  }
  if (q.difficulty && (*q.difficulty < 1 || *q.difficulty > 5))
    add("difficulty", "difficulty outside 1..5");
  return out;
}

inline std::vector<Violation> validate_dataset(const Dataset& ds) {
  std::vector<Violation> out;
  if (ds.name.empty()) out.push_back({"", "name", "empty dataset name"});
  std::set<std::string_view> seen;
  for (const auto& q : ds.questions) {
    auto v = validate_question(q);
    out.insert(out.end(), v.begin(), v.end());
    if (!seen.insert(q.id).second) out.push_back({q.id, "id", "duplicate question id"});
  }
  return out;
}

inline std::vector<Violation> validate_response(const ModelResponse& r) {
  std::vector<Violation> out;
  if (r.response_time_s < 0.0 || !(r.response_time_s == r.response_time_s))
    out.push_back({r.question_id, "response_time_s", "negative response time"});
  if (r.self_difficulty && (*r.self_difficulty < 1 || *r.self_difficulty > 5))
    out.push_back({r.question_id, "self_difficulty", "self_difficulty outside 1..5"});
  return out;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
json optional_to_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

inline const json& require(const json& j, const char* key, std::string_view where) {
  auto it = j.find(key);
  if (it == j.end())
    throw ParseError(std::string(where) + ": missing key '" + key + "'");
  return *it;
}

inline std::string get_string(const json& j, const char* key, std::string_view where,
                              bool required = false) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    if (required) throw ParseError(std::string(where) + ": missing key '" + key + "'");
    return {};
  }
  if (!it->is_string())
    throw ParseError(std::string(where) + ": '" + key + "' must be a string");
  return it->get<std::string>();
}

inline std::vector<std::string> get_string_list(const json& j, const char* key,
                                                std::string_view where) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return {};
  if (!it->is_array())
    throw ParseError(std::string(where) + ": '" + key + "' must be an array");
  std::vector<std::string> out;
  for (const auto& e : *it) {
    if (!e.is_string())
      throw ParseError(std::string(where) + ": '" + key + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

inline std::optional<int> get_optional_int(const json& j, const char* key,
                                           std::string_view where) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number_integer())
    throw ParseError(std::string(where) + ": '" + key + "' must be an integer or null");
  return it->get<int>();
}

}  // namespace detail

inline json to_json(const Question& q) {
  json bloom = q.bloom_level ? json(std::string(to_string(*q.bloom_level))) : json(nullptr);
  return json{{"id", q.id},
              {"text", q.text},
              {"question_type", std::string(to_string(q.question_type))},
              {"options", q.options},
              {"short_answer", q.short_answer},
              {"long_answer", q.long_answer},
              {"context", q.context},
              {"topic_path", q.topic_path},
              {"bloom_level", bloom},
              {"difficulty", detail::optional_to_json(q.difficulty)},
              {"split", std::string(to_string(q.split))}};
}

inline Question question_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("question: expected an object");
  Question q;
  q.id = detail::get_string(j, "id", "question", true);
  const std::string where = "question '" + q.id + "'";
  q.text = detail::get_string(j, "text", where, true);
  auto qt = detail::get_string(j, "question_type", where, true);
  auto parsed = parse_question_type(qt);
  if (!parsed) throw ParseError(where + ": unknown question_type '" + qt + "'");
  q.question_type = *parsed;
  q.options = detail::get_string_list(j, "options", where);
  q.short_answer = detail::get_string(j, "short_answer", where, true);
  q.long_answer = detail::get_string(j, "long_answer", where);
  q.context = detail::get_string(j, "context", where);
  q.topic_path = detail::get_string_list(j, "topic_path", where);
  auto bloom = detail::get_string(j, "bloom_level", where);
  if (!bloom.empty()) {
    q.bloom_level = parse_bloom_level(bloom);
    if (!q.bloom_level) throw ParseError(where + ": unknown bloom_level '" + bloom + "'");
  }
  q.difficulty = detail::get_optional_int(j, "difficulty", where);
  auto split = detail::get_string(j, "split", where);
  if (!split.empty()) {
    auto s = parse_split(split);
    if (!s) throw ParseError(where + ": unknown split '" + split + "'");
    q.split = *s;
  }
  return q;
}

inline json to_json(const Dataset& ds) {
  json qs = json::array();
  for (const auto& q : ds.questions) qs.push_back(to_json(q));
  return json{{"name", ds.name},
              {"field_label", ds.field_label},
              {"metadata", ds.metadata},
              {"questions", std::move(qs)}};
}

inline Dataset dataset_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("dataset: expected an object");
  Dataset ds;
  ds.name = detail::get_string(j, "name", "dataset", true);
  ds.field_label = detail::get_string(j, "field_label", "dataset");
  if (auto it = j.find("metadata"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw ParseError("dataset: 'metadata' must be an object");
    ds.metadata = *it;
  }
  const auto& qs = detail::require(j, "questions", "dataset");
  if (!qs.is_array()) throw ParseError("dataset: 'questions' must be an array");
  for (const auto& q : qs) ds.questions.push_back(question_from_json(q));
  return ds;
}

inline json to_json(const ModelResponse& r) {
  return json{{"question_id", r.question_id},
              {"model_id", r.model_id},
              {"raw_text", r.raw_text},
              {"extracted_answer", r.extracted_answer},
              {"is_correct", detail::optional_to_json(r.is_correct)},
              {"response_time_s", r.response_time_s},
              {"self_difficulty", detail::optional_to_json(r.self_difficulty)}};
}

inline ModelResponse response_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("response: expected an object");
  ModelResponse r;
  r.question_id = detail::get_string(j, "question_id", "response", true);
  const std::string where = "response for '" + r.question_id + "'";
  r.model_id = detail::get_string(j, "model_id", where, true);
  r.raw_text = detail::get_string(j, "raw_text", where);
  r.extracted_answer = detail::get_string(j, "extracted_answer", where);
  if (auto it = j.find("is_correct"); it != j.end() && !it->is_null()) {
    if (!it->is_boolean()) throw ParseError(where + ": 'is_correct' must be boolean or null");
    r.is_correct = it->get<bool>();
  }
  if (auto it = j.find("response_time_s"); it != j.end() && !it->is_null()) {
    if (!it->is_number()) throw ParseError(where + ": 'response_time_s' must be a number");
    r.response_time_s = it->get<double>();
  }
  r.self_difficulty = detail::get_optional_int(j, "self_difficulty", where);
  return r;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("IoError", "cannot write '" + path + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("IoError", "write failed for '" + path + "'");
}

inline json parse_json_text(std::string_view text, std::string_view what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(what) + ": " + e.what());
  }
}

// Canonical serialization: sorted keys, two-space indent, trailing newline.
inline std::string dump_canonical(const json& j) { return j.dump(2) + "\n"; }

inline Dataset parse_dataset(std::string_view text) {
  return dataset_from_json(parse_json_text(text, "dataset"));
}

inline std::string dump_dataset(const Dataset& ds) { return dump_canonical(to_json(ds)); }

inline Dataset load_dataset(const std::string& path) { return parse_dataset(read_file(path)); }

inline void save_dataset(const std::string& path, const Dataset& ds) {
  write_file(path, dump_dataset(ds));
}

inline std::vector<json> parse_jsonl(std::string_view text, std::string_view what) {
  std::vector<json> out;
  std::size_t line_no = 0;
  for (const auto& line : split_lines(text)) {
    ++line_no;
    if (trim(line).empty()) continue;
    out.push_back(parse_json_text(line, std::string(what) + " line " + std::to_string(line_no)));
  }
  return out;
}

inline std::vector<ModelResponse> parse_responses(std::string_view text) {
  std::vector<ModelResponse> out;
  for (const auto& j : parse_jsonl(text, "responses")) out.push_back(response_from_json(j));
  return out;
}

inline std::string dump_responses(const std::vector<ModelResponse>& rs) {
  std::string out;
  for (const auto& r : rs) out += to_json(r).dump() + "\n";
  return out;
}

inline std::vector<ModelResponse> load_responses(const std::string& path) {
  return parse_responses(read_file(path));
}

inline void save_responses(const std::string& path, const std::vector<ModelResponse>& rs) {
  write_file(path, dump_responses(rs));
}

}  // namespace llmmaps
