#pragma once

// Prompt templates. They are data: every field can be replaced from a JSON
// file with the same keys, and `version` travels into transcript entries.

#include <string>

#include "qa_core.hpp"

namespace llmmaps {

struct PromptTemplates {
  std::string version = "llmmaps-prompts/1";

  // Answering. The target block ends with the answer cue so the model's
  // completion is the answer itself.
  std::string answer_header = "Answer each question. Every answer is given after \"Answer:\".\n\n";
  std::string answer_context = "Context: {context}\n";
  std::string answer_question = "Question: {question}\n";
  std::string answer_option = "{label}) {option}\n";
  std::string answer_cue = "Answer:";
  std::string answer_separator = "\n\n";

  // Stratification.
  std::string topic_list =
      "Provide a list of the {min}-{max} main topics of {field}. "
      "Answer with a numbered list, one topic per line.";
  std::string topic_list_retry =
      "Provide a list of the {min}-{max} main topics of {field}. "
      "Answer only with the list: one topic per line, formatted as \"1. Topic\", no other text.";
  std::string outline =
      "Provide an outline for a textbook about {topic} (within {path}). "
      "Answer with a numbered list of chapter titles, one per line.";
  std::string outline_retry =
      "Provide an outline for a textbook about {topic} (within {path}). "
      "Answer only with the list: one chapter title per line, formatted as \"1. Title\", no other text.";
  std::string assign =
      "Which of the following subfields of {field} best fits the question below?\n\n"
      "Subfields:\n{leaves}\n"
      "Question: {question}\n\n"
      "Answer with the full subfield path exactly as listed.";
  std::string assign_menu =
      "Select the subfield of {field} that best fits the question below.\n\n"
      "{menu}\n"
      "Question: {question}\n\n"
      "Answer only with the number of the subfield.";

  // Annotation.
  std::string bloom =
      "Classify the following question according to Bloom's taxonomy. "
      "Choose exactly one of: Remembering, Understanding, Applying, Analyzing, Evaluating, Creating.\n\n"
      "Question: {question}\n\nLevel:";
  std::string bloom_retry =
      "Which single Bloom's taxonomy level fits this question best? "
      "Reply with one word from this list and nothing else: "
      "Remembering, Understanding, Applying, Analyzing, Evaluating, Creating.\n\n"
      "Question: {question}\n\nLevel:";
  std::string difficulty =
      "How difficult is the following question for you to answer, on a scale from "
      "1 (very easy) to 5 (very difficult)?\n\n{question_block}\nDifficulty (1-5):";
  std::string difficulty_retry =
      "Rate the difficulty of this question for you with a single digit from 1 (very easy) "
      "to 5 (very difficult). Reply with the digit only.\n\n{question_block}\nDigit:";
};

inline json to_json(const PromptTemplates& t) {
  return {{"version", t.version},
          {"answer_header", t.answer_header},
          {"answer_context", t.answer_context},
          {"answer_question", t.answer_question},
          {"answer_option", t.answer_option},
          {"answer_cue", t.answer_cue},
          {"answer_separator", t.answer_separator},
          {"topic_list", t.topic_list},
          {"topic_list_retry", t.topic_list_retry},
          {"outline", t.outline},
          {"outline_retry", t.outline_retry},
          {"assign", t.assign},
          {"assign_menu", t.assign_menu},
          {"bloom", t.bloom},
          {"bloom_retry", t.bloom_retry},
          {"difficulty", t.difficulty},
          {"difficulty_retry", t.difficulty_retry}};
}

// Keys absent from `j` keep their built-in text.
inline PromptTemplates templates_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("templates: expected an object");
  PromptTemplates t;
  auto set = [&](const char* key, std::string& field) {
    if (auto it = j.find(key); it != j.end()) {
      if (!it->is_string()) throw ParseError(std::string("templates: '") + key + "' must be a string");
      field = it->get<std::string>();
    }
  };
  set("version", t.version);
  set("answer_header", t.answer_header);
  set("answer_context", t.answer_context);
  set("answer_question", t.answer_question);
  set("answer_option", t.answer_option);
  set("answer_cue", t.answer_cue);
  set("answer_separator", t.answer_separator);
  set("topic_list", t.topic_list);
  set("topic_list_retry", t.topic_list_retry);
  set("outline", t.outline);
  set("outline_retry", t.outline_retry);
  set("assign", t.assign);
  set("assign_menu", t.assign_menu);
  set("bloom", t.bloom);
  set("bloom_retry", t.bloom_retry);
  set("difficulty", t.difficulty);
  set("difficulty_retry", t.difficulty_retry);
  return t;
}

}  // namespace llmmaps
