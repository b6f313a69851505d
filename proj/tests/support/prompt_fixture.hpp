#pragma once

// Long-context prompt fixture and an independent prompt-size oracle.

#include <string>
#include <vector>

#include <llmmaps/qa_core.hpp>

namespace testing_support {

using llmmaps::Question;
using llmmaps::QuestionType;
using llmmaps::Split;

inline std::string filler(const std::string& stem, std::size_t chars) {
  std::string out;
  while (out.size() < chars) out += stem + " ";
  out.resize(chars);
  return out;
}

struct PromptFixture {
  std::vector<Question> shots;
  Question target;
};

/// Three reserved shots with long contexts and a target with a long context.
/// Sizes are chosen so the limits 4096/2048/1024/1000 land on different
/// degradation steps.
inline PromptFixture long_context_fixture() {
  PromptFixture f;
  const char* topics[] = {"membrane transport", "enzyme kinetics", "gene regulation"};
  for (int i = 0; i < 3; ++i) {
    Question q;
    q.id = "shot" + std::to_string(i);
    q.text = filler(std::string("Which statement about ") + topics[i] + " holds", 200);
    q.question_type = QuestionType::multiple_choice;
    q.options = {"the first", "the second", "the third", "the fourth"};
    q.short_answer = std::to_string(i + 1);
    q.context = filler(std::string("Background on ") + topics[i] + " observed in many cell types", 2400);
    q.split = Split::fewshot_reserved;
    f.shots.push_back(q);
  }
  f.target.id = "target";
  f.target.text = filler("Does the described intervention reduce mortality in the trial population", 300);
  f.target.question_type = QuestionType::yes_no_maybe;
  f.target.short_answer = "yes";
  f.target.context = filler("The randomized trial enrolled patients and measured outcomes", 1788);
  return f;
}

inline std::string option_letter(std::size_t i) { return std::string(1, static_cast<char>('A' + i)); }

/// The answering prompt assembled by hand from the documented layout:
/// header, solved shots, then the target block ending in the answer cue.
inline std::string oracle_prompt(const Question& target, const std::vector<Question>& shots, std::size_t n_shots,
                                 bool shot_contexts) {
  std::string s = "Answer each question. Every answer is given after \"Answer:\".\n\n";
  auto block = [&](const Question& q, bool ctx) {
    if (ctx && !q.context.empty()) s += "Context: " + q.context + "\n";
    s += "Question: " + q.text + "\n";
    for (std::size_t i = 0; i < q.options.size(); ++i) s += option_letter(i) + ") " + q.options[i] + "\n";
  };
  for (std::size_t i = 0; i < n_shots; ++i) {
    block(shots[i], shot_contexts);
    std::string answer = shots[i].question_type == QuestionType::multiple_choice
                             ? option_letter(std::stoul(shots[i].short_answer))
                             : shots[i].short_answer;
    s += "Answer: " + answer + "\n\n";
  }
  block(target, true);
  return s + "Answer:";
}

// ceil(chars / 4) + 8, written out independently of the library.
inline int oracle_tokens(const std::string& text) {
  return static_cast<int>(text.size() / 4 + (text.size() % 4 != 0 ? 1 : 0)) + 8;
}

struct OracleStep {
  std::size_t shots;
  bool contexts;
};

inline const std::vector<OracleStep>& oracle_steps() {
  static const std::vector<OracleStep> s = {{3, true}, {3, false}, {2, false}, {1, false}, {0, false}};
  return s;
}

/// Index of the first step whose oracle estimate fits limit - 256, or -1.
inline int oracle_choice(const PromptFixture& f, int token_limit) {
  for (std::size_t i = 0; i < oracle_steps().size(); ++i) {
    const auto& st = oracle_steps()[i];
    if (oracle_tokens(oracle_prompt(f.target, f.shots, st.shots, st.contexts)) <= token_limit - 256)
      return static_cast<int>(i);
  }
  return -1;
}

}  // namespace testing_support
