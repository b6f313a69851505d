#pragma once

// Small factories shared by unit and acceptance tests.

#include <atomic>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <llmmaps/hierarchy.hpp>
#include <llmmaps/llm_gateway.hpp>
#include <llmmaps/metrics.hpp>
#include <llmmaps/qa_core.hpp>

namespace testing_support {

using namespace llmmaps;

inline Question mc_question(std::string id, std::string text, std::vector<std::string> options, std::size_t gold) {
  Question q;
  q.id = std::move(id);
  q.text = std::move(text);
  q.question_type = QuestionType::multiple_choice;
  q.long_answer = options.at(gold);
  q.options = std::move(options);
  q.short_answer = std::to_string(gold);
  return q;
}

inline Question free_question(std::string id, std::string text, std::string answer) {
  Question q;
  q.id = std::move(id);
  q.text = std::move(text);
  q.question_type = QuestionType::free_form;
  q.short_answer = std::move(answer);
  return q;
}

/// `n` multiple-choice questions "q0".."q{n-1}"; the first `fewshot` are
/// reserved for prompting.
inline Dataset sample_dataset(std::size_t n, std::size_t fewshot) {
  Dataset ds{"sample", "general science", {}, json::object()};
  for (std::size_t i = 0; i < n; ++i) {
    auto q = mc_question("q" + std::to_string(i), "Question number " + std::to_string(i) + "?",
                         {"alpha", "beta", "gamma", "delta"}, i % 4);
    if (i < fewshot) q.split = Split::fewshot_reserved;
    ds.questions.push_back(std::move(q));
  }
  return ds;
}

// Nested literal for hand-written trees: label, questions, children.
struct TreeSpec {
  std::string label;
  std::vector<std::string> questions;
  std::vector<TreeSpec> children;
};

inline KnowledgeNode build_node(const TreeSpec& s, std::vector<std::string>& path, int depth) {
  path.push_back(s.label);
  KnowledgeNode n{node_id_for(path), s.label, {}, s.questions, depth};
  for (const auto& c : s.children) n.children.push_back(build_node(c, path, depth + 1));
  path.pop_back();
  return n;
}

inline KnowledgeHierarchy build_hierarchy(const TreeSpec& root, int target_depth = 3) {
  KnowledgeHierarchy h;
  h.config.target_depth = target_depth;
  std::vector<std::string> path;
  h.root = build_node(root, path, 0);
  return h;
}

struct RandomTree {
  KnowledgeHierarchy hierarchy;
  ScoredIndex scored;
  std::vector<std::string> question_ids;
};

/// Random tree with at most `max_levels` levels (root included) and at most
/// `max_questions` questions spread over the leaves, with random
/// correctness, difficulty and timing per question. Some leaves stay empty.
inline RandomTree random_tree(std::uint64_t seed, int max_levels = 5, std::size_t max_questions = 500) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](std::size_t lo, std::size_t hi) { return lo + rng() % (hi - lo + 1); };
  RandomTree out;
  out.hierarchy.config.target_depth = max_levels - 1;
  std::size_t counter = 0;
  std::function<KnowledgeNode(std::vector<std::string>&, int)> grow = [&](std::vector<std::string>& path,
                                                                           int depth) {
    KnowledgeNode n{node_id_for(path), path.back(), {}, {}, depth};
    bool leaf = depth == max_levels - 1 || (depth > 0 && rng() % 3 == 0);
    if (!leaf) {
      std::size_t k = uniform(1, 4);
      for (std::size_t i = 0; i < k; ++i) {
        path.push_back("node" + std::to_string(counter++));
        n.children.push_back(grow(path, depth + 1));
        path.pop_back();
      }
    }
    return n;
  };
  std::vector<std::string> path{"root"};
  out.hierarchy.root = grow(path, 0);
  std::vector<KnowledgeNode*> leaves;
  walk(out.hierarchy.root, [&](KnowledgeNode& n) {
    if (n.is_leaf()) leaves.push_back(&n);
  });
  std::size_t nq = uniform(0, max_questions);
  for (std::size_t i = 0; i < nq; ++i) {
    std::string id = "q" + std::to_string(i);
    leaves[rng() % leaves.size()]->question_ids.push_back(id);
    out.question_ids.push_back(id);
    // Roughly one question in ten has no response at all.
    if (rng() % 10 == 0) continue;
    ScoredItem it = unscored_item(id);
    it.responded = true;
    it.correct = rng() % 2 == 0;
    if (rng() % 4 != 0) it.self_difficulty = static_cast<int>(uniform(1, 5));
    it.response_time_s = static_cast<double>(uniform(1, 4000)) / 1000.0;
    out.scored.emplace(id, it);
  }
  return out;
}

// Transport answering from a prompt -> reply table (substring match on the
// prompt) with a fixed latency; unknown prompts raise GatewayError.
class ScriptedTransport final : public Transport {
 public:
  using Rule = std::pair<std::string, std::string>;
  explicit ScriptedTransport(std::vector<Rule> rules, double latency = 0.25)
      : rules_(std::move(rules)), latency_(latency) {}

  Completion send(const ModelProfile&, const std::string& prompt) override {
    ++calls;
    for (const auto& [needle, reply] : rules_)
      if (prompt.find(needle) != std::string::npos) return {reply, latency_};
    throw GatewayError("scripted transport: no reply for prompt '" + prompt.substr(0, 80) + "'");
  }

  std::atomic<std::size_t> calls{0};

 private:
  std::vector<Rule> rules_;
  double latency_;
};

inline ModelProfile profile(std::string id, int token_limit = 4096) {
  ModelProfile p;
  p.model_id = std::move(id);
  p.token_limit = token_limit;
  return p;
}

}  // namespace testing_support
