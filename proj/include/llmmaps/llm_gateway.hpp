#pragma once

// Replayable LLM access: few-shot answer prompts with token budgeting,
// Bloom classification, difficulty self-rating, and a record/replay
// transport so every pipeline stage runs offline from transcripts.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "prompt_templates.hpp"
#include "qa_core.hpp"

namespace llmmaps {

// ---------------------------------------------------------------------------
// Profiles
// ---------------------------------------------------------------------------

struct Endpoint {
  // "completions" sends {model, prompt, max_tokens}; "chat" sends
  // {model, messages, max_tokens}. Empty url means no live transport.
  std::string style = "completions";
  std::string url;
  std::string api_key_env;
  std::string remote_model;  // provider-side model name; defaults to model_id
};

struct ModelProfile {
  std::string model_id;
  int token_limit = 4096;  // prompt + response combined
  Endpoint endpoint;
  int request_parallelism = 1;
  int max_response_tokens = 256;
};

inline constexpr int kMinTokenLimit = 64;
inline constexpr int kResponseReserve = 256;

inline void validate_profile(const ModelProfile& p) {
  if (p.model_id.empty()) throw ValidationError("model profile: empty model_id");
  if (p.token_limit < kMinTokenLimit)
    throw ValidationError("model profile '" + p.model_id + "': token_limit must be >= 64");
  if (p.request_parallelism < 1)
    throw ValidationError("model profile '" + p.model_id + "': request_parallelism must be >= 1");
}

inline json to_json(const ModelProfile& p) {
  return {{"model_id", p.model_id},
          {"token_limit", p.token_limit},
          {"request_parallelism", p.request_parallelism},
          {"max_response_tokens", p.max_response_tokens},
          {"endpoint",
           {{"style", p.endpoint.style},
            {"url", p.endpoint.url},
            {"api_key_env", p.endpoint.api_key_env},
            {"remote_model", p.endpoint.remote_model}}}};
}

inline ModelProfile profile_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("model profile: expected an object");
  ModelProfile p;
  p.model_id = detail::get_string(j, "model_id", "model profile", true);
  p.token_limit = j.value("token_limit", 4096);
  p.request_parallelism = j.value("request_parallelism", 1);
  p.max_response_tokens = j.value("max_response_tokens", 256);
  if (auto it = j.find("endpoint"); it != j.end() && it->is_object()) {
    p.endpoint.style = it->value("style", std::string("completions"));
    p.endpoint.url = it->value("url", std::string());
    p.endpoint.api_key_env = it->value("api_key_env", std::string());
    p.endpoint.remote_model = it->value("remote_model", std::string());
  }
  if (j.contains("api_key") || (j.contains("endpoint") && j["endpoint"].is_object() && j["endpoint"].contains("api_key")))
    throw ParseError("model profile: API keys must come from the environment");
  validate_profile(p);
  return p;
}

// ---------------------------------------------------------------------------
// Token estimation and answer prompts
// ---------------------------------------------------------------------------

using TokenEstimator = std::function<int(std::string_view)>;

inline constexpr int kMessageOverhead = 8;

// ceil(chars / 4) + per-message overhead.
inline int default_token_estimate(std::string_view text) {
  return static_cast<int>((text.size() + 3) / 4) + kMessageOverhead;
}

struct ShotUse {
  Question question;
  bool context_included = false;
  std::string answer;
};

struct PromptPlan {
  std::vector<ShotUse> shots;
  Question target_question;
  std::string rendered_text;
  int estimated_tokens = 0;
  int degradation_step = 0;  // index into answer_plan_steps()
};

struct PlanStep {
  std::size_t shot_count;
  bool shot_contexts;
};

// Degradation order: full plan, then shot contexts dropped, then fewer shots.
inline const std::vector<PlanStep>& answer_plan_steps() {
  static const std::vector<PlanStep> steps = {
      {3, true}, {3, false}, {2, false}, {1, false}, {0, false}};
  return steps;
}

inline std::string option_label(std::size_t i, std::size_t n_options) {
  if (n_options <= 26) return std::string(1, static_cast<char>('A' + i));
  return std::to_string(i);
}

// Answer text a shot demonstrates: the option letter for multiple choice.
inline std::string shot_answer(const Question& q) {
  if (q.question_type == QuestionType::multiple_choice) {
    if (auto idx = parse_index(q.short_answer); idx && *idx < q.options.size())
      return option_label(*idx, q.options.size());
  }
  return q.short_answer;
}

inline std::string render_question_block(const Question& q, bool with_context,
                                          const PromptTemplates& t) {
  std::string out;
  if (with_context && !q.context.empty())
    out += substitute(t.answer_context, std::map<std::string, std::string>{{"context", q.context}});
  out += substitute(t.answer_question, std::map<std::string, std::string>{{"question", q.text}});
  for (std::size_t i = 0; i < q.options.size(); ++i)
    out += substitute(t.answer_option,
                      std::map<std::string, std::string>{{"label", option_label(i, q.options.size())},
                                                         {"option", q.options[i]}});
  return out;
}

inline std::string render_answer_prompt(const Question& target, const std::vector<ShotUse>& shots,
                                        const PromptTemplates& t = {}) {
  std::string out = t.answer_header;
  for (const auto& s : shots) {
    out += render_question_block(s.question, s.context_included, t);
    out += t.answer_cue + " " + s.answer + t.answer_separator;
  }
  // The target's own context is always part of the question.
  out += render_question_block(target, true, t);
  out += t.answer_cue;
  return out;
}

/// Picks the first plan in degradation order whose estimate fits
/// token_limit - kResponseReserve.
inline PromptPlan build_answer_prompt(const Question& q, const std::vector<Question>& shots,
                                      const ModelProfile& profile,
                                      const TokenEstimator& estimate = default_token_estimate,
                                      const PromptTemplates& t = {}) {
  const int budget = profile.token_limit - kResponseReserve;
  const auto& steps = answer_plan_steps();
  int smallest = 0;
  std::optional<std::pair<std::size_t, bool>> previous;
  for (std::size_t s = 0; s < steps.size(); ++s) {
    const auto& step = steps[s];
    // With fewer reserved shots than a step asks for, consecutive steps can
    // collapse to the same plan; evaluate each distinct plan once.
    const std::size_t n = std::min(step.shot_count, shots.size());
    const bool ctx = step.shot_contexts && n > 0;
    if (previous && previous->first == n && previous->second == ctx) continue;
    previous = std::make_pair(n, ctx);
    PromptPlan plan;
    plan.target_question = q;
    plan.degradation_step = static_cast<int>(s);
    for (std::size_t i = 0; i < n; ++i)
      plan.shots.push_back({shots[i], ctx && !shots[i].context.empty(),
                            shot_answer(shots[i])});
    plan.rendered_text = render_answer_prompt(q, plan.shots, t);
    plan.estimated_tokens = estimate(plan.rendered_text);
    smallest = plan.estimated_tokens;
    if (plan.estimated_tokens <= budget) return plan;
  }
  throw BudgetError("question '" + q.id + "': 0-shot prompt needs " + std::to_string(smallest) +
                    " tokens, budget is " + std::to_string(budget) + " (limit " +
                    std::to_string(profile.token_limit) + " minus reserve " +
                    std::to_string(kResponseReserve) + ")");
}

/// First non-empty line of a completion, without a leading answer cue.
inline std::string extract_answer(std::string_view raw) {
  for (const auto& line : split_lines(raw)) {
    auto t = trim(line);
    if (t.empty()) continue;
    if (fold_case(t).rfind("answer:", 0) == 0) t = trim(std::string_view(t).substr(7));
    if (!t.empty()) return t;
  }
  return {};
}

// ---------------------------------------------------------------------------
// Transcripts
// ---------------------------------------------------------------------------

struct TranscriptEntry {
  std::string request_hash;
  std::string model_id;
  std::string prompt_text;
  std::string response_text;
  std::string timestamp;
  double latency_s = 0.0;
  std::string template_version;
};

inline std::string request_hash(std::string_view model_id, std::string_view prompt) {
  auto h = fnv1a64(model_id);
  h = fnv1a64(std::string_view("\x1f", 1), h);
  return hex64(fnv1a64(prompt, h));
}

inline json to_json(const TranscriptEntry& e) {
  return {{"request_hash", e.request_hash}, {"model_id", e.model_id},
          {"prompt_text", e.prompt_text},   {"response_text", e.response_text},
          {"timestamp", e.timestamp},       {"latency_s", e.latency_s},
          {"template_version", e.template_version}};
}

inline TranscriptEntry transcript_entry_from_json(const json& j) {
  TranscriptEntry e;
  e.prompt_text = detail::get_string(j, "prompt_text", "transcript", true);
  e.model_id = detail::get_string(j, "model_id", "transcript", true);
  e.response_text = detail::get_string(j, "response_text", "transcript", true);
  e.request_hash = detail::get_string(j, "request_hash", "transcript");
  if (e.request_hash.empty()) e.request_hash = request_hash(e.model_id, e.prompt_text);
  e.timestamp = detail::get_string(j, "timestamp", "transcript");
  e.latency_s = j.value("latency_s", 0.0);
  e.template_version = detail::get_string(j, "template_version", "transcript");
  return e;
}

// Thread-safe store. Appends are serialized and, when a sink path is set,
// written through to the JSONL file immediately.
class Transcript {
 public:
  Transcript() = default;

  static std::shared_ptr<Transcript> load(const std::string& path) {
    auto t = std::make_shared<Transcript>();
    for (const auto& j : parse_jsonl(read_file(path), "transcript '" + path + "'"))
      t->insert(transcript_entry_from_json(j));
    return t;
  }

  void set_sink(std::string path, bool truncate) {
    std::lock_guard lock(mu_);
    sink_ = std::move(path);
    if (truncate) write_file(sink_, "");
  }

  void append(TranscriptEntry e) {
    std::lock_guard lock(mu_);
    if (!sink_.empty()) {
      std::ofstream out(sink_, std::ios::binary | std::ios::app);
      out << to_json(e).dump() << "\n";
      if (!out) throw Error("IoError", "cannot append to transcript '" + sink_ + "'");
    }
    insert_locked(std::move(e));
  }

  std::optional<TranscriptEntry> find(const std::string& hash) const {
    std::lock_guard lock(mu_);
    auto it = index_.find(hash);
    if (it == index_.end()) return std::nullopt;
    return entries_[it->second];
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

  std::vector<TranscriptEntry> entries() const {
    std::lock_guard lock(mu_);
    return entries_;
  }

 private:
  void insert(TranscriptEntry e) {
    std::lock_guard lock(mu_);
    insert_locked(std::move(e));
  }
  void insert_locked(TranscriptEntry e) {
    // First recording of a prompt wins on replay.
    index_.try_emplace(e.request_hash, entries_.size());
    entries_.push_back(std::move(e));
  }

  mutable std::mutex mu_;
  std::vector<TranscriptEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::string sink_;
};

// ---------------------------------------------------------------------------
// Transport + gateway
// ---------------------------------------------------------------------------

struct Completion {
  std::string text;
  // Transports that know the latency (simulators) report it; otherwise the
  // gateway measures wall-clock time around the call.
  std::optional<double> latency_s;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual Completion send(const ModelProfile& profile, const std::string& prompt) = 0;
};

// Adapter for in-process models and scripted test doubles.
class CallbackTransport final : public Transport {
 public:
  using Fn = std::function<Completion(const ModelProfile&, const std::string&)>;
  explicit CallbackTransport(Fn fn) : fn_(std::move(fn)) {}
  Completion send(const ModelProfile& profile, const std::string& prompt) override {
    return fn_(profile, prompt);
  }

 private:
  Fn fn_;
};

enum class GatewayMode { live, record, replay };

inline std::optional<GatewayMode> parse_gateway_mode(std::string_view s) {
  if (s == "live") return GatewayMode::live;
  if (s == "record") return GatewayMode::record;
  if (s == "replay") return GatewayMode::replay;
  return std::nullopt;
}

inline std::string_view to_string(GatewayMode m) {
  switch (m) {
    case GatewayMode::live: return "live";
    case GatewayMode::record: return "record";
    case GatewayMode::replay: return "replay";
  }
  return "replay";
}

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct CompletionResult {
  std::string text;
  double latency_s = 0.0;
};

// Every call is an independent, stateless request: nothing from earlier
// calls is sent along, so replay order never matters.
class Gateway {
 public:
  Gateway(ModelProfile profile, GatewayMode mode, std::shared_ptr<Transport> transport,
          std::shared_ptr<Transcript> transcript, PromptTemplates templates = {})
      : profile_(std::move(profile)),
        mode_(mode),
        transport_(std::move(transport)),
        transcript_(transcript ? std::move(transcript) : std::make_shared<Transcript>()),
        templates_(std::move(templates)) {
    validate_profile(profile_);
    if (mode_ != GatewayMode::replay && !transport_)
      throw GatewayError("model '" + profile_.model_id + "': " + std::string(to_string(mode_)) +
                         " mode needs a transport");
  }

  const ModelProfile& profile() const { return profile_; }
  GatewayMode mode() const { return mode_; }
  const PromptTemplates& templates() const { return templates_; }
  Transcript& transcript() { return *transcript_; }

  CompletionResult complete(const std::string& prompt) {
    auto hash = request_hash(profile_.model_id, prompt);
    if (mode_ == GatewayMode::replay) {
      auto e = transcript_->find(hash);
      if (!e)
        throw ReplayMissError("model '" + profile_.model_id + "': no recorded response for request " +
                              hash);
      return {e->response_text, e->latency_s};
    }
    auto t0 = std::chrono::steady_clock::now();
    Completion c = transport_->send(profile_, prompt);
    double measured =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CompletionResult r{std::move(c.text), c.latency_s.value_or(measured)};
    if (mode_ == GatewayMode::record)
      transcript_->append({hash, profile_.model_id, prompt, r.text, utc_timestamp(), r.latency_s,
                           templates_.version});
    return r;
  }

  CompletionResult complete(const PromptPlan& plan) { return complete(plan.rendered_text); }

 private:
  ModelProfile profile_;
  GatewayMode mode_;
  std::shared_ptr<Transport> transport_;
  std::shared_ptr<Transcript> transcript_;
  PromptTemplates templates_;
};

// ---------------------------------------------------------------------------
// Annotation
// ---------------------------------------------------------------------------

/// First integer in 1..5 appearing in `reply`, scanning digit runs left to right.
inline std::optional<int> first_rating(std::string_view reply) {
  std::size_t i = 0;
  while (i < reply.size()) {
    if (std::isdigit(static_cast<unsigned char>(reply[i]))) {
      std::size_t j = i;
      while (j < reply.size() && std::isdigit(static_cast<unsigned char>(reply[j]))) ++j;
      auto v = parse_index(reply.substr(i, j - i));
      if (v && *v >= 1 && *v <= 5) return static_cast<int>(*v);
      i = j;
    } else {
      ++i;
    }
  }
  return std::nullopt;
}

/// The single Bloom level named in `reply` (case-insensitive); none when zero
/// or several distinct levels are mentioned.
inline std::optional<BloomLevel> find_bloom_level(std::string_view reply) {
  auto folded = fold_case(reply);
  std::optional<BloomLevel> hit;
  for (auto b : kBloomLevels) {
    if (folded.find(fold_case(to_string(b))) != std::string::npos) {
      if (hit) return std::nullopt;
      hit = b;
    }
  }
  return hit;
}

inline std::string difficulty_question_block(const Question& q) {
  std::string out = "Question: " + q.text + "\n";
  for (std::size_t i = 0; i < q.options.size(); ++i)
    out += option_label(i, q.options.size()) + ") " + q.options[i] + "\n";
  return out;
}

struct Rating {
  int value = 0;
  double latency_s = 0.0;
};

/// Self-assessed difficulty on a 1 (very easy) .. 5 (very difficult) scale.
/// One retry with a stricter prompt.
inline Rating rate_difficulty(const Question& q, Gateway& gw) {
  const auto& t = gw.templates();
  std::map<std::string, std::string> vars{{"question_block", difficulty_question_block(q)},
                                          {"question", q.text}};
  std::string last;
  for (const auto* tmpl : {&t.difficulty, &t.difficulty_retry}) {
    auto r = gw.complete(substitute(*tmpl, vars));
    if (auto v = first_rating(r.text)) return {*v, r.latency_s};
    last = r.text;
  }
  throw UnparseableRatingError("question '" + q.id + "': no rating in 1..5 in reply '" + last + "'");
}

inline BloomLevel classify_bloom(const Question& q, Gateway& gw) {
  const auto& t = gw.templates();
  std::map<std::string, std::string> vars{{"question", q.text}};
  std::string last;
  for (const auto* tmpl : {&t.bloom, &t.bloom_retry}) {
    auto r = gw.complete(substitute(*tmpl, vars));
    if (auto b = find_bloom_level(r.text)) return *b;
    last = r.text;
  }
  throw UnparseableLevelError("question '" + q.id + "': no single Bloom level in reply '" + last + "'");
}

}  // namespace llmmaps
