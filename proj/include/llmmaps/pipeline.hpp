#pragma once

// End-to-end run: ingest, stratify, annotate, answer, score, render.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hierarchy.hpp"
#include "ingest.hpp"
#include "layout.hpp"
#include "llm_gateway.hpp"
#include "metrics.hpp"
#include "render.hpp"

namespace llmmaps {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Stage errors and exit codes
// ---------------------------------------------------------------------------

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitGateway = 3;
inline constexpr int kExitRender = 4;

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const GatewayError*>(&e)) return kExitGateway;
  if (dynamic_cast<const OverflowError*>(&e) || dynamic_cast<const DegenerateRegionError*>(&e) ||
      dynamic_cast<const CapacityError*>(&e) || dynamic_cast<const ConsistencyError*>(&e))
    return kExitRender;
  return kExitValidation;
}

class StageError : public Error {
 public:
  StageError(std::string stage, const std::exception& cause, const std::string& hint)
      : Error("StageError", "stage '" + stage + "' failed: " + cause_kind(cause) + ": " + cause.what() +
                                (hint.empty() ? "" : " (hint: " + hint + ")")),
        stage_(std::move(stage)),
        cause_(cause_kind(cause)),
        exit_code_(exit_code_for(cause)) {}

  const std::string& stage() const { return stage_; }
  const std::string& cause() const { return cause_; }
  int exit_code() const { return exit_code_; }

 private:
  static std::string cause_kind(const std::exception& e) {
    if (auto* le = dynamic_cast<const Error*>(&e)) return le->kind();
    return "Error";
  }
  std::string stage_;
  std::string cause_;
  int exit_code_;
};

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct DatasetSource {
  std::string format = "sciq";
  std::string path;
  std::string name;
  std::string field_label;
  std::optional<FieldMapping> mapping;
  std::size_t fewshot_count = 3;
};

struct StratifierSettings {
  std::optional<ModelProfile> profile;
  std::string transcript;
};

struct HierarchySettings {
  std::string path;  // use this hierarchy instead of generating one
  HierarchyConfig generation;
  std::vector<HierarchyEdit> overrides;
};

struct ModelSettings {
  ModelProfile profile;
  std::string transcript;
};

struct RunConfig {
  std::uint64_t seed = 42;
  GatewayMode mode = GatewayMode::replay;
  std::string out_dir = "out";
  DatasetSource dataset;
  StratifierSettings stratifier;
  HierarchySettings hierarchy;
  std::vector<ModelSettings> models;
  bool classify_bloom = true;
  bool rate_difficulty = true;
  ScoreOptions scoring;
  LayoutConfig layout;
  RenderConfig render;
  std::string color_mode = "auto";
  std::optional<ColorScheme> scheme;
  PromptTemplates templates;
  std::size_t workers = 1;
};

namespace detail {

inline std::string resolve_path(const std::string& p, const std::string& base) {
  if (p.empty()) return p;
  fs::path path(p);
  if (path.is_absolute() || base.empty()) return path.lexically_normal().string();
  return (fs::path(base) / path).lexically_normal().string();
}

// Inline object or path to a JSON file.
inline json object_or_file(const json& v, const std::string& base, std::string_view what) {
  if (v.is_string()) {
    auto p = resolve_path(v.get<std::string>(), base);
    return parse_json_text(read_file(p), std::string(what) + " '" + p + "'");
  }
  if (!v.is_object()) throw ParseError(std::string(what) + ": expected an object or a file path");
  return v;
}

}  // namespace detail

inline GlyphSet glyphs_from_json(const json& v) {
  if (v.is_string()) return parse_glyphs(v.get<std::string>());
  if (v.is_array()) return parse_glyphs(join(v.get<std::vector<std::string>>(), ","));
  throw ParseError("render.glyphs: expected a list");
}

/// Relative paths resolve against `base_dir` (the config file's directory).
inline RunConfig run_config_from_json(const json& j, const std::string& base_dir) {
  if (!j.is_object()) throw ParseError("run config: expected an object");
  RunConfig c;
  c.seed = j.value("seed", std::uint64_t{42});
  if (auto it = j.find("mode"); it != j.end()) {
    auto m = parse_gateway_mode(it->get<std::string>());
    if (!m) throw ParseError("run config: unknown mode '" + it->get<std::string>() + "'");
    c.mode = *m;
  }
  c.out_dir = detail::resolve_path(j.value("out_dir", std::string("out")), base_dir);
  c.workers = j.value("workers", std::size_t{1});

  const auto& d = detail::require(j, "dataset", "run config");
  c.dataset.format = d.value("format", std::string("sciq"));
  c.dataset.path = detail::resolve_path(detail::get_string(d, "path", "run config dataset", true), base_dir);
  c.dataset.name = d.value("name", fs::path(c.dataset.path).stem().string());
  c.dataset.field_label = detail::get_string(d, "field_label", "run config dataset", true);
  c.dataset.fewshot_count = d.value("fewshot_count", std::size_t{3});
  if (auto it = d.find("mapping"); it != d.end() && !it->is_null())
    c.dataset.mapping = mapping_from_json(detail::object_or_file(*it, base_dir, "mapping"));

  if (auto it = j.find("stratifier"); it != j.end()) {
    if (auto p = it->find("profile"); p != it->end() && !p->is_null())
      c.stratifier.profile = profile_from_json(detail::object_or_file(*p, base_dir, "model profile"));
    c.stratifier.transcript = detail::resolve_path(it->value("transcript", std::string()), base_dir);
  }
  if (auto it = j.find("hierarchy"); it != j.end()) {
    c.hierarchy.path = detail::resolve_path(it->value("path", std::string()), base_dir);
    c.hierarchy.generation.target_depth = it->value("depth", 3);
    c.hierarchy.generation.min_top = it->value("min_top", 5);
    c.hierarchy.generation.max_top = it->value("max_top", 10);
    if (auto o = it->find("overrides"); o != it->end() && !o->is_null())
      c.hierarchy.overrides = edits_from_json(o->is_string() ? detail::object_or_file(*o, base_dir, "overrides") : *o);
  }
  for (const auto& m : detail::require(j, "models", "run config")) {
    ModelSettings ms;
    ms.profile = profile_from_json(detail::object_or_file(detail::require(m, "profile", "run config model"), base_dir,
                                                          "model profile"));
    ms.transcript = detail::resolve_path(m.value("transcript", std::string()), base_dir);
    c.models.push_back(std::move(ms));
  }
  if (auto it = j.find("annotate"); it != j.end()) {
    c.classify_bloom = it->value("bloom", true);
    c.rate_difficulty = it->value("difficulty", true);
  }
  if (auto it = j.find("scoring"); it != j.end()) {
    auto mode = parse_score_mode(it->value("mode", std::string("quasi_exact")));
    if (!mode) throw ParseError("run config: unknown scoring mode");
    c.scoring.mode = *mode;
    c.scoring.theta = it->value("theta", 0.5);
  }
  if (auto it = j.find("layout"); it != j.end()) c.layout = layout_config_from_json(*it);
  if (auto it = j.find("render"); it != j.end()) {
    const auto& r = *it;
    if (auto g = r.find("glyphs"); g != r.end()) c.render.glyphs = glyphs_from_json(*g);
    c.render.show_bloom_panel = r.value("bloom_panel", false);
    c.render.dot_radius = r.value("dot_radius", c.render.dot_radius);
    c.render.relax_iters = r.value("relax_iters", c.render.relax_iters);
    if (auto t = r.find("title"); t != r.end() && t->is_string()) c.render.title = t->get<std::string>();
    c.color_mode = r.value("color_mode", std::string("auto"));
    if (auto s = r.find("scheme"); s != r.end() && !s->is_null())
      c.scheme = scheme_from_json(detail::object_or_file(*s, base_dir, "colour scheme"));
  }
  if (auto it = j.find("templates"); it != j.end() && !it->is_null())
    c.templates = templates_from_json(detail::object_or_file(*it, base_dir, "templates"));
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  auto j = parse_json_text(read_file(path), "run config '" + path + "'");
  return run_config_from_json(j, fs::path(path).parent_path().string());
}

inline json to_json(const RunConfig& c) {
  json models = json::array();
  for (const auto& m : c.models) models.push_back({{"profile", to_json(m.profile)}, {"transcript", m.transcript}});
  json overrides = json::array();
  for (const auto& e : c.hierarchy.overrides) overrides.push_back(to_json(e));
  json glyphs = json::array();
  if (c.render.glyphs.hallucination) glyphs.push_back("hallucination");
  if (c.render.glyphs.difficulty) glyphs.push_back("difficulty");
  if (c.render.glyphs.response_time) glyphs.push_back("response-time");
  return {{"seed", c.seed},
          {"mode", to_string(c.mode)},
          {"out_dir", c.out_dir},
          {"dataset",
           {{"format", c.dataset.format},
            {"path", c.dataset.path},
            {"name", c.dataset.name},
            {"field_label", c.dataset.field_label},
            {"fewshot_count", c.dataset.fewshot_count},
            {"mapping", c.dataset.mapping ? to_json(*c.dataset.mapping) : json(nullptr)}}},
          {"stratifier",
           {{"profile", c.stratifier.profile ? to_json(*c.stratifier.profile) : json(nullptr)},
            {"transcript", c.stratifier.transcript}}},
          {"hierarchy",
           {{"path", c.hierarchy.path},
            {"depth", c.hierarchy.generation.target_depth},
            {"min_top", c.hierarchy.generation.min_top},
            {"max_top", c.hierarchy.generation.max_top},
            {"overrides", overrides}}},
          {"models", models},
          {"annotate", {{"bloom", c.classify_bloom}, {"difficulty", c.rate_difficulty}}},
          {"scoring", {{"mode", to_string(c.scoring.mode)}, {"theta", c.scoring.theta}}},
          {"layout", to_json(c.layout)},
          {"render",
           {{"glyphs", glyphs},
            {"bloom_panel", c.render.show_bloom_panel},
            {"dot_radius", c.render.dot_radius},
            {"relax_iters", c.render.relax_iters},
            {"title", c.render.title ? json(*c.render.title) : json(nullptr)},
            {"color_mode", c.color_mode},
            {"scheme", c.scheme ? to_json(*c.scheme) : json(nullptr)}}},
          {"templates_version", c.templates.version},
          {"workers", c.workers}};
}

/// Checks that hold before any side effect.
inline void validate_run_config(const RunConfig& c) {
  if (c.models.empty()) throw ValidationError("run config: no models");
  std::set<std::string> ids;
  for (const auto& m : c.models) {
    if (!ids.insert(m.profile.model_id).second)
      throw ValidationError("run config: model '" + m.profile.model_id + "' listed twice");
    if (c.mode != GatewayMode::live && m.transcript.empty())
      throw ValidationError("run config: model '" + m.profile.model_id + "' needs a transcript in " +
                            std::string(to_string(c.mode)) + " mode");
  }
  bool needs_stratifier = c.hierarchy.path.empty() || c.classify_bloom;
  if (needs_stratifier && !c.stratifier.profile)
    throw ValidationError("run config: hierarchy generation and Bloom classification need a stratifier profile");
  if (c.stratifier.profile && c.mode != GatewayMode::live && c.stratifier.transcript.empty())
    throw ValidationError("run config: the stratifier needs a transcript in " + std::string(to_string(c.mode)) + " mode");
  if (c.color_mode != "auto" && !parse_color_mode(c.color_mode))
    throw ValidationError("run config: color_mode must be data, model or auto");
  if (c.scoring.theta < 0 || c.scoring.theta > 1) throw ValidationError("run config: theta must lie in [0, 1]");
  validate_layout_config(c.layout);
  if (!fs::exists(c.dataset.path)) throw ValidationError("dataset file '" + c.dataset.path + "' does not exist");
  if (!c.hierarchy.path.empty() && !fs::exists(c.hierarchy.path))
    throw ValidationError("hierarchy file '" + c.hierarchy.path + "' does not exist");
  if (c.mode == GatewayMode::replay) {
    for (const auto& m : c.models)
      if (!fs::exists(m.transcript)) throw ValidationError("transcript '" + m.transcript + "' does not exist");
    if (c.stratifier.profile && !fs::exists(c.stratifier.transcript))
      throw ValidationError("transcript '" + c.stratifier.transcript + "' does not exist");
  }
}

// ---------------------------------------------------------------------------
// Stage operations (shared with the single-stage subcommands)
// ---------------------------------------------------------------------------

using TransportFactory = std::function<std::shared_ptr<Transport>(const ModelProfile&)>;

/// Gateway over a transcript file: replay reads it, record truncates (or
/// appends to) it, live appends when a path is given.
inline std::unique_ptr<Gateway> open_gateway(const ModelProfile& profile, GatewayMode mode, const std::string& transcript,
                                             const TransportFactory& transports, const PromptTemplates& templates,
                                             bool append = false) {
  std::shared_ptr<Transcript> t;
  std::shared_ptr<Transport> transport;
  if (mode == GatewayMode::replay) {
    t = Transcript::load(transcript);
  } else {
    t = std::make_shared<Transcript>();
    if (!transcript.empty()) t->set_sink(transcript, mode == GatewayMode::record && !append);
    if (!transports) throw GatewayError("no transport available for model '" + profile.model_id + "'");
    transport = transports(profile);
  }
  return std::make_unique<Gateway>(profile, mode, std::move(transport), std::move(t), templates);
}

inline ImportResult ingest_source(const DatasetSource& src, std::uint64_t seed, std::size_t workers) {
  auto fmt = parse_source_format(src.format);
  if (!fmt) throw ValidationError("unknown source format '" + src.format + "'");
  FieldMapping mapping = src.mapping ? *src.mapping : default_mapping(*fmt);
  ImportOptions opts;
  opts.name = src.name;
  opts.field_label = src.field_label;
  opts.shuffle_seed = seed;
  opts.fewshot_count = src.fewshot_count;
  opts.workers = workers;
  return import_dataset(read_file(src.path), mapping, opts);
}

/// A hierarchy that already holds questions must partition the evaluated
/// questions exactly; it is kept as is. Otherwise questions are assigned,
/// asking the gateway only when there is more than one leaf.
inline AssignmentResult stratify_dataset(const Dataset& ds, KnowledgeHierarchy h,
                                         const std::function<Gateway*()>& gateway) {
  if (subtree_question_count(h.root) == 0) {
    bool single = collect_leaves(h).size() == 1;
    return assign_questions(ds, std::move(h), single ? nullptr : gateway());
  }
  std::set<std::string> expected;
  for (const auto& q : ds.questions)
    if (q.split != Split::fewshot_reserved) expected.insert(q.id);
  AssignmentReport report;
  std::set<std::string> seen;
  for (const auto& leaf : collect_leaves(h)) {
    for (const auto& id : leaf.node->question_ids) {
      if (!expected.count(id)) throw ValidationError("hierarchy holds question '" + id + "' which is not evaluated");
      if (!seen.insert(id).second) throw ValidationError("hierarchy holds question '" + id + "' twice");
      report.assignments.push_back({id, leaf.node->id, leaf.display(), AssignMethod::given, false});
    }
  }
  if (seen.size() != expected.size())
    throw ValidationError("hierarchy leaves " + std::to_string(expected.size() - seen.size()) +
                          " evaluated questions unassigned");
  validate_hierarchy(h);
  return {std::move(h), std::move(report)};
}

// Difficulty rating by one evaluated model.
struct QuestionRating {
  std::string question_id;
  std::string model_id;
  std::optional<int> self_difficulty;
  double latency_s = 0.0;
  std::string error;
};

inline json to_json(const QuestionRating& r) {
  return {{"question_id", r.question_id},
          {"model_id", r.model_id},
          {"self_difficulty", r.self_difficulty ? json(*r.self_difficulty) : json(nullptr)},
          {"latency_s", r.latency_s},
          {"error", r.error}};
}

inline QuestionRating rating_from_json(const json& j) {
  QuestionRating r;
  r.question_id = detail::get_string(j, "question_id", "rating", true);
  r.model_id = detail::get_string(j, "model_id", "rating", true);
  r.self_difficulty = detail::get_optional_int(j, "self_difficulty", "rating");
  r.latency_s = j.value("latency_s", 0.0);
  r.error = j.value("error", std::string());
  return r;
}

inline void save_ratings(const std::string& path, const std::vector<QuestionRating>& rs) {
  std::string out;
  for (const auto& r : rs) out += to_json(r).dump() + "\n";
  write_file(path, out);
}

inline std::vector<QuestionRating> load_ratings(const std::string& path) {
  std::vector<QuestionRating> out;
  for (const auto& j : parse_jsonl(read_file(path), "ratings '" + path + "'")) out.push_back(rating_from_json(j));
  return out;
}

inline std::vector<const Question*> evaluated_questions(const Dataset& ds) {
  std::vector<const Question*> out;
  for (const auto& q : ds.questions)
    if (q.split != Split::fewshot_reserved) out.push_back(&q);
  return out;
}

inline std::vector<Question> fewshot_questions(const Dataset& ds) {
  std::vector<Question> out;
  for (const auto& q : ds.questions)
    if (q.split == Split::fewshot_reserved) out.push_back(q);
  return out;
}

/// Bloom level per evaluated question; failures leave the level empty and
/// are returned by id.
inline std::vector<std::string> classify_dataset(Dataset& ds, Gateway& gw) {
  auto qs = evaluated_questions(ds);
  std::vector<std::optional<BloomLevel>> levels(qs.size());
  parallel_for(qs.size(), static_cast<std::size_t>(gw.profile().request_parallelism), [&](std::size_t i) {
    try {
      levels[i] = classify_bloom(*qs[i], gw);
    } catch (const UnparseableLevelError&) {
    }
  });
  std::map<std::string, std::optional<BloomLevel>> by_id;
  std::vector<std::string> failed;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    by_id[qs[i]->id] = levels[i];
    if (!levels[i]) failed.push_back(qs[i]->id);
  }
  for (auto& q : ds.questions)
    if (auto it = by_id.find(q.id); it != by_id.end()) q.bloom_level = it->second;
  return failed;
}

inline std::vector<QuestionRating> rate_dataset(const Dataset& ds, Gateway& gw) {
  auto qs = evaluated_questions(ds);
  std::vector<QuestionRating> out(qs.size());
  parallel_for(qs.size(), static_cast<std::size_t>(gw.profile().request_parallelism), [&](std::size_t i) {
    QuestionRating r{qs[i]->id, gw.profile().model_id, std::nullopt, 0.0, ""};
    try {
      auto rating = rate_difficulty(*qs[i], gw);
      r.self_difficulty = rating.value;
      r.latency_s = rating.latency_s;
    } catch (const UnparseableRatingError& e) {
      r.error = e.what();
    }
    out[i] = std::move(r);
  });
  return out;
}

struct AnswerRun {
  std::vector<ModelResponse> responses;
  std::vector<std::string> over_budget;        // questions whose 0-shot prompt does not fit
  std::map<int, std::size_t> degradation_steps;  // plan step -> count
};

inline AnswerRun answer_dataset(const Dataset& ds, Gateway& gw, const std::vector<QuestionRating>& ratings,
                                const TokenEstimator& estimate = default_token_estimate) {
  auto qs = evaluated_questions(ds);
  auto shots = fewshot_questions(ds);
  std::map<std::string, std::optional<int>> rated;
  for (const auto& r : ratings)
    if (r.model_id == gw.profile().model_id) rated[r.question_id] = r.self_difficulty;
  std::vector<std::optional<ModelResponse>> slots(qs.size());
  std::vector<int> steps(qs.size(), -1);
  parallel_for(qs.size(), static_cast<std::size_t>(gw.profile().request_parallelism), [&](std::size_t i) {
    const Question& q = *qs[i];
    PromptPlan plan;
    try {
      plan = build_answer_prompt(q, shots, gw.profile(), estimate, gw.templates());
    } catch (const BudgetError&) {
      return;
    }
    steps[i] = plan.degradation_step;
    auto r = gw.complete(plan);
    ModelResponse resp;
    resp.question_id = q.id;
    resp.model_id = gw.profile().model_id;
    resp.raw_text = r.text;
    resp.extracted_answer = extract_answer(r.text);
    resp.response_time_s = r.latency_s;
    if (auto it = rated.find(q.id); it != rated.end()) resp.self_difficulty = it->second;
    slots[i] = std::move(resp);
  });
  AnswerRun run;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    if (slots[i]) {
      run.responses.push_back(std::move(*slots[i]));
      ++run.degradation_steps[steps[i]];
    } else {
      run.over_budget.push_back(qs[i]->id);
    }
  }
  return run;
}

inline ColorScheme resolve_scheme(const std::string& color_mode, const std::optional<ColorScheme>& custom,
                                  std::size_t k_models) {
  ColorMode mode = color_mode == "auto" ? auto_color_mode(k_models) : parse_color_mode(color_mode).value();
  ColorScheme s = custom ? *custom : default_scheme(mode);
  s.mode = mode;
  return s;
}

struct RenderedMap {
  MapGeometry geometry;
  std::string svg;
};

inline RenderedMap render_stats(const KnowledgeHierarchy& h, const StatsBundle& stats, LayoutConfig layout,
                                const RenderConfig& render, const std::string& color_mode,
                                const std::optional<ColorScheme>& scheme) {
  auto input = render_input_from(stats);
  layout.k_models = input.model_ids.size();
  layout.reserve_bloom_panel = render.show_bloom_panel;
  RenderedMap out;
  out.geometry = layout_map(h, accuracies_of(input), layout);
  out.svg = render_map(out.geometry, input, resolve_scheme(color_mode, scheme, layout.k_models), render);
  return out;
}

inline StatsBundle load_stats(const std::string& path) {
  return stats_bundle_from_json(parse_json_text(read_file(path), "stats '" + path + "'"));
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> stages = {"ingest", "stratify", "annotate", "answer", "score", "render"};
  return stages;
}

struct PipelineOptions {
  bool resume = false;
  bool force = false;
  // Run only this stage; the artifacts of earlier stages must exist.
  std::string only;
  TransportFactory transports;
  std::function<void(const std::string&)> log;
};

struct PipelineResult {
  std::vector<std::string> stages_run;
  std::vector<std::string> stages_skipped;
  json report;
};

inline std::string file_safe(std::string_view id) {
  std::string out;
  for (char c : id) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' ? c : '_';
  return out;
}

struct ArtifactPaths {
  fs::path dir;
  fs::path ingested() const { return dir / "ingested.json"; }
  fs::path import_errors() const { return dir / "import_errors.json"; }
  fs::path hierarchy() const { return dir / "hierarchy.json"; }
  fs::path assignments() const { return dir / "assignments.json"; }
  fs::path dataset() const { return dir / "dataset.json"; }
  fs::path ratings(const std::string& model) const { return dir / ("ratings_" + file_safe(model) + ".jsonl"); }
  fs::path responses(const std::string& model) const { return dir / ("responses_" + file_safe(model) + ".jsonl"); }
  fs::path stats() const { return dir / "stats.json"; }
  fs::path map() const { return dir / "map.svg"; }
  fs::path report() const { return dir / "report.json"; }
};

/// Runs every stage in order. With `resume`, a stage whose outputs all
/// exist is skipped and later stages read its artifacts instead.
inline PipelineResult run_pipeline(const RunConfig& cfg, const PipelineOptions& opts) {
  validate_run_config(cfg);
  const auto& order = pipeline_stages();
  if (!opts.only.empty() && std::find(order.begin(), order.end(), opts.only) == order.end())
    throw ValidationError("unknown stage '" + opts.only + "'");
  ArtifactPaths paths{cfg.out_dir};
  std::map<std::string, std::vector<fs::path>> outputs = {{"ingest", {paths.ingested()}},
                                                          {"stratify", {paths.hierarchy(), paths.assignments()}},
                                                          {"annotate", {paths.dataset()}},
                                                          {"answer", {}},
                                                          {"score", {paths.stats()}},
                                                          {"render", {paths.map()}}};
  for (const auto& m : cfg.models) {
    outputs["annotate"].push_back(paths.ratings(m.profile.model_id));
    outputs["answer"].push_back(paths.responses(m.profile.model_id));
  }
  std::vector<fs::path> all;
  for (const auto& name : order) all.insert(all.end(), outputs[name].begin(), outputs[name].end());
  all.push_back(paths.report());
  if (!opts.force && !opts.resume) {
    const auto& mine = opts.only.empty() ? all : outputs[opts.only];
    for (const auto& p : mine)
      if (fs::exists(p))
        throw ValidationError("'" + p.string() + "' already exists; pass --force to overwrite or --resume to continue");
  }
  fs::create_directories(paths.dir);

  auto log = [&](const std::string& msg) {
    if (opts.log) opts.log(msg);
  };
  PipelineResult result;
  json report = {{"seed", cfg.seed}, {"mode", to_string(cfg.mode)}, {"config", to_json(cfg)}};
  auto finish = [&]() -> PipelineResult {
    report["stages"] = {{"run", result.stages_run}, {"skipped", result.stages_skipped}};
    json artifacts = json::array();
    for (const auto& p : all)
      if (fs::exists(p) || p == paths.report()) artifacts.push_back(p.filename().string());
    report["artifacts"] = artifacts;
    // The report is rewritten on every run, resumed or not.
    write_file(paths.report().string(), dump_canonical(report));
    result.report = std::move(report);
    return std::move(result);
  };

  auto stage = [&](const std::string& name, const std::string& hint, const std::function<void()>& body) {
    const auto& outs = outputs[name];
    bool done = std::all_of(outs.begin(), outs.end(), [](const fs::path& p) { return fs::exists(p); });
    if (!opts.only.empty() && name != opts.only) {
      if (!done)
        throw ValidationError("stage '" + name + "' has not run yet in '" + paths.dir.string() + "'; run it first");
      result.stages_skipped.push_back(name);
      return;
    }
    if (opts.resume && done) {
      log("skip " + name);
      result.stages_skipped.push_back(name);
      return;
    }
    log("run " + name);
    try {
      body();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e, hint);
    }
    result.stages_run.push_back(name);
  };

  // Gateways are opened on first use; a resumed stage never touches them.
  std::unique_ptr<Gateway> stratifier;
  auto stratifier_gw = [&]() -> Gateway& {
    if (!stratifier)
      stratifier = open_gateway(*cfg.stratifier.profile, cfg.mode, cfg.stratifier.transcript, opts.transports,
                                cfg.templates, opts.resume);
    return *stratifier;
  };
  std::map<std::string, std::unique_ptr<Gateway>> model_gws;
  auto model_gw = [&](const ModelSettings& m) -> Gateway& {
    auto& g = model_gws[m.profile.model_id];
    if (!g) g = open_gateway(m.profile, cfg.mode, m.transcript, opts.transports, cfg.templates, opts.resume);
    return *g;
  };

  std::optional<Dataset> ingested;
  stage("ingest", "check dataset.format and the field mapping", [&] {
    auto r = ingest_source(cfg.dataset, cfg.seed, cfg.workers);
    json errs = json::array();
    for (const auto& e : r.errors) errs.push_back(to_json(e));
    if (r.dataset.questions.empty()) throw ValidationError("no record of the source could be converted");
    save_dataset(paths.ingested().string(), r.dataset);
    write_file(paths.import_errors().string(), dump_canonical(errs));
    ingested = std::move(r.dataset);
  });
  if (!ingested) ingested = load_dataset(paths.ingested().string());
  report["import"] = {{"questions", ingested->questions.size()}, {"metadata", ingested->metadata}};
  if (opts.only == "ingest") return finish();

  std::optional<KnowledgeHierarchy> hierarchy;
  stage("stratify", "in replay mode the stratifier transcript must cover topics, outlines and assignments", [&] {
          KnowledgeHierarchy h = cfg.hierarchy.path.empty()
                                     ? generate_hierarchy(ingested->field_label, cfg.hierarchy.generation, stratifier_gw())
                                     : load_hierarchy(cfg.hierarchy.path);
          if (!cfg.hierarchy.overrides.empty()) {
            h = apply_overrides(std::move(h), cfg.hierarchy.overrides);
            h.user_overridden = true;
          }
          auto assigned = stratify_dataset(*ingested, std::move(h), [&]() -> Gateway* { return &stratifier_gw(); });
          save_hierarchy(paths.hierarchy().string(), assigned.hierarchy);
          write_file(paths.assignments().string(), dump_canonical(to_json(assigned.report)));
          hierarchy = std::move(assigned.hierarchy);
        });
  if (!hierarchy) hierarchy = load_hierarchy(paths.hierarchy().string());
  {
    auto leaves = collect_leaves(*hierarchy);
    auto assignments = parse_json_text(read_file(paths.assignments().string()), "assignments");
    std::size_t flagged = 0;
    for (const auto& a : assignments.value("assignments", json::array())) flagged += a.value("flagged", false) ? 1 : 0;
    report["hierarchy"] = {{"leaves", leaves.size()},
                           {"empty_leaf_fraction", empty_leaf_fraction(*hierarchy)},
                           {"flagged_assignments", flagged}};
  }
  if (opts.only == "stratify") return finish();

  std::optional<Dataset> dataset;
  stage("annotate", "in replay mode transcripts must cover the Bloom and difficulty prompts", [&] {
    Dataset ds = *ingested;
    json failures = json::object();
    if (cfg.classify_bloom) failures["bloom_unclassified"] = classify_dataset(ds, stratifier_gw());
    for (const auto& m : cfg.models) {
      std::vector<QuestionRating> ratings;
      if (cfg.rate_difficulty) ratings = rate_dataset(ds, model_gw(m));
      save_ratings(paths.ratings(m.profile.model_id).string(), ratings);
    }
    save_dataset(paths.dataset().string(), ds);
    dataset = std::move(ds);
  });
  if (!dataset) dataset = load_dataset(paths.dataset().string());
  {
    json unclassified = json::array(), unrated = json::object();
    for (const auto* q : evaluated_questions(*dataset))
      if (!q->bloom_level) unclassified.push_back(q->id);
    for (const auto& m : cfg.models) {
      json ids = json::array();
      for (const auto& r : load_ratings(paths.ratings(m.profile.model_id).string()))
        if (!r.self_difficulty) ids.push_back(r.question_id);
      unrated[m.profile.model_id] = ids;
    }
    report["annotation"] = {{"bloom_unclassified", unclassified}, {"difficulty_unrated", unrated}};
  }
  if (opts.only == "annotate") return finish();

  json answers = json::object();
  stage("answer", "in replay mode each model transcript must cover every answer prompt", [&] {
    for (const auto& m : cfg.models) {
      auto ratings = load_ratings(paths.ratings(m.profile.model_id).string());
      auto run = answer_dataset(*dataset, model_gw(m), ratings);
      save_responses(paths.responses(m.profile.model_id).string(), run.responses);
      json steps = json::object();
      for (auto [s, n] : run.degradation_steps) steps[std::to_string(s)] = n;
      answers[m.profile.model_id] = {{"over_budget", run.over_budget}, {"plan_steps", steps}};
    }
  });
  report["answers"] = answers;
  if (opts.only == "answer") return finish();

  std::optional<StatsBundle> stats;
  stage("score", "responses must refer to questions of the dataset", [&] {
    std::vector<RunReport> runs;
    for (const auto& m : cfg.models) {
      auto responses = load_responses(paths.responses(m.profile.model_id).string());
      runs.push_back(score_model(*dataset, *hierarchy, m.profile.model_id, responses, cfg.scoring));
    }
    auto bundle = build_stats_bundle(*dataset, *hierarchy, std::move(runs), cfg.scoring.mode);
    write_file(paths.stats().string(), dump_canonical(to_json(bundle)));
    stats = std::move(bundle);
  });
  if (!stats) stats = load_stats(paths.stats().string());
  {
    json models = json::array();
    for (const auto& r : stats->runs) {
      json flags = json::object();
      for (const auto& f : r.flags) flags[f.kind] = flags.value(f.kind, 0) + 1;
      models.push_back({{"model_id", r.model_id},
                        {"overall_accuracy", r.overall_accuracy ? json(*r.overall_accuracy) : json(nullptr)},
                        {"flags", flags}});
    }
    report["models"] = models;
  }
  if (opts.only == "score") return finish();

  stage("render", "lower --h-ln or raise layout.page_width if the map does not fit", [&] {
    RenderConfig rc = cfg.render;
    rc.seed = cfg.seed;
    rc.workers = cfg.workers;
    auto rendered = render_stats(*hierarchy, *stats, cfg.layout, rc, cfg.color_mode, cfg.scheme);
    write_file(paths.map().string(), rendered.svg);
  });

  return finish();
}

}  // namespace llmmaps
