// llmmaps: turns Q&A datasets and LLM answers into stratified SVG maps.
//
//   llmmaps pipeline --config run.json [--out DIR] [--resume] [--force]
//   llmmaps <stage> --config run.json     stage: ingest stratify annotate answer score render
//   llmmaps render --hierarchy h.json --stats stats.json --output map.svg

#include <CLI11.hpp>

#include <iostream>

#include <llmmaps/http_transport.hpp>
#include <llmmaps/pipeline.hpp>

using namespace llmmaps;

namespace {

struct RenderFlags {
  std::optional<int> h_ln;
  bool show_empty = false;
  std::string color_mode;
  std::string glyphs;
  bool bloom_panel = false;
  std::optional<std::string> title;
  std::optional<double> dot_radius;
};

struct Flags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::optional<std::size_t> workers;
  bool force = false;
  bool resume = false;
  bool verbose = false;
  RenderFlags render;
  // Stand-alone rendering.
  std::string hierarchy;
  std::string stats;
  std::string output;
};

void add_render_flags(CLI::App& cmd, RenderFlags& r) {
  cmd.add_option("--h-ln", r.h_ln, "Leaves per stack")->check(CLI::Range(1, 1000));
  cmd.add_flag("--show-empty-leaves", r.show_empty, "Keep leaves without questions");
  cmd.add_option("--color-mode", r.color_mode, "data, model or auto")->check(CLI::IsMember({"data", "model", "auto"}));
  cmd.add_option("--glyphs", r.glyphs, "Comma list of hallucination, difficulty, response-time");
  cmd.add_flag("--bloom-panel", r.bloom_panel, "Draw the Bloom's taxonomy panel");
  cmd.add_option("--title", r.title, "Map title");
  cmd.add_option("--dot-radius", r.dot_radius, "Dot radius in px")->check(CLI::PositiveNumber);
}

void add_run_flags(CLI::App& cmd, Flags& f, bool pipeline) {
  cmd.add_option("-c,--config", f.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  cmd.add_option("-o,--out", f.out, "Output directory");
  cmd.add_option("--seed", f.seed, "Seed for shuffling, sampling and tie-breaking");
  cmd.add_option("--mode", f.mode, "live, record or replay")->check(CLI::IsMember({"live", "record", "replay"}));
  cmd.add_option("--workers", f.workers, "Worker threads")->check(CLI::Range(1, 1024));
  cmd.add_flag("--force", f.force, "Overwrite existing outputs");
  if (pipeline) cmd.add_flag("--resume", f.resume, "Skip stages whose outputs exist");
  add_render_flags(cmd, f.render);
}

void apply_render_flags(const RenderFlags& r, LayoutConfig& layout, RenderConfig& render, std::string& color_mode) {
  if (r.h_ln) layout.h_ln = *r.h_ln;
  if (r.show_empty) layout.show_empty_leaves = true;
  if (!r.color_mode.empty()) color_mode = r.color_mode;
  if (!r.glyphs.empty()) render.glyphs = parse_glyphs(r.glyphs);
  if (r.bloom_panel) render.show_bloom_panel = true;
  if (r.title) render.title = *r.title;
  if (r.dot_radius) render.dot_radius = *r.dot_radius;
}

// Flags override the config file, which overrides built-in defaults.
RunConfig effective_config(const Flags& f) {
  if (f.config.empty()) throw ValidationError("--config is required");
  auto cfg = load_run_config(f.config);
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (f.seed) cfg.seed = *f.seed;
  if (!f.mode.empty()) cfg.mode = *parse_gateway_mode(f.mode);
  if (f.workers) cfg.workers = *f.workers;
  apply_render_flags(f.render, cfg.layout, cfg.render, cfg.color_mode);
  return cfg;
}

int run_stage(const Flags& f, const std::string& only) {
  auto cfg = effective_config(f);
  PipelineOptions opts;
  opts.only = only;
  opts.force = f.force;
  opts.resume = f.resume;
  opts.transports = [](const ModelProfile&) { return std::make_shared<HttpTransport>(); };
  if (f.verbose) opts.log = [](const std::string& m) { std::cerr << "llmmaps: " << m << "\n"; };
  auto result = run_pipeline(cfg, opts);
  if (only.empty() || only == "score") {
    for (const auto& m : result.report.value("models", json::array())) {
      const auto& acc = m["overall_accuracy"];
      std::cout << m["model_id"].get<std::string>() << ": "
                << (acc.is_null() ? std::string("n/a") : percent_label(acc.get<double>())) << "\n";
    }
  }
  std::cout << "outputs in " << cfg.out_dir << "\n";
  return kExitOk;
}

int render_standalone(const Flags& f) {
  if (f.hierarchy.empty() || f.stats.empty() || f.output.empty())
    throw ValidationError("render without --config needs --hierarchy, --stats and --output");
  if (fs::exists(f.output) && !f.force)
    throw ValidationError("'" + f.output + "' already exists; pass --force to overwrite");
  LayoutConfig layout;
  RenderConfig render;
  std::string color_mode = "auto";
  apply_render_flags(f.render, layout, render, color_mode);
  if (f.seed) render.seed = *f.seed;
  if (f.workers) render.workers = *f.workers;
  validate_layout_config(layout);
  auto h = load_hierarchy(f.hierarchy);
  auto stats = load_stats(f.stats);
  auto map = render_stats(h, stats, layout, render, color_mode, std::nullopt);
  write_file(f.output, map.svg);
  std::cout << "wrote " << f.output << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LLMMaps: stratified evaluation maps of LLM question answering"};
  app.require_subcommand(1);
  // Subcommands pass unknown options up, so -v works after the subcommand too.
  app.fallthrough();
  Flags f;
  app.add_flag("-v,--verbose", f.verbose, "Log stage progress to stderr");

  auto* pipeline = app.add_subcommand("pipeline", "Run every stage in order");
  add_run_flags(*pipeline, f, true);
  std::map<std::string, CLI::App*> stages;
  const std::map<std::string, std::string> about = {
      {"ingest", "Import the dataset into the normalized form"},
      {"stratify", "Build the knowledge hierarchy and assign questions"},
      {"annotate", "Classify Bloom levels and collect difficulty ratings"},
      {"answer", "Prompt every model and collect responses"},
      {"score", "Score responses and aggregate per subfield"},
      {"render", "Lay out and draw the map"}};
  for (const auto& name : pipeline_stages()) {
    auto* cmd = app.add_subcommand(name, about.at(name));
    add_run_flags(*cmd, f, false);
    stages[name] = cmd;
  }
  stages["render"]->add_option("--hierarchy", f.hierarchy, "Hierarchy JSON (without --config)")->check(CLI::ExistingFile);
  stages["render"]->add_option("--stats", f.stats, "Stats JSON (without --config)")->check(CLI::ExistingFile);
  stages["render"]->add_option("--output", f.output, "SVG file to write (without --config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (pipeline->parsed()) return run_stage(f, "");
    if (stages["render"]->parsed() && f.config.empty()) return render_standalone(f);
    for (const auto& [name, cmd] : stages)
      if (cmd->parsed()) return run_stage(f, name);
  } catch (const StageError& e) {
    std::cerr << "llmmaps: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "llmmaps: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitValidation;
}
