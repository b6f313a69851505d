#include <gtest/gtest.h>

#include <fstream>

#include <llmmaps/pipeline.hpp>

#include "support/mock_world.hpp"
#include "support/replay_fixture.hpp"

using namespace llmmaps;
namespace ts = testing_support;
namespace world = testing_support::world;

namespace {

const std::vector<std::string> kStages = {"ingest", "stratify", "annotate", "answer", "score", "render"};

std::optional<double> accuracy_of(const StatsBundle& b, const std::string& model) {
  for (const auto& r : b.runs)
    if (r.model_id == model) return r.overall_accuracy;
  return std::nullopt;
}

// Copies `from` keeping only the lines for which `keep(index)` holds.
void filter_lines(const std::string& from, const std::string& to, const std::function<bool(std::size_t)>& keep) {
  std::ifstream in(from);
  std::ofstream out(to);
  std::string line;
  for (std::size_t i = 0; std::getline(in, line); ++i)
    if (keep(i)) out << line << "\n";
}

}  // namespace

TEST(Pipeline, ReplayReproducesTheCommittedRun) {
  ts::ScratchDir dir("pipeline_replay");
  auto result = run_pipeline(ts::replay_config(dir.path()), {});
  EXPECT_EQ(result.stages_run, kStages);

  auto stats = load_stats((dir / "stats.json").string());
  // Counted from the mock models' mistake rules: 45 of 60 and 36 of 60.
  EXPECT_EQ(accuracy_of(stats, "model-a"), 45.0 / 60.0);
  EXPECT_EQ(accuracy_of(stats, "model-b"), 36.0 / 60.0);
  EXPECT_EQ(accuracy_of(stats, "model-a"), world::expected_accuracy("model-a"));

  EXPECT_EQ(load_hierarchy((dir / "hierarchy.json").string()), load_hierarchy(ts::replay_file("hierarchy.json")));
  EXPECT_EQ(read_file((dir / "map.svg").string()), read_file(ts::replay_file("golden_map.svg")));

  const auto& rep = result.report;
  EXPECT_EQ(rep["import"]["questions"], 63);
  EXPECT_EQ(rep["hierarchy"]["flagged_assignments"], 1);
  EXPECT_EQ(rep["annotation"]["bloom_unclassified"].size(), 1u);
  EXPECT_EQ(rep["annotation"]["difficulty_unrated"]["model-b"].size(), 1u);
  EXPECT_TRUE(rep["annotation"]["difficulty_unrated"]["model-a"].empty());
}

TEST(Pipeline, AssignmentMethodsAreRecorded) {
  ts::ScratchDir dir("pipeline_methods");
  run_pipeline(ts::replay_config(dir.path()), {});
  auto assignments = parse_json_text(read_file((dir / "assignments.json").string()), "assignments");
  std::map<std::string, int> methods;
  for (const auto& a : assignments["assignments"]) ++methods[a["method"].get<std::string>()];
  EXPECT_EQ(methods["llm"], 57);
  EXPECT_EQ(methods["menu"], 2);
  EXPECT_EQ(methods["fallback"], 1);
}

TEST(Pipeline, ResumeSkipsFinishedStages) {
  ts::ScratchDir dir("pipeline_resume");
  auto cfg = ts::replay_config(dir.path());
  run_pipeline(cfg, {});
  auto svg = read_file((dir / "map.svg").string());

  PipelineOptions resume;
  resume.resume = true;
  auto again = run_pipeline(cfg, resume);
  EXPECT_TRUE(again.stages_run.empty());
  EXPECT_EQ(again.stages_skipped, kStages);

  fs::remove(dir / "stats.json");
  fs::remove(dir / "map.svg");
  auto partial = run_pipeline(cfg, resume);
  EXPECT_EQ(partial.stages_run, (std::vector<std::string>{"score", "render"}));
  EXPECT_EQ(read_file((dir / "map.svg").string()), svg);
}

TEST(Pipeline, ExistingOutputsNeedForce) {
  ts::ScratchDir dir("pipeline_force");
  auto cfg = ts::replay_config(dir.path());
  run_pipeline(cfg, {});
  EXPECT_THROW(run_pipeline(cfg, {}), ValidationError);
  PipelineOptions force;
  force.force = true;
  EXPECT_EQ(run_pipeline(cfg, force).stages_run, kStages);
}

TEST(Pipeline, MissingTranscriptEntryFailsTheStage) {
  ts::ScratchDir dir("pipeline_miss");
  auto cfg = ts::replay_config(dir / "out");
  // Ratings come first in the transcript; dropping the final line loses an answer.
  auto text = read_file(cfg.models[0].transcript);
  auto lines = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
  auto cut = (dir / "short.jsonl").string();
  filter_lines(cfg.models[0].transcript, cut, [&](std::size_t i) { return i + 1 < lines; });
  cfg.models[0].transcript = cut;
  try {
    run_pipeline(cfg, {});
    FAIL() << "expected a StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "answer");
    EXPECT_EQ(e.cause(), "ReplayMissError");
    EXPECT_EQ(e.exit_code(), kExitGateway);
  }
}

TEST(Pipeline, MissingTranscriptFileIsAValidationError) {
  ts::ScratchDir dir("pipeline_nofile");
  auto cfg = ts::replay_config(dir / "out");
  cfg.models[1].transcript = (dir / "absent.jsonl").string();
  try {
    run_pipeline(cfg, {});
    FAIL() << "expected a ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_EQ(exit_code_for(e), kExitValidation);
  }
}

TEST(Pipeline, GivenHierarchySkipsGeneration) {
  ts::ScratchDir dir("pipeline_given");
  auto cfg = ts::replay_config(dir.path());
  cfg.hierarchy.path = ts::replay_file("hierarchy.json");
  run_pipeline(cfg, {});
  auto assignments = parse_json_text(read_file((dir / "assignments.json").string()), "assignments");
  for (const auto& a : assignments["assignments"]) EXPECT_EQ(a["method"], "given");
  EXPECT_EQ(read_file((dir / "map.svg").string()), read_file(ts::replay_file("golden_map.svg")));
}

TEST(Pipeline, OverridesReshapeTheMap) {
  ts::ScratchDir dir("pipeline_overrides");
  auto cfg = ts::replay_config(dir.path());
  cfg.hierarchy.path = ts::replay_file("hierarchy.json");
  cfg.hierarchy.overrides = edits_from_json(json::parse(R"([
    {"op": "rename", "node": "Astronomy / Stars", "label": "Stellar Physics"},
    {"op": "remove_node", "node": "Cosmology"}])"));
  run_pipeline(cfg, {});
  auto h = load_hierarchy((dir / "hierarchy.json").string());
  EXPECT_TRUE(h.user_overridden);
  auto svg = read_file((dir / "map.svg").string());
  EXPECT_NE(svg.find("Stellar Physics"), std::string::npos);
  EXPECT_EQ(svg.find(">Stars<"), std::string::npos);
}

TEST(Pipeline, RecordThenReplayAgree) {
  ts::ScratchDir dir("pipeline_record");
  auto cfg = ts::replay_config(dir / "record");
  cfg.mode = GatewayMode::record;
  cfg.stratifier.transcript = (dir / "stratifier.jsonl").string();
  for (auto& m : cfg.models) m.transcript = (dir / (m.profile.model_id + ".jsonl")).string();
  PipelineOptions opts;
  opts.transports = [](const ModelProfile&) { return std::make_shared<CallbackTransport>(world::reply); };
  run_pipeline(cfg, opts);

  auto replay = cfg;
  replay.mode = GatewayMode::replay;
  replay.out_dir = (dir / "replay").string();
  run_pipeline(replay, {});
  EXPECT_EQ(read_file((dir / "record/map.svg").string()), read_file((dir / "replay/map.svg").string()));
  EXPECT_EQ(read_file((dir / "record/map.svg").string()), read_file(ts::replay_file("golden_map.svg")));
}

TEST(Pipeline, ConfigRoundTrip) {
  auto cfg = load_run_config(ts::replay_file("pipeline.json"));
  EXPECT_EQ(cfg.seed, 42u);
  EXPECT_EQ(cfg.mode, GatewayMode::replay);
  EXPECT_EQ(cfg.models.size(), 2u);
  EXPECT_EQ(cfg.scoring.mode, ScoreMode::choice_index);
  auto back = run_config_from_json(to_json(cfg), "/");
  EXPECT_EQ(to_json(back), to_json(cfg));
}

TEST(Pipeline, StagesRunOneAtATimeMatchTheFullRun) {
  ts::ScratchDir dir("pipeline_staged");
  auto cfg = ts::replay_config(dir.path());
  for (const auto& name : pipeline_stages()) {
    PipelineOptions one;
    one.only = name;
    auto r = run_pipeline(cfg, one);
    EXPECT_EQ(r.stages_run, std::vector<std::string>{name});
  }
  EXPECT_EQ(read_file((dir / "map.svg").string()), read_file(ts::replay_file("golden_map.svg")));
}

TEST(Pipeline, StageNeedsEarlierArtifacts) {
  ts::ScratchDir dir("pipeline_order");
  auto cfg = ts::replay_config(dir.path());
  PipelineOptions score;
  score.only = "score";
  EXPECT_THROW(run_pipeline(cfg, score), ValidationError);
  EXPECT_FALSE(fs::exists(dir / "stats.json"));
  score.only = "tally";
  EXPECT_THROW(run_pipeline(cfg, score), ValidationError);
}
