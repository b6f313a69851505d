// Regenerates tests/data/replay: the raw dataset, model profiles, recorded
// transcripts, and the committed hierarchy, stats and golden map.
//
//   make_fixture [output-dir]

#include <filesystem>
#include <iostream>

#include <llmmaps/pipeline.hpp>

#include "support/mock_world.hpp"

namespace fs = std::filesystem;
namespace world = testing_support::world;
using namespace llmmaps;

namespace {

json profile(const std::string& id, int token_limit) {
  ModelProfile p;
  p.model_id = id;
  p.token_limit = token_limit;
  p.request_parallelism = 1;
  p.endpoint.style = "completions";
  p.endpoint.url = "https://api.openai.com/v1/completions";
  p.endpoint.api_key_env = "OPENAI_API_KEY";
  p.endpoint.remote_model = "gpt-3.5-turbo-instruct";
  return to_json(p);
}

json pipeline_config() {
  return {{"seed", 42},
          {"mode", "replay"},
          {"out_dir", "out"},
          {"dataset",
           {{"format", "sciq"},
            {"path", "sciq_science.json"},
            {"name", "sciq-science"},
            {"field_label", world::kField},
            {"fewshot_count", 3}}},
          {"stratifier", {{"profile", "profiles/stratifier.json"}, {"transcript", "transcripts/stratifier.jsonl"}}},
          {"hierarchy", {{"depth", 2}}},
          {"models",
           {{{"profile", "profiles/model_a.json"}, {"transcript", "transcripts/model-a.jsonl"}},
            {{"profile", "profiles/model_b.json"}, {"transcript", "transcripts/model-b.jsonl"}}}},
          {"scoring", {{"mode", "choice_index"}}},
          {"render",
           {{"glyphs", {"hallucination", "difficulty", "response_time"}},
            {"bloom_panel", true},
            {"title", "Natural science: model-a and model-b"}}}};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path dir = argc > 1 ? fs::path(argv[1]) : fs::path(LLMMAPS_TEST_DATA) / "replay";
  try {
    fs::create_directories(dir / "profiles");
    fs::create_directories(dir / "transcripts");
    write_file((dir / "sciq_science.json").string(), world::raw_dataset_text());
    write_file((dir / "profiles/stratifier.json").string(), profile("stratifier", 4096).dump(2) + "\n");
    write_file((dir / "profiles/model_a.json").string(), profile("model-a", 4096).dump(2) + "\n");
    write_file((dir / "profiles/model_b.json").string(), profile("model-b", 2048).dump(2) + "\n");
    write_file((dir / "pipeline.json").string(), pipeline_config().dump(2) + "\n");

    auto work = fs::temp_directory_path() / "llmmaps_make_fixture";
    fs::remove_all(work);

    auto cfg = load_run_config((dir / "pipeline.json").string());
    cfg.mode = GatewayMode::record;
    cfg.out_dir = (work / "record").string();
    PipelineOptions opts;
    opts.transports = [](const ModelProfile&) { return std::make_shared<CallbackTransport>(world::reply); };
    opts.log = [](const std::string& m) { std::cerr << m << "\n"; };
    run_pipeline(cfg, opts);

    fs::copy_file(work / "record/hierarchy.json", dir / "hierarchy.json", fs::copy_options::overwrite_existing);
    fs::copy_file(work / "record/stats.json", dir / "stats.json", fs::copy_options::overwrite_existing);
    fs::copy_file(work / "record/map.svg", dir / "golden_map.svg", fs::copy_options::overwrite_existing);

    json expected = {{"overall_accuracy",
                      {{"model-a", world::expected_accuracy("model-a")},
                       {"model-b", world::expected_accuracy("model-b")}}}};
    write_file((dir / "expected.json").string(), expected.dump(2) + "\n");

    // The recorded transcripts must reproduce the run without a transport.
    auto replay = load_run_config((dir / "pipeline.json").string());
    replay.out_dir = (work / "replay").string();
    run_pipeline(replay, {});
    if (read_file((work / "replay/map.svg").string()) != read_file((dir / "golden_map.svg").string())) {
      std::cerr << "replay produced a different map\n";
      return 1;
    }
    fs::remove_all(work);
    std::cout << "fixture written to " << dir.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "make_fixture: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
