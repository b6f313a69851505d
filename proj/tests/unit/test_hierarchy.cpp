#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include <llmmaps/hierarchy.hpp>

#include "support/builders.hpp"

using namespace llmmaps;
using testing_support::build_hierarchy;
using testing_support::TreeSpec;

namespace {

std::string between(const std::string& s, const std::string& open, const std::string& close) {
  auto a = s.find(open);
  if (a == std::string::npos) return {};
  a += open.size();
  return s.substr(a, s.find(close, a) - a);
}

// Simulated stratifier: six topics, and for every outline request an
// introduction, four chapters and a conclusion.
Completion outline_model(const ModelProfile&, const std::string& prompt) {
  if (prompt.find("main topics of") != std::string::npos)
    return {"Here are the topics:\n1. Optics\n2. Mechanics\n3. Thermodynamics\n4. Electromagnetism\n5. Acoustics\n"
            "6. Quantum Physics\n",
            0.5};
  auto topic = between(prompt, "textbook about ", " (within");
  std::string out = "Chapter 1: Introduction to " + topic + "\n";
  for (int i = 2; i <= 5; ++i) out += "Chapter " + std::to_string(i) + ": " + topic + " part " + std::to_string(i - 1) + "\n";
  out += "Chapter 6: Summary\n";
  return {out, 0.5};
}

Gateway recording_gateway(std::shared_ptr<Transcript> t,
                          CallbackTransport::Fn fn = outline_model) {
  return Gateway(testing_support::profile("stratifier"), GatewayMode::record,
                 std::make_shared<CallbackTransport>(std::move(fn)), std::move(t));
}

std::multiset<std::string> all_questions(const KnowledgeHierarchy& h) {
  std::vector<std::string> ids;
  collect_question_ids(h.root, ids);
  return {ids.begin(), ids.end()};
}

}  // namespace

TEST(Hierarchy, StripBoundaryChapters) {
  using V = std::vector<std::string>;
  EXPECT_EQ(strip_boundary_chapters({"Introduction", "Optics", "Conclusion"}), (V{"Optics"}));
  EXPECT_EQ(strip_boundary_chapters({"Optics", "Waves"}), (V{"Optics", "Waves"}));
  EXPECT_EQ(strip_boundary_chapters({"Intro to Conclusions in Essays", "Optics", "Wrap-up"}),
            (V{"Intro to Conclusions in Essays", "Optics", "Wrap-up"}));
  EXPECT_EQ(strip_boundary_chapters({"A", "An Overview", "Outlook"}), (V{"A", "An Overview"}));
  EXPECT_EQ(strip_boundary_chapters({}), V{});
}

TEST(Hierarchy, ParseEnumeratedList) {
  using V = std::vector<std::string>;
  EXPECT_EQ(parse_enumerated_list("Sure!\n1. **Optics**\n2) Waves\n   - nested\n3. Heat."), (V{"Optics", "Waves", "Heat"}));
  EXPECT_EQ(parse_enumerated_list("Chapter 1: Basics\nChapter 2: Advanced"), (V{"Basics", "Advanced"}));
  EXPECT_EQ(parse_enumerated_list("- a\n* b\n\xE2\x80\xA2 c"), (V{"a", "b", "c"}));
  EXPECT_TRUE(parse_enumerated_list("Physics is a broad field with many topics.").empty());
}

TEST(Hierarchy, GenerateFromScriptedModelAndReplay) {
  auto t = std::make_shared<Transcript>();
  auto gw = recording_gateway(t);
  HierarchyConfig cfg;
  auto h = generate_hierarchy("physics", cfg, gw);
  ASSERT_EQ(h.root.children.size(), 6u);
  for (const auto& topic : h.root.children) {
    EXPECT_LE(topic.children.size(), 5u);
    EXPECT_EQ(topic.children.size(), 4u);  // intro and summary stripped
    for (const auto& ch : topic.children) {
      EXPECT_EQ(ch.children.size(), 4u);
      for (const auto& sec : ch.children) EXPECT_EQ(sec.depth, 3);
    }
  }
  // 1 topic prompt, 6 outlines at depth 1, 24 at depth 2.
  EXPECT_EQ(t->size(), 31u);
  EXPECT_EQ(h.generation_log.size(), 31u);

  Gateway replay(testing_support::profile("stratifier"), GatewayMode::replay, nullptr, t);
  auto again = generate_hierarchy("physics", cfg, replay);
  EXPECT_EQ(dump_hierarchy(again), dump_hierarchy(h));
}

TEST(Hierarchy, DepthOneIssuesOnlyTopicPrompt) {
  auto t = std::make_shared<Transcript>();
  auto gw = recording_gateway(t);
  HierarchyConfig cfg;
  cfg.target_depth = 1;
  auto h = generate_hierarchy("physics", cfg, gw);
  EXPECT_EQ(h.root.children.size(), 6u);
  for (const auto& c : h.root.children) EXPECT_TRUE(c.is_leaf());
  EXPECT_EQ(t->size(), 1u);
}

TEST(Hierarchy, ProseOnlyRepliesRaiseStructureError) {
  auto t = std::make_shared<Transcript>();
  auto gw = recording_gateway(t, [](const ModelProfile&, const std::string&) {
    return Completion{"Physics covers many things and I would rather not list them.", 0.1};
  });
  EXPECT_THROW(generate_hierarchy("physics", {}, gw), StructureError);
  EXPECT_EQ(t->size(), 3u);  // first attempt plus two retries
}

TEST(Hierarchy, TopicCountOutsideRangeIsRetried) {
  int calls = 0;
  auto t = std::make_shared<Transcript>();
  auto gw = recording_gateway(t, [&](const ModelProfile& p, const std::string& prompt) {
    if (prompt.find("main topics") != std::string::npos && calls++ == 0) return Completion{"1. Only\n2. Two", 0.1};
    return outline_model(p, prompt);
  });
  HierarchyConfig cfg;
  cfg.target_depth = 1;
  auto h = generate_hierarchy("physics", cfg, gw);
  EXPECT_EQ(h.root.children.size(), 6u);
  EXPECT_EQ(calls, 2);
}

TEST(Hierarchy, ReplayMissPropagates) {
  Gateway replay(testing_support::profile("stratifier"), GatewayMode::replay, nullptr, std::make_shared<Transcript>());
  EXPECT_THROW(generate_hierarchy("physics", {}, replay), ReplayMissError);
}

TEST(Hierarchy, NodeIdsAreContentDerived) {
  auto a = build_hierarchy({"F", {}, {{"A", {}, {{"x", {}, {}}}}}});
  auto b = build_hierarchy({"F", {}, {{"A", {}, {{"x", {}, {}}}}}});
  EXPECT_EQ(a.root.children[0].children[0].id, b.root.children[0].children[0].id);
  EXPECT_NE(a.root.children[0].id, a.root.children[0].children[0].id);
  EXPECT_EQ(a.root.id.size(), 13u);
}

TEST(Hierarchy, AssignSingleLeafNeedsNoGateway) {
  auto ds = testing_support::sample_dataset(10, 3);
  auto h = build_hierarchy({"F", {}, {{"Only", {}, {}}}});
  auto r = assign_questions(ds, h, nullptr);
  EXPECT_EQ(r.hierarchy.root.children[0].question_ids.size(), 7u);
  for (const auto& a : r.report.assignments) EXPECT_EQ(a.method, AssignMethod::single_leaf);
}

TEST(Hierarchy, AssignFollowsModelThenMenu) {
  auto ds = testing_support::sample_dataset(10, 3);
  ds.questions[7].text = "Which lens focuses light?";
  ds.questions[9].text = "What is entropy?";
  ds.questions[9].topic_path = {"Thermodynamics"};
  auto h = build_hierarchy({"Physics", {}, {{"Optics", {}, {{"Lenses", {}, {}}, {"Mirrors", {}, {}}}},
                                             {"Thermodynamics", {}, {{"Entropy", {}, {}}, {"Heat", {}, {}}}}}});
  auto gw = recording_gateway(std::make_shared<Transcript>(), [](const ModelProfile&, const std::string& prompt) {
    if (prompt.find("Answer only with the number") != std::string::npos) return Completion{"3", 0.1};
    if (prompt.find("lens") != std::string::npos) return Completion{"Optics / Lenses", 0.1};
    if (prompt.find("entropy") != std::string::npos) return Completion{"Statistical Mechanics", 0.1};
    return Completion{"Mirrors", 0.1};  // unique suffix match
  });
  auto r = assign_questions(ds, h, &gw);
  const auto& optics = r.hierarchy.root.children[0];
  EXPECT_NE(std::find(optics.children[0].question_ids.begin(), optics.children[0].question_ids.end(), "q7"),
            optics.children[0].question_ids.end());
  // The menu retry picked item 3 = Thermodynamics / Entropy.
  const auto& entropy = r.hierarchy.root.children[1].children[0];
  EXPECT_EQ(entropy.question_ids, std::vector<std::string>{"q9"});
  EXPECT_EQ(r.report.assignments.back().method, AssignMethod::menu);
  // Partition: every evaluated question exactly once.
  auto ids = all_questions(r.hierarchy);
  EXPECT_EQ(ids.size(), 7u);
  EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), 7u);
}

TEST(Hierarchy, InvalidLeafIsFlaggedAndFallsBackDeterministically) {
  auto ds = testing_support::sample_dataset(5, 3);
  ds.questions[3].topic_path = {"Thermodynamics", "Entropy"};
  ds.questions[4].text = "Something about optics";
  auto h = build_hierarchy({"Physics", {}, {{"Optics", {}, {{"Mirrors", {}, {}}, {"Lenses", {}, {}}}},
                                             {"Thermodynamics", {}, {{"Heat", {}, {}}, {"Entropy", {}, {}}}}}});
  auto gw = recording_gateway(std::make_shared<Transcript>(), [](const ModelProfile&, const std::string&) {
    return Completion{"Astrology / Horoscopes", 0.1};
  });
  auto r = assign_questions(ds, h, &gw);
  ASSERT_EQ(r.report.flagged(), (std::vector<std::string>{"q3", "q4"}));
  // Fallback: best topic by token overlap, then the lexicographically first leaf.
  EXPECT_EQ(r.report.assignments[0].leaf_path, "Thermodynamics / Entropy");
  EXPECT_EQ(r.report.assignments[1].leaf_path, "Optics / Lenses");
}

TEST(Hierarchy, PartitionPropertyOnRandomTrees) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto rt = testing_support::random_tree(seed, 4, 60);
    auto ds = testing_support::sample_dataset(rt.question_ids.size() + 3, 3);
    auto h = rt.hierarchy;
    auto leaves = collect_leaves(h);
    std::vector<std::string> labels;
    for (const auto& l : leaves) labels.push_back(l.display());
    auto gw = recording_gateway(std::make_shared<Transcript>(), [&](const ModelProfile&, const std::string& prompt) {
      auto n = fnv1a64(prompt) % (labels.size() + 1);
      return Completion{n == labels.size() ? std::string("nowhere") : labels[n], 0.1};
    });
    auto r = assign_questions(ds, h, leaves.size() == 1 ? nullptr : &gw);
    auto ids = all_questions(r.hierarchy);
    EXPECT_EQ(ids.size(), ds.questions.size() - 3);
    EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), ids.size());
    EXPECT_NO_THROW(validate_hierarchy(r.hierarchy));
  }
}

TEST(Hierarchy, PruneExamples) {
  auto full = build_hierarchy({"F", {}, {{"A", {"q1"}, {}}, {"B", {"q2"}, {}}}});
  EXPECT_EQ(prune_empty_leaves(full), full);

  auto h = build_hierarchy({"F", {}, {{"A", {}, {{"a1", {"q1"}, {}}, {"a2", {}, {}}}}, {"B", {}, {{"b1", {"q2"}, {}}, {"b2", {}, {}}}}}});
  EXPECT_DOUBLE_EQ(empty_leaf_fraction(h), 0.5);
  auto p = prune_empty_leaves(h);
  EXPECT_EQ(collect_leaves(p).size(), 2u);

  auto sub = build_hierarchy({"F", {}, {{"A", {}, {{"a1", {}, {}}, {"a2", {}, {}}}}, {"B", {}, {{"b1", {"q2"}, {}}}}}});
  auto expected = build_hierarchy({"F", {}, {{"B", {}, {{"b1", {"q2"}, {}}}}}});
  EXPECT_EQ(prune_empty_leaves(sub), expected);

  EXPECT_THROW(prune_empty_leaves(build_hierarchy({"F", {}, {{"A", {}, {}}}})), EmptyHierarchyError);
}

TEST(Hierarchy, PruneIsIdempotentAndKeepsLeafQuestions) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto rt = testing_support::random_tree(seed, 5, 40);
    if (rt.question_ids.empty()) continue;
    auto once = prune_empty_leaves(rt.hierarchy);
    EXPECT_EQ(prune_empty_leaves(once), once);
    EXPECT_DOUBLE_EQ(empty_leaf_fraction(once), 0.0);
    for (const auto& leaf : collect_leaves(once)) {
      const auto* orig = find_node(rt.hierarchy.root, leaf.node->id);
      ASSERT_NE(orig, nullptr);
      EXPECT_EQ(orig->question_ids, leaf.node->question_ids);
    }
  }
}

TEST(Hierarchy, EmptyLeafFraction) {
  EXPECT_DOUBLE_EQ(empty_leaf_fraction(build_hierarchy({"F", {}, {{"A", {"q"}, {}}}})), 0.0);
}

TEST(Hierarchy, Overrides) {
  auto h = build_hierarchy({"Medicine", {}, {{"Radiology", {}, {{"CT imaging", {"q1", "q3"}, {}}, {"MRI", {"q2"}, {}}}}}});
  EXPECT_EQ(apply_overrides(h, {}), h);

  auto renamed = apply_overrides(h, edits_from_json(json::parse(
                                        R"([{"op": "rename", "node": "Radiology / CT imaging", "label": "Computed Tomography"}])")));
  const auto& ct = renamed.root.children[0].children[0];
  EXPECT_EQ(ct.label, "Computed Tomography");
  EXPECT_EQ(ct.id, h.root.children[0].children[0].id);
  EXPECT_EQ(ct.question_ids, h.root.children[0].children[0].question_ids);
  EXPECT_TRUE(renamed.user_overridden);

  auto moved = apply_overrides(h, edits_from_json(json::parse(R"([{"op": "move_question", "question": "q3", "to": "MRI"}])")));
  EXPECT_EQ(moved.root.children[0].children[0].question_ids, std::vector<std::string>{"q1"});
  EXPECT_EQ(moved.root.children[0].children[1].question_ids, (std::vector<std::string>{"q2", "q3"}));

  auto added = apply_overrides(h, edits_from_json(json::parse(
                                      R"([{"op": "add_node", "parent": "Radiology", "label": "Ultrasound"},
                                          {"op": "remove_node", "node": "Radiology / Ultrasound"}])")));
  EXPECT_EQ(added.root.children[0].children.size(), 2u);

  EXPECT_THROW(apply_overrides(h, edits_from_json(json::parse(R"([{"op": "rename", "node": "Nope", "label": "x"}])"))),
               UnknownTargetError);
  EXPECT_THROW(apply_overrides(h, edits_from_json(json::parse(R"([{"op": "move_question", "question": "q1", "to": "Radiology"}])"))),
               InvariantError);
  EXPECT_THROW(apply_overrides(h, edits_from_json(json::parse(R"([{"op": "remove_node", "node": "MRI"}])"))),
               InvariantError);
  EXPECT_THROW(edits_from_json(json::parse(R"([{"op": "explode"}])")), ParseError);
}

TEST(Hierarchy, JsonRoundTrip) {
  auto rt = testing_support::random_tree(3, 4, 30);
  rt.hierarchy.generation_log.push_back({"topics", "abc", "prompt", "reply"});
  auto path = (std::filesystem::temp_directory_path() / "llmmaps_hierarchy.json").string();
  save_hierarchy(path, rt.hierarchy);
  EXPECT_EQ(load_hierarchy(path), rt.hierarchy);
  std::filesystem::remove(path);
}

TEST(Hierarchy, ValidationCatchesBrokenTrees) {
  auto h = build_hierarchy({"F", {}, {{"A", {"q1"}, {{"a", {}, {}}}}}});
  EXPECT_THROW(validate_hierarchy(h), InvariantError);
  auto dup = build_hierarchy({"F", {}, {{"A", {"q1"}, {}}, {"B", {"q1"}, {}}}});
  EXPECT_THROW(validate_hierarchy(dup), InvariantError);
  auto deep = build_hierarchy({"F", {}, {{"A", {}, {{"B", {}, {{"C", {}, {}}}}}}}}, 2);
  EXPECT_THROW(validate_hierarchy(deep), InvariantError);
}
