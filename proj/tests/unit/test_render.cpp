#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include <llmmaps/render.hpp>

#include "support/builders.hpp"
#include "support/svg_check.hpp"

using namespace llmmaps;
namespace ts = testing_support;

namespace {

// WCAG relative luminance written out from the definition.
double luminance_oracle(const std::string& hex) {
  auto channel = [&](int pos) {
    double c = std::stoi(hex.substr(pos, 2), nullptr, 16) / 255.0;
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
  };
  return 0.2126 * channel(1) + 0.7152 * channel(3) + 0.0722 * channel(5);
}

struct Fixture {
  Dataset ds;
  KnowledgeHierarchy h;
  StatsBundle stats;
};

// Hierarchy of three topics with one to three leaves each; model i answers
// question j correctly when (i + j) % (i + 2) != 0.
Fixture fixture(std::size_t k_models, bool with_bloom = false) {
  Fixture f;
  f.ds = ts::sample_dataset(30, 0);
  ts::TreeSpec root{"Biology", {}, {}};
  int q = 0;
  for (int t = 0; t < 3; ++t) {
    ts::TreeSpec topic{"Topic " + std::to_string(t), {}, {}};
    for (int l = 0; l <= t; ++l) {
      ts::TreeSpec leaf{"Leaf " + std::to_string(t) + "." + std::to_string(l), {}, {}};
      for (int i = 0; i < 5; ++i) leaf.questions.push_back("q" + std::to_string(q++));
      topic.children.push_back(leaf);
    }
    root.children.push_back(topic);
  }
  f.h = ts::build_hierarchy(root, 2);
  if (with_bloom)
    for (std::size_t i = 0; i < 30; ++i) f.ds.questions[i].bloom_level = i < 20 ? BloomLevel::Remembering : BloomLevel::Applying;
  std::vector<RunReport> runs;
  for (std::size_t m = 0; m < k_models; ++m) {
    std::vector<ModelResponse> rs;
    for (std::size_t j = 0; j < 30; ++j) {
      const auto& question = f.ds.questions[j];
      bool right = (m + j) % (m + 2) != 0;
      std::size_t gold = std::stoul(question.short_answer);
      ModelResponse r;
      r.question_id = question.id;
      r.model_id = "model-" + std::to_string(m);
      r.extracted_answer = std::string(1, char('A' + (right ? gold : (gold + 1) % 4)));
      r.self_difficulty = 1 + int(j % 5);
      r.response_time_s = 1.0 + double(j % 3);
      rs.push_back(r);
    }
    runs.push_back(score_model(f.ds, f.h, "model-" + std::to_string(m), rs, {ScoreMode::choice_index, 0.5}));
  }
  f.stats = build_stats_bundle(f.ds, f.h, runs, ScoreMode::choice_index);
  return f;
}

std::string draw(const Fixture& f, RenderConfig rc = {}, std::optional<ColorMode> mode = {}) {
  auto in = render_input_from(f.stats);
  LayoutConfig lc;
  lc.k_models = in.model_ids.size();
  lc.reserve_bloom_panel = rc.show_bloom_panel;
  auto geo = layout_map(f.h, accuracies_of(in), lc);
  return render_map(geo, in, default_scheme(mode.value_or(auto_color_mode(lc.k_models))), rc);
}

std::size_t occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

const svgcheck::Element* by_id(const svgcheck::Element& root, const std::string& id) {
  const svgcheck::Element* hit = nullptr;
  svgcheck::visit(root, [&](const svgcheck::Element& e) {
    if (auto* v = e.attr("id"); v && *v == id) hit = &e;
  });
  return hit;
}

}  // namespace

TEST(Render, HallucinationRings) {
  EXPECT_EQ(filled_rings(0.0), 0);
  EXPECT_EQ(filled_rings(0.25), 1);
  EXPECT_EQ(filled_rings(0.5), 2);
  EXPECT_EQ(filled_rings(1.0), 4);
  EXPECT_EQ(occurrences(render_hallucination_glyph(0.25, {0, 0}, "#000000"), "hring filled"), 1u);
  EXPECT_EQ(occurrences(render_hallucination_glyph(1.0, {0, 0}, "#000000"), "hring filled"), 4u);
  auto na = render_hallucination_glyph(std::nullopt, {0, 0}, "#000000");
  EXPECT_NE(na.find("<title>n/a</title>"), std::string::npos);
  EXPECT_EQ(occurrences(na, "hring filled"), 0u);
}

TEST(Render, DifficultySegments) {
  EXPECT_EQ(occurrences(render_difficulty_glyph(1.0, {0, 0}, "#000000"), "dseg filled"), 1u);
  EXPECT_EQ(occurrences(render_difficulty_glyph(5.0, {0, 0}, "#000000"), "dseg filled"), 5u);
  EXPECT_EQ(occurrences(render_difficulty_glyph(3.4, {0, 0}, "#000000"), "dseg filled"), 3u);
  EXPECT_EQ(occurrences(render_difficulty_glyph(3.4, {0, 0}, "#000000"), "class=\"dseg"), 5u);
}

TEST(Render, SpeedGaugeAngle) {
  Point c{10, 10};
  auto tip = gauge_needle_tip(c, 5, 1.0 / 6.0);
  // Angle measured from the left stop, turning over the top.
  double deg = std::atan2(c.y - tip.y, c.x - tip.x) * 180.0 / std::numbers::pi;
  EXPECT_NEAR(deg, 30.0, 1e-9);
  EXPECT_NEAR(distance(gauge_needle_tip(c, 5, 0.0), {5, 10}), 0, 1e-9);
  EXPECT_NEAR(distance(gauge_needle_tip(c, 5, 1.0), {15, 10}), 0, 1e-9);
  EXPECT_NEAR(distance(gauge_needle_tip(c, 5, 0.5), {10, 5}), 0, 1e-9);
}

TEST(Render, PercentLabels) {
  EXPECT_EQ(percent_label(1.0), "100%");
  EXPECT_EQ(percent_label(0.437), "44%");
  EXPECT_EQ(percent_label(0.005), "1%");
  EXPECT_EQ(percent_label(std::nullopt), "n/a");
}

TEST(Render, SingleNodeMap) {
  Dataset ds = ts::sample_dataset(2, 0);
  auto h = ts::build_hierarchy({"Everything", {"q0", "q1"}, {}}, 0);
  std::vector<ModelResponse> rs;
  for (const auto& q : ds.questions) {
    ModelResponse r;
    r.question_id = q.id;
    r.model_id = "solo";
    r.extracted_answer = q.short_answer;
    rs.push_back(r);
  }
  auto rep = score_model(ds, h, "solo", rs, {ScoreMode::choice_index, 0.5});
  Fixture f{ds, h, build_stats_bundle(ds, h, {rep}, ScoreMode::choice_index)};
  auto svg = draw(f);
  EXPECT_TRUE(svgcheck::validate_svg11(svg).empty());
  auto doc = svgcheck::parse_xml(svg);
  EXPECT_EQ(svgcheck::count(*doc, "g", "subfield"), 1u);
  EXPECT_EQ(svgcheck::count(*doc, "circle", "dot"), 2u);
  EXPECT_NE(svg.find(">100%</text>"), std::string::npos);
}

TEST(Render, OutputIsValidSvg11) {
  for (std::size_t k : {1u, 2u, 4u}) {
    RenderConfig rc;
    rc.glyphs = parse_glyphs("hallucination,difficulty,response-time");
    rc.show_bloom_panel = true;
    auto svg = draw(fixture(k, true), rc);
    auto problems = svgcheck::validate_svg11(svg);
    EXPECT_TRUE(problems.empty()) << k << ": " << (problems.empty() ? "" : problems.front());
  }
}

TEST(Render, OneBarPerModelPerSubfield) {
  auto f = fixture(2);
  auto doc = svgcheck::parse_xml(draw(f));
  std::size_t subfields = 0;
  svgcheck::visit(*doc, [&](const svgcheck::Element& e) {
    if (e.name == "g" && e.has_class("subfield")) {
      ++subfields;
      EXPECT_EQ(svgcheck::count(e, "rect", "bar"), 2u);
      EXPECT_EQ(svgcheck::count(e, "text", "acc"), 2u);
    }
  });
  EXPECT_EQ(subfields, 1u + 3u + 6u);
  EXPECT_EQ(svgcheck::count(*doc, "g", "legend-entry"), 2u);
}

TEST(Render, DotCensusMatchesQuestionCounts) {
  auto f = fixture(1);
  auto doc = svgcheck::parse_xml(draw(f));
  walk(f.h.root, [&](const KnowledgeNode& n) {
    auto* g = by_id(*doc, n.id);
    ASSERT_NE(g, nullptr) << n.label;
    std::size_t expected = subtree_question_count(n);
    std::size_t dots = svgcheck::count(*g, "circle", "dot");
    if (dots == 0 && expected > 0) {
      // Overflowing regions print the count instead.
      bool labelled = false;
      svgcheck::visit(*g, [&](const svgcheck::Element& e) {
        if (e.name == "text" && e.has_class("count")) labelled = e.text == std::to_string(expected);
      });
      EXPECT_TRUE(labelled) << n.label;
    } else {
      EXPECT_EQ(dots, expected) << n.label;
    }
  });
}

TEST(Render, OverfullRegionShowsCount) {
  auto f = fixture(1);
  auto in = render_input_from(f.stats);
  LayoutConfig lc;
  auto geo = layout_map(f.h, accuracies_of(in), lc);
  // Pretend the root holds far more questions than its region can take.
  geo.nodes[0].n_questions = 5000;
  for (auto& s : in.per_node[geo.nodes[0].id]) s.n_questions = 5000;
  auto svg = render_map(geo, in, default_scheme(ColorMode::data_centric), {});
  EXPECT_NE(svg.find("class=\"count\""), std::string::npos);
  EXPECT_NE(svg.find(">5000</text>"), std::string::npos);
}

TEST(Render, BloomPanel) {
  auto f = fixture(1, true);
  RenderConfig rc;
  rc.show_bloom_panel = true;
  auto svg = draw(f, rc);
  auto doc = svgcheck::parse_xml(svg);
  EXPECT_EQ(svgcheck::count(*doc, "g", "bloom-level"), 6u);
  auto acc_text = [&](const std::string& level) {
    std::string out;
    auto* g = by_id(*doc, "bloom-" + level);
    svgcheck::visit(*g, [&](const svgcheck::Element& e) {
      if (e.has_class("bloom-acc")) out = e.text;
    });
    return out;
  };
  EXPECT_EQ(acc_text("creating"), "n/a");
  EXPECT_EQ(acc_text("evaluating"), "n/a");
  // Model 0 misses every even question: q0..q19 give 10 of 20 right.
  EXPECT_EQ(acc_text("remembering"), "50%");
  EXPECT_EQ(acc_text("applying"), "50%");
  // Dots per level: one per percent of classified questions.
  EXPECT_EQ(svgcheck::count(*by_id(*doc, "bloom-remembering"), "circle", "dot"), 67u);
  EXPECT_EQ(svgcheck::count(*by_id(*doc, "bloom-applying"), "circle", "dot"), 33u);
  EXPECT_EQ(svgcheck::count(*by_id(*doc, "bloom-creating"), "circle", "dot"), 0u);
}

TEST(Render, DefaultSchemesMeetContrast) {
  for (auto mode : {ColorMode::data_centric, ColorMode::model_centric}) {
    auto s = default_scheme(mode);
    EXPECT_NO_THROW(validate_scheme(s, 18, 10));
    for (const auto& [bar, bg] : contrast_pairs(s)) {
      EXPECT_GE(std::abs(luminance_oracle(bar) - luminance_oracle(bg)), 0.2) << bar << " on " << bg;
      EXPECT_NEAR(relative_luminance(bar), luminance_oracle(bar), 1e-12);
    }
  }
  auto bad = scheme_from_json(json::parse(R"({"subfield_palette": [["#EEEEEE", "#DDDDDD"]]})"));
  EXPECT_THROW(validate_scheme(bad, 1, 1), ValidationError);
  EXPECT_THROW(validate_scheme(default_scheme(ColorMode::data_centric), 19, 1), ValidationError);
}

TEST(Render, ColourModes) {
  EXPECT_EQ(auto_color_mode(1), ColorMode::data_centric);
  EXPECT_EQ(auto_color_mode(2), ColorMode::model_centric);
  auto f = fixture(2);
  auto model = draw(f, {}, ColorMode::model_centric);
  auto data = draw(f, {}, ColorMode::data_centric);
  // Model-centric bars use one colour per model.
  EXPECT_NE(model.find("class=\"bar\" x="), std::string::npos);
  EXPECT_NE(model.find(material_model_palette()[1]), std::string::npos);
  EXPECT_EQ(data.find(material_model_palette()[1]), std::string::npos);
}

TEST(Render, DeterministicOutput) {
  auto f = fixture(2, true);
  RenderConfig rc;
  rc.glyphs = parse_glyphs("hallucination,difficulty");
  rc.show_bloom_panel = true;
  auto a = draw(f, rc);
  rc.workers = 4;
  EXPECT_EQ(a, draw(f, rc));
  rc.seed = 99;
  EXPECT_NE(a, draw(f, rc));
}

TEST(Render, MismatchedStatsAreAConsistencyError) {
  auto f = fixture(1);
  auto in = render_input_from(f.stats);
  auto geo = layout_map(f.h, accuracies_of(in), LayoutConfig{});
  in.per_node.erase(f.h.root.children[0].id);
  EXPECT_THROW(render_map(geo, in, default_scheme(ColorMode::data_centric), {}), ConsistencyError);
  auto in2 = render_input_from(f.stats);
  in2.per_node[f.h.root.id][0].n_questions += 1;
  EXPECT_THROW(render_map(geo, in2, default_scheme(ColorMode::data_centric), {}), ConsistencyError);
}

TEST(Render, GlyphListParsing) {
  auto g = parse_glyphs("hallucination, speed");
  EXPECT_TRUE(g.hallucination);
  EXPECT_FALSE(g.difficulty);
  EXPECT_TRUE(g.response_time);
  EXPECT_EQ(parse_glyphs("").count(), 0u);
  EXPECT_THROW(parse_glyphs("sparkles"), ValidationError);
}

TEST(Render, LongLabelsAreShortened) {
  EXPECT_EQ(ellipsize("Thermodynamics", 20), "Thermodynamics");
  EXPECT_EQ(ellipsize("Thermodynamics", 6), "Therm\xE2\x80\xA6");
  EXPECT_EQ(xml_escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
}
