#pragma once

// SVG output for a laid-out map.

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "bluenoise.hpp"
#include "errors.hpp"
#include "layout.hpp"
#include "metrics.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace llmmaps {

// ---------------------------------------------------------------------------
// Colours
// ---------------------------------------------------------------------------

inline double srgb_channel(int v) {
  double c = v / 255.0;
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

/// Relative luminance of "#rrggbb".
inline double relative_luminance(std::string_view hex) {
  if (hex.size() != 7 || hex[0] != '#') throw ValidationError("colour '" + std::string(hex) + "' is not #rrggbb");
  auto channel = [&](std::size_t at) {
    int v = 0;
    for (std::size_t i = at; i < at + 2; ++i) {
      char c = static_cast<char>(std::tolower(static_cast<unsigned char>(hex[i])));
      int d = c >= '0' && c <= '9' ? c - '0' : c >= 'a' && c <= 'f' ? c - 'a' + 10 : -1;
      if (d < 0) throw ValidationError("colour '" + std::string(hex) + "' is not #rrggbb");
      v = v * 16 + d;
    }
    return srgb_channel(v);
  };
  return 0.2126 * channel(1) + 0.7152 * channel(3) + 0.0722 * channel(5);
}

enum class ColorMode { data_centric, model_centric };

struct ShadePair {
  std::string light;
  std::string dark;
  bool operator==(const ShadePair&) const = default;
};

struct ColorScheme {
  ColorMode mode = ColorMode::data_centric;
  std::vector<ShadePair> subfield_palette;
  std::vector<std::string> model_palette;
  ShadePair background_shades{"#F5F5F5", "#E0E0E0"};
  ShadePair root_shades{"#EEEEEE", "#616161"};
  std::string neutral = "#9E9E9E";
  double min_luminance_difference = 0.2;
};

// Material 200 (light) and 700 (dark) shades.
inline std::vector<ShadePair> material_subfield_palette() {
  return {{"#EF9A9A", "#D32F2F"}, {"#90CAF9", "#1976D2"}, {"#A5D6A7", "#388E3C"}, {"#FFCC80", "#F57C00"},
          {"#CE93D8", "#7B1FA2"}, {"#80CBC4", "#00796B"}, {"#F48FB1", "#C2185B"}, {"#9FA8DA", "#303F9F"},
          {"#FFE082", "#FFA000"}, {"#80DEEA", "#0097A7"}, {"#BCAAA4", "#5D4037"}, {"#C5E1A5", "#689F38"},
          {"#B39DDB", "#512DA8"}, {"#FFAB91", "#E64A19"}, {"#81D4FA", "#0288D1"}, {"#E6EE9C", "#AFB42B"},
          {"#FFF59D", "#FBC02D"}, {"#B0BEC5", "#455A64"}};
}

inline std::vector<std::string> material_model_palette() {
  return {"#1976D2", "#E64A19", "#388E3C", "#7B1FA2", "#00796B",
          "#C2185B", "#303F9F", "#5D4037", "#0097A7", "#455A64"};
}

inline ColorScheme default_scheme(ColorMode mode) {
  ColorScheme s;
  s.mode = mode;
  s.subfield_palette = material_subfield_palette();
  s.model_palette = material_model_palette();
  return s;
}

// Data-centric for a single model, model-centric otherwise.
inline ColorMode auto_color_mode(std::size_t k_models) {
  return k_models <= 1 ? ColorMode::data_centric : ColorMode::model_centric;
}

inline std::optional<ColorMode> parse_color_mode(std::string_view s) {
  if (s == "data" || s == "data_centric") return ColorMode::data_centric;
  if (s == "model" || s == "model_centric") return ColorMode::model_centric;
  return std::nullopt;
}

inline std::string_view to_string(ColorMode m) {
  return m == ColorMode::data_centric ? "data_centric" : "model_centric";
}

/// Every (bar, background) pair the scheme can produce.
inline std::vector<std::pair<std::string, std::string>> contrast_pairs(const ColorScheme& s) {
  std::vector<std::pair<std::string, std::string>> out;
  out.emplace_back(s.root_shades.dark, s.root_shades.light);
  if (s.mode == ColorMode::data_centric) {
    for (const auto& p : s.subfield_palette) out.emplace_back(p.dark, p.light);
  } else {
    for (const auto& m : s.model_palette) {
      out.emplace_back(m, s.background_shades.light);
      out.emplace_back(m, s.background_shades.dark);
      out.emplace_back(m, s.root_shades.light);
    }
  }
  return out;
}

inline void validate_scheme(const ColorScheme& s, std::size_t n_top, std::size_t n_models) {
  if (s.mode == ColorMode::data_centric && s.subfield_palette.size() < n_top)
    throw ValidationError("subfield palette has " + std::to_string(s.subfield_palette.size()) + " entries for " +
                          std::to_string(n_top) + " top-level subfields");
  if (s.mode == ColorMode::model_centric && s.model_palette.size() < n_models)
    throw ValidationError("model palette has " + std::to_string(s.model_palette.size()) + " entries for " +
                          std::to_string(n_models) + " models");
  for (const auto& [bar, bg] : contrast_pairs(s)) {
    double d = std::abs(relative_luminance(bar) - relative_luminance(bg));
    if (d < s.min_luminance_difference)
      throw ValidationError("colours " + bar + " and " + bg + " differ in luminance by only " + fmt3(d));
  }
}

inline json to_json(const ColorScheme& s) {
  json pal = json::array();
  for (const auto& p : s.subfield_palette) pal.push_back({p.light, p.dark});
  return {{"mode", to_string(s.mode)},
          {"subfield_palette", pal},
          {"model_palette", s.model_palette},
          {"background_shades", {s.background_shades.light, s.background_shades.dark}},
          {"root_shades", {s.root_shades.light, s.root_shades.dark}},
          {"neutral", s.neutral},
          {"min_luminance_difference", s.min_luminance_difference}};
}

// Keys absent from `j` keep the built-in values.
inline ColorScheme scheme_from_json(const json& j, ColorScheme s = default_scheme(ColorMode::data_centric)) {
  if (!j.is_object()) throw ParseError("colour scheme: expected an object");
  auto pair = [](const json& v, const char* what) {
    if (!v.is_array() || v.size() != 2) throw ParseError(std::string("colour scheme: ") + what + " must be [light, dark]");
    return ShadePair{v[0].get<std::string>(), v[1].get<std::string>()};
  };
  if (auto it = j.find("mode"); it != j.end()) {
    auto m = parse_color_mode(it->get<std::string>());
    if (!m) throw ParseError("colour scheme: unknown mode '" + it->get<std::string>() + "'");
    s.mode = *m;
  }
  if (auto it = j.find("subfield_palette"); it != j.end()) {
    s.subfield_palette.clear();
    for (const auto& p : *it) s.subfield_palette.push_back(pair(p, "subfield_palette entry"));
  }
  if (auto it = j.find("model_palette"); it != j.end()) s.model_palette = it->get<std::vector<std::string>>();
  if (auto it = j.find("background_shades"); it != j.end()) s.background_shades = pair(*it, "background_shades");
  if (auto it = j.find("root_shades"); it != j.end()) s.root_shades = pair(*it, "root_shades");
  if (auto it = j.find("neutral"); it != j.end()) s.neutral = it->get<std::string>();
  if (auto it = j.find("min_luminance_difference"); it != j.end()) s.min_luminance_difference = it->get<double>();
  return s;
}

// ---------------------------------------------------------------------------
// SVG text helpers
// ---------------------------------------------------------------------------

inline std::string xml_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default:
        // Control characters other than tab/newline are not allowed in XML 1.0.
        if (static_cast<unsigned char>(c) < 0x20 && c != '\t' && c != '\n' && c != '\r') out += ' ';
        else out += c;
    }
  }
  return out;
}

inline std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (char c : s)
    if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) ++n;
  return n;
}

// At most `max_chars` code points; truncated text ends in an ellipsis.
inline std::string ellipsize(std::string_view s, std::size_t max_chars) {
  if (utf8_length(s) <= max_chars) return std::string(s);
  if (max_chars == 0) return "";
  std::size_t keep = max_chars - 1, count = 0, i = 0;
  for (; i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) {
      if (count == keep) break;
      ++count;
    }
  }
  return trim(s.substr(0, i)) + "\xE2\x80\xA6";
}

inline std::string percent_label(std::optional<double> acc) {
  if (!acc) return "n/a";
  return std::to_string(static_cast<long>(std::floor(*acc * 100.0 + 0.5))) + "%";
}

inline std::string_view svg_anchor(TextAlign a) {
  return a == TextAlign::start ? "start" : a == TextAlign::middle ? "middle" : "end";
}

// ---------------------------------------------------------------------------
// Glyphs
// ---------------------------------------------------------------------------

inline constexpr int kHallucinationRings = 4;
inline constexpr int kDifficultySegments = 5;
inline constexpr double kGlyphSize = 12.0;

inline int filled_rings(double score) {
  return std::clamp(static_cast<int>(std::floor(score * kHallucinationRings + 0.5)), 0, kHallucinationRings);
}

inline int filled_segments(double mean_difficulty) {
  return std::clamp(static_cast<int>(std::floor(mean_difficulty + 0.5)), 0, kDifficultySegments);
}

// Needle tip for a normalized time: 0 points at the left stop, 1 at the right.
inline Point gauge_needle_tip(Point centre, double radius, double t) {
  double theta = std::numbers::pi * std::clamp(t, 0.0, 1.0);
  return {centre.x - radius * std::cos(theta), centre.y - radius * std::sin(theta)};
}

/// Face with concentric rings filled from the inside out. Absent scores give
/// a grey icon with an "n/a" tooltip.
inline std::string render_hallucination_glyph(std::optional<double> score, Point c, const std::string& ink) {
  std::string grey = "#BDBDBD";
  const std::string& col = score ? ink : grey;
  int filled = score ? filled_rings(*score) : 0;
  std::string s = "<g class=\"glyph hallucination" + std::string(score ? "" : " na") + "\">";
  s += score ? "<title>hallucination " + fmt3(*score) + "</title>" : "<title>n/a</title>";
  double step = kGlyphSize / 2 / (kHallucinationRings + 0.5);
  for (int i = 0; i < kHallucinationRings; ++i) {
    bool on = i < filled;
    s += "<circle class=\"hring" + std::string(on ? " filled" : "") + "\" cx=\"" + fmt3(c.x) + "\" cy=\"" + fmt3(c.y) +
         "\" r=\"" + fmt3(step * (i + 1)) + "\" fill=\"none\" stroke=\"" + (on ? col : std::string("#EEEEEE")) +
         "\" stroke-width=\"" + fmt3(step * 0.8) + "\"/>";
  }
  double r = kGlyphSize / 2;
  s += "<circle class=\"smiley\" cx=\"" + fmt3(c.x) + "\" cy=\"" + fmt3(c.y) + "\" r=\"" + fmt3(r) +
       "\" fill=\"none\" stroke=\"" + col + "\" stroke-width=\"0.8\"/>";
  for (double dx : {-0.35, 0.35})
    s += "<circle class=\"smiley-eye\" cx=\"" + fmt3(c.x + dx * r) + "\" cy=\"" + fmt3(c.y - 0.3 * r) + "\" r=\"" +
         fmt3(0.1 * r) + "\" fill=\"" + col + "\"/>";
  s += "<path class=\"smiley-mouth\" d=\"M" + fmt3(c.x - 0.45 * r) + " " + fmt3(c.y + 0.25 * r) + " Q" + fmt3(c.x) + " " +
       fmt3(c.y + 0.7 * r) + " " + fmt3(c.x + 0.45 * r) + " " + fmt3(c.y + 0.25 * r) + "\" fill=\"none\" stroke=\"" +
       col + "\" stroke-width=\"0.8\"/>";
  return s + "</g>";
}

/// Five-segment progress bar, round(mean) segments filled.
inline std::string render_difficulty_glyph(std::optional<double> mean_difficulty, Point c, const std::string& ink) {
  int filled = mean_difficulty ? filled_segments(*mean_difficulty) : 0;
  std::string s = "<g class=\"glyph difficulty" + std::string(mean_difficulty ? "" : " na") + "\">";
  s += mean_difficulty ? "<title>difficulty " + fmt3(*mean_difficulty) + "</title>" : "<title>n/a</title>";
  double seg_w = 2.0, gap = 0.5, h = 8.0;
  double x0 = c.x - kGlyphSize / 2;
  for (int i = 0; i < kDifficultySegments; ++i) {
    bool on = i < filled;
    s += "<rect class=\"dseg" + std::string(on ? " filled" : "") + "\" x=\"" + fmt3(x0 + i * (seg_w + gap)) +
         "\" y=\"" + fmt3(c.y - h / 2) + "\" width=\"" + fmt3(seg_w) + "\" height=\"" + fmt3(h) + "\" fill=\"" +
         (on ? ink : std::string("#FFFFFF")) + "\" stroke=\"" + (mean_difficulty ? ink : std::string("#BDBDBD")) +
         "\" stroke-width=\"0.5\"/>";
  }
  return s + "</g>";
}

/// Semicircular gauge; the needle turns 180 degrees times the value from
/// the left stop.
inline std::string render_speed_gauge(std::optional<double> norm_time, Point c, const std::string& ink) {
  double r = kGlyphSize / 2;
  Point base{c.x, c.y + r / 2};
  const std::string col = norm_time ? ink : std::string("#BDBDBD");
  std::string s = "<g class=\"glyph speed" + std::string(norm_time ? "" : " na") + "\">";
  s += norm_time ? "<title>response time " + fmt3(*norm_time) + "</title>" : "<title>n/a</title>";
  s += "<path class=\"gauge\" d=\"M" + fmt3(base.x - r) + " " + fmt3(base.y) + " A" + fmt3(r) + " " + fmt3(r) +
       " 0 0 1 " + fmt3(base.x + r) + " " + fmt3(base.y) + " Z\" fill=\"#FFFFFF\" stroke=\"" + col +
       "\" stroke-width=\"0.8\"/>";
  if (norm_time) {
    Point tip = gauge_needle_tip(base, r * 0.9, *norm_time);
    s += "<line class=\"needle\" x1=\"" + fmt3(base.x) + "\" y1=\"" + fmt3(base.y) + "\" x2=\"" + fmt3(tip.x) +
         "\" y2=\"" + fmt3(tip.y) + "\" stroke=\"" + col + "\" stroke-width=\"1\"/>";
  }
  return s + "</g>";
}

// ---------------------------------------------------------------------------
// Render inputs
// ---------------------------------------------------------------------------

struct GlyphSet {
  bool hallucination = false;
  bool difficulty = false;
  bool response_time = false;

  std::size_t count() const { return hallucination + difficulty + response_time; }
};

inline GlyphSet parse_glyphs(std::string_view list) {
  GlyphSet g;
  std::string s(list);
  std::size_t start = 0;
  while (start <= s.size()) {
    auto comma = s.find(',', start);
    auto item = trim(std::string_view(s).substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (item == "hallucination") g.hallucination = true;
    else if (item == "difficulty") g.difficulty = true;
    else if (item == "response-time" || item == "response_time" || item == "speed") g.response_time = true;
    else if (!item.empty()) throw ValidationError("unknown glyph '" + item + "'");
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return g;
}

struct RenderConfig {
  bool show_bloom_panel = false;
  GlyphSet glyphs;
  std::string font_family = "Helvetica, Arial, sans-serif";
  double title_font = 20;
  double label_font = 11;
  double acc_font = 9;
  double legend_font = 12;
  double dot_radius = 2.0;
  std::optional<std::string> title;
  std::uint64_t seed = 42;
  int relax_iters = 50;
  double flatness = kDefaultFlatness;
  std::size_t workers = 1;
};

// Stats as the renderer consumes them.
struct RenderInput {
  std::vector<std::string> model_ids;
  std::vector<std::string> dataset_names;
  std::vector<std::optional<double>> overall_accuracy;  // per model
  std::map<std::string, std::vector<SubfieldStats>> per_node;  // per model, in model order
  std::map<std::string, SubfieldStats> glyph_stats;           // pooled over models
  std::optional<BloomStats> bloom_counts;                     // question counts per level
  std::vector<std::optional<BloomStats>> bloom;               // per model
};

inline RenderInput render_input_from(const StatsBundle& b) {
  RenderInput in;
  in.dataset_names = b.datasets;
  for (const auto& run : b.runs) {
    in.model_ids.push_back(run.model_id);
    in.overall_accuracy.push_back(run.overall_accuracy);
    for (const auto& s : run.nodes) in.per_node[s.node_id].push_back(s);
    in.bloom.push_back(run.bloom);
    if (run.bloom && !in.bloom_counts) in.bloom_counts = run.bloom;
  }
  for (const auto& s : b.pooled) in.glyph_stats.emplace(s.node_id, s);
  return in;
}

inline NodeAccuracies accuracies_of(const RenderInput& in) {
  NodeAccuracies acc;
  for (const auto& [id, stats] : in.per_node)
    for (const auto& s : stats) acc[id].push_back(s.accuracy);
  return acc;
}

// ---------------------------------------------------------------------------
// Bloom panel
// ---------------------------------------------------------------------------

namespace detail {

struct DotResult {
  std::vector<Point> points;
  double radius = 0;
  bool overflow = false;
};

inline DotResult place_dots(const ClosedPath& path, std::size_t n, std::uint64_t seed, const RenderConfig& cfg) {
  DotResult r;
  if (n == 0) return r;
  BlueNoiseParams p;
  p.dot_radius = cfg.dot_radius;
  p.relax_iters = cfg.relax_iters;
  try {
    Region region(path, cfg.flatness);
    auto set = sample_with_shrink(region, n, seed, p);
    r.points = std::move(set.points);
    r.radius = set.dot_radius;
  } catch (const CapacityError&) {
    r.overflow = true;
  } catch (const DegenerateRegionError&) {
    r.overflow = true;
  }
  return r;
}

inline std::string dots_svg(const DotResult& d, std::size_t n, const Rect& box, const std::string& colour,
                            const RenderConfig& cfg) {
  std::string s;
  if (d.overflow) {
    Point c = box.center();
    s += "<text class=\"count\" x=\"" + fmt3(c.x) + "\" y=\"" + fmt3(c.y) + "\" text-anchor=\"middle\" dominant-baseline=\"middle\" font-size=\"" +
         fmt3(cfg.acc_font) + "\" fill=\"" + colour + "\">" + std::to_string(n) + "</text>";
    return s;
  }
  for (const auto& p : d.points)
    s += "<circle class=\"dot\" cx=\"" + fmt3(p.x) + "\" cy=\"" + fmt3(p.y) + "\" r=\"" + fmt3(d.radius) + "\" fill=\"" +
         colour + "\"/>";
  return s;
}

}  // namespace detail

struct BloomBand {
  BloomLevel level;
  ClosedPath shape;
  Rect box;
};

// Six bands, Remembering at the widest base and Creating at the apex.
inline std::vector<BloomBand> bloom_bands(const Rect& area) {
  std::vector<BloomBand> bands;
  double n = static_cast<double>(kBloomLevels.size());
  double band_h = area.h / n;
  double base_w = area.w, apex_w = area.w * 0.25;
  double cx = area.x + area.w / 2;
  for (std::size_t i = 0; i < kBloomLevels.size(); ++i) {
    double bottom_w = base_w - (base_w - apex_w) * static_cast<double>(i) / n;
    double top_w = base_w - (base_w - apex_w) * static_cast<double>(i + 1) / n;
    double y = area.bottom() - static_cast<double>(i + 1) * band_h;
    // A hair of space between bands keeps the regions disjoint.
    double gap = 1.0;
    bands.push_back({kBloomLevels[i], trapezoid_path(cx, y + gap / 2, band_h - gap, top_w, bottom_w),
                     {cx - bottom_w / 2, y, bottom_w, band_h}});
  }
  return bands;
}

inline std::string render_bloom_panel(const std::optional<BloomStats>& counts,
                                      const std::vector<std::optional<BloomStats>>& per_model, const Rect& box,
                                      const ColorScheme& scheme, const RenderConfig& cfg) {
  std::string s = "<g class=\"bloom-panel\">";
  s += "<text class=\"bloom-title\" x=\"" + fmt3(box.x) + "\" y=\"" + fmt3(box.y + 12) + "\" font-size=\"" +
       fmt3(cfg.legend_font) + "\" fill=\"#212121\">Bloom&apos;s taxonomy</text>";
  double label_w = 130;
  Rect area{box.x, box.y + 20, box.w - label_w, box.h - 20};
  auto bands = bloom_bands(area);
  std::size_t total = counts ? counts->total_questions : 0;
  for (std::size_t i = 0; i < bands.size(); ++i) {
    const auto& band = bands[i];
    std::string fill, ink;
    if (scheme.mode == ColorMode::data_centric) {
      const auto& p = scheme.subfield_palette[i % scheme.subfield_palette.size()];
      fill = p.light;
      ink = p.dark;
    } else {
      fill = i % 2 == 0 ? scheme.background_shades.light : scheme.background_shades.dark;
      ink = scheme.root_shades.dark;
    }
    std::string name(to_string(band.level));
    s += "<g class=\"bloom-level\" id=\"bloom-" + fold_case(name) + "\">";
    s += "<path class=\"bloom-band\" d=\"" + svg_path_data(band.shape) + "\" fill=\"" + fill + "\"/>";
    std::size_t n_level = counts ? counts->at(band.level).n_questions : 0;
    std::size_t dots = percent_dots(n_level, total);
    auto d = detail::place_dots(band.shape, dots, derive_seed(cfg.seed, "bloom:" + name), cfg);
    s += detail::dots_svg(d, dots, band.box, ink, cfg);
    std::vector<std::string> parts;
    for (const auto& b : per_model) parts.push_back(b && n_level ? percent_label(b->at(band.level).accuracy) : "n/a");
    std::string label = parts.empty() ? "n/a" : join(parts, " / ");
    double ty = band.box.y + band.box.h / 2;
    s += "<text class=\"bloom-name\" x=\"" + fmt3(area.right() + 8) + "\" y=\"" + fmt3(ty - 1) + "\" font-size=\"" +
         fmt3(cfg.acc_font) + "\" fill=\"#212121\">" + xml_escape(name) + "</text>";
    s += "<text class=\"bloom-acc\" x=\"" + fmt3(area.right() + 8) + "\" y=\"" + fmt3(ty + cfg.acc_font) +
         "\" font-size=\"" + fmt3(cfg.acc_font) + "\" fill=\"" + ink + "\">" + xml_escape(label) + "</text>";
    s += "</g>";
  }
  return s + "</g>";
}

// ---------------------------------------------------------------------------
// Map
// ---------------------------------------------------------------------------

inline std::string map_title(const RenderInput& in, const RenderConfig& cfg) {
  if (cfg.title) return *cfg.title;
  return join(in.model_ids, ", ") + " on " + join(in.dataset_names, ", ");
}

namespace detail {

struct NodeColours {
  std::string fill;
  std::string ink;  // labels, dots and glyphs
  std::vector<std::string> bars;
};

inline NodeColours node_colours(const NodeGeometry& n, const ColorScheme& s, std::size_t k) {
  NodeColours c;
  if (s.mode == ColorMode::data_centric) {
    const ShadePair& p = n.top_index < 0 ? s.root_shades
                                         : s.subfield_palette[static_cast<std::size_t>(n.top_index) % s.subfield_palette.size()];
    c.fill = p.light;
    c.ink = p.dark;
    c.bars.assign(k, p.dark);
  } else {
    c.fill = n.top_index < 0 ? s.root_shades.light
                             : (n.top_index % 2 == 0 ? s.background_shades.light : s.background_shades.dark);
    c.ink = s.root_shades.dark;
    for (std::size_t i = 0; i < k; ++i) c.bars.push_back(s.model_palette[i % s.model_palette.size()]);
  }
  return c;
}

inline std::string text_el(const char* cls, Point p, TextAlign a, double size, const std::string& fill,
                           const std::string& body) {
  return "<text class=\"" + std::string(cls) + "\" x=\"" + fmt3(p.x) + "\" y=\"" + fmt3(p.y) + "\" text-anchor=\"" +
         std::string(svg_anchor(a)) + "\" dominant-baseline=\"middle\" font-size=\"" + fmt3(size) + "\" fill=\"" +
         fill + "\">" + xml_escape(body) + "</text>";
}

inline std::string rect_el(const char* cls, const Rect& r, const std::string& extra) {
  return "<rect class=\"" + std::string(cls) + "\" x=\"" + fmt3(r.x) + "\" y=\"" + fmt3(r.y) + "\" width=\"" +
         fmt3(r.w) + "\" height=\"" + fmt3(r.h) + "\" " + extra + "/>";
}

}  // namespace detail

/// Complete SVG document. Output depends only on the inputs.
inline std::string render_map(const MapGeometry& geo, const RenderInput& in, const ColorScheme& scheme,
                              const RenderConfig& cfg) {
  std::size_t k = in.model_ids.size();
  if (k != geo.k_models)
    throw ConsistencyError("geometry has " + std::to_string(geo.k_models) + " bar(s) per node, stats have " +
                           std::to_string(k) + " model(s)");
  for (const auto& n : geo.nodes) {
    auto it = in.per_node.find(n.id);
    if (it == in.per_node.end() || it->second.size() != k)
      throw ConsistencyError("no stats for node '" + n.id + "'");
    for (const auto& s : it->second)
      if (s.n_questions != n.n_questions)
        throw ConsistencyError("node '" + n.id + "': geometry has " + std::to_string(n.n_questions) +
                               " questions, stats for " + s.model_id + " have " + std::to_string(s.n_questions));
  }
  std::size_t n_top = 0;
  for (const auto& n : geo.nodes) n_top = std::max(n_top, static_cast<std::size_t>(n.top_index + 1));
  validate_scheme(scheme, n_top, k);

  // Dots are the expensive part; regions are independent.
  std::vector<detail::DotResult> dots(geo.nodes.size());
  parallel_for(geo.nodes.size(), cfg.workers, [&](std::size_t i) {
    const auto& n = geo.nodes[i];
    dots[i] = detail::place_dots(n.dot_region, n.n_questions, derive_seed(cfg.seed, n.id), cfg);
  });

  std::string out;
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" + fmt3(geo.width) + "\" height=\"" +
         fmt3(geo.height) + "\" viewBox=\"0 0 " + fmt3(geo.width) + " " + fmt3(geo.height) + "\" font-family=\"" +
         xml_escape(cfg.font_family) + "\">\n";
  std::string title = map_title(in, cfg);
  out += "<title>" + xml_escape(title) + "</title>\n";
  out += "<desc>Stratified accuracy map: " + std::to_string(geo.nodes.size()) + " subfields, " + std::to_string(k) +
         " model(s)</desc>\n";
  out += "<defs><pattern id=\"hatch\" patternUnits=\"userSpaceOnUse\" width=\"6\" height=\"6\">"
         "<path d=\"M0 6 L6 0\" stroke=\"#BDBDBD\" stroke-width=\"1\"/></pattern></defs>\n";
  out += detail::rect_el("background", {0, 0, geo.width, geo.height}, "fill=\"#FFFFFF\"") + "\n";

  // Title and legend.
  std::size_t title_chars = static_cast<std::size_t>(std::max(8.0, geo.title_box.w / (cfg.title_font * 0.55)));
  out += detail::text_el("title", {geo.center_x, geo.title_box.y + geo.title_box.h / 2}, TextAlign::middle,
                         cfg.title_font, "#212121", ellipsize(title, title_chars)) +
         "\n";
  out += "<g class=\"legend\">";
  {
    double entry_w = 200;
    double x = geo.center_x - entry_w * static_cast<double>(k) / 2;
    double y = geo.legend_box.y + geo.legend_box.h / 2;
    for (std::size_t i = 0; i < k; ++i) {
      std::string colour = scheme.mode == ColorMode::model_centric ? scheme.model_palette[i % scheme.model_palette.size()]
                                                                   : scheme.root_shades.dark;
      out += "<g class=\"legend-entry\">";
      out += detail::rect_el("swatch", {x, y - 5, 10, 10}, "fill=\"" + colour + "\"");
      out += detail::text_el("legend-label", {x + 14, y}, TextAlign::start, cfg.legend_font, "#212121",
                             ellipsize(in.model_ids[i], 18) + ": " + percent_label(in.overall_accuracy[i]));
      out += "</g>";
      x += entry_w;
    }
  }
  out += "</g>\n";

  // Encapsulations first so nodes draw on top.
  out += "<g class=\"encapsulations\">";
  for (const auto& n : geo.nodes) {
    if (!n.encapsulation) continue;
    auto c = detail::node_colours(n, scheme, k);
    out += "<path class=\"encapsulation\" d=\"" + svg_path_data(*n.encapsulation) + "\" fill=\"" + c.fill +
           "\" fill-opacity=\"0.35\" stroke=\"" + c.fill + "\" stroke-width=\"1\"/>";
  }
  out += "</g>\n";

  double glyph_space = cfg.glyphs.count() ? static_cast<double>(cfg.glyphs.count()) * (kGlyphSize + 3) + 4 : 0;
  for (std::size_t i = 0; i < geo.nodes.size(); ++i) {
    const auto& n = geo.nodes[i];
    const auto& stats = in.per_node.at(n.id);
    auto c = detail::node_colours(n, scheme, k);
    out += "<g class=\"subfield\" id=\"" + xml_escape(n.id) + "\">";
    out += detail::rect_el("node", n.rect,
                           "rx=\"3\" fill=\"" + (n.empty ? std::string("url(#hatch)") : c.fill) + "\" stroke=\"" +
                               c.ink + "\" stroke-width=\"0.8\"");
    // The root's glyphs sit above its box; side nodes share the label band.
    double label_room = n.rect.w - 10 - (n.glyph_dir != 0 ? glyph_space : 0.0);
    auto max_chars = static_cast<std::size_t>(std::max(1.0, label_room / (cfg.label_font * 0.62)));
    out += "<title>" + xml_escape(n.label) + "</title>";
    out += detail::text_el("label", n.label_anchor, n.label_align, cfg.label_font, "#212121",
                           ellipsize(n.label, max_chars));
    for (std::size_t m = 0; m < n.bars.size(); ++m) {
      out += detail::rect_el("bar", n.bars[m], "fill=\"" + c.bars[m] + "\"");
      out += detail::text_el("acc", n.acc_anchors[m], n.acc_align, std::min(cfg.acc_font, n.bars[m].h + 1), c.bars[m],
                             percent_label(stats[m].accuracy));
    }
    out += "<g class=\"dots\">" + detail::dots_svg(dots[i], n.n_questions, n.dot_box, c.ink, cfg) + "</g>";
    if (cfg.glyphs.count() && !n.empty) {
      auto gs = in.glyph_stats.find(n.id);
      const SubfieldStats* g = gs == in.glyph_stats.end() ? &stats.front() : &gs->second;
      std::size_t slots = cfg.glyphs.count();
      double pitch = kGlyphSize + 3;
      auto centre = [&](std::size_t slot) -> Point {
        double off = kGlyphSize / 2 + static_cast<double>(slot) * pitch;
        if (n.glyph_dir == 0)
          return {n.glyph_anchor.x - (static_cast<double>(slots) - 1) * pitch / 2 + static_cast<double>(slot) * pitch,
                  n.glyph_anchor.y};
        return {n.glyph_anchor.x + n.glyph_dir * off, n.glyph_anchor.y};
      };
      std::size_t slot = 0;
      out += "<g class=\"glyphs\">";
      if (cfg.glyphs.hallucination) out += render_hallucination_glyph(g->hallucination, centre(slot++), c.ink);
      if (cfg.glyphs.difficulty) out += render_difficulty_glyph(g->mean_difficulty, centre(slot++), c.ink);
      if (cfg.glyphs.response_time) out += render_speed_gauge(g->mean_response_time_norm, centre(slot++), c.ink);
      out += "</g>";
    }
    out += "</g>\n";
  }

  if (cfg.show_bloom_panel && geo.bloom_box)
    out += render_bloom_panel(in.bloom_counts, in.bloom, *geo.bloom_box, scheme, cfg) + "\n";
  out += "</svg>\n";
  return out;
}

/// Dot positions per node as JSON, for debugging.
inline json dump_dots(const MapGeometry& geo, const RenderConfig& cfg) {
  json out = json::object();
  for (const auto& n : geo.nodes) {
    auto d = detail::place_dots(n.dot_region, n.n_questions, derive_seed(cfg.seed, n.id), cfg);
    json pts = json::array();
    for (const auto& p : d.points) pts.push_back(to_json(p));
    out[n.id] = {{"n", n.n_questions}, {"dot_radius", d.radius}, {"overflow", d.overflow}, {"points", pts}};
  }
  return out;
}

}  // namespace llmmaps
