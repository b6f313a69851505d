#pragma once

// Mirror-symmetric horizontal tree layout: the root sits in the middle,
// its children are split over a left and a right half, and every level
// occupies a column further out.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "hierarchy.hpp"

namespace llmmaps {

struct LayoutConfig {
  int h_ln = 3;  // leaves per stack
  bool show_empty_leaves = false;
  double page_width = 2400;
  double node_width = 170;
  double min_node_width = 80;
  double node_height = 72;
  double hgap = 18;
  double vgap = 10;
  double leaf_gap = 6;
  double encapsulation_pad = 6;
  double bar_height_fraction = 0.28;
  std::size_t k_models = 1;
  double margin = 24;
  double inset = 5;
  double label_band = 18;
  double acc_label_width = 30;
  double title_height = 30;
  double legend_height = 22;
  double min_figure_width = 720;
  bool reserve_bloom_panel = false;
  double bloom_width = 360;
  double bloom_height = 240;
};

inline void validate_layout_config(const LayoutConfig& c) {
  if (c.h_ln < 1) throw ValidationError("h_ln must be at least 1");
  if (c.k_models < 1) throw ValidationError("k_models must be at least 1");
  if (!(c.bar_height_fraction > 0 && c.bar_height_fraction < 1))
    throw ValidationError("bar_height_fraction must lie in (0, 1)");
  if (!(c.node_height > 0) || !(c.min_node_width > 0) || c.node_width < c.min_node_width)
    throw ValidationError("node dimensions must be positive with node_width >= min_node_width");
  if (!(c.page_width > 4 * (c.node_width + c.hgap)))
    throw ValidationError("page_width must exceed four node columns");
  if (c.hgap <= 0 || c.vgap <= 0 || c.leaf_gap < 0) throw ValidationError("gaps must be positive");
  if (!(c.encapsulation_pad > 0 && c.encapsulation_pad < c.hgap && c.encapsulation_pad < c.vgap))
    throw ValidationError("encapsulation_pad must be positive and smaller than the gaps");
  double band = c.bar_height_fraction * c.node_height;
  if (c.label_band + band + 2 * c.inset + 4 >= c.node_height)
    throw ValidationError("node_height leaves no room for the dot region");
}

inline json to_json(const LayoutConfig& c) {
  return {{"h_ln", c.h_ln},
          {"show_empty_leaves", c.show_empty_leaves},
          {"page_width", c.page_width},
          {"node_width", c.node_width},
          {"min_node_width", c.min_node_width},
          {"node_height", c.node_height},
          {"hgap", c.hgap},
          {"vgap", c.vgap},
          {"leaf_gap", c.leaf_gap},
          {"encapsulation_pad", c.encapsulation_pad},
          {"bar_height_fraction", c.bar_height_fraction},
          {"k_models", c.k_models},
          {"margin", c.margin},
          {"reserve_bloom_panel", c.reserve_bloom_panel}};
}

// Keys absent from `j` keep their defaults.
inline LayoutConfig layout_config_from_json(const json& j, LayoutConfig c = {}) {
  if (!j.is_object()) throw ParseError("layout config: expected an object");
  auto num = [&](const char* key, double& v) {
    if (auto it = j.find(key); it != j.end()) v = it->get<double>();
  };
  if (auto it = j.find("h_ln"); it != j.end()) c.h_ln = it->get<int>();
  if (auto it = j.find("show_empty_leaves"); it != j.end()) c.show_empty_leaves = it->get<bool>();
  if (auto it = j.find("k_models"); it != j.end()) c.k_models = it->get<std::size_t>();
  if (auto it = j.find("reserve_bloom_panel"); it != j.end()) c.reserve_bloom_panel = it->get<bool>();
  num("page_width", c.page_width);
  num("node_width", c.node_width);
  num("min_node_width", c.min_node_width);
  num("node_height", c.node_height);
  num("hgap", c.hgap);
  num("vgap", c.vgap);
  num("leaf_gap", c.leaf_gap);
  num("encapsulation_pad", c.encapsulation_pad);
  num("bar_height_fraction", c.bar_height_fraction);
  num("margin", c.margin);
  validate_layout_config(c);
  return c;
}

// ---------------------------------------------------------------------------
// Halves and stacks
// ---------------------------------------------------------------------------

struct HalfItem {
  std::string label;
  std::size_t leaf_count = 0;
};

/// Greedy balance by leaf count: largest first (ties by label), each to the
/// lighter side, ties to the left. Each side keeps input order.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_halves(const std::vector<HalfItem>& items) {
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (items[a].leaf_count != items[b].leaf_count) return items[a].leaf_count > items[b].leaf_count;
    return items[a].label < items[b].label;
  });
  std::vector<std::size_t> left, right;
  std::size_t lsum = 0, rsum = 0;
  for (auto i : order) {
    if (lsum <= rsum) {
      left.push_back(i);
      lsum += items[i].leaf_count;
    } else {
      right.push_back(i);
      rsum += items[i].leaf_count;
    }
  }
  std::sort(left.begin(), left.end());
  std::sort(right.begin(), right.end());
  return {left, right};
}

/// Groups of at most h_ln consecutive leaves. Each group is one stack laid
/// out outward from the parent; stacks follow each other downward.
inline std::vector<std::vector<std::size_t>> stack_leaves(std::size_t n, int h_ln) {
  if (h_ln < 1) throw ValidationError("h_ln must be at least 1");
  std::vector<std::vector<std::size_t>> groups;
  auto per = static_cast<std::size_t>(h_ln);
  for (std::size_t i = 0; i < n; ++i) {
    if (i % per == 0) groups.emplace_back();
    groups.back().push_back(i);
  }
  return groups;
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

enum class Side { center, left, right };
enum class TextAlign { start, middle, end };

inline std::string_view to_string(Side s) {
  switch (s) {
    case Side::center: return "center";
    case Side::left: return "left";
    case Side::right: return "right";
  }
  return "center";
}

inline std::string_view to_string(TextAlign a) {
  switch (a) {
    case TextAlign::start: return "start";
    case TextAlign::middle: return "middle";
    case TextAlign::end: return "end";
  }
  return "start";
}

inline TextAlign mirrored(TextAlign a) {
  return a == TextAlign::start ? TextAlign::end : a == TextAlign::end ? TextAlign::start : a;
}

struct NodeGeometry {
  std::string id;
  std::string label;
  int depth = 0;
  Side side = Side::center;
  int top_index = -1;  // index of the top-level ancestor among the root's children
  bool leaf = false;
  bool empty = false;    // no questions in the subtree
  bool stacked = false;  // leaf of a parent whose children are all leaves
  std::size_t n_questions = 0;
  Rect rect;
  std::optional<ClosedPath> encapsulation;  // parents of stacked leaves
  std::optional<Rect> encapsulation_box;
  Rect bar_track;                // full-accuracy extent of the bar band
  std::vector<Rect> bars;        // one per model; empty nodes have none
  std::vector<Point> acc_anchors;
  TextAlign acc_align = TextAlign::end;
  ClosedPath dot_region;
  Rect dot_box;
  Point label_anchor;
  TextAlign label_align = TextAlign::start;
  Point glyph_anchor;
  int glyph_dir = -1;  // glyph row grows from the anchor in this x direction; 0 = centred

  bool operator==(const NodeGeometry&) const = default;
};

struct MapGeometry {
  double width = 0;
  double height = 0;
  double center_x = 0;
  double node_width = 0;
  std::size_t k_models = 1;
  Rect title_box;
  Rect legend_box;
  Rect map_box;
  std::optional<Rect> bloom_box;
  std::vector<NodeGeometry> nodes;  // pre-order, root first

  const NodeGeometry* find(std::string_view id) const {
    for (const auto& n : nodes)
      if (n.id == id) return &n;
    return nullptr;
  }
};

// Per node id, one accuracy per displayed model.
using NodeAccuracies = std::map<std::string, std::vector<std::optional<double>>>;

namespace detail {

inline void translate(NodeGeometry& g, double dx, double dy) {
  auto mv = [&](Point& p) { p = {p.x + dx, p.y + dy}; };
  auto mvr = [&](Rect& r) { r.x += dx, r.y += dy; };
  auto mvp = [&](ClosedPath& p) {
    for (auto& s : p.segments) mv(s.p0), mv(s.p1), mv(s.p2), mv(s.p3);
  };
  mvr(g.rect);
  if (g.encapsulation) mvp(*g.encapsulation);
  if (g.encapsulation_box) mvr(*g.encapsulation_box);
  mvr(g.bar_track);
  for (auto& b : g.bars) mvr(b);
  for (auto& a : g.acc_anchors) mv(a);
  mvp(g.dot_region);
  mvr(g.dot_box);
  mv(g.label_anchor);
  mv(g.glyph_anchor);
}

inline void reflect(NodeGeometry& g, double axis) {
  g.rect = reflect_x(g.rect, axis);
  if (g.encapsulation) g.encapsulation = reflect_x(*g.encapsulation, axis);
  if (g.encapsulation_box) g.encapsulation_box = reflect_x(*g.encapsulation_box, axis);
  g.bar_track = reflect_x(g.bar_track, axis);
  for (auto& b : g.bars) b = reflect_x(b, axis);
  for (auto& a : g.acc_anchors) a = reflect_x(a, axis);
  g.acc_align = mirrored(g.acc_align);
  g.dot_region = reflect_x(g.dot_region, axis);
  g.dot_box = reflect_x(g.dot_box, axis);
  g.label_anchor = reflect_x(g.label_anchor, axis);
  g.label_align = mirrored(g.label_align);
  g.glyph_anchor = reflect_x(g.glyph_anchor, axis);
  g.glyph_dir = -g.glyph_dir;
  if (g.side == Side::right) g.side = Side::left;
  else if (g.side == Side::left) g.side = Side::right;
}

// Lays out one half in a local frame: x measured from the root centre
// outward (to the right), y from the top of the half.
class HalfLayout {
 public:
  HalfLayout(const LayoutConfig& cfg, double node_w, const NodeAccuracies& acc)
      : cfg_(cfg), node_w_(node_w), acc_(acc) {}

  double column_x(int depth) const { return node_w_ / 2 + cfg_.hgap + (depth - 1) * (node_w_ + cfg_.hgap); }

  // Returns the block height.
  double place(const KnowledgeNode& n, int depth, double top, int top_index) {
    bool leaf_only = !n.is_leaf() && std::all_of(n.children.begin(), n.children.end(),
                                                 [](const KnowledgeNode& c) { return c.is_leaf(); });
    if (n.is_leaf()) {
      emit(n, depth, {column_x(depth), top, node_w_, cfg_.node_height}, top_index, false);
      return cfg_.node_height;
    }
    if (leaf_only) return place_stacked(n, depth, top, top_index);

    double cursor = top;
    for (std::size_t i = 0; i < n.children.size(); ++i) {
      if (i) cursor += cfg_.vgap;
      cursor += place(n.children[i], depth + 1, cursor, top_index);
    }
    double span = cursor - top;
    double y = top + (span - cfg_.node_height) / 2;
    emit(n, depth, {column_x(depth), y, node_w_, cfg_.node_height}, top_index, false);
    return std::max(span, cfg_.node_height);
  }

  double extent() const { return extent_; }
  std::vector<NodeGeometry>& nodes() { return nodes_; }

 private:
  double place_stacked(const KnowledgeNode& n, int depth, double top, int top_index) {
    auto groups = stack_leaves(n.children.size(), cfg_.h_ln);
    std::size_t rows = groups.size();
    std::size_t cols = std::min<std::size_t>(n.children.size(), static_cast<std::size_t>(cfg_.h_ln));
    double grid_h = static_cast<double>(rows) * cfg_.node_height + static_cast<double>(rows - 1) * cfg_.leaf_gap;
    double content = std::max(cfg_.node_height, grid_h);
    double pad = cfg_.encapsulation_pad;
    double grid_top = top + pad + (content - grid_h) / 2;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < groups[r].size(); ++c) {
        const auto& leaf = n.children[groups[r][c]];
        Rect rect{column_x(depth + 1 + static_cast<int>(c)),
                  grid_top + static_cast<double>(r) * (cfg_.node_height + cfg_.leaf_gap), node_w_, cfg_.node_height};
        emit(leaf, depth + 1, rect, top_index, true);
      }
    }
    double y = top + pad + (content - cfg_.node_height) / 2;
    emit(n, depth, {column_x(depth), y, node_w_, cfg_.node_height}, top_index, false);
    double x0 = column_x(depth) - pad;
    double x1 = column_x(depth + static_cast<int>(cols)) + node_w_ + pad;
    Rect box{x0, top, x1 - x0, content + 2 * pad};
    auto& parent = nodes_.back();
    parent.encapsulation_box = box;
    parent.encapsulation = rounded_rect_path(box, pad);
    extent_ = std::max(extent_, box.right());
    return box.h;
  }

  void emit(const KnowledgeNode& n, int depth, Rect rect, int top_index, bool stacked) {
    NodeGeometry g;
    g.id = n.id;
    g.label = n.label;
    g.depth = depth;
    g.side = Side::right;
    g.top_index = top_index;
    g.leaf = n.is_leaf();
    g.stacked = stacked;
    g.n_questions = subtree_question_count(n);
    g.empty = g.n_questions == 0;
    g.rect = rect;
    fill_node_parts(g, cfg_, acc_, false);
    extent_ = std::max(extent_, rect.right());
    nodes_.push_back(std::move(g));
  }

  const LayoutConfig& cfg_;
  double node_w_;
  const NodeAccuracies& acc_;
  std::vector<NodeGeometry> nodes_;
  double extent_ = 0;

 public:
  // Bars, dot region and anchors for a right-side node (inner edge on the
  // left) or, with `centred`, for the root.
  static void fill_node_parts(NodeGeometry& g, const LayoutConfig& cfg, const NodeAccuracies& acc, bool centred) {
    const Rect& r = g.rect;
    double band_h = cfg.bar_height_fraction * cfg.node_height;
    double inner_w = r.w - 2 * cfg.inset;
    double track_w = centred ? inner_w - 2 * cfg.acc_label_width : inner_w - cfg.acc_label_width;
    double band_y = r.bottom() - cfg.inset - band_h;
    double cx = r.x + r.w / 2;
    g.bar_track = {centred ? cx - track_w / 2 : r.x + cfg.inset, band_y, track_w, band_h};
    if (!g.empty) {
      auto it = acc.find(g.id);
      if (it == acc.end() || it->second.size() != cfg.k_models)
        throw ConsistencyError("no accuracies for " + std::to_string(cfg.k_models) + " model(s) at node '" + g.id + "'");
      double sub_h = band_h / static_cast<double>(cfg.k_models);
      for (std::size_t i = 0; i < cfg.k_models; ++i) {
        double a = it->second[i].value_or(0.0);
        double w = track_w * a;
        double y = band_y + static_cast<double>(i) * sub_h;
        g.bars.push_back({centred ? cx - w / 2 : g.bar_track.x, y, w, sub_h});
        g.acc_anchors.push_back({centred ? cx : r.right() - cfg.inset, y + sub_h / 2});
      }
    }
    g.acc_align = centred ? TextAlign::middle : TextAlign::end;
    double dot_top = r.y + cfg.label_band;
    g.dot_box = {r.x + cfg.inset, dot_top, inner_w, band_y - 3 - dot_top};
    g.dot_region = rounded_rect_path(g.dot_box, 4);
    g.label_anchor = {centred ? cx : r.x + cfg.inset, r.y + cfg.label_band / 2};
    g.label_align = centred ? TextAlign::middle : TextAlign::start;
    // The root's column is free above its box, so its glyphs sit there.
    g.glyph_anchor = centred ? Point{cx, r.y - 10} : Point{r.right() - cfg.inset, r.y + cfg.label_band / 2};
    g.glyph_dir = centred ? 0 : -1;
  }
};

struct HalfResult {
  std::vector<NodeGeometry> nodes;
  double height = 0;
  double extent = 0;
};

inline HalfResult layout_half(const KnowledgeNode& root, const std::vector<std::size_t>& children,
                              const LayoutConfig& cfg, double node_w, const NodeAccuracies& acc) {
  HalfLayout half(cfg, node_w, acc);
  double cursor = 0;
  for (std::size_t i = 0; i < children.size(); ++i) {
    if (i) cursor += cfg.vgap;
    cursor += half.place(root.children[children[i]], 1, cursor, static_cast<int>(children[i]));
  }
  return {std::move(half.nodes()), cursor, half.extent()};
}

}  // namespace detail

inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_root(const KnowledgeNode& root) {
  std::vector<HalfItem> items;
  for (const auto& c : root.children) items.push_back({c.label, subtree_leaf_count(c)});
  return split_halves(items);
}

/// Geometry for an explicit assignment of root children to the halves.
inline MapGeometry layout_map_sides(const KnowledgeHierarchy& h, const std::vector<std::size_t>& left,
                                    const std::vector<std::size_t>& right, const NodeAccuracies& acc,
                                    const LayoutConfig& cfg) {
  validate_layout_config(cfg);
  const KnowledgeNode& root = h.root;

  // Widest node that keeps the map on the page.
  double node_w = cfg.node_width;
  detail::HalfResult lres, rres;
  while (true) {
    lres = detail::layout_half(root, left, cfg, node_w, acc);
    rres = detail::layout_half(root, right, cfg, node_w, acc);
    double ext = std::max({lres.extent, rres.extent, node_w / 2});
    if (2 * cfg.margin + 2 * ext <= cfg.page_width) break;
    if (node_w <= cfg.min_node_width)
      throw OverflowError("map needs " + fmt3(2 * cfg.margin + 2 * ext) + " px at the minimum node width; page is " +
                          fmt3(cfg.page_width) + " px");
    node_w = std::max(cfg.min_node_width, node_w - 1.0);
  }
  double ext = std::max({lres.extent, rres.extent, node_w / 2});

  MapGeometry g;
  g.k_models = cfg.k_models;
  g.node_width = node_w;
  g.width = std::max(2 * cfg.margin + 2 * ext, cfg.min_figure_width);
  if (cfg.reserve_bloom_panel) g.width = std::max(g.width, cfg.bloom_width + 2 * cfg.margin);
  g.center_x = g.width / 2;
  double inner_w = g.width - 2 * cfg.margin;
  g.title_box = {cfg.margin, cfg.margin, inner_w, cfg.title_height};
  g.legend_box = {cfg.margin, g.title_box.bottom() + 4, inner_w, cfg.legend_height};
  double map_top = g.legend_box.bottom() + 16;
  double map_h = std::max({lres.height, rres.height, cfg.node_height});
  g.map_box = {g.center_x - ext, map_top, 2 * ext, map_h};

  std::map<std::string, NodeGeometry> by_id;
  NodeGeometry rg;
  rg.id = root.id;
  rg.label = root.label;
  rg.depth = 0;
  rg.side = Side::center;
  rg.leaf = root.is_leaf();
  rg.n_questions = subtree_question_count(root);
  rg.empty = rg.n_questions == 0;
  rg.rect = {g.center_x - node_w / 2, map_top + (map_h - cfg.node_height) / 2, node_w, cfg.node_height};
  detail::HalfLayout::fill_node_parts(rg, cfg, acc, true);
  by_id.emplace(rg.id, std::move(rg));

  for (auto& n : rres.nodes) {
    detail::translate(n, g.center_x, map_top + (map_h - rres.height) / 2);
    by_id.emplace(n.id, std::move(n));
  }
  for (auto& n : lres.nodes) {
    detail::reflect(n, 0.0);
    detail::translate(n, g.center_x, map_top + (map_h - lres.height) / 2);
    by_id.emplace(n.id, std::move(n));
  }
  walk(root, [&](const KnowledgeNode& n) {
    auto it = by_id.find(n.id);
    if (it == by_id.end()) throw InvariantError("layout lost node '" + n.id + "'");
    g.nodes.push_back(std::move(it->second));
  });

  double bottom = map_top + map_h;
  if (cfg.reserve_bloom_panel) {
    g.bloom_box = Rect{g.center_x - cfg.bloom_width / 2, bottom + 24, cfg.bloom_width, cfg.bloom_height};
    bottom = g.bloom_box->bottom();
  }
  g.height = bottom + cfg.margin;
  return g;
}

/// Prunes empty leaves unless they are to be shown, balances the halves and
/// lays the map out.
inline MapGeometry layout_map(const KnowledgeHierarchy& input, const NodeAccuracies& acc, const LayoutConfig& cfg) {
  KnowledgeHierarchy h = cfg.show_empty_leaves ? input : prune_empty_leaves(input);
  auto [left, right] = split_root(h.root);
  return layout_map_sides(h, left, right, acc, cfg);
}

inline json to_json(const NodeGeometry& n) {
  json bars = json::array(), anchors = json::array();
  for (const auto& b : n.bars) bars.push_back(to_json(b));
  for (const auto& a : n.acc_anchors) anchors.push_back(to_json(a));
  return {{"id", n.id},
          {"label", n.label},
          {"depth", n.depth},
          {"side", to_string(n.side)},
          {"top_index", n.top_index},
          {"leaf", n.leaf},
          {"empty", n.empty},
          {"stacked", n.stacked},
          {"n_questions", n.n_questions},
          {"rect", to_json(n.rect)},
          {"encapsulation", n.encapsulation ? to_json(*n.encapsulation) : json(nullptr)},
          {"bar_track", to_json(n.bar_track)},
          {"bars", bars},
          {"acc_anchors", anchors},
          {"dot_region", to_json(n.dot_region)},
          {"label_anchor", to_json(n.label_anchor)},
          {"glyph_anchor", to_json(n.glyph_anchor)},
          {"glyph_dir", n.glyph_dir}};
}

inline json to_json(const MapGeometry& g) {
  json nodes = json::array();
  for (const auto& n : g.nodes) nodes.push_back(to_json(n));
  return {{"width", g.width},
          {"height", g.height},
          {"center_x", g.center_x},
          {"node_width", g.node_width},
          {"k_models", g.k_models},
          {"title_box", to_json(g.title_box)},
          {"legend_box", to_json(g.legend_box)},
          {"map_box", to_json(g.map_box)},
          {"bloom_box", g.bloom_box ? to_json(*g.bloom_box) : json(nullptr)},
          {"nodes", nodes}};
}

}  // namespace llmmaps
