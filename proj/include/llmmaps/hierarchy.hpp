#pragma once

// Knowledge hierarchy: LLM-driven generation (topic list, then textbook
// outlines per subfield), question-to-leaf assignment, manual overrides and
// empty-leaf pruning.

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "llm_gateway.hpp"
#include "parallel.hpp"
#include "qa_core.hpp"

namespace llmmaps {

struct KnowledgeNode {
  std::string id;
  std::string label;
  std::vector<KnowledgeNode> children;
  std::vector<std::string> question_ids;  // leaves only
  int depth = 0;

  bool is_leaf() const { return children.empty(); }
  bool operator==(const KnowledgeNode&) const = default;
};

struct GenerationLogEntry {
  std::string stage;  // "topics", "outline:<path>"
  std::string request_hash;
  std::string prompt;
  std::string response;
  bool operator==(const GenerationLogEntry&) const = default;
};

struct HierarchyConfig {
  int target_depth = 3;  // edges from the root; questions live on the deepest level
  int min_top = 5;
  int max_top = 10;
};

struct KnowledgeHierarchy {
  KnowledgeNode root;
  HierarchyConfig config;
  bool user_overridden = false;
  std::vector<GenerationLogEntry> generation_log;

  bool operator==(const KnowledgeHierarchy& o) const {
    return root == o.root && config.target_depth == o.config.target_depth &&
           config.min_top == o.config.min_top && config.max_top == o.config.max_top &&
           user_overridden == o.user_overridden && generation_log == o.generation_log;
  }
};

// ---------------------------------------------------------------------------
// Tree helpers
// ---------------------------------------------------------------------------

inline constexpr std::string_view kPathSeparator = " / ";

// Content-derived: identical label paths always get identical ids.
inline std::string node_id_for(const std::vector<std::string>& label_path) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& l : label_path) {
    h = fnv1a64(l, h);
    h = fnv1a64(std::string_view("\x1f", 1), h);
  }
  return "n" + hex64(h).substr(0, 12);
}

template <typename Node, typename Fn>
void walk(Node& n, Fn&& fn) {
  fn(n);
  for (auto& c : n.children) walk(c, fn);
}

// Visits nodes with the label path from the first level below the root.
template <typename Fn>
void walk_paths(const KnowledgeNode& n, std::vector<std::string>& path, Fn&& fn) {
  fn(n, path);
  for (const auto& c : n.children) {
    path.push_back(c.label);
    walk_paths(c, path, fn);
    path.pop_back();
  }
}

inline void assign_depths(KnowledgeNode& n, int depth = 0) {
  n.depth = depth;
  for (auto& c : n.children) assign_depths(c, depth + 1);
}

struct LeafRef {
  const KnowledgeNode* node;
  std::vector<std::string> path;  // labels below the root
  std::string display() const { return join(path, kPathSeparator); }
};

inline std::vector<LeafRef> collect_leaves(const KnowledgeHierarchy& h) {
  std::vector<LeafRef> out;
  std::vector<std::string> path;
  walk_paths(h.root, path, [&](const KnowledgeNode& n, const std::vector<std::string>& p) {
    if (n.is_leaf()) out.push_back({&n, p});
  });
  return out;
}

inline std::size_t subtree_question_count(const KnowledgeNode& n) {
  std::size_t total = n.question_ids.size();
  for (const auto& c : n.children) total += subtree_question_count(c);
  return total;
}

inline std::size_t subtree_leaf_count(const KnowledgeNode& n) {
  if (n.is_leaf()) return 1;
  std::size_t total = 0;
  for (const auto& c : n.children) total += subtree_leaf_count(c);
  return total;
}

inline void collect_question_ids(const KnowledgeNode& n, std::vector<std::string>& out) {
  out.insert(out.end(), n.question_ids.begin(), n.question_ids.end());
  for (const auto& c : n.children) collect_question_ids(c, out);
}

inline KnowledgeNode* find_node(KnowledgeNode& n, std::string_view id) {
  if (n.id == id) return &n;
  for (auto& c : n.children)
    if (auto* f = find_node(c, id)) return f;
  return nullptr;
}

inline const KnowledgeNode* find_node(const KnowledgeNode& n, std::string_view id) {
  return find_node(const_cast<KnowledgeNode&>(n), id);
}

/// Throws InvariantError on the first violated tree/assignment invariant.
inline void validate_hierarchy(const KnowledgeHierarchy& h) {
  std::set<std::string> ids, questions;
  std::function<void(const KnowledgeNode&, int)> visit = [&](const KnowledgeNode& n, int depth) {
    if (n.id.empty()) throw InvariantError("node '" + n.label + "' has an empty id");
    if (!ids.insert(n.id).second) throw InvariantError("duplicate node id '" + n.id + "'");
    if (depth > h.config.target_depth)
      throw InvariantError("node '" + n.label + "' at depth " + std::to_string(depth) +
                           " exceeds target depth " + std::to_string(h.config.target_depth));
    if (!n.question_ids.empty() && !n.children.empty())
      throw InvariantError("internal node '" + n.label + "' holds questions");
    for (const auto& q : n.question_ids)
      if (!questions.insert(q).second)
        throw InvariantError("question '" + q + "' assigned to more than one leaf");
    for (const auto& c : n.children) visit(c, depth + 1);
  };
  visit(h.root, 0);
}

// ---------------------------------------------------------------------------
// List parsing and chapter stripping
// ---------------------------------------------------------------------------

namespace detail {

// Strips a list marker ("1.", "1)", "-", "*", "•", "Chapter 3:") and
// markdown emphasis. Returns nullopt when the line carries no marker.
inline std::optional<std::string> list_item(std::string_view line) {
  auto t = trim(line);
  std::string_view s = t;
  bool marked = false;
  if (!s.empty() && (s[0] == '-' || s[0] == '*' || s[0] == '+')) {
    s.remove_prefix(1);
    marked = true;
  } else if (s.rfind("\xE2\x80\xA2", 0) == 0) {  // bullet
    s.remove_prefix(3);
    marked = true;
  } else {
    std::size_t i = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')' || s[i] == ':')) {
      s.remove_prefix(i + 1);
      marked = true;
    } else if (fold_case(s.substr(0, 8)) == "chapter ") {
      std::size_t j = 8;
      while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
      marked = j > 8;
    }
  }
  if (!marked) return std::nullopt;
  std::string item = trim(s);
  if (fold_case(item).rfind("chapter ", 0) == 0) {
    auto colon = item.find_first_of(":.-");
    if (colon != std::string::npos) item = trim(std::string_view(item).substr(colon + 1));
  }
  std::string cleaned;
  for (char c : item)
    if (c != '*' && c != '_' && c != '"' && c != '`') cleaned.push_back(c);
  cleaned = trim(cleaned);
  while (!cleaned.empty() && (cleaned.back() == '.' || cleaned.back() == ':')) cleaned.pop_back();
  if (cleaned.empty()) return std::nullopt;
  return cleaned;
}

inline std::size_t indentation(std::string_view line) {
  std::size_t n = 0;
  while (n < line.size() && (line[n] == ' ' || line[n] == '\t')) ++n;
  return n;
}

}  // namespace detail

/// Items of the outermost enumerated/bulleted list in an LLM reply; nested
/// sub-items are ignored. Empty when the reply holds no list.
inline std::vector<std::string> parse_enumerated_list(std::string_view reply) {
  std::vector<std::pair<std::size_t, std::string>> items;
  for (const auto& line : split_lines(reply))
    if (auto item = detail::list_item(line)) items.emplace_back(detail::indentation(line), *item);
  if (items.empty()) return {};
  std::size_t min_indent = items.front().first;
  for (const auto& [ind, _] : items) min_indent = std::min(min_indent, ind);
  std::vector<std::string> out;
  for (auto& [ind, item] : items)
    if (ind == min_indent) out.push_back(std::move(item));
  return out;
}

/// Drops the first chapter if it mentions introduction/overview/preface and
/// the last if it mentions conclusion/summary/outlook. Middle chapters stay.
inline std::vector<std::string> strip_boundary_chapters(std::vector<std::string> chapters) {
  static const std::vector<std::string> head = {"introduction", "overview", "preface"};
  static const std::vector<std::string> tail = {"conclusion", "summary", "outlook"};
  auto hits = [](const std::string& s, const std::vector<std::string>& kws) {
    return std::any_of(kws.begin(), kws.end(), [&](const auto& k) { return contains_ci(s, k); });
  };
  if (chapters.empty()) return chapters;
  bool drop_last = chapters.size() > 1 && hits(chapters.back(), tail);
  bool drop_first = hits(chapters.front(), head);
  if (drop_last) chapters.pop_back();
  if (drop_first) chapters.erase(chapters.begin());
  return chapters;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

inline constexpr int kStructureRetries = 2;

namespace detail {

inline std::vector<std::string> dedupe_labels(const std::vector<std::string>& labels) {
  std::vector<std::string> out;
  std::map<std::string, int> seen;
  for (const auto& l : labels) {
    int n = ++seen[l];
    out.push_back(n == 1 ? l : l + " (" + std::to_string(n) + ")");
  }
  return out;
}

// Asks for a list with up to kStructureRetries stricter retries. `accept`
// rejects lists of the wrong shape (e.g. topic counts outside the range).
inline std::vector<std::string> request_list(
    Gateway& gw, KnowledgeHierarchy& h, const std::string& stage, const std::string& prompt,
    const std::string& retry_prompt,
    const std::function<bool(const std::vector<std::string>&)>& accept) {
  std::string last;
  for (int attempt = 0; attempt <= kStructureRetries; ++attempt) {
    std::string p = attempt == 0 ? prompt : retry_prompt;
    if (attempt == 2) p += "\n\nReply with the list only.";
    auto r = gw.complete(p);
    h.generation_log.push_back({stage, request_hash(gw.profile().model_id, p), p, r.text});
    auto items = parse_enumerated_list(r.text);
    if (!items.empty() && accept(items)) return items;
    last = r.text;
  }
  throw StructureError(stage + ": no usable list after " + std::to_string(kStructureRetries) +
                       " retries; last reply: '" + last.substr(0, 200) + "'");
}

inline void expand(Gateway& gw, KnowledgeHierarchy& h, KnowledgeNode& node,
                   std::vector<std::string>& path, const std::string& field_label) {
  if (node.depth >= h.config.target_depth) return;
  const auto& t = gw.templates();
  std::vector<std::string> context{field_label};
  context.insert(context.end(), path.begin(), path.end() - 1);
  std::map<std::string, std::string> vars{
      {"topic", node.label}, {"field", field_label}, {"path", join(context, kPathSeparator)}};
  auto chapters = request_list(gw, h, "outline:" + join(path, kPathSeparator),
                               substitute(t.outline, vars), substitute(t.outline_retry, vars),
                               [](const auto&) { return true; });
  for (const auto& label : dedupe_labels(strip_boundary_chapters(chapters))) {
    path.push_back(label);
    std::vector<std::string> full{field_label};
    full.insert(full.end(), path.begin(), path.end());
    KnowledgeNode child{node_id_for(full), label, {}, {}, node.depth + 1};
    expand(gw, h, child, path, field_label);
    node.children.push_back(std::move(child));
    path.pop_back();
  }
}

}  // namespace detail

/// Topic list for the field, then a textbook outline per subfield, recursing
/// until target_depth. Boundary chapters are stripped from every outline.
inline KnowledgeHierarchy generate_hierarchy(const std::string& field_label,
                                             const HierarchyConfig& config, Gateway& gw) {
  if (config.target_depth < 1) throw ValidationError("target_depth must be >= 1");
  if (config.min_top < 1 || config.max_top < config.min_top)
    throw ValidationError("invalid top-level range");
  KnowledgeHierarchy h;
  h.config = config;
  h.root = {node_id_for({field_label}), field_label, {}, {}, 0};
  const auto& t = gw.templates();
  std::map<std::string, std::string> vars{{"field", field_label},
                                          {"min", std::to_string(config.min_top)},
                                          {"max", std::to_string(config.max_top)}};
  auto topics = detail::request_list(
      gw, h, "topics", substitute(t.topic_list, vars), substitute(t.topic_list_retry, vars),
      [&](const std::vector<std::string>& items) {
        return static_cast<int>(items.size()) >= config.min_top &&
               static_cast<int>(items.size()) <= config.max_top;
      });
  std::vector<std::string> path;
  for (const auto& label : detail::dedupe_labels(topics)) {
    path.push_back(label);
    KnowledgeNode child{node_id_for({field_label, label}), label, {}, {}, 1};
    detail::expand(gw, h, child, path, field_label);
    h.root.children.push_back(std::move(child));
    path.pop_back();
  }
  validate_hierarchy(h);
  return h;
}

// ---------------------------------------------------------------------------
// Assignment
// ---------------------------------------------------------------------------

enum class AssignMethod { single_leaf, llm, menu, fallback, given };

inline std::string_view to_string(AssignMethod m) {
  switch (m) {
    case AssignMethod::single_leaf: return "single_leaf";
    case AssignMethod::llm: return "llm";
    case AssignMethod::menu: return "menu";
    case AssignMethod::fallback: return "fallback";
    case AssignMethod::given: return "given";
  }
  return "fallback";
}

struct Assignment {
  std::string question_id;
  std::string leaf_id;
  std::string leaf_path;
  AssignMethod method = AssignMethod::llm;
  bool flagged = false;
};

struct AssignmentReport {
  std::vector<Assignment> assignments;
  std::vector<std::string> flagged() const {
    std::vector<std::string> out;
    for (const auto& a : assignments)
      if (a.flagged) out.push_back(a.question_id);
    return out;
  }
};

inline json to_json(const AssignmentReport& r) {
  json list = json::array();
  for (const auto& a : r.assignments)
    list.push_back({{"question_id", a.question_id},
                    {"leaf_id", a.leaf_id},
                    {"leaf_path", a.leaf_path},
                    {"method", std::string(to_string(a.method))},
                    {"flagged", a.flagged}});
  return {{"assignments", list}, {"flagged", r.flagged()}};
}

namespace detail {

inline std::vector<std::string> normalized_segments(std::string_view path_text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    auto n = normalize_answer_text(cur);
    if (!n.empty()) out.push_back(std::move(n));
    cur.clear();
  };
  for (char c : path_text) {
    if (c == '/' || c == '>' || c == '|') {
      flush();
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

inline std::string first_reply_line(std::string_view reply) {
  for (const auto& line : split_lines(reply)) {
    if (auto item = list_item(line)) return *item;
    auto t = trim(line);
    if (!t.empty()) return t;
  }
  return {};
}

}  // namespace detail

/// Exact full-path match, else a unique suffix match, on per-segment
/// normalized labels. Returns the leaf index.
inline std::optional<std::size_t> match_leaf(const std::vector<LeafRef>& leaves,
                                             std::string_view reply) {
  auto segs = detail::normalized_segments(detail::first_reply_line(reply));
  if (segs.empty()) return std::nullopt;
  std::vector<std::vector<std::string>> norm;
  for (const auto& l : leaves) {
    std::vector<std::string> n;
    for (const auto& p : l.path) n.push_back(normalize_answer_text(p));
    norm.push_back(std::move(n));
  }
  for (std::size_t i = 0; i < leaves.size(); ++i)
    if (norm[i] == segs) return i;
  std::optional<std::size_t> hit;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (segs.size() > norm[i].size()) continue;
    if (std::equal(segs.rbegin(), segs.rend(), norm[i].rbegin())) {
      if (hit) return std::nullopt;
      hit = i;
    }
  }
  return hit;
}

/// Numbered-menu reply: a 1-based index, or else a path as in match_leaf.
inline std::optional<std::size_t> match_menu_reply(const std::vector<LeafRef>& leaves,
                                                   std::string_view reply) {
  auto line = trim(reply);
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i > 0) {
    auto v = parse_index(std::string_view(line).substr(0, i));
    if (v && *v >= 1 && *v <= leaves.size()) return *v - 1;
  }
  return match_leaf(leaves, reply);
}

/// Deterministic fallback: the top-level topic sharing the most normalized
/// tokens with the question's topic path (or its text when the path is
/// empty), then the lexicographically first leaf below it.
inline std::size_t fallback_leaf(const KnowledgeHierarchy& h, const std::vector<LeafRef>& leaves,
                                 const Question& q) {
  auto probe = answer_token_set(q.topic_path.empty() ? q.text : join(q.topic_path, " "));
  std::string best_topic;
  std::size_t best_overlap = 0;
  bool first = true;
  for (const auto& topic : h.root.children) {
    auto toks = answer_token_set(topic.label);
    std::size_t overlap = 0;
    for (const auto& t : toks) overlap += probe.count(t);
    if (first || overlap > best_overlap) {
      best_overlap = overlap;
      best_topic = topic.label;
      first = false;
    }
  }
  std::optional<std::size_t> pick;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (!best_topic.empty() && (leaves[i].path.empty() || leaves[i].path.front() != best_topic))
      continue;
    if (!pick || leaves[i].display() < leaves[*pick].display()) pick = i;
  }
  return pick.value_or(0);
}

struct AssignmentResult {
  KnowledgeHierarchy hierarchy;
  AssignmentReport report;
};

/// Places every non-few-shot question in exactly one leaf. Existing
/// assignments are discarded. `gw` may be null for single-leaf hierarchies.
inline AssignmentResult assign_questions(const Dataset& ds, KnowledgeHierarchy h, Gateway* gw) {
  walk(h.root, [](KnowledgeNode& n) { n.question_ids.clear(); });
  auto leaves = collect_leaves(h);
  if (leaves.empty()) throw EmptyHierarchyError("hierarchy has no leaves");

  std::vector<const Question*> pending;
  for (const auto& q : ds.questions)
    if (q.split != Split::fewshot_reserved) pending.push_back(&q);

  std::vector<Assignment> out(pending.size());
  if (leaves.size() == 1) {
    for (std::size_t i = 0; i < pending.size(); ++i)
      out[i] = {pending[i]->id, leaves[0].node->id, leaves[0].display(), AssignMethod::single_leaf,
                false};
  } else {
    if (!gw) throw GatewayError("question assignment needs an LLM gateway");
    std::string leaf_list, menu;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      leaf_list += "- " + leaves[i].display() + "\n";
      menu += std::to_string(i + 1) + ". " + leaves[i].display() + "\n";
    }
    const auto& t = gw->templates();
    parallel_for(pending.size(), static_cast<std::size_t>(gw->profile().request_parallelism),
                 [&](std::size_t i) {
                   const Question& q = *pending[i];
                   std::map<std::string, std::string> vars{{"field", ds.field_label},
                                                           {"leaves", leaf_list},
                                                           {"menu", menu},
                                                           {"question", q.text}};
                   auto first = gw->complete(substitute(t.assign, vars));
                   AssignMethod method = AssignMethod::llm;
                   auto idx = match_leaf(leaves, first.text);
                   if (!idx) {
                     auto second = gw->complete(substitute(t.assign_menu, vars));
                     idx = match_menu_reply(leaves, second.text);
                     method = AssignMethod::menu;
                   }
                   bool flagged = false;
                   if (!idx) {
                     idx = fallback_leaf(h, leaves, q);
                     method = AssignMethod::fallback;
                     flagged = true;
                   }
                   out[i] = {q.id, leaves[*idx].node->id, leaves[*idx].display(), method, flagged};
                 });
  }
  std::map<std::string, std::vector<std::string>> by_leaf;
  for (const auto& a : out) by_leaf[a.leaf_id].push_back(a.question_id);
  walk(h.root, [&](KnowledgeNode& n) {
    if (auto it = by_leaf.find(n.id); it != by_leaf.end() && n.is_leaf()) n.question_ids = it->second;
  });
  validate_hierarchy(h);
  return {std::move(h), {std::move(out)}};
}

// ---------------------------------------------------------------------------
// Pruning
// ---------------------------------------------------------------------------

/// Share of leaves without questions (before pruning).
inline double empty_leaf_fraction(const KnowledgeHierarchy& h) {
  std::size_t leaves = 0, empty = 0;
  walk(h.root, [&](const KnowledgeNode& n) {
    if (!n.is_leaf()) return;
    ++leaves;
    if (n.question_ids.empty()) ++empty;
  });
  return leaves == 0 ? 0.0 : static_cast<double>(empty) / static_cast<double>(leaves);
}

namespace detail {
inline void prune(KnowledgeNode& n) {
  for (auto& c : n.children) prune(c);
  std::erase_if(n.children, [](const KnowledgeNode& c) { return subtree_question_count(c) == 0; });
}
}  // namespace detail

/// Removes question-free leaves and every subtree left without questions.
inline KnowledgeHierarchy prune_empty_leaves(KnowledgeHierarchy h) {
  if (subtree_question_count(h.root) == 0)
    throw EmptyHierarchyError("no questions assigned to any leaf");
  detail::prune(h.root);
  return h;
}

// ---------------------------------------------------------------------------
// Overrides
// ---------------------------------------------------------------------------

struct HierarchyEdit {
  enum class Op { add_node, remove_node, rename, move_question };
  Op op = Op::rename;
  std::string target;  // node id or label path ("A / B"); question id for move_question
  std::string label;   // add_node, rename
  std::string to;      // move_question destination leaf (id or label path)
};

inline json to_json(const HierarchyEdit& e) {
  using Op = HierarchyEdit::Op;
  switch (e.op) {
    case Op::add_node: return {{"op", "add_node"}, {"parent", e.target}, {"label", e.label}};
    case Op::remove_node: return {{"op", "remove_node"}, {"node", e.target}};
    case Op::rename: return {{"op", "rename"}, {"node", e.target}, {"label", e.label}};
    case Op::move_question: return {{"op", "move_question"}, {"question", e.target}, {"to", e.to}};
  }
  return json::object();
}

inline std::vector<HierarchyEdit> edits_from_json(const json& j) {
  if (!j.is_array()) throw ParseError("overrides: expected an array");
  std::vector<HierarchyEdit> out;
  for (const auto& e : j) {
    HierarchyEdit edit;
    auto op = detail::get_string(e, "op", "override", true);
    if (op == "add_node") {
      edit.op = HierarchyEdit::Op::add_node;
      edit.target = detail::get_string(e, "parent", "override add_node", true);
      edit.label = detail::get_string(e, "label", "override add_node", true);
    } else if (op == "remove_node") {
      edit.op = HierarchyEdit::Op::remove_node;
      edit.target = detail::get_string(e, "node", "override remove_node", true);
    } else if (op == "rename") {
      edit.op = HierarchyEdit::Op::rename;
      edit.target = detail::get_string(e, "node", "override rename", true);
      edit.label = detail::get_string(e, "label", "override rename", true);
    } else if (op == "move_question") {
      edit.op = HierarchyEdit::Op::move_question;
      edit.target = detail::get_string(e, "question", "override move_question", true);
      edit.to = detail::get_string(e, "to", "override move_question", true);
    } else {
      throw ParseError("override: unknown op '" + op + "'");
    }
    out.push_back(std::move(edit));
  }
  return out;
}

namespace detail {

inline KnowledgeNode* descend(KnowledgeNode& from, const std::vector<std::string>& segs,
                              std::size_t start) {
  KnowledgeNode* cur = &from;
  for (std::size_t i = start; i < segs.size(); ++i) {
    KnowledgeNode* next = nullptr;
    for (auto& c : cur->children)
      if (normalize_answer_text(c.label) == segs[i]) next = &c;
    if (!next) return nullptr;
    cur = next;
  }
  return cur;
}

inline void suffix_matches(KnowledgeNode& n, std::vector<std::string>& path,
                           const std::vector<std::string>& segs, std::vector<KnowledgeNode*>& hits) {
  path.push_back(normalize_answer_text(n.label));
  if (path.size() >= segs.size() && std::equal(segs.rbegin(), segs.rend(), path.rbegin()))
    hits.push_back(&n);
  for (auto& c : n.children) suffix_matches(c, path, segs, hits);
  path.pop_back();
}

// Resolves a node by id, else by label path below the root (a leading root
// label is accepted too), else by a path suffix naming exactly one node.
inline KnowledgeNode* resolve_node(KnowledgeHierarchy& h, const std::string& ref) {
  if (auto* n = find_node(h.root, ref)) return n;
  auto segs = normalized_segments(ref);
  if (segs.empty()) return nullptr;
  if (auto* n = descend(h.root, segs, 0)) return n;
  if (normalize_answer_text(h.root.label) == segs.front())
    if (auto* n = descend(h.root, segs, 1)) return n;
  std::vector<std::string> path;
  std::vector<KnowledgeNode*> hits;
  suffix_matches(h.root, path, segs, hits);
  return hits.size() == 1 ? hits.front() : nullptr;
}

inline bool path_to(KnowledgeNode& n, const KnowledgeNode* target,
                    std::vector<KnowledgeNode*>& chain) {
  chain.push_back(&n);
  if (&n == target) return true;
  for (auto& c : n.children)
    if (path_to(c, target, chain)) return true;
  chain.pop_back();
  return false;
}

}  // namespace detail

/// Applies edits in order, then re-validates every invariant. Node ids are
/// kept on rename so assignments and overrides stay stable.
inline KnowledgeHierarchy apply_overrides(KnowledgeHierarchy h,
                                          const std::vector<HierarchyEdit>& edits) {
  using Op = HierarchyEdit::Op;
  for (const auto& e : edits) {
    switch (e.op) {
      case Op::add_node: {
        auto* parent = detail::resolve_node(h, e.target);
        if (!parent) throw UnknownTargetError("add_node: no node '" + e.target + "'");
        if (!parent->question_ids.empty())
          throw InvariantError("add_node: '" + parent->label + "' is a leaf holding questions");
        if (parent->depth + 1 > h.config.target_depth)
          throw InvariantError("add_node: depth would exceed target depth");
        std::vector<KnowledgeNode*> chain;
        detail::path_to(h.root, parent, chain);
        std::vector<std::string> labels;
        for (auto* n : chain) labels.push_back(n->label);
        labels.push_back(e.label);
        auto id = node_id_for(labels);
        if (find_node(h.root, id)) throw InvariantError("add_node: node '" + e.label + "' exists");
        parent->children.push_back({id, e.label, {}, {}, parent->depth + 1});
        break;
      }
      case Op::remove_node: {
        auto* node = detail::resolve_node(h, e.target);
        if (!node) throw UnknownTargetError("remove_node: no node '" + e.target + "'");
        if (node == &h.root) throw InvariantError("remove_node: cannot remove the root");
        if (subtree_question_count(*node) > 0)
          throw InvariantError("remove_node: '" + node->label + "' still holds questions");
        std::vector<KnowledgeNode*> chain;
        detail::path_to(h.root, node, chain);
        auto* parent = chain[chain.size() - 2];
        std::erase_if(parent->children, [&](const KnowledgeNode& c) { return &c == node; });
        break;
      }
      case Op::rename: {
        auto* node = detail::resolve_node(h, e.target);
        if (!node) throw UnknownTargetError("rename: no node '" + e.target + "'");
        node->label = e.label;
        break;
      }
      case Op::move_question: {
        KnowledgeNode* from = nullptr;
        walk(h.root, [&](KnowledgeNode& n) {
          if (std::find(n.question_ids.begin(), n.question_ids.end(), e.target) != n.question_ids.end())
            from = &n;
        });
        if (!from) throw UnknownTargetError("move_question: question '" + e.target + "' not assigned");
        auto* to = detail::resolve_node(h, e.to);
        if (!to) throw UnknownTargetError("move_question: no node '" + e.to + "'");
        if (!to->is_leaf()) throw InvariantError("move_question: '" + to->label + "' is not a leaf");
        std::erase(from->question_ids, e.target);
        to->question_ids.push_back(e.target);
        break;
      }
    }
  }
  if (!edits.empty()) h.user_overridden = true;
  assign_depths(h.root);
  validate_hierarchy(h);
  return h;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline json to_json(const KnowledgeNode& n) {
  json children = json::array();
  for (const auto& c : n.children) children.push_back(to_json(c));
  return {{"id", n.id}, {"label", n.label}, {"children", children}, {"question_ids", n.question_ids}};
}

inline json to_json(const KnowledgeHierarchy& h) {
  json log = json::array();
  for (const auto& e : h.generation_log)
    log.push_back({{"stage", e.stage},
                   {"request_hash", e.request_hash},
                   {"prompt", e.prompt},
                   {"response", e.response}});
  return {{"root", to_json(h.root)},
          {"target_depth", h.config.target_depth},
          {"top_level_range", {{"min", h.config.min_top}, {"max", h.config.max_top}}},
          {"user_overridden", h.user_overridden},
          {"generation_log", log}};
}

namespace detail {
inline KnowledgeNode node_from_json(const json& j, std::vector<std::string>& path) {
  if (!j.is_object()) throw ParseError("hierarchy node: expected an object");
  KnowledgeNode n;
  n.label = get_string(j, "label", "hierarchy node", true);
  path.push_back(n.label);
  n.id = get_string(j, "id", "hierarchy node '" + n.label + "'");
  if (n.id.empty()) n.id = node_id_for(path);
  n.question_ids = get_string_list(j, "question_ids", "hierarchy node '" + n.label + "'");
  if (auto it = j.find("children"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw ParseError("hierarchy node '" + n.label + "': children must be an array");
    for (const auto& c : *it) n.children.push_back(node_from_json(c, path));
  }
  path.pop_back();
  return n;
}
}  // namespace detail

inline KnowledgeHierarchy hierarchy_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("hierarchy: expected an object");
  KnowledgeHierarchy h;
  std::vector<std::string> path;
  h.root = detail::node_from_json(detail::require(j, "root", "hierarchy"), path);
  assign_depths(h.root);
  int max_depth = 0;
  walk(h.root, [&](const KnowledgeNode& n) { max_depth = std::max(max_depth, n.depth); });
  h.config.target_depth = j.value("target_depth", std::max(3, max_depth));
  if (auto it = j.find("top_level_range"); it != j.end() && it->is_object()) {
    h.config.min_top = it->value("min", 5);
    h.config.max_top = it->value("max", 10);
  }
  h.user_overridden = j.value("user_overridden", false);
  if (auto it = j.find("generation_log"); it != j.end() && it->is_array()) {
    for (const auto& e : *it)
      h.generation_log.push_back({e.value("stage", std::string()),
                                  e.value("request_hash", std::string()),
                                  e.value("prompt", std::string()),
                                  e.value("response", std::string())});
  }
  validate_hierarchy(h);
  return h;
}

inline std::string dump_hierarchy(const KnowledgeHierarchy& h) { return dump_canonical(to_json(h)); }

inline KnowledgeHierarchy load_hierarchy(const std::string& path) {
  return hierarchy_from_json(parse_json_text(read_file(path), "hierarchy '" + path + "'"));
}

inline void save_hierarchy(const std::string& path, const KnowledgeHierarchy& h) {
  write_file(path, dump_hierarchy(h));
}

}  // namespace llmmaps
