#pragma once

// Metadata categories: a join path from the query row's table to a target
// text column, plus optional temporal filtering. Extraction walks each path
// from one query row and returns the reachable attribute values.

#include <algorithm>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "daqu/errors.hpp"
#include "daqu/relstore.hpp"

namespace daqu {

enum class TemporalFilter { none, strictly_before };

struct Hop {
  std::string link;  // "<table>.<fk column>"
  Direction direction = Direction::forward;
  friend bool operator==(const Hop&, const Hop&) = default;
};

struct CategorySpec {
  std::string name;
  std::string start_table;
  std::vector<Hop> hops;
  std::string target_attribute;
  TemporalFilter temporal_filter = TemporalFilter::none;
  bool exclude_query_row = false;
  friend bool operator==(const CategorySpec&, const CategorySpec&) = default;
};

struct Attribute {
  RowRef source;
  std::string value;
  friend bool operator==(const Attribute&, const Attribute&) = default;
};

struct Category {
  std::string name;
  std::vector<Attribute> items;
  friend bool operator==(const Category&, const Category&) = default;
};

/// Per-category attribute lists, categories in spec order. Within a category,
/// items follow the lexicographic order of the row-id paths that first reach them.
struct AttributeSet {
  std::vector<Category> categories;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& c : categories) n += c.items.size();
    return n;
  }
  bool all_empty() const { return total() == 0; }
  friend bool operator==(const AttributeSet&, const AttributeSet&) = default;
};

struct SpecReport {
  std::size_t spec_index = 0;
  std::string name;
  bool ok = true;
  std::optional<std::size_t> hop_index;
  std::string message;
};

/// Type-checks every spec against the schema. Never throws; problems are
/// carried in the reports.
inline std::vector<SpecReport> validate_specs(const std::vector<TableSchema>& schemas,
                                              const std::vector<CategorySpec>& specs) {
  const LinkSet links(schemas);
  auto find_table = [&](const std::string& name) -> const TableSchema* {
    for (const auto& s : schemas)
      if (s.name == name) return &s;
    return nullptr;
  };
  std::vector<SpecReport> reports;
  std::set<std::string> seen_names;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& spec = specs[i];
    SpecReport r{i, spec.name, true, std::nullopt, "ok"};
    auto fail = [&](std::string msg, std::optional<std::size_t> hop = std::nullopt) {
      if (!r.ok) return;
      r.ok = false;
      r.hop_index = hop;
      r.message = std::move(msg);
    };
    if (spec.name.empty()) fail("category name is empty");
    if (!seen_names.insert(spec.name).second) fail("duplicate category name '" + spec.name + "'");
    std::string current = spec.start_table;
    if (find_table(current) == nullptr) fail("unknown start table '" + current + "'");
    for (std::size_t h = 0; h < spec.hops.size() && r.ok; ++h) {
      const Link* link = links.find(spec.hops[h].link);
      if (link == nullptr) {
        fail("hop " + std::to_string(h) + ": unknown link '" + spec.hops[h].link + "'", h);
        break;
      }
      const bool fwd = spec.hops[h].direction == Direction::forward;
      const std::string& from = fwd ? link->source.table : link->target.table;
      if (from != current) {
        fail("hop " + std::to_string(h) + ": link '" + link->name() + "' cannot be traversed " +
                 to_string(spec.hops[h].direction) + " from table '" + current + "'",
             h);
        break;
      }
      current = fwd ? link->target.table : link->source.table;
    }
    if (r.ok) {
      const TableSchema* t = find_table(current);
      auto a = t->attr_index(spec.target_attribute);
      if (!a) {
        fail("target attribute '" + spec.target_attribute + "' not in table '" + current + "'");
      } else if (t->attributes[*a].kind != AttrKind::text) {
        fail("target attribute '" + spec.target_attribute + "' is not a text column");
      } else if (spec.temporal_filter == TemporalFilter::strictly_before) {
        if (!t->timestamp_index()) fail("temporal filter on table '" + current + "' which has no timestamp column");
        else if (const TableSchema* s = find_table(spec.start_table); !s->timestamp_index())
          fail("temporal filter but start table '" + spec.start_table + "' has no timestamp column");
      }
    }
    reports.push_back(std::move(r));
  }
  return reports;
}

namespace detail {

inline void walk(const Database& db, const std::vector<const Link*>& links, const CategorySpec& spec,
                 std::size_t depth, const RowRef& at, std::set<std::pair<std::size_t, std::string>>& visited,
                 std::vector<const Row*>& terminals, std::set<std::string>& seen_terminal) {
  if (depth == spec.hops.size()) {
    if (seen_terminal.insert(at.id).second) terminals.push_back(&db.row(at));
    return;
  }
  // A row revisited at the same depth was already expanded through a
  // lexicographically smaller path, so its subtree adds nothing new.
  if (!visited.emplace(depth, at.id).second) return;
  const Link& link = *links[depth];
  const Direction dir = spec.hops[depth].direction;
  const std::string& next_table = dir == Direction::forward ? link.target.table : link.source.table;
  for (const Row* next : rows_linked(db, at, link, dir))
    walk(db, links, spec, depth + 1, RowRef{next_table, next->id}, visited, terminals, seen_terminal);
}

}  // namespace detail

/// Collects, for each category, the target-attribute values of the rows
/// reachable from `query` along the category's join path.
inline AttributeSet extract_attributes(const Database& db, const RowRef& query,
                                       const std::vector<CategorySpec>& specs) {
  for (const auto& r : validate_specs(db.schemas(), specs))
    if (!r.ok) throw SpecTypeError("category '" + r.name + "': " + r.message);
  const Row& qrow = db.row(query);

  AttributeSet out;
  for (const auto& spec : specs) {
    if (spec.start_table != query.table)
      throw SpecTypeError("category '" + spec.name + "' starts at table '" + spec.start_table +
                          "' but the query row is in '" + query.table + "'");
    std::vector<const Link*> links;
    std::string terminal_table = spec.start_table;
    for (const auto& h : spec.hops) {
      links.push_back(db.links().find(h.link));
      terminal_table = h.direction == Direction::forward ? links.back()->target.table : links.back()->source.table;
    }
    std::vector<const Row*> terminals;
    std::set<std::pair<std::size_t, std::string>> visited;
    std::set<std::string> seen;
    detail::walk(db, links, spec, 0, query, visited, terminals, seen);

    const Table& tt = db.table(terminal_table);
    const std::size_t attr = *tt.schema().attr_index(spec.target_attribute);
    const bool temporal = spec.temporal_filter == TemporalFilter::strictly_before;
    if (temporal && !qrow.timestamp)
      throw MissingTimestampError("query row '" + query.id + "' has no timestamp (category '" + spec.name + "')");

    Category cat{spec.name, {}};
    for (const Row* row : terminals) {
      if (spec.exclude_query_row && terminal_table == query.table && row->id == query.id) continue;
      if (temporal) {
        if (!row->timestamp)
          throw MissingTimestampError("row '" + row->id + "' in '" + terminal_table + "' has no timestamp (category '" +
                                      spec.name + "')");
        if (!(*row->timestamp < *qrow.timestamp)) continue;
      }
      const auto& v = row->attr_values[attr];
      if (!v) continue;
      cat.items.push_back(Attribute{RowRef{terminal_table, row->id}, *v});
    }
    out.categories.push_back(std::move(cat));
  }
  return out;
}

inline nlohmann::json spec_to_json(const CategorySpec& s) {
  nlohmann::json hops = nlohmann::json::array();
  for (const auto& h : s.hops) hops.push_back({{"link", h.link}, {"direction", to_string(h.direction)}});
  return {{"name", s.name},
          {"start_table", s.start_table},
          {"hops", hops},
          {"target_attribute", s.target_attribute},
          {"temporal_filter", s.temporal_filter == TemporalFilter::none ? "none" : "strictly_before_query_timestamp"},
          {"exclude_query_row", s.exclude_query_row}};
}

inline CategorySpec spec_from_json(const nlohmann::json& j) {
  try {
    CategorySpec s;
    s.name = j.at("name").get<std::string>();
    s.start_table = j.at("start_table").get<std::string>();
    for (const auto& h : j.value("hops", nlohmann::json::array())) {
      const auto dir = h.value("direction", std::string("forward"));
      if (dir != "forward" && dir != "reverse") throw ConfigError("hop direction must be forward or reverse");
      s.hops.push_back(Hop{h.at("link").get<std::string>(), dir == "forward" ? Direction::forward : Direction::reverse});
    }
    s.target_attribute = j.at("target_attribute").get<std::string>();
    const auto tf = j.value("temporal_filter", std::string("none"));
    if (tf == "none") s.temporal_filter = TemporalFilter::none;
    else if (tf == "strictly_before_query_timestamp" || tf == "strictly_before")
      s.temporal_filter = TemporalFilter::strictly_before;
    else throw ConfigError("unknown temporal_filter '" + tf + "'");
    s.exclude_query_row = j.value("exclude_query_row", false);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed category spec: ") + e.what());
  }
}

}  // namespace daqu
