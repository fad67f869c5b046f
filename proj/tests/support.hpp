#pragma once

// Random small databases and category specs for oracle tests.

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "daqu/metaview.hpp"
#include "daqu/relstore.hpp"
#include "daqu/util.hpp"

namespace daqu::fixtures {

inline std::string row_id(std::size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "r%02zu", i);
  return buf;
}

struct RandomDb {
  std::vector<TableSchema> schemas;
  std::map<std::string, std::vector<Row>> rows;
  Database db;
};

/// Tables t0..t{n-1}, each with primary key "id", up to two foreign keys
/// (self-references allowed), text columns "a0"/"a1" and, for most tables, a
/// timestamp column "ts" with deliberately coarse values so ties occur.
inline RandomDb random_database(Rng& rng, std::size_t max_tables = 4, std::size_t max_rows = 40) {
  RandomDb out;
  const std::size_t n_tables = 1 + rng.below(max_tables);
  std::vector<std::size_t> n_rows(n_tables);
  std::vector<bool> has_ts(n_tables);
  for (std::size_t t = 0; t < n_tables; ++t) {
    n_rows[t] = rng.below(max_rows + 1);
    has_ts[t] = rng.bernoulli(0.75);
  }
  for (std::size_t t = 0; t < n_tables; ++t) {
    TableSchema s;
    s.name = "t" + std::to_string(t);
    s.primary_key = "id";
    const std::size_t n_fk = rng.below(3);
    for (std::size_t f = 0; f < n_fk; ++f)
      s.foreign_keys.push_back(ForeignKey{"f" + std::to_string(f), ColumnRef{"t" + std::to_string(rng.below(n_tables)), "id"}});
    s.attributes.push_back(AttributeColumn{"a0", AttrKind::text});
    s.attributes.push_back(AttributeColumn{"a1", AttrKind::text});
    if (has_ts[t]) s.attributes.push_back(AttributeColumn{"ts", AttrKind::timestamp});
    out.schemas.push_back(std::move(s));
  }
  for (std::size_t t = 0; t < n_tables; ++t) {
    const auto& s = out.schemas[t];
    auto& rows = out.rows[s.name];
    for (std::size_t i = 0; i < n_rows[t]; ++i) {
      Row r;
      r.id = row_id(i);
      for (const auto& fk : s.foreign_keys) {
        const std::size_t target_rows = n_rows[static_cast<std::size_t>(std::stoul(fk.target.table.substr(1)))];
        if (target_rows == 0 || rng.bernoulli(0.2)) r.fk_values.push_back(std::nullopt);
        else r.fk_values.push_back(row_id(rng.below(target_rows)));
      }
      for (int a = 0; a < 2; ++a) {
        if (rng.bernoulli(0.2)) r.attr_values.push_back(std::nullopt);
        else r.attr_values.push_back("v" + std::to_string(rng.below(12)) + " w" + std::to_string(rng.below(5)));
      }
      if (has_ts[t]) {
        const std::int64_t ts = 1000 + static_cast<std::int64_t>(rng.below(15));
        r.attr_values.push_back(std::to_string(ts));
        r.timestamp = ts;
      }
      rows.push_back(std::move(r));
    }
    rng.shuffle(rows);  // file order is arbitrary
  }
  out.db = Database::build(out.schemas, out.rows);
  return out;
}

/// A random valid spec starting at `start`, with up to `max_hops` hops.
/// Temporal filtering is only chosen when every row involved has a timestamp.
inline CategorySpec random_spec(Rng& rng, const Database& db, const std::string& start, std::size_t max_hops = 3) {
  CategorySpec spec;
  spec.name = "c" + std::to_string(rng.below(1000));
  spec.start_table = start;
  std::string at = start;
  const std::size_t hops = rng.below(max_hops + 1);
  for (std::size_t h = 0; h < hops; ++h) {
    std::vector<std::pair<const Link*, Direction>> options;
    for (const Link* l : db.links().outgoing(at)) options.emplace_back(l, Direction::forward);
    for (const Link* l : db.links().incoming(at)) options.emplace_back(l, Direction::reverse);
    if (options.empty()) break;
    const auto [link, dir] = options[rng.below(options.size())];
    spec.hops.push_back(Hop{link->name(), dir});
    at = dir == Direction::forward ? link->target.table : link->source.table;
  }
  spec.target_attribute = rng.bernoulli(0.5) ? "a0" : "a1";
  const bool ts_ok = db.table(start).schema().timestamp_index() && db.table(at).schema().timestamp_index();
  if (ts_ok && rng.bernoulli(0.5)) spec.temporal_filter = TemporalFilter::strictly_before;
  spec.exclude_query_row = rng.bernoulli(0.5);
  return spec;
}

}  // namespace daqu::fixtures
