#pragma once

// In-memory relational store: table schemas, rows, primary/foreign key
// validation and single-link traversal. Immutable once built.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "daqu/errors.hpp"

namespace daqu {

struct ColumnRef {
  std::string table;
  std::string column;

  std::string str() const { return table + "." + column; }
  friend auto operator<=>(const ColumnRef&, const ColumnRef&) = default;
};

enum class AttrKind { text, timestamp };

struct ForeignKey {
  std::string column;
  ColumnRef target;
};

struct AttributeColumn {
  std::string column;
  AttrKind kind = AttrKind::text;
};

struct TableSchema {
  std::string name;
  std::string primary_key;
  std::vector<ForeignKey> foreign_keys;
  std::vector<AttributeColumn> attributes;

  std::optional<std::size_t> fk_index(std::string_view column) const {
    for (std::size_t i = 0; i < foreign_keys.size(); ++i)
      if (foreign_keys[i].column == column) return i;
    return std::nullopt;
  }
  std::optional<std::size_t> attr_index(std::string_view column) const {
    for (std::size_t i = 0; i < attributes.size(); ++i)
      if (attributes[i].column == column) return i;
    return std::nullopt;
  }
  std::optional<std::size_t> timestamp_index() const {
    for (std::size_t i = 0; i < attributes.size(); ++i)
      if (attributes[i].kind == AttrKind::timestamp) return i;
    return std::nullopt;
  }
};

/// One row. `fk_values` and `attr_values` are aligned with the schema's
/// foreign_keys / attributes lists; std::nullopt marks an absent cell.
/// The timestamp column (if any) is parsed into `timestamp` and its slot in
/// attr_values keeps the raw text.
struct Row {
  std::string id;
  std::vector<std::optional<std::string>> fk_values;
  std::vector<std::optional<std::string>> attr_values;
  std::optional<std::int64_t> timestamp;

  friend bool operator==(const Row&, const Row&) = default;
};

struct RowRef {
  std::string table;
  std::string id;
  friend auto operator<=>(const RowRef&, const RowRef&) = default;
};

/// A foreign-key -> primary-key pair. Named by its foreign-key column,
/// "<table>.<column>", which is unique within a schema.
struct Link {
  ColumnRef source;  // foreign key
  ColumnRef target;  // primary key

  std::string name() const { return source.str(); }
  friend bool operator==(const Link&, const Link&) = default;
};

enum class Direction { forward, reverse };

inline std::string to_string(Direction d) { return d == Direction::forward ? "forward" : "reverse"; }

class LinkSet {
 public:
  LinkSet() = default;

  explicit LinkSet(const std::vector<TableSchema>& schemas) {
    for (const auto& t : schemas) {
      for (const auto& fk : t.foreign_keys) {
        const std::size_t idx = links_.size();
        links_.push_back(Link{ColumnRef{t.name, fk.column}, fk.target});
        by_name_.emplace(links_.back().name(), idx);
        outgoing_[t.name].push_back(idx);
        incoming_[fk.target.table].push_back(idx);
      }
    }
  }

  const std::vector<Link>& all() const { return links_; }
  std::size_t size() const { return links_.size(); }
  bool empty() const { return links_.empty(); }

  const Link* find(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    return it == by_name_.end() ? nullptr : &links_[it->second];
  }

  bool contains(const Link& link) const {
    const Link* l = find(link.name());
    return l != nullptr && *l == link;
  }

  /// Links whose foreign key lives in `table`.
  std::vector<const Link*> outgoing(std::string_view table) const { return collect(outgoing_, table); }
  /// Links whose primary key lives in `table`.
  std::vector<const Link*> incoming(std::string_view table) const { return collect(incoming_, table); }

 private:
  std::vector<const Link*> collect(const std::map<std::string, std::vector<std::size_t>>& m,
                                   std::string_view table) const {
    std::vector<const Link*> out;
    auto it = m.find(std::string(table));
    if (it != m.end())
      for (auto i : it->second) out.push_back(&links_[i]);
    return out;
  }

  std::vector<Link> links_;
  std::map<std::string, std::size_t> by_name_;
  std::map<std::string, std::vector<std::size_t>> outgoing_;
  std::map<std::string, std::vector<std::size_t>> incoming_;
};

class Table {
 public:
  Table(TableSchema schema, std::vector<Row> rows) : schema_(std::move(schema)), rows_(std::move(rows)) {
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      if (!id_index_.emplace(rows_[i].id, i).second)
        throw DuplicateIdError("table '" + schema_.name + "': duplicate primary key '" + rows_[i].id + "'");
    }
    by_fk_.resize(schema_.foreign_keys.size());
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      for (std::size_t f = 0; f < schema_.foreign_keys.size(); ++f) {
        if (const auto& v = rows_[i].fk_values[f]) by_fk_[f][*v].push_back(i);
      }
    }
    for (auto& m : by_fk_)
      for (auto& [key, idx] : m)
        std::sort(idx.begin(), idx.end(), [this](std::size_t a, std::size_t b) { return rows_[a].id < rows_[b].id; });
  }

  const TableSchema& schema() const { return schema_; }
  const std::string& name() const { return schema_.name; }
  const std::vector<Row>& rows() const { return rows_; }

  const Row* find(std::string_view id) const {
    auto it = id_index_.find(std::string(id));
    return it == id_index_.end() ? nullptr : &rows_[it->second];
  }

  /// Rows whose foreign key `fk` equals `key`, ordered by ascending id.
  std::vector<const Row*> referencing(std::size_t fk, std::string_view key) const {
    std::vector<const Row*> out;
    auto it = by_fk_.at(fk).find(std::string(key));
    if (it != by_fk_[fk].end())
      for (auto i : it->second) out.push_back(&rows_[i]);
    return out;
  }

  const std::optional<std::string>& attribute(const Row& row, std::string_view column) const {
    auto idx = schema_.attr_index(column);
    if (!idx) throw SchemaError("table '" + schema_.name + "' has no attribute column '" + std::string(column) + "'");
    return row.attr_values[*idx];
  }

 private:
  TableSchema schema_;
  std::vector<Row> rows_;
  std::unordered_map<std::string, std::size_t> id_index_;
  std::vector<std::unordered_map<std::string, std::vector<std::size_t>>> by_fk_;
};

namespace detail {

inline void check_schema(const std::vector<TableSchema>& schemas) {
  std::set<std::string> names;
  for (const auto& t : schemas) {
    if (t.name.empty()) throw SchemaError("table with empty name");
    if (!names.insert(t.name).second) throw SchemaError("duplicate table '" + t.name + "'");
    if (t.primary_key.empty()) throw SchemaError("table '" + t.name + "' has no primary key");
    std::set<std::string> cols{t.primary_key};
    int timestamps = 0;
    auto add = [&](const std::string& c) {
      if (c.empty()) throw SchemaError("table '" + t.name + "' has an empty column name");
      if (!cols.insert(c).second) throw SchemaError("table '" + t.name + "': column '" + c + "' declared twice");
    };
    for (const auto& fk : t.foreign_keys) add(fk.column);
    for (const auto& a : t.attributes) {
      add(a.column);
      if (a.kind == AttrKind::timestamp) ++timestamps;
    }
    if (timestamps > 1) throw SchemaError("table '" + t.name + "' declares more than one timestamp column");
  }
  for (const auto& t : schemas) {
    for (const auto& fk : t.foreign_keys) {
      auto it = std::find_if(schemas.begin(), schemas.end(),
                             [&](const TableSchema& s) { return s.name == fk.target.table; });
      if (it == schemas.end())
        throw SchemaError("foreign key " + t.name + "." + fk.column + " references unknown table '" +
                          fk.target.table + "'");
      if (it->primary_key != fk.target.column)
        throw SchemaError("foreign key " + t.name + "." + fk.column + " must reference the primary key of '" +
                          fk.target.table + "'");
    }
  }
}

constexpr std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

}  // namespace detail

/// Parses a raw integer ("1700000000") or an ISO-8601 UTC date/time
/// ("2021-03-04", "2021-03-04T05:06:07", optional fraction and trailing 'Z')
/// into epoch seconds.
inline std::optional<std::int64_t> parse_timestamp(std::string_view s) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec == std::errc() && p == s.data() + s.size()) return v;

  auto num = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
    if (pos + len > s.size()) return std::nullopt;
    int out = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
      if (!std::isdigit(static_cast<unsigned char>(s[i]))) return std::nullopt;
      out = out * 10 + (s[i] - '0');
    }
    return out;
  };
  auto y = num(0, 4), mo = num(5, 2), d = num(8, 2);
  if (!y || !mo || !d || s[4] != '-' || s[7] != '-') return std::nullopt;
  if (*mo < 1 || *mo > 12 || *d < 1 || *d > 31) return std::nullopt;
  int hh = 0, mm = 0, ss = 0;
  std::size_t pos = 10;
  if (pos < s.size() && (s[pos] == 'T' || s[pos] == ' ')) {
    auto h = num(pos + 1, 2), mi = num(pos + 4, 2);
    if (!h || !mi || s[pos + 3] != ':') return std::nullopt;
    hh = *h;
    mm = *mi;
    pos += 6;
    if (pos < s.size() && s[pos] == ':') {
      auto sec = num(pos + 1, 2);
      if (!sec) return std::nullopt;
      ss = *sec;
      pos += 3;
      if (pos < s.size() && s[pos] == '.') {
        ++pos;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
      }
    }
    if (hh > 23 || mm > 59 || ss > 60) return std::nullopt;
  }
  if (pos < s.size() && s[pos] == 'Z') ++pos;
  if (pos != s.size()) return std::nullopt;
  return detail::days_from_civil(*y, static_cast<unsigned>(*mo), static_cast<unsigned>(*d)) * 86400 +
         hh * 3600 + mm * 60 + ss;
}

class Database {
 public:
  Database() = default;

  /// Validates schemas and rows (key uniqueness, referential integrity).
  /// `rows` is keyed by table name; tables without an entry are empty.
  static Database build(std::vector<TableSchema> schemas, std::map<std::string, std::vector<Row>> rows) {
    detail::check_schema(schemas);
    for (const auto& [name, _] : rows) {
      if (std::none_of(schemas.begin(), schemas.end(), [&](const TableSchema& s) { return s.name == name; }))
        throw SchemaError("rows supplied for unknown table '" + name + "'");
    }
    Database db;
    db.links_ = LinkSet(schemas);
    for (auto& s : schemas) {
      db.order_.push_back(s.name);
      auto it = rows.find(s.name);
      std::vector<Row> r = it == rows.end() ? std::vector<Row>{} : std::move(it->second);
      for (const auto& row : r) {
        if (row.fk_values.size() != s.foreign_keys.size() || row.attr_values.size() != s.attributes.size())
          throw SchemaError("table '" + s.name + "': row '" + row.id + "' does not match the schema width");
      }
      const std::string name = s.name;
      db.tables_.emplace(name, Table(std::move(s), std::move(r)));
    }
    for (const auto& name : db.order_) {
      const Table& t = db.tables_.at(name);
      for (std::size_t f = 0; f < t.schema().foreign_keys.size(); ++f) {
        const auto& fk = t.schema().foreign_keys[f];
        const Table& target = db.tables_.at(fk.target.table);
        for (const auto& row : t.rows()) {
          const auto& v = row.fk_values[f];
          if (v && target.find(*v) == nullptr)
            throw DanglingKeyError("table '" + name + "', row '" + row.id + "', column '" + fk.column +
                                   "': no row '" + *v + "' in '" + fk.target.table + "'");
        }
      }
    }
    return db;
  }

  /// Table names in schema order.
  const std::vector<std::string>& table_names() const { return order_; }

  const Table& table(std::string_view name) const {
    auto it = tables_.find(std::string(name));
    if (it == tables_.end()) throw SchemaError("unknown table '" + std::string(name) + "'");
    return it->second;
  }
  bool has_table(std::string_view name) const { return tables_.count(std::string(name)) > 0; }

  std::vector<TableSchema> schemas() const {
    std::vector<TableSchema> out;
    for (const auto& n : order_) out.push_back(tables_.at(n).schema());
    return out;
  }

  const LinkSet& links() const { return links_; }

  const Row& row(const RowRef& ref) const {
    const Row* r = table(ref.table).find(ref.id);
    if (r == nullptr) throw UnknownRowError("no row '" + ref.id + "' in table '" + ref.table + "'");
    return *r;
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, Table> tables_;
  LinkSet links_;
};

inline AttrKind parse_attr_kind(const std::string& s) {
  if (s == "text") return AttrKind::text;
  if (s == "timestamp") return AttrKind::timestamp;
  throw SchemaError("unknown attribute kind '" + s + "'");
}

inline std::vector<TableSchema> parse_schema(const nlohmann::json& j) {
  try {
    std::vector<TableSchema> out;
    if (!j.is_object() || !j.contains("tables") || !j.at("tables").is_array())
      throw SchemaError("schema must be an object with a \"tables\" array");
    for (const auto& t : j.at("tables")) {
      TableSchema s;
      s.name = t.at("name").get<std::string>();
      s.primary_key = t.at("primary_key").get<std::string>();
      for (const auto& fk : t.value("foreign_keys", nlohmann::json::array()))
        s.foreign_keys.push_back(ForeignKey{fk.at("column").get<std::string>(),
                                            ColumnRef{fk.at("ref_table").get<std::string>(),
                                                      fk.at("ref_column").get<std::string>()}});
      for (const auto& a : t.value("attributes", nlohmann::json::array()))
        s.attributes.push_back(AttributeColumn{a.at("column").get<std::string>(),
                                               parse_attr_kind(a.value("kind", std::string("text")))});
      out.push_back(std::move(s));
    }
    detail::check_schema(out);
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed schema: ") + e.what());
  }
}

inline nlohmann::json schema_to_json(const std::vector<TableSchema>& schemas) {
  nlohmann::json tables = nlohmann::json::array();
  for (const auto& s : schemas) {
    nlohmann::json fks = nlohmann::json::array(), attrs = nlohmann::json::array();
    for (const auto& fk : s.foreign_keys)
      fks.push_back({{"column", fk.column}, {"ref_table", fk.target.table}, {"ref_column", fk.target.column}});
    for (const auto& a : s.attributes)
      attrs.push_back({{"column", a.column}, {"kind", a.kind == AttrKind::text ? "text" : "timestamp"}});
    tables.push_back({{"name", s.name}, {"primary_key", s.primary_key}, {"foreign_keys", fks}, {"attributes", attrs}});
  }
  return {{"tables", tables}};
}

/// Converts one JSON-Lines object into a row of `schema`.
inline Row parse_row(const TableSchema& schema, const nlohmann::json& obj, const std::string& where) {
  if (!obj.is_object()) throw FormatError(where + ": expected a JSON object");
  Row row;
  row.fk_values.resize(schema.foreign_keys.size());
  row.attr_values.resize(schema.attributes.size());
  bool has_id = false;
  for (const auto& [key, value] : obj.items()) {
    std::optional<std::string> cell;
    if (value.is_string()) {
      cell = value.get<std::string>();
    } else if (value.is_number_integer()) {
      cell = std::to_string(value.get<std::int64_t>());
    } else if (!value.is_null()) {
      throw FormatError(where + ": column '" + key + "' must be a string or null");
    }
    if (key == schema.primary_key) {
      if (!cell) throw FormatError(where + ": primary key '" + key + "' is null");
      row.id = *cell;
      has_id = true;
    } else if (auto f = schema.fk_index(key)) {
      row.fk_values[*f] = std::move(cell);
    } else if (auto a = schema.attr_index(key)) {
      if (schema.attributes[*a].kind == AttrKind::timestamp && cell) {
        auto ts = parse_timestamp(*cell);
        if (!ts) throw FormatError(where + ": unparseable timestamp '" + *cell + "'");
        row.timestamp = *ts;
      }
      row.attr_values[*a] = std::move(cell);
    } else {
      throw SchemaError(where + ": column '" + key + "' is not in the schema of '" + schema.name + "'");
    }
  }
  if (!has_id) throw FormatError(where + ": missing primary key '" + schema.primary_key + "'");
  return row;
}

inline nlohmann::json row_to_json(const TableSchema& schema, const Row& row) {
  nlohmann::json obj;
  obj[schema.primary_key] = row.id;
  auto put = [&](const std::string& col, const std::optional<std::string>& v) {
    obj[col] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  for (std::size_t i = 0; i < schema.foreign_keys.size(); ++i) put(schema.foreign_keys[i].column, row.fk_values[i]);
  for (std::size_t i = 0; i < schema.attributes.size(); ++i) put(schema.attributes[i].column, row.attr_values[i]);
  return obj;
}

/// Reads `schema_file` and one `<table>.jsonl` per table from `data_dir`.
inline Database load_database(const std::filesystem::path& schema_file, const std::filesystem::path& data_dir) {
  std::ifstream sin(schema_file);
  if (!sin) throw SchemaError("cannot open schema file " + schema_file.string());
  nlohmann::json sj;
  try {
    sj = nlohmann::json::parse(sin);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("schema file " + schema_file.string() + " is not valid JSON: " + e.what());
  }
  auto schemas = parse_schema(sj);
  std::map<std::string, std::vector<Row>> rows;
  for (const auto& s : schemas) {
    const auto file = data_dir / (s.name + ".jsonl");
    std::ifstream in(file);
    if (!in) throw FormatError("missing data file " + file.string());
    auto& out = rows[s.name];
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const std::string where = file.filename().string() + ":" + std::to_string(lineno);
      nlohmann::json obj;
      try {
        obj = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(where + ": " + e.what());
      }
      out.push_back(parse_row(s, obj, where));
    }
  }
  return Database::build(std::move(schemas), std::move(rows));
}

/// Rows reached from `from` over one link. Forward yields the referenced row
/// (zero or one); reverse yields all referencing rows. Ordered by id.
inline std::vector<const Row*> rows_linked(const Database& db, const RowRef& from, const Link& link, Direction dir) {
  if (!db.links().contains(link)) throw UnknownLinkError("unknown link " + link.name() + " -> " + link.target.str());
  const std::string& expected = dir == Direction::forward ? link.source.table : link.target.table;
  if (from.table != expected)
    throw UnknownLinkError("link " + link.name() + " cannot be traversed " + to_string(dir) + " from table '" +
                           from.table + "'");
  const Row& row = db.row(from);
  if (dir == Direction::forward) {
    const Table& src = db.table(link.source.table);
    const auto& v = row.fk_values[*src.schema().fk_index(link.source.column)];
    if (!v) return {};
    return {db.table(link.target.table).find(*v)};
  }
  const Table& src = db.table(link.source.table);
  return src.referencing(*src.schema().fk_index(link.source.column), row.id);
}

inline std::vector<const Row*> rows_linked(const Database& db, const RowRef& from, std::string_view link_name,
                                           Direction dir) {
  const Link* link = db.links().find(link_name);
  if (link == nullptr) throw UnknownLinkError("unknown link '" + std::string(link_name) + "'");
  return rows_linked(db, from, *link, dir);
}

}  // namespace daqu
