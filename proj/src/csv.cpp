#include <fedaia/csv.hpp>
#include <fedaia/errors.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace fedaia {

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw IngestError("missing column", 0, name);
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable parse_csv(std::istream& in) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;  // distinguishes an empty last field from a blank line
  char ch = 0;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    if (!record.empty() || field_started) {
      end_field();
      records.push_back(std::move(record));
    }
    record.clear();
  };

  while (in.get(ch)) {
    if (in_quotes) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get(ch);
          field += '"';
        } else {
          in_quotes = false;
        }
      } else {
        field += ch;
      }
      continue;
    }
    switch (ch) {
      case '"':
        if (!field.empty()) {
          throw IngestError("quote inside an unquoted field", static_cast<long>(records.size()),
                            field);
        }
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        end_field();
        field_started = true;
        break;
      case '\r':
        if (in.peek() == '\n') in.get(ch);
        end_record();
        break;
      case '\n':
        end_record();
        break;
      default:
        field += ch;
        field_started = true;
    }
  }
  if (in_quotes) throw IngestError("unterminated quoted field", static_cast<long>(records.size()), "");
  end_record();

  if (records.empty()) throw IngestError("CSV has no header row", 0, "");
  CsvTable table;
  table.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size()) {
      throw IngestError("row has " + std::to_string(records[r].size()) + " fields, header has " +
                            std::to_string(table.header.size()),
                        static_cast<long>(r), "");
    }
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_csv(in);
}

void CsvSchema::validate() const {
  if (target.empty()) throw ConfigError("schema must name a target column");
  if (sensitive.empty()) throw ConfigError("schema must name a sensitive column");
  if (sensitive_positive.empty()) throw ConfigError("schema must list the positive sensitive values");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("train_fraction must lie in (0, 1]");
  std::set<std::string> used{target};
  auto claim = [&](const std::string& col) {
    if (!used.insert(col).second) throw ConfigError("column '" + col + "' has more than one role");
  };
  claim(sensitive);
  for (const auto& c : numeric) claim(c);
  for (const auto& [c, values] : binarize) claim(c);
  for (const auto& c : categorical) claim(c);
  for (const auto& c : drop) claim(c);
}

CsvSchema schema_from_json(const nlohmann::json& j) {
  CsvSchema s;
  s.target = j.at("target").get<std::string>();
  const auto& sens = j.at("sensitive");
  s.sensitive = sens.at("column").get<std::string>();
  s.sensitive_positive = sens.at("positive").get<std::vector<std::string>>();
  s.sensitive_negative = sens.value("negative", std::vector<std::string>{});
  s.numeric = j.value("numeric", std::vector<std::string>{});
  if (j.contains("binarize")) {
    for (const auto& [col, values] : j.at("binarize").items()) {
      s.binarize.emplace_back(col, values.get<std::vector<std::string>>());
    }
  }
  s.categorical = j.value("categorical", std::vector<std::string>{});
  if (j.contains("recode")) {
    s.recode = j.at("recode").get<std::map<std::string, std::map<std::string, std::string>>>();
  }
  s.drop = j.value("drop", std::vector<std::string>{});
  s.standardize = j.value("standardize", true);
  s.standardize_target = j.value("standardize_target", false);
  s.intercept = j.value("intercept", true);
  s.train_fraction = j.value("train_fraction", 1.0);
  s.validate();
  return s;
}

CsvSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema " + path.string());
  try {
    return schema_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("schema " + path.string() + ": " + e.what());
  }
}

namespace {

std::string trimmed(const std::string& s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

double parse_number(const std::string& raw, long row, const std::string& column) {
  const std::string s = trimmed(raw);
  double value = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  if (!s.empty() && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (s.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw IngestError("cannot parse '" + raw + "' as a number", row, column);
  }
  return value;
}

void standardize_columns(Matrix& x, Index first, Index count, std::span<const Index> rows) {
  const double n = static_cast<double>(rows.size());
  for (Index c = first; c < first + count; ++c) {
    double mean = 0.0;
    for (Index r : rows) mean += x(r, c);
    mean /= n;
    double var = 0.0;
    for (Index r : rows) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= n;
    const double scale = var > 0.0 ? std::sqrt(var) : 1.0;
    x.col(c) = (x.col(c).array() - mean) / scale;
  }
}

}  // namespace

IngestedPool ingest_table(const CsvTable& table, const CsvSchema& schema, Rng& rng) {
  schema.validate();
  if (table.rows.empty()) throw IngestError("CSV has no data rows", 0, "");
  const auto n = static_cast<Index>(table.rows.size());

  auto cell = [&](Index row, std::size_t col) {
    std::string value = trimmed(table.rows[static_cast<std::size_t>(row)][col]);
    const auto rc = schema.recode.find(table.header[col]);
    if (rc != schema.recode.end()) {
      const auto hit = rc->second.find(value);
      if (hit != rc->second.end()) value = hit->second;
    }
    return value;
  };

  for (const auto& col : schema.drop) (void)table.column(col);
  const std::size_t target_col = table.column(schema.target);
  const std::size_t sensitive_col = table.column(schema.sensitive);
  std::vector<std::size_t> numeric_cols;
  for (const auto& c : schema.numeric) numeric_cols.push_back(table.column(c));
  std::vector<std::size_t> binarize_cols;
  for (const auto& [c, values] : schema.binarize) binarize_cols.push_back(table.column(c));

  // Categorical levels, sorted for a deterministic column order.
  std::vector<std::pair<std::size_t, std::vector<std::string>>> levels;
  for (const auto& c : schema.categorical) {
    const std::size_t col = table.column(c);
    std::set<std::string> seen;
    for (Index r = 0; r < n; ++r) seen.insert(cell(r, col));
    levels.emplace_back(col, std::vector<std::string>(seen.begin(), seen.end()));
  }

  Index width = static_cast<Index>(numeric_cols.size() + binarize_cols.size()) + 1 + (schema.intercept ? 1 : 0);
  for (const auto& [col, lv] : levels) width += static_cast<Index>(lv.size());

  IngestedPool pool;
  ClientDataset& data = pool.data;
  data.x.resize(n, width);
  data.y.resize(n);

  for (const auto& c : schema.numeric) data.feature_names.push_back(c);
  for (const auto& [c, values] : schema.binarize) data.feature_names.push_back(c);
  for (const auto& [col, lv] : levels) {
    for (const auto& level : lv) data.feature_names.push_back(table.header[col] + "=" + level);
  }
  data.feature_names.push_back(schema.sensitive);
  if (schema.intercept) data.feature_names.push_back("intercept");

  for (Index r = 0; r < n; ++r) {
    const long row_no = static_cast<long>(r) + 1;
    Index c = 0;
    for (std::size_t col : numeric_cols) data.x(r, c++) = parse_number(cell(r, col), row_no, table.header[col]);
    for (std::size_t i = 0; i < binarize_cols.size(); ++i) {
      const auto& positive = schema.binarize[i].second;
      const std::string v = cell(r, binarize_cols[i]);
      data.x(r, c++) = std::find(positive.begin(), positive.end(), v) != positive.end() ? 1.0 : 0.0;
    }
    for (const auto& [col, lv] : levels) {
      const std::string v = cell(r, col);
      for (const auto& level : lv) data.x(r, c++) = v == level ? 1.0 : 0.0;
    }
    const std::string s = cell(r, sensitive_col);
    const bool positive = std::find(schema.sensitive_positive.begin(), schema.sensitive_positive.end(), s) !=
                          schema.sensitive_positive.end();
    if (!positive && !schema.sensitive_negative.empty() &&
        std::find(schema.sensitive_negative.begin(), schema.sensitive_negative.end(), s) ==
            schema.sensitive_negative.end()) {
      throw IngestError("unexpected sensitive value '" + s + "'", row_no, schema.sensitive);
    }
    data.sensitive_col = c;
    data.x(r, c++) = positive ? 1.0 : 0.0;
    if (schema.intercept) data.x(r, c++) = 1.0;
    data.y(r) = parse_number(cell(r, target_col), row_no, schema.target);
  }

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  if (schema.train_fraction < 1.0) std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(schema.train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, order.size());
  pool.train_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  pool.validation_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(pool.train_rows.begin(), pool.train_rows.end());
  std::sort(pool.validation_rows.begin(), pool.validation_rows.end());

  if (schema.standardize) {
    standardize_columns(data.x, 0, static_cast<Index>(numeric_cols.size()), pool.train_rows);
  }
  if (schema.standardize_target) {
    Matrix y = data.y;
    standardize_columns(y, 0, 1, pool.train_rows);
    data.y = y.col(0);
  }
  data.validate();
  return pool;
}

IngestedPool ingest_csv(const std::filesystem::path& path, const CsvSchema& schema, Rng& rng) {
  return ingest_table(read_csv(path), schema, rng);
}

}  // namespace fedaia
