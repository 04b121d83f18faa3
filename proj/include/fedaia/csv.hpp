#pragma once

#include <fedaia/federated.hpp>

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace fedaia {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Throws IngestError naming the column when absent.
  std::size_t column(const std::string& name) const;
};

// RFC 4180: comma separated, optional double-quoted fields with "" escapes,
// CRLF or LF line endings, a mandatory header row. Ragged rows are errors.
CsvTable parse_csv(std::istream& in);
CsvTable read_csv(const std::filesystem::path& path);

// Column roles for turning a tabular file into a regression pool.
struct CsvSchema {
  std::string target;
  std::string sensitive;
  // Raw values of the sensitive column mapped to 1. When `sensitive_negative`
  // is non-empty, values outside both lists are errors; otherwise they map to 0.
  std::vector<std::string> sensitive_positive;
  std::vector<std::string> sensitive_negative;
  std::vector<std::string> numeric;
  // column -> raw values mapped to 1 (all others 0)
  std::vector<std::pair<std::string, std::vector<std::string>>> binarize;
  std::vector<std::string> categorical;
  // column -> (raw value -> replacement), applied before binarize/categorical
  std::map<std::string, std::map<std::string, std::string>> recode;
  std::vector<std::string> drop;
  bool standardize = true;
  bool standardize_target = false;
  bool intercept = true;
  // Rows used to estimate standardization statistics.
  double train_fraction = 1.0;

  void validate() const;
};

CsvSchema schema_from_json(const nlohmann::json& j);
CsvSchema load_schema(const std::filesystem::path& path);

struct IngestedPool {
  ClientDataset data;
  std::vector<Index> train_rows;
  std::vector<Index> validation_rows;
};

// Column order: numeric, binarized, one-hot categorical levels (sorted),
// sensitive, intercept. Numeric columns are z-scored with statistics from
// the training rows. Errors carry the 1-based data row and column name.
IngestedPool ingest_table(const CsvTable& table, const CsvSchema& schema, Rng& rng);
IngestedPool ingest_csv(const std::filesystem::path& path, const CsvSchema& schema, Rng& rng);

}  // namespace fedaia
