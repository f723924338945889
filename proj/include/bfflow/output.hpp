#pragma once

// Serialization of scenario results: CSV tables (one header line naming
// columns and units, '.' decimal separator, LF line endings), SVG 1.1 line
// plots of those tables, and the plain-text `key = value` summary.

#include <string>
#include <utility>
#include <vector>

namespace bfflow {

/// A column header "name [unit]"; an empty unit prints as "[1]".
struct Column {
  std::string name;
  std::string unit;
  std::string header() const { return name + " [" + (unit.empty() ? "1" : unit) + "]"; }
};

struct Table {
  std::vector<Column> columns;
  std::vector<std::vector<double>> rows;

  void add(std::vector<double> row);  // throws std::invalid_argument on a width mismatch
};

/// Values printed with %.17g (round-trip exact); non-finite values print as nan/inf.
std::string format_value(double x);
std::string to_csv(const Table& table);
/// Throws bfflow::Error when the file cannot be written.
void write_csv(const std::string& path, const Table& table);

struct PlotOptions {
  std::string title;
  bool log_y = false;
  int x_column = 0;
  std::vector<int> y_columns;  // empty: every column except x
};

/// Standalone SVG 1.1 document with one polyline per y column. Non-finite
/// points (and nonpositive ones on a log axis) are skipped.
std::string to_svg(const Table& table, const PlotOptions& opts);
void write_svg(const std::string& path, const Table& table, const PlotOptions& opts);

/// Ordered `key = value` report with PASS/FAIL criteria.
class Summary {
 public:
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  /// Records `criterion.<name> = PASS|FAIL` and returns `pass`.
  bool criterion(const std::string& name, bool pass);
  /// Marks the run as aborted: the closing line becomes `result = ERROR`.
  void mark_error() { error_ = true; }
  bool all_pass() const { return all_pass_; }
  int criteria() const { return criteria_; }
  std::string str() const;
  void write(const std::string& path) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  bool all_pass_ = true;
  bool error_ = false;
  int criteria_ = 0;
};

}  // namespace bfflow
