#include "bfflow/output.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "bfflow/errors.hpp"

namespace bfflow {

namespace {

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
  if (!out) throw Error("write failed for '" + path + "'");
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string short_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

std::string coord(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

}  // namespace

void Table::add(std::vector<double> row) {
  if (row.size() != columns.size())
    throw std::invalid_argument("table row has " + std::to_string(row.size()) + " values for " +
                                std::to_string(columns.size()) + " columns");
  rows.push_back(std::move(row));
}

std::string format_value(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string to_csv(const Table& table) {
  std::string out;
  for (std::size_t j = 0; j < table.columns.size(); ++j) {
    if (j) out += ',';
    out += csv_field(table.columns[j].header());
  }
  out += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out += ',';
      out += format_value(row[j]);
    }
    out += '\n';
  }
  return out;
}

void write_csv(const std::string& path, const Table& table) { write_file(path, to_csv(table)); }

std::string to_svg(const Table& table, const PlotOptions& opts) {
  constexpr double width = 800, height = 500, left = 80, right = 200, top = 40, bottom = 60;
  const double pw = width - left - right, ph = height - top - bottom;
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

  std::vector<int> ys = opts.y_columns;
  if (ys.empty())
    for (int j = 0; j < static_cast<int>(table.columns.size()); ++j)
      if (j != opts.x_column) ys.push_back(j);

  auto ytrans = [&](double v) { return opts.log_y ? std::log10(v) : v; };
  auto usable = [&](double x, double y) { return std::isfinite(x) && std::isfinite(y) && (!opts.log_y || y > 0); };

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& row : table.rows)
    for (int j : ys) {
      const double x = row[opts.x_column], y = row[j];
      if (!usable(x, y)) continue;
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, ytrans(y));
      ymax = std::max(ymax, ytrans(y));
    }
  if (!(xmin <= xmax)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return top + (1.0 - (ytrans(y) - ymin) / (ymax - ymin)) * ph; };

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width << "\" height=\"" << height
    << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
    << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n"
    << "<text x=\"" << left + pw / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"16\">" << xml_escape(opts.title) << "</text>\n"
    << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (int i = 0; i <= 4; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 4.0, gx = left + pw * i / 4.0;
    s << "<line x1=\"" << coord(gx) << "\" y1=\"" << top + ph << "\" x2=\"" << coord(gx) << "\" y2=\""
      << top + ph + 5 << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << coord(gx) << "\" y=\"" << top + ph + 20
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << short_number(fx)
      << "</text>\n";
    const double fy = ymin + (ymax - ymin) * i / 4.0, gy = top + ph * (1.0 - i / 4.0);
    const double label = opts.log_y ? std::pow(10.0, fy) : fy;
    s << "<line x1=\"" << left - 5 << "\" y1=\"" << coord(gy) << "\" x2=\"" << left << "\" y2=\"" << coord(gy)
      << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << left - 8 << "\" y=\"" << coord(gy + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << short_number(label)
      << "</text>\n";
  }
  if (opts.x_column < static_cast<int>(table.columns.size()))
    s << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 15
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
      << xml_escape(table.columns[opts.x_column].header()) << "</text>\n";
  if (opts.log_y)
    s << "<text x=\"15\" y=\"" << top + ph / 2 << "\" font-family=\"sans-serif\" font-size=\"12\" "
      << "transform=\"rotate(-90 15 " << top + ph / 2 << ")\" text-anchor=\"middle\">log scale</text>\n";

  for (std::size_t k = 0; k < ys.size(); ++k) {
    const char* color = palette[k % 10];
    std::ostringstream pts;
    std::size_t count = 0;
    for (const auto& row : table.rows) {
      const double x = row[opts.x_column], y = row[ys[k]];
      if (!usable(x, y)) continue;
      pts << (count++ ? " " : "") << coord(px(x)) << ',' << coord(py(y));
    }
    if (count > 0)
      s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << pts.str()
        << "\"/>\n";
    const double ly = top + 15 + 18 * static_cast<double>(k);
    s << "<line x1=\"" << left + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
      << "<text x=\"" << left + pw + 35 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">"
      << xml_escape(table.columns[ys[k]].header()) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void write_svg(const std::string& path, const Table& table, const PlotOptions& opts) {
  write_file(path, to_svg(table, opts));
}

void Summary::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_)
    if (k == key) {
      v = value;
      return;
    }
  entries_.emplace_back(key, value);
}

void Summary::set(const std::string& key, double value) { set(key, format_value(value)); }

bool Summary::criterion(const std::string& name, bool pass) {
  set("criterion." + name, pass ? "PASS" : "FAIL");
  all_pass_ = all_pass_ && pass;
  ++criteria_;
  return pass;
}

std::string Summary::str() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  out += std::string("result = ") + (error_ ? "ERROR" : all_pass_ ? "PASS" : "FAIL") + "\n";
  return out;
}

void Summary::write(const std::string& path) const { write_file(path, str()); }

}  // namespace bfflow
