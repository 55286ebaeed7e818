#include "stpred/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stpred/errors.hpp"

namespace stpred {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  return out;
}

}  // namespace

CsvTable parse_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open CSV: " + path);
  CsvTable t;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (t.columns.empty()) {
      if (fields.size() < 2)
        throw FormatError("CSV line " + std::to_string(lineno) +
                          ": need at least two columns");
      t.columns = fields;
      continue;
    }
    if (fields.size() != t.columns.size())
      throw FormatError("CSV line " + std::to_string(lineno) +
                        ": expected " + std::to_string(t.columns.size()) +
                        " fields, got " + std::to_string(fields.size()));
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& fv : fields) {
      try {
        std::size_t used = 0;
        const double v = std::stod(fv, &used);
        if (used != fv.size()) throw std::invalid_argument(fv);
        row.push_back(v);
      } catch (const std::exception&) {
        throw FormatError("CSV line " + std::to_string(lineno) +
                          ": non-numeric field '" + fv + "'");
      }
    }
    t.rows.push_back(std::move(row));
  }
  if (t.columns.empty())
    throw FormatError("CSV line 1: empty file, expected a header");
  if (t.rows.empty())
    throw FormatError("CSV line 2: no data rows after the header");
  return t;
}

std::vector<std::string> write_curves(const CsvTable& table,
                                      const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const int width = 640, height = 400, margin = 40;
  std::vector<std::string> files;

  // One curve file per column, plotted over the row index.
  for (std::size_t col = 0; col < table.columns.size(); ++col) {
    double ymin = 1e300, ymax = -1e300;
    for (const auto& row : table.rows) {
      ymin = std::min(ymin, row[col]);
      ymax = std::max(ymax, row[col]);
    }
    if (ymax == ymin) ymax = ymin + 1.0;
    const double xmax = double(table.rows.size() - 1);

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
        << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
        << height << "\">\n";
    svg << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "  <line x1=\"40\" y1=\"360\" x2=\"600\" y2=\"360\" "
           "stroke=\"black\"/>\n";
    svg << "  <line x1=\"40\" y1=\"40\" x2=\"40\" y2=\"360\" "
           "stroke=\"black\"/>\n";
    char buf[64];
    svg << "  <polyline fill=\"none\" stroke=\"steelblue\" "
           "stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const double fx = xmax > 0.0 ? double(i) / xmax : 0.5;
      const double fy = (table.rows[i][col] - ymin) / (ymax - ymin);
      const double px = margin + fx * (width - 2 * margin);
      const double py = (height - margin) - fy * (height - 2 * margin);
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px, py);
      svg << buf;
    }
    svg << "\"/>\n";
    std::snprintf(buf, sizeof buf, "%.6g", ymin);
    svg << "  <text x=\"4\" y=\"362\" font-size=\"11\">" << buf
        << "</text>\n";
    std::snprintf(buf, sizeof buf, "%.6g", ymax);
    svg << "  <text x=\"4\" y=\"44\" font-size=\"11\">" << buf << "</text>\n";
    svg << "  <text x=\"" << width / 2
        << "\" y=\"24\" font-size=\"13\" text-anchor=\"middle\">"
        << table.columns[col] << "</text>\n";
    svg << "</svg>\n";

    const std::string path =
        (std::filesystem::path(out_dir) / (table.columns[col] + ".svg"))
            .string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write plot: " + path);
    out << svg.str();
    files.push_back(path);
  }
  return files;
}

}  // namespace stpred
