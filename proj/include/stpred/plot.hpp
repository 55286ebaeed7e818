#pragma once

#include <string>
#include <vector>

namespace stpred {

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

// Header line plus numeric rows. Malformed input raises FormatError with the
// offending line number in the message.
CsvTable parse_csv(const std::string& path);

// One SVG curve file per column (plotted against the first column), written
// to out_dir as <column>.svg. Byte-deterministic. Returns the file names.
std::vector<std::string> write_curves(const CsvTable& table,
                                      const std::string& out_dir);

}  // namespace stpred
