#pragma once

#include <string>
#include <vector>

namespace spar::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col_index(const std::string& name) const;  // -1 if absent
};

// Plain comma-separated files, UTF-8, '.' decimal point, no quoting; cells
// must not contain commas. Throws std::runtime_error with row/column
// diagnostics on malformed input.
Table read_csv(const std::string& path);

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

// shortest representation that round-trips
std::string format_double(double v);

double parse_double(const std::string& cell, const std::string& path, std::size_t row,
                    const std::string& col);
long long parse_count(const std::string& cell, const std::string& path, std::size_t row,
                      const std::string& col);

}  // namespace spar::csv
