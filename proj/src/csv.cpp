#include "spar/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <system_error>

namespace spar::csv {

int Table::col_index(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

Table read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
  strip_cr(line);
  t.header = split_line(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != t.header.size()) {
      throw std::runtime_error(path + ": row " + std::to_string(lineno) + " has " +
                               std::to_string(cells.size()) + " columns, expected " +
                               std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) out << ',';
    out << header[i];
  }
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << row[i];
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& cell, const std::string& path, std::size_t row,
                    const std::string& col) {
  double v = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw std::runtime_error(path + ": row " + std::to_string(row) + " column '" + col +
                             "': cannot parse '" + cell + "' as a number");
  }
  return v;
}

long long parse_count(const std::string& cell, const std::string& path, std::size_t row,
                      const std::string& col) {
  long long v = 0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw std::runtime_error(path + ": row " + std::to_string(row) + " column '" + col +
                             "': cannot parse '" + cell + "' as an integer count");
  }
  return v;
}

}  // namespace spar::csv
