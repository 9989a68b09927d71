#include "scafds/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>

#include "scafds/errors.hpp"

namespace scafds::csv {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace

Table read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  t.header = split_line(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != t.header.size())
      throw IoError(path + ":" + std::to_string(lineno) + ": expected " +
                    std::to_string(t.header.size()) + " columns, got " +
                    std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

int column(const Table& t, const std::string& name) {
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return static_cast<int>(i);
  return -1;
}

int require_column(const Table& t, const std::string& name) {
  const int c = column(t, name);
  if (c < 0) throw IoError("missing required column '" + name + "'");
  return c;
}

double parse_double(const std::string& cell, const std::string& context) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = first + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last)
    throw IoError(context + ": cannot parse number '" + cell + "'");
  return v;
}

long long parse_long(const std::string& cell, const std::string& context) {
  long long v = 0;
  const char* first = cell.data();
  const char* last = first + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last)
    throw IoError(context + ": cannot parse integer '" + cell + "'");
  return v;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);  // fixed \n endings for byte-stable reruns
  if (!out) throw IoError("cannot write " + path);
  for (const std::string& l : lines) out << l << '\n';
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace scafds::csv
