#pragma once

#include <string>
#include <vector>

namespace scafds::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Plain comma-separated files, no quoting (none of the pipeline formats need
// it). Throws IoError on missing files or ragged rows.
Table read_table(const std::string& path);

int column(const Table& t, const std::string& name);          // -1 when absent
int require_column(const Table& t, const std::string& name);  // IoError when absent

double parse_double(const std::string& cell, const std::string& context);
long long parse_long(const std::string& cell, const std::string& context);

// Full-precision decimal that reparses to the same bits.
std::string format_double(double v);

void write_lines(const std::string& path, const std::vector<std::string>& lines);

}  // namespace scafds::csv
