#include "uwbseq/csv.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace uwbseq {

std::string fmt_sig(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string fmt_exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t parse_hash_hex(const std::string& s) { return std::stoull(s, nullptr, 16); }

std::string provenance_line(std::uint64_t config_hash, std::uint64_t seed) {
  return "# config_hash=" + hash_hex(config_hash) + " seed=" + std::to_string(seed);
}

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    have_header = true;
    break;
  }
  if (!have_header) throw std::runtime_error(path.string() + ": empty file");
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) table.header.push_back(cell);
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    row.reserve(table.header.size());
    const char* p = line.c_str();
    while (true) {
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(p, &end);
      if (end == p) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": non-numeric cell");
      row.push_back(v);
      if (*end == ',') {
        p = end + 1;
      } else {
        break;
      }
    }
    if (row.size() != table.header.size())
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": column count mismatch");
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace uwbseq
