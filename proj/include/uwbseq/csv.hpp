#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace uwbseq {

// %.9g
std::string fmt_sig(double v);
// %.17g, round-trips doubles exactly.
std::string fmt_exact(double v);

std::string hash_hex(std::uint64_t h);
std::uint64_t parse_hash_hex(const std::string& s);

// "# config_hash=<hex> seed=<n>", written as the first line of every output CSV.
std::string provenance_line(std::uint64_t config_hash, std::uint64_t seed);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const;
};

// Numeric CSV with one header line; '#' lines are skipped. Non-numeric cells raise.
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace uwbseq
