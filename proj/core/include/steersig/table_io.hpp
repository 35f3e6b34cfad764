#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace steersig {

// 17 significant digits; parses back to the identical double.
std::string format_double(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index by name; throws DataError when absent.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
};

std::string write_csv(const CsvTable& table);
CsvTable parse_csv(std::string_view text);
CsvTable read_csv_file(const std::filesystem::path& path);

double parse_double(std::string_view s);

}  // namespace steersig
