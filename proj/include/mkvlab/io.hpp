#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mkv {

//! %.17g, with nan/inf spelled out.
std::string format_double(double v);

//! Numeric table with a header row.
struct Table
{
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  explicit Table(std::vector<std::string> cols = {})
    : columns(std::move(cols))
  {}
  void add(std::vector<double> row);
  std::vector<double> column(const std::string& name) const;
};

//! Comma-separated, header row, LF line endings.
std::string to_csv(const Table& t);
Table parse_csv(const std::string& text);

//! Writes bytes exactly as given (binary mode).
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

//! 64-bit FNV-1a digest as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

} // namespace mkv
