#include "mkvlab/io.hpp"

#include "mkvlab/error.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mkv {

std::string format_double(double v)
{
  if (std::isnan(v))
    return "nan";
  if (std::isinf(v))
    return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void Table::add(std::vector<double> row)
{
  if (row.size() != columns.size())
    throw Error("Table::add: row has " + std::to_string(row.size()) + " entries, expected " +
                std::to_string(columns.size()));
  rows.push_back(std::move(row));
}

std::vector<double> Table::column(const std::string& name) const
{
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j] != name)
      continue;
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows)
      out.push_back(r[j]);
    return out;
  }
  throw Error("Table::column: no column '" + name + "'");
}

std::string to_csv(const Table& t)
{
  std::string out;
  for (std::size_t j = 0; j < t.columns.size(); ++j)
    out += (j ? "," : "") + t.columns[j];
  out += '\n';
  for (const auto& r : t.rows) {
    for (std::size_t j = 0; j < r.size(); ++j)
      out += (j ? "," : "") + format_double(r[j]);
    out += '\n';
  }
  return out;
}

Table parse_csv(const std::string& text)
{
  std::istringstream in(text);
  std::string line;
  Table t;
  auto split = [](const std::string& s) {
    std::vector<std::string> f;
    std::string cur;
    std::istringstream ls(s);
    while (std::getline(ls, cur, ','))
      f.push_back(cur);
    return f;
  };
  if (!std::getline(in, line))
    throw Error("parse_csv: empty input");
  t.columns = split(line);
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    std::vector<double> row;
    for (const auto& f : split(line))
      row.push_back(std::strtod(f.c_str(), nullptr));
    t.add(std::move(row));
  }
  return t;
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw Error("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out)
    throw Error("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fnv1a_hex(const std::string& bytes)
{
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

} // namespace mkv
