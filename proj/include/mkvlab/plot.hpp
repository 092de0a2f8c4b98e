#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mkv {

struct PlotSeries
{
  std::string name;
  std::vector<double> x, y;
  bool dashed = false;
};

struct PlotStyle
{
  std::string title;
  std::string x_label = "t";
  std::string y_label;
  bool log_y = false;
  int width = 720;
  int height = 440;
};

//! Self-contained SVG line plot with axes, ticks and a legend. Output bytes
//! depend only on the inputs. On a log axis non-positive values are skipped.
std::string render_svg(const std::vector<PlotSeries>& series, const PlotStyle& style);
void write_svg(const std::filesystem::path& path, const std::vector<PlotSeries>& series, const PlotStyle& style);

} // namespace mkv
