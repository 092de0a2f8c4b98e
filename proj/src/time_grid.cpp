#include "mkvlab/time_grid.hpp"

#include "mkvlab/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace mkv {

bool same_time(double a, double b)
{
  return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a));
}

std::vector<double> time_grid(double s, double t_end, double dt, const std::vector<double>& mandatory)
{
  if (!(dt > 0.0))
    throw Error("time_grid: dt must be positive");
  if (!(t_end >= s))
    throw Error("time_grid: t_end before s");
  std::set<double> marks{s, t_end};
  for (double t : mandatory)
    if (t > s && t < t_end)
      marks.insert(t);
  std::vector<double> clean;
  for (double t : marks)
    if (clean.empty() || !same_time(t, clean.back()))
      clean.push_back(t);
  clean.back() = t_end;
  std::vector<double> pts{s};
  for (std::size_t k = 1; k < clean.size(); ++k) {
    const double a = clean[k - 1], b = clean[k];
    const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil((b - a) / dt - 1e-9)));
    for (std::size_t j = 1; j < n; ++j)
      pts.push_back(a + (b - a) * static_cast<double>(j) / static_cast<double>(n));
    pts.push_back(b);
  }
  return pts;
}

} // namespace mkv
