#include "mkvlab/plot.hpp"

#include "mkvlab/error.hpp"
#include "mkvlab/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace mkv {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
constexpr int kLeft = 80, kRight = 170, kTop = 40, kBottom = 56;

std::string num(double v, const char* fmt = "%.2f")
{
  char buf[48];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::string escape(const std::string& s)
{
  std::string out;
  for (char c : s) {
    switch (c) {
    case '&': out += "&amp;"; break;
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '"': out += "&quot;"; break;
    default: out += c;
    }
  }
  return out;
}

//! Round tick spacing (1, 2, 5 times a power of ten) giving about n ticks.
std::vector<double> linear_ticks(double lo, double hi, int n)
{
  const double raw = (hi - lo) / n;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> t;
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step)
    t.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
  return t;
}

} // namespace

std::string render_svg(const std::vector<PlotSeries>& series, const PlotStyle& style)
{
  if (series.empty())
    throw Error("render_svg: no series");
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size())
      throw Error("render_svg: series '" + s.name + "' has mismatched x and y");
    if (s.x.size() < 2)
      throw Error("render_svg: series '" + s.name + "' needs at least two points");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (style.log_y && s.y[i] <= 0.0))
        continue;
      const double y = style.log_y ? std::log10(s.y[i]) : s.y[i];
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, y);
      yhi = std::max(yhi, y);
    }
  }
  if (!std::isfinite(xlo) || !std::isfinite(ylo))
    throw Error("render_svg: no plottable points");
  if (xhi == xlo) {
    xlo -= 0.5;
    xhi += 0.5;
  }
  if (style.log_y) {
    ylo = std::floor(ylo);
    yhi = std::max(std::ceil(yhi), ylo + 1.0);
  } else {
    const double pad = yhi > ylo ? 0.05 * (yhi - ylo) : std::max(0.5, 0.1 * std::abs(yhi));
    ylo -= pad;
    yhi += pad;
  }
  const int W = style.width, H = style.height;
  const double pw = W - kLeft - kRight, ph = H - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xlo) / (xhi - xlo) * pw; };
  auto py = [&](double y) { return kTop + (yhi - y) / (yhi - ylo) * ph; };

  std::string o;
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(W) + "\" height=\"" + std::to_string(H) +
       "\" viewBox=\"0 0 " + std::to_string(W) + " " + std::to_string(H) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o += "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(W) + "\" height=\"" + std::to_string(H) + "\" fill=\"white\"/>\n";
  if (!style.title.empty())
    o += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
         escape(style.title) + "</text>\n";

  // ticks and grid
  for (double v : linear_ticks(xlo, xhi, 6)) {
    const double X = px(v);
    o += "<line x1=\"" + num(X) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(X) + "\" y2=\"" + num(kTop + ph) +
         "\" stroke=\"#e0e0e0\"/>\n";
    o += "<text x=\"" + num(X) + "\" y=\"" + num(kTop + ph + 16) + "\" text-anchor=\"middle\">" + num(v, "%g") +
         "</text>\n";
  }
  std::vector<double> yt;
  if (style.log_y) {
    for (double e = ylo; e <= yhi + 1e-9; e += 1.0)
      yt.push_back(e);
  } else {
    yt = linear_ticks(ylo, yhi, 5);
  }
  for (double v : yt) {
    const double Y = py(v);
    o += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(Y) + "\" x2=\"" + num(kLeft + pw) + "\" y2=\"" + num(Y) +
         "\" stroke=\"#e0e0e0\"/>\n";
    const std::string label = style.log_y ? "1e" + num(v, "%.0f") : num(v, "%g");
    o += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(Y + 4) + "\" text-anchor=\"end\">" + label + "</text>\n";
  }
  o += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
       "\" fill=\"none\" stroke=\"black\"/>\n";
  o += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(H - 12) + "\" text-anchor=\"middle\">" +
       escape(style.x_label) + "</text>\n";
  o += "<text x=\"18\" y=\"" + num(kTop + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
       num(kTop + ph / 2) + ")\">" + escape(style.y_label + (style.log_y ? " (log)" : "")) + "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const std::string color = kPalette[k % std::size(kPalette)];
    const std::string dash = s.dashed ? " stroke-dasharray=\"6 4\"" : "";
    std::string pts;
    auto flush = [&] {
      if (!pts.empty())
        o += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\"" + dash + " points=\"" + pts +
             "\"/>\n";
      pts.clear();
    };
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (style.log_y && s.y[i] <= 0.0)) {
        flush();
        continue;
      }
      const double y = style.log_y ? std::log10(s.y[i]) : s.y[i];
      pts += (pts.empty() ? "" : " ") + num(px(s.x[i])) + "," + num(py(y));
    }
    flush();
    const double ly = kTop + 10 + 18.0 * static_cast<double>(k);
    const double lx = kLeft + pw + 12;
    o += "<line x1=\"" + num(lx) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(lx + 24) + "\" y2=\"" + num(ly) +
         "\" stroke=\"" + color + "\" stroke-width=\"1.5\"" + dash + "/>\n";
    o += "<text x=\"" + num(lx + 30) + "\" y=\"" + num(ly + 4) + "\">" + escape(s.name) + "</text>\n";
  }
  o += "</svg>\n";
  return o;
}

void write_svg(const std::filesystem::path& path, const std::vector<PlotSeries>& series, const PlotStyle& style)
{
  write_text(path, render_svg(series, style));
}

} // namespace mkv
