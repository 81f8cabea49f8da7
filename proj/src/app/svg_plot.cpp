#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "photonstat/app.hpp"

namespace photonstat::app {

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 20, kTop = 36, kBottom = 56;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Axis {
  double lo = 0.0, hi = 1.0;
  bool log = false;
  double pixel_lo = 0.0, pixel_hi = 1.0;

  double map(double v) const {
    const double a = log ? std::log10(lo) : lo;
    const double b = log ? std::log10(hi) : hi;
    const double x = log ? std::log10(v) : v;
    return pixel_lo + (x - a) / (b - a) * (pixel_hi - pixel_lo);
  }

  std::vector<double> ticks() const {
    std::vector<double> t;
    if (log) {
      for (double e = std::floor(std::log10(lo)); e <= std::ceil(std::log10(hi)); e += 1.0) {
        const double v = std::pow(10.0, e);
        if (v >= lo * (1 - 1e-12) && v <= hi * (1 + 1e-12)) t.push_back(v);
      }
      return t;
    }
    const double raw = (hi - lo) / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0})
      if (raw <= m * mag) {
        step = m * mag;
        break;
      }
    for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step)
      t.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
    return t;
  }
};

Axis make_axis(std::vector<double> values, bool log, double p0, double p1) {
  Axis a;
  a.log = log;
  a.pixel_lo = p0;
  a.pixel_hi = p1;
  if (log) std::erase_if(values, [](double v) { return !(v > 0.0); });
  std::erase_if(values, [](double v) { return !std::isfinite(v); });
  if (values.empty()) {
    a.lo = log ? 1.0 : 0.0;
    a.hi = log ? 10.0 : 1.0;
    return a;
  }
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  a.lo = *mn;
  a.hi = *mx;
  if (log) {
    if (a.hi <= a.lo) a.hi = a.lo * 10.0;
    return a;
  }
  if (a.hi <= a.lo) {
    a.lo -= 0.5;
    a.hi += 0.5;
  }
  const double pad = 0.04 * (a.hi - a.lo);
  a.lo -= pad;
  a.hi += pad;
  return a;
}

void frame(std::ostringstream& s, const PlotSpec& spec, const Axis& x, const Axis& y) {
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << escape(spec.title) << "</text>\n";
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  s << "<rect x=\"" << x0 << "\" y=\"" << y1 << "\" width=\"" << x1 - x0 << "\" height=\""
    << y0 - y1 << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : x.ticks()) {
    const double px = x.map(t);
    s << "<line x1=\"" << num(px) << "\" y1=\"" << y0 << "\" x2=\"" << num(px) << "\" y2=\""
      << y0 + 5 << "\" stroke=\"black\"/>";
    s << "<text x=\"" << num(px) << "\" y=\"" << y0 + 18
      << "\" text-anchor=\"middle\" font-size=\"11\">" << tick_label(t) << "</text>\n";
  }
  for (double t : y.ticks()) {
    const double py = y.map(t);
    s << "<line x1=\"" << x0 - 5 << "\" y1=\"" << num(py) << "\" x2=\"" << x0 << "\" y2=\""
      << num(py) << "\" stroke=\"black\"/>";
    s << "<text x=\"" << x0 - 8 << "\" y=\"" << num(py + 4)
      << "\" text-anchor=\"end\" font-size=\"11\">" << tick_label(t) << "</text>\n";
  }
  s << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 14
    << "\" text-anchor=\"middle\" font-size=\"13\">" << escape(spec.x_label) << "</text>\n";
  s << "<text x=\"16\" y=\"" << (y0 + y1) / 2 << "\" text-anchor=\"middle\" font-size=\"13\" "
    << "transform=\"rotate(-90 16 " << (y0 + y1) / 2 << ")\">" << escape(spec.y_label)
    << "</text>\n";
}

// Piecewise-linear viridis approximation.
std::string colormap(double t) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{{68, 1, 84},
                                                               {59, 82, 139},
                                                               {33, 145, 140},
                                                               {94, 201, 98},
                                                               {253, 231, 37}}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), 3);
  const double f = t - static_cast<double>(i);
  char buf[16];
  int rgb[3];
  for (int c = 0; c < 3; ++c)
    rgb[c] = static_cast<int>(std::lround(stops[i][c] + f * (stops[i + 1][c] - stops[i][c])));
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
  return buf;
}

}  // namespace

std::string svg_xy_plot(const PlotSpec& spec, const std::vector<Series>& series) {
  std::vector<double> xs, ys;
  for (const auto& sr : series) {
    xs.insert(xs.end(), sr.x.begin(), sr.x.end());
    for (std::size_t i = 0; i < sr.y.size(); ++i) {
      const double e = i < sr.y_err.size() ? sr.y_err[i] : 0.0;
      ys.push_back(sr.y[i] - e);
      ys.push_back(sr.y[i] + e);
    }
  }
  const Axis x = make_axis(xs, spec.log_x, kLeft, kWidth - kRight);
  const Axis y = make_axis(ys, spec.log_y, kHeight - kBottom, kTop);
  std::ostringstream s;
  frame(s, spec, x, y);
  auto visible = [&](double vx, double vy) {
    return std::isfinite(vx) && std::isfinite(vy) && (!spec.log_x || vx > 0) && (!spec.log_y || vy > 0);
  };
  double legend_y = kTop + 16;
  for (const auto& sr : series) {
    if (sr.line) {
      s << "<polyline fill=\"none\" stroke=\"" << sr.color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < sr.x.size(); ++i)
        if (visible(sr.x[i], sr.y[i])) s << num(x.map(sr.x[i])) << ',' << num(y.map(sr.y[i])) << ' ';
      s << "\"/>\n";
    } else {
      for (std::size_t i = 0; i < sr.x.size(); ++i) {
        if (!visible(sr.x[i], sr.y[i])) continue;
        const double px = x.map(sr.x[i]);
        if (i < sr.y_err.size() && sr.y_err[i] > 0) {
          const double lo = spec.log_y ? std::max(sr.y[i] - sr.y_err[i], y.lo) : sr.y[i] - sr.y_err[i];
          s << "<line x1=\"" << num(px) << "\" y1=\"" << num(y.map(lo)) << "\" x2=\"" << num(px)
            << "\" y2=\"" << num(y.map(sr.y[i] + sr.y_err[i])) << "\" stroke=\"" << sr.color
            << "\"/>";
        }
        s << "<circle cx=\"" << num(px) << "\" cy=\"" << num(y.map(sr.y[i]))
          << "\" r=\"2.5\" fill=\"" << sr.color << "\"/>\n";
      }
    }
    if (!sr.label.empty()) {
      s << "<rect x=\"" << kWidth - kRight - 150 << "\" y=\"" << legend_y - 9
        << "\" width=\"12\" height=\"4\" fill=\"" << sr.color << "\"/>";
      s << "<text x=\"" << kWidth - kRight - 132 << "\" y=\"" << legend_y - 3
        << "\" font-size=\"11\">" << escape(sr.label) << "</text>\n";
      legend_y += 16;
    }
  }
  s << "</svg>\n";
  return s.str();
}

std::string svg_heatmap(const PlotSpec& spec, const std::vector<double>& x_edges,
                        const std::vector<double>& y_edges, const std::vector<double>& values) {
  const Axis x = make_axis({x_edges.front(), x_edges.back()}, false, kLeft, kWidth - kRight);
  const Axis y = make_axis({y_edges.front(), y_edges.back()}, false, kHeight - kBottom, kTop);
  std::ostringstream s;
  frame(s, spec, x, y);
  const std::size_t nx = x_edges.size() - 1, ny = y_edges.size() - 1;
  double vmax = 0.0;
  for (double v : values) vmax = std::max(vmax, v);
  for (std::size_t r = 0; r < ny; ++r) {
    for (std::size_t c = 0; c < nx; ++c) {
      const double v = values[r * nx + c];
      if (v <= 0.0) continue;
      const double px0 = x.map(x_edges[c]), px1 = x.map(x_edges[c + 1]);
      const double py0 = y.map(y_edges[r + 1]), py1 = y.map(y_edges[r]);
      s << "<rect x=\"" << num(px0) << "\" y=\"" << num(py0) << "\" width=\"" << num(px1 - px0)
        << "\" height=\"" << num(py1 - py0) << "\" fill=\"" << colormap(v / vmax) << "\"/>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace photonstat::app
