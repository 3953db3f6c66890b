#pragma once

// Static scatter plots of the run tables as binary PPM images. Points are
// drawn as 3 x 3 squares; colours cycle over a fixed palette by label in
// order of first appearance.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gixd/core.hpp"
#include "gixd/io.hpp"

namespace gixd {

struct Canvas {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;

  Canvas(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 255) {}

  void set(long x, long y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= long(width) || y >= long(height))
      return;
    const std::size_t i = (std::size_t(y) * width + std::size_t(x)) * 3;
    rgb[i] = c[0];
    rgb[i + 1] = c[1];
    rgb[i + 2] = c[2];
  }

  std::vector<unsigned char> ppm() const {
    const std::string head = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<unsigned char> out(head.begin(), head.end());
    out.insert(out.end(), rgb.begin(), rgb.end());
    return out;
  }
};

struct ScatterPoint {
  double x = 0, y = 0;
  std::string label;
};

inline Canvas scatter_plot(const std::vector<ScatterPoint> &pts, std::size_t width = 640,
                           std::size_t height = 480) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> palette{{{31, 119, 180},
                                                                       {255, 127, 14},
                                                                       {44, 160, 44},
                                                                       {214, 39, 40},
                                                                       {148, 103, 189},
                                                                       {140, 86, 75},
                                                                       {227, 119, 194},
                                                                       {127, 127, 127}}};
  Canvas c(width, height);
  const long margin = 20;
  for (long x = margin; x < long(width) - margin; ++x)
    c.set(x, long(height) - margin, {0, 0, 0});
  for (long y = margin; y <= long(height) - margin; ++y)
    c.set(margin, y, {0, 0, 0});
  std::vector<ScatterPoint> finite;
  for (const auto &p : pts)
    if (std::isfinite(p.x) && std::isfinite(p.y))
      finite.push_back(p);
  if (finite.empty())
    return c;
  auto [xl, xh] = std::minmax_element(finite.begin(), finite.end(),
                                      [](auto &a, auto &b) { return a.x < b.x; });
  auto [yl, yh] = std::minmax_element(finite.begin(), finite.end(),
                                      [](auto &a, auto &b) { return a.y < b.y; });
  const double x0 = xl->x, x1 = xh->x > x0 ? xh->x : x0 + 1;
  const double y0 = yl->y, y1 = yh->y > y0 ? yh->y : y0 + 1;
  std::map<std::string, std::size_t> colour;
  for (const auto &p : finite) {
    const auto it = colour.emplace(p.label, colour.size()).first;
    const auto col = palette[it->second % palette.size()];
    const long px = margin + 2 + long(std::lround((p.x - x0) / (x1 - x0) * double(width - 2 * margin - 4)));
    const long py =
        long(height) - margin - 2 - long(std::lround((p.y - y0) / (y1 - y0) * double(height - 2 * margin - 4)));
    for (long dy = -1; dy <= 1; ++dy)
      for (long dx = -1; dx <= 1; ++dx)
        c.set(px + dx, py + dy, col);
  }
  return c;
}

/// Rows of whitespace-separated columns, skipping '#' comments.
inline std::vector<std::vector<std::string>> read_table(const std::filesystem::path &path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(detail::read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    auto tok = detail::split_ws(line);
    if (!tok.empty() && tok[0][0] != '#')
      rows.push_back(std::move(tok));
  }
  return rows;
}

/// Plots of a run directory: positions.ppm (|Q| over frame, coloured by
/// phase label) and b_<card>.ppm for every refinement series. Returns the
/// written file names.
inline std::vector<std::string> write_report(const std::filesystem::path &run_dir,
                                             const std::filesystem::path &out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec)
    throw DataError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::string> written;
  const auto positions = run_dir / "positions.txt";
  if (!std::filesystem::exists(positions))
    throw DataError("missing " + positions.string());
  std::vector<ScatterPoint> pts;
  for (const auto &r : read_table(positions)) {
    if (r.size() != 4)
      throw DataError(positions.string() + ": expected 4 columns");
    pts.push_back({detail::parse_double(r[0], positions.string()), detail::parse_double(r[2], positions.string()),
                   r[3]});
  }
  detail::write_bytes(out_dir / "positions.ppm", scatter_plot(pts).ppm());
  written.push_back("positions.ppm");

  std::vector<std::filesystem::path> series;
  for (const auto &e : std::filesystem::directory_iterator(run_dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("refine_", 0) == 0 && e.path().extension() == ".txt")
      series.push_back(e.path());
  }
  std::sort(series.begin(), series.end());
  for (const auto &path : series) {
    std::vector<ScatterPoint> b;
    for (const auto &r : read_table(path))
      if (r.size() == 10 && r[9] == "ok")
        b.push_back({detail::parse_double(r[0], path.string()), detail::parse_double(r[3], path.string()), "b"});
    const auto card = path.stem().string().substr(7);
    detail::write_bytes(out_dir / ("b_" + card + ".ppm"), scatter_plot(b).ppm());
    written.push_back("b_" + card + ".ppm");
  }
  return written;
}

}  // namespace gixd
