#pragma once

// Minimal raster plotting: an RGB canvas with points and polylines, written
// as PNG through zlib. Enough for latent scatter plots and trajectory paths.

#include <zlib.h>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mohba::plot {

using Color = std::array<std::uint8_t, 3>;

/// Tableau-like categorical palette; index wraps.
inline Color palette(int k) {
  static constexpr std::array<Color, 10> colors{{{31, 119, 180},
                                                 {255, 127, 14},
                                                 {44, 160, 44},
                                                 {214, 39, 40},
                                                 {148, 103, 189},
                                                 {140, 86, 75},
                                                 {227, 119, 194},
                                                 {127, 127, 127},
                                                 {188, 189, 34},
                                                 {23, 190, 207}}};
  const int n = static_cast<int>(colors.size());
  return colors[static_cast<std::size_t>(((k % n) + n) % n)];
}

class Canvas {
 public:
  Canvas(int width, int height, Color background = {255, 255, 255})
      : width_(width), height_(height), pixels_(static_cast<std::size_t>(width) * height * 3) {
    if (width < 1 || height < 1) throw std::invalid_argument("Canvas: size must be positive");
    for (std::size_t k = 0; k < pixels_.size(); k += 3) std::copy(background.begin(), background.end(), pixels_.begin() + k);
  }

  int width() const { return width_; }
  int height() const { return height_; }

  void set(int x, int y, Color c) {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
    const auto k = (static_cast<std::size_t>(y) * width_ + x) * 3;
    std::copy(c.begin(), c.end(), pixels_.begin() + static_cast<std::ptrdiff_t>(k));
  }

  Color get(int x, int y) const {
    const auto k = (static_cast<std::size_t>(y) * width_ + x) * 3;
    return {pixels_[k], pixels_[k + 1], pixels_[k + 2]};
  }

  void disc(int cx, int cy, int r, Color c) {
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx)
        if (dx * dx + dy * dy <= r * r) set(cx + dx, cy + dy, c);
  }

  void line(int x0, int y0, int x1, int y1, Color c) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  std::vector<std::uint8_t> encode_png() const {
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(height_) * (1 + 3 * static_cast<std::size_t>(width_)));
    for (int y = 0; y < height_; ++y) {
      raw.push_back(0);
      const auto row = pixels_.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(y) * width_ * 3);
      raw.insert(raw.end(), row, row + static_cast<std::ptrdiff_t>(width_) * 3);
    }
    uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> z(zlen);
    if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
      throw std::runtime_error("png: zlib compression failed");
    z.resize(zlen);

    std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    auto be32 = [](std::vector<std::uint8_t>& v, std::uint32_t x) {
      for (int s = 24; s >= 0; s -= 8) v.push_back(static_cast<std::uint8_t>(x >> s));
    };
    auto chunk = [&](const char* type, const std::vector<std::uint8_t>& data) {
      be32(out, static_cast<std::uint32_t>(data.size()));
      std::vector<std::uint8_t> body(type, type + 4);
      body.insert(body.end(), data.begin(), data.end());
      out.insert(out.end(), body.begin(), body.end());
      be32(out, static_cast<std::uint32_t>(crc32(0L, body.data(), static_cast<uInt>(body.size()))));
    };
    std::vector<std::uint8_t> ihdr;
    be32(ihdr, static_cast<std::uint32_t>(width_));
    be32(ihdr, static_cast<std::uint32_t>(height_));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit RGB, no interlace
    chunk("IHDR", ihdr);
    chunk("IDAT", z);
    chunk("IEND", {});
    return out;
  }

  void write_png(const std::string& path) const {
    const auto bytes = encode_png();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("failed writing '" + path + "'");
  }

 private:
  int width_, height_;
  std::vector<std::uint8_t> pixels_;
};

/// Affine map from data bounds to pixel coordinates with a margin; y points up.
struct Viewport {
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  int width = 640, height = 640, margin = 24;

  static Viewport fit(const Eigen::MatrixXd& xy, int width, int height, int margin = 24) {
    Viewport v{0, 1, 0, 1, width, height, margin};
    if (xy.rows() > 0) {
      v.xmin = xy.col(0).minCoeff();
      v.xmax = xy.col(0).maxCoeff();
      v.ymin = xy.col(1).minCoeff();
      v.ymax = xy.col(1).maxCoeff();
    }
    auto pad = [](double& lo, double& hi) {
      if (!(hi > lo)) {
        lo -= 1;
        hi += 1;
      }
    };
    pad(v.xmin, v.xmax);
    pad(v.ymin, v.ymax);
    return v;
  }

  int px(double x) const { return margin + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * (width - 2 * margin - 1))); }
  int py(double y) const {
    return height - 1 - margin - static_cast<int>(std::lround((y - ymin) / (ymax - ymin) * (height - 2 * margin - 1)));
  }
};

inline void draw_axes(Canvas& c, const Viewport& v) {
  const Color grey{160, 160, 160};
  c.line(v.margin, v.height - 1 - v.margin, v.width - 1 - v.margin, v.height - 1 - v.margin, grey);
  c.line(v.margin, v.margin, v.margin, v.height - 1 - v.margin, grey);
}

/// Scatter of 2-column coordinates, coloured by label (all one colour if labels empty).
inline Canvas scatter(const Eigen::MatrixXd& xy, const std::vector<int>& labels, int width = 640, int height = 640) {
  if (xy.cols() < 2) throw std::invalid_argument("scatter: need 2 columns");
  if (!labels.empty() && labels.size() != static_cast<std::size_t>(xy.rows()))
    throw std::invalid_argument("scatter: label count mismatch");
  Canvas c(width, height);
  const Viewport v = Viewport::fit(xy.leftCols(2), width, height);
  draw_axes(c, v);
  for (Eigen::Index r = 0; r < xy.rows(); ++r)
    c.disc(v.px(xy(r, 0)), v.py(xy(r, 1)), 3, palette(labels.empty() ? 0 : labels[static_cast<std::size_t>(r)]));
  return c;
}

/// Overlaid 2-D paths; each path is a (steps x 2) matrix drawn in palette(color_of[p]).
inline Canvas paths(const std::vector<Eigen::MatrixXd>& ps, const std::vector<int>& color_of, int width = 640, int height = 640) {
  Eigen::Index total = 0;
  for (const auto& p : ps) total += p.rows();
  Eigen::MatrixXd all(total, 2);
  Eigen::Index off = 0;
  for (const auto& p : ps) {
    all.middleRows(off, p.rows()) = p.leftCols(2);
    off += p.rows();
  }
  Canvas c(width, height);
  const Viewport v = Viewport::fit(all, width, height);
  draw_axes(c, v);
  for (std::size_t k = 0; k < ps.size(); ++k) {
    const Color col = palette(k < color_of.size() ? color_of[k] : 0);
    const auto& p = ps[k];
    for (Eigen::Index t = 1; t < p.rows(); ++t) c.line(v.px(p(t - 1, 0)), v.py(p(t - 1, 1)), v.px(p(t, 0)), v.py(p(t, 1)), col);
    if (p.rows() > 0) c.disc(v.px(p(p.rows() - 1, 0)), v.py(p(p.rows() - 1, 1)), 2, col);
  }
  return c;
}

}  // namespace mohba::plot
