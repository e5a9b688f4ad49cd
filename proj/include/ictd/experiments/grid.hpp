#pragma once

// Image grids: one row per source image, columns [source, class 0, ...,
// class K-1]. The translation into the image's own class gets a coloured
// frame.

#include <array>
#include <span>
#include <stdexcept>
#include <vector>

#include "ictd/io/png.hpp"
#include "ictd/tensor.hpp"

namespace ictd::exp {

inline constexpr std::size_t kGridPad = 2;
inline constexpr std::array<std::uint8_t, 3> kGridBackground{255, 255, 255};
inline constexpr std::array<std::uint8_t, 3> kInClassFrame{220, 20, 60};

struct GridRow {
  Tensor source;                    // (1,3,H,W)
  std::vector<Tensor> translations; // K tensors of the same shape
  int true_label = 0;
};

struct GridLayout {
  std::size_t rows, cols, cell;
};

inline GridLayout grid_layout(std::size_t n_sources, std::size_t k, std::size_t image_size) {
  return {n_sources, k + 1, image_size + 2 * kGridPad};
}

inline io::RgbImage render_grid(std::span<const GridRow> rows) {
  if (rows.empty()) throw std::invalid_argument("render_grid: no source images");
  const Shape shape = rows[0].source.shape();
  if (shape.size() != 4 || shape[0] != 1 || shape[1] != 3)
    throw dimension_error("render_grid: images must be (1,3,H,W)");
  const std::size_t h = shape[2], w = shape[3], k = rows[0].translations.size();
  if (h != w) throw dimension_error("render_grid: images must be square");
  for (const auto& r : rows) {
    if (r.translations.size() != k) throw dimension_error("render_grid: rows have different class counts");
    if (r.source.shape() != shape) throw dimension_error("render_grid: mixed image sizes");
    for (const auto& t : r.translations)
      if (t.shape() != shape) throw dimension_error("render_grid: mixed image sizes");
    if (r.true_label < 0 || static_cast<std::size_t>(r.true_label) >= k)
      throw std::out_of_range("render_grid: true label out of range");
  }
  const auto lay = grid_layout(rows.size(), k, h);
  io::RgbImage img(lay.cols * lay.cell, lay.rows * lay.cell);
  for (std::size_t i = 0; i < img.rgb.size(); i += 3)
    std::copy(kGridBackground.begin(), kGridBackground.end(), img.rgb.begin() + static_cast<std::ptrdiff_t>(i));

  auto paste = [&](const Tensor& t, std::size_t r, std::size_t c, bool framed) {
    const std::size_t x0 = c * lay.cell, y0 = r * lay.cell;
    if (framed)
      for (std::size_t y = 0; y < lay.cell; ++y)
        for (std::size_t x = 0; x < lay.cell; ++x) std::copy(kInClassFrame.begin(), kInClassFrame.end(), img.at(x0 + x, y0 + y));
    const auto cell = io::to_rgb(t.data(), h, w);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) std::copy_n(cell.at(x, y), 3, img.at(x0 + kGridPad + x, y0 + kGridPad + y));
  };
  for (std::size_t r = 0; r < rows.size(); ++r) {
    paste(rows[r].source, r, 0, false);
    for (std::size_t c = 0; c < k; ++c) paste(rows[r].translations[c], r, c + 1, static_cast<int>(c) == rows[r].true_label);
  }
  return img;
}

}  // namespace ictd::exp
