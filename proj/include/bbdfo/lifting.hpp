#pragma once

// Piecewise-constant block liftings from a coarse grid to pixel space.

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bbdfo/classifier.hpp"
#include "bbdfo/errors.hpp"
#include "bbdfo/vector.hpp"

namespace bbdfo {

/// Sparse 0/1 lifting matrix D stored as a pixel -> block assignment.
///
/// Rows are split into grid_h contiguous bands of floor(h/grid_h) pixels, the
/// last (h mod grid_h) bands taking one extra row; columns likewise. Block
/// index layout mirrors pixels: (band_row * grid_w + band_col) * channels + ch.
class LiftingOperator {
 public:
  LiftingOperator(Shape image, std::size_t grid_h, std::size_t grid_w, std::size_t level = 1)
      : image_(image), grid_h_(grid_h), grid_w_(grid_w), level_(level) {
    if (image.size() == 0) throw DimensionError("image has zero entries");
    if (grid_h == 0 || grid_w == 0) throw ConfigError("grid dimensions must be positive");
    if (grid_h > image.height || grid_w > image.width)
      throw ConfigError("grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                        " exceeds image " + to_string(image));
    const auto row_band = band_map(image.height, grid_h);
    const auto col_band = band_map(image.width, grid_w);
    assignment_.resize(image.size());
    blocks_.assign(num_blocks(), {});
    for (std::size_t r = 0; r < image.height; ++r)
      for (std::size_t c = 0; c < image.width; ++c)
        for (std::size_t ch = 0; ch < image.channels; ++ch) {
          const std::size_t pix = image.index(r, c, ch);
          const std::size_t blk = (row_band[r] * grid_w + col_band[c]) * image.channels + ch;
          assignment_[pix] = blk;
          blocks_[blk].push_back(pix);
        }
  }

  [[nodiscard]] const Shape& image_shape() const noexcept { return image_; }
  [[nodiscard]] std::size_t grid_h() const noexcept { return grid_h_; }
  [[nodiscard]] std::size_t grid_w() const noexcept { return grid_w_; }
  [[nodiscard]] std::size_t level() const noexcept { return level_; }
  /// m, the number of lifted variables.
  [[nodiscard]] std::size_t num_blocks() const noexcept { return grid_h_ * grid_w_ * image_.channels; }
  [[nodiscard]] std::size_t num_pixels() const noexcept { return image_.size(); }
  [[nodiscard]] bool is_pixel_level() const noexcept {
    return grid_h_ == image_.height && grid_w_ == image_.width;
  }

  [[nodiscard]] std::size_t block_of(std::size_t pixel) const { return assignment_.at(pixel); }
  [[nodiscard]] const std::vector<std::size_t>& assignment() const noexcept { return assignment_; }
  [[nodiscard]] const std::vector<std::size_t>& pixels_of(std::size_t block) const {
    return blocks_.at(block);
  }

  /// Band index of every row (or column) for `extent` split into `bands`.
  static std::vector<std::size_t> band_map(std::size_t extent, std::size_t bands) {
    const std::size_t base = extent / bands;
    const std::size_t extra = extent % bands;
    const std::size_t short_bands = bands - extra;
    std::vector<std::size_t> out;
    out.reserve(extent);
    for (std::size_t band = 0; band < bands; ++band) {
      const std::size_t len = band < short_bands ? base : base + 1;
      out.insert(out.end(), len, band);
    }
    return out;
  }

 private:
  Shape image_;
  std::size_t grid_h_;
  std::size_t grid_w_;
  std::size_t level_;
  std::vector<std::size_t> assignment_;
  std::vector<std::vector<std::size_t>> blocks_;
};

inline LiftingOperator build_block_lifting(const Shape& image, std::size_t grid_h,
                                           std::size_t grid_w) {
  return LiftingOperator(image, grid_h, grid_w);
}

/// Pixel-level (identity) lifting.
inline LiftingOperator pixel_lifting(const Shape& image, std::size_t level = 1) {
  return LiftingOperator(image, image.height, image.width, level);
}

/// D * coeffs.
inline Vector apply_lifting(const LiftingOperator& op, std::span<const double> coeffs) {
  if (coeffs.size() != op.num_blocks())
    throw DimensionError("lifting expects " + std::to_string(op.num_blocks()) +
                         " coefficients, got " + std::to_string(coeffs.size()));
  Vector out(op.num_pixels());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = coeffs[op.assignment()[i]];
  return out;
}

/// Next level: both grid axes doubled and capped at the image; once the
/// doubled grid covers the image in both axes the result is pixel level.
inline LiftingOperator refine_level(const LiftingOperator& current, const Shape& image) {
  if (!(current.image_shape() == image)) throw DimensionError("lifting/image shape mismatch");
  if (current.is_pixel_level()) throw ConfigError("lifting is already at pixel level");
  const std::size_t gh = std::min(current.grid_h() * 2, image.height);
  const std::size_t gw = std::min(current.grid_w() * 2, image.width);
  return LiftingOperator(image, gh, gw, current.level() + 1);
}

/// Componentwise clamp into [lower, upper].
inline Vector reproject(std::span<const double> v, double lower, double upper) {
  Vector out(v.begin(), v.end());
  for (double& x : out) x = std::clamp(x, lower, upper);
  return out;
}

}  // namespace bbdfo
