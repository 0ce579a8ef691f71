#pragma once

#include <string>
#include <vector>

#include "srblab/spatial.hpp"

namespace srblab {

/// Ground surface h(x, z). Either an unbounded flat plane or a bounded
/// heightfield sampled on a regular grid with bilinear interpolation.
class Terrain {
 public:
  /// Flat plane at height 0.
  Terrain() = default;

  /// heights[iz * nx + ix] is the height at (x0 + ix * spacing, z0 + iz * spacing).
  static Terrain heightfield(double x0, double z0, double spacing, int nx, int nz, std::vector<double> heights);
  /// Plane rising along +z with the given slope angle, extent [x0,x1] x [z0,z1].
  static Terrain slope(double angle_rad, double x0, double x1, double z0, double z1, double spacing = 0.25);

  static Terrain load(const std::string& path);
  void save(const std::string& path) const;

  bool is_flat() const { return flat_; }
  bool contains(double x, double z) const;
  /// Throws OutOfBounds outside the grid extent.
  double height(double x, double z) const;
  /// Upward unit normal of the interpolated surface.
  Vec3 normal(double x, double z) const;

  double x_min() const { return x0_; }
  double z_min() const { return z0_; }
  double x_max() const { return x0_ + spacing_ * (nx_ - 1); }
  double z_max() const { return z0_ + spacing_ * (nz_ - 1); }

 private:
  double at(int ix, int iz) const { return heights_[static_cast<std::size_t>(iz) * nx_ + ix]; }

  bool flat_ = true;
  double x0_ = 0.0, z0_ = 0.0, spacing_ = 1.0;
  int nx_ = 0, nz_ = 0;
  std::vector<double> heights_;
};

}  // namespace srblab
