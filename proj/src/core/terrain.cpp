#include "srblab/terrain.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "srblab/error.hpp"

namespace srblab {

Terrain Terrain::heightfield(double x0, double z0, double spacing, int nx, int nz, std::vector<double> heights) {
  require(spacing > 0.0, "terrain: spacing must be positive");
  require(nx >= 2 && nz >= 2, "terrain: grid needs at least 2x2 samples");
  require(heights.size() == static_cast<std::size_t>(nx) * nz, "terrain: heights size does not match grid");
  for (double h : heights) require(std::isfinite(h), "terrain: non-finite height");
  Terrain t;
  t.flat_ = false;
  t.x0_ = x0;
  t.z0_ = z0;
  t.spacing_ = spacing;
  t.nx_ = nx;
  t.nz_ = nz;
  t.heights_ = std::move(heights);
  return t;
}

Terrain Terrain::slope(double angle_rad, double x0, double x1, double z0, double z1, double spacing) {
  require(x1 > x0 && z1 > z0, "terrain: empty slope extent");
  const int nx = static_cast<int>(std::ceil((x1 - x0) / spacing)) + 1;
  const int nz = static_cast<int>(std::ceil((z1 - z0) / spacing)) + 1;
  std::vector<double> h(static_cast<std::size_t>(nx) * nz);
  const double g = std::tan(angle_rad);
  for (int iz = 0; iz < nz; ++iz)
    for (int ix = 0; ix < nx; ++ix) h[static_cast<std::size_t>(iz) * nx + ix] = std::max(0.0, z0 + iz * spacing) * g;
  return heightfield(x0, z0, spacing, nx, nz, std::move(h));
}

Terrain Terrain::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open terrain file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail(ErrorCode::Parse, "terrain " + path + ": " + e.what());
  }
  if (j.value("type", std::string("heightfield")) == "flat") return Terrain{};
  for (const char* key : {"origin", "spacing", "nx", "nz", "heights"})
    if (!j.contains(key)) fail(ErrorCode::Parse, std::string("terrain: missing field '") + key + "'");
  try {
    return heightfield(j["origin"][0].get<double>(), j["origin"][1].get<double>(), j["spacing"].get<double>(),
                       j["nx"].get<int>(), j["nz"].get<int>(), j["heights"].get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("terrain: ") + e.what());
  }
}

void Terrain::save(const std::string& path) const {
  nlohmann::json j;
  if (flat_) {
    j["type"] = "flat";
  } else {
    j["type"] = "heightfield";
    j["origin"] = {x0_, z0_};
    j["spacing"] = spacing_;
    j["nx"] = nx_;
    j["nz"] = nz_;
    j["heights"] = heights_;
  }
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write terrain file: " + path);
  out << j.dump(1) << '\n';
}

bool Terrain::contains(double x, double z) const {
  if (flat_) return true;
  constexpr double tol = 1e-12;
  return x >= x0_ - tol && x <= x_max() + tol && z >= z0_ - tol && z <= z_max() + tol;
}

double Terrain::height(double x, double z) const {
  if (flat_) return 0.0;
  if (!contains(x, z)) fail(ErrorCode::OutOfBounds, "terrain: point outside heightfield extent");
  const double u = (x - x0_) / spacing_, v = (z - z0_) / spacing_;
  const int ix = std::clamp(static_cast<int>(std::floor(u)), 0, nx_ - 2);
  const int iz = std::clamp(static_cast<int>(std::floor(v)), 0, nz_ - 2);
  const double fx = std::clamp(u - ix, 0.0, 1.0), fz = std::clamp(v - iz, 0.0, 1.0);
  const double h0 = at(ix, iz) * (1 - fx) + at(ix + 1, iz) * fx;
  const double h1 = at(ix, iz + 1) * (1 - fx) + at(ix + 1, iz + 1) * fx;
  return h0 * (1 - fz) + h1 * fz;
}

Vec3 Terrain::normal(double x, double z) const {
  if (flat_) return up_axis();
  if (!contains(x, z)) fail(ErrorCode::OutOfBounds, "terrain: point outside heightfield extent");
  const double u = (x - x0_) / spacing_, v = (z - z0_) / spacing_;
  const int ix = std::clamp(static_cast<int>(std::floor(u)), 0, nx_ - 2);
  const int iz = std::clamp(static_cast<int>(std::floor(v)), 0, nz_ - 2);
  const double fx = std::clamp(u - ix, 0.0, 1.0), fz = std::clamp(v - iz, 0.0, 1.0);
  const double dhdx = ((at(ix + 1, iz) - at(ix, iz)) * (1 - fz) + (at(ix + 1, iz + 1) - at(ix, iz + 1)) * fz) / spacing_;
  const double dhdz = ((at(ix, iz + 1) - at(ix, iz)) * (1 - fx) + (at(ix + 1, iz + 1) - at(ix + 1, iz)) * fx) / spacing_;
  return Vec3(-dhdx, 1.0, -dhdz).normalized();
}

}  // namespace srblab
