#pragma once

// Elastomer contact: Winkler foundation with Gaussian membrane smoothing,
// asymmetric first-order viscoelastic relaxation, and per-cell Coulomb
// stick-slip for tangential motion.
//
// Grid convention: cell (i, j) of the sensing grid is centered at plate
// coordinates ((i + 0.5) * res, (j + 0.5) * res).

#include "tactwin/core.hpp"

#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace tactwin::elastomer {

enum class Kind { Vhb, Silicone };

[[nodiscard]] inline const char* to_string(Kind k) { return k == Kind::Vhb ? "vhb" : "silicone"; }

struct Params {
  Kind kind = Kind::Vhb;
  double thickness = 2.0;          // mm
  double stiffness = 0.05;         // N/mm^3, pressure per unit indentation
  double shear_stiffness = 0.02;   // N/mm^3, shear stress per unit tangential displacement
  double sigma = 1.0;              // mm, membrane smoothing radius
  double tau_load = 0.01;          // s
  double tau_recover = 0.8;        // s
  double friction = 0.9;
  std::size_t grid_width = 400;
  std::size_t grid_height = 100;
  double resolution = 0.25;        // mm per cell

  [[nodiscard]] static Params vhb() { return Params{}; }
  [[nodiscard]] static Params silicone() {
    Params p;
    p.kind = Kind::Silicone;
    p.thickness = 3.0;
    p.tau_recover = 0.02;
    return p;
  }
  [[nodiscard]] static Params for_kind(Kind k) { return k == Kind::Vhb ? vhb() : silicone(); }

  [[nodiscard]] double cell_area() const { return resolution * resolution; }

  void validate() const {
    if (!(thickness > 0 && stiffness > 0 && shear_stiffness > 0 && sigma > 0 && tau_load > 0 && tau_recover > 0 &&
          friction > 0 && resolution > 0)) {
      throw ConfigError("elastomer: all parameters must be positive");
    }
    if (grid_width < 2 || grid_height < 2) throw ConfigError("elastomer: grid must be at least 2x2");
  }
};

[[nodiscard]] inline HeightMap zero_field(const Params& p) {
  return HeightMap(p.grid_width, p.grid_height, p.resolution, 0.0);
}

// ---------------------------------------------------------------------------
// Indenters

/// Rigid object pressed into the elastomer. `shape` holds the gap between the
/// object surface and its lowest point (0 at the tip, growing away from it),
/// centered on the pose translation. Only the in-plane translation and the
/// rotation about the plate normal are used by the quasi-static model.
struct Indenter {
  HeightMap shape;
  Pose6D pose;
  double force = 0.0;  // N
};

/// Sphere of the given radius, gap = R - sqrt(R^2 - r^2) over its footprint.
[[nodiscard]] inline HeightMap sphere_shape(double radius, double res = 0.125) {
  const auto n = static_cast<std::size_t>(std::ceil(2.0 * radius / res)) + 1;
  HeightMap h(n, n, res);
  const double c = 0.5 * h.extent_x();
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = i * res - c, dy = j * res - c;
      const double r2 = std::min(dx * dx + dy * dy, radius * radius);
      h.at(i, j) = radius - std::sqrt(radius * radius - r2);
    }
  }
  return h;
}

/// Flat-faced punch: zero gap over a size_x x size_y rectangle.
[[nodiscard]] inline HeightMap flat_shape(double size_x, double size_y, double res = 0.125) {
  const auto nx = static_cast<std::size_t>(std::llround(size_x / res)) + 1;
  const auto ny = static_cast<std::size_t>(std::llround(size_y / res)) + 1;
  return HeightMap(nx, ny, size_x / static_cast<double>(nx - 1) * 1.0, 0.0);
}

/// Rounded edge (cylinder of `radius` lying along x, `length` long).
[[nodiscard]] inline HeightMap edge_shape(double length, double radius, double res = 0.125) {
  const auto nx = static_cast<std::size_t>(std::ceil(length / res)) + 1;
  const auto ny = static_cast<std::size_t>(std::ceil(2.0 * radius / res)) + 1;
  HeightMap h(nx, ny, res);
  const double c = 0.5 * h.extent_y();
  for (std::size_t j = 0; j < ny; ++j) {
    const double dy = std::min(std::abs(j * res - c), radius);
    const double gap = radius - std::sqrt(radius * radius - dy * dy);
    for (std::size_t i = 0; i < nx; ++i) h.at(i, j) = gap;
  }
  return h;
}

/// Textured surface from a binary or ASCII greymap (P5 / P2). Bright pixels
/// protrude: gap = depth * (1 - value / maxval).
[[nodiscard]] inline HeightMap image_shape(const std::string& path, double pixel_mm, double depth_mm) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError(path + ": cannot open heightmap image");
  std::string magic;
  f >> magic;
  auto next_int = [&]() {
    int v = 0;
    while (f >> std::ws && f.peek() == '#') {
      std::string skip;
      std::getline(f, skip);
    }
    if (!(f >> v)) throw ConfigError(path + ": malformed greymap header");
    return v;
  };
  if (magic != "P5" && magic != "P2") throw ConfigError(path + ": expected a P2 or P5 greymap");
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (w < 2 || h < 2 || maxval <= 0 || maxval > 255) throw ConfigError(path + ": unsupported greymap dimensions");
  HeightMap out(static_cast<std::size_t>(w), static_cast<std::size_t>(h), pixel_mm);
  if (magic == "P5") f.get();
  for (int j = 0; j < h; ++j) {
    for (int i = 0; i < w; ++i) {
      int v = 0;
      if (magic == "P5") {
        const int c = f.get();
        if (c == EOF) throw ConfigError(path + ": truncated greymap");
        v = c;
      } else if (!(f >> v)) {
        throw ConfigError(path + ": truncated greymap");
      }
      out.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = depth_mm * (1.0 - static_cast<double>(v) / maxval);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quasi-static indentation

/// Separable Gaussian smoothing restricted to the rows/cols of `box`
/// (inclusive x0..x1, y0..y1), reflecting at the grid border so the total is
/// preserved. Values outside the box must be zero on input.
struct Box {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma, double res) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma / res)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double x = i * res;
    k[i + radius] = std::exp(-0.5 * x * x / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

inline long reflect_index(long i, long n) {
  // Half-sample symmetric: ... 1 0 | 0 1 ... n-1 | n-1 n-2 ...
  const long period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace detail

inline void gaussian_smooth(HeightMap& field, double sigma, Box box) {
  const auto kernel = detail::gaussian_kernel(sigma, field.resolution());
  const long r = static_cast<long>(kernel.size() / 2);
  const long w = static_cast<long>(field.width());
  const long h = static_cast<long>(field.height());
  const long bx0 = std::max(0L, static_cast<long>(box.x0) - r), bx1 = std::min(w - 1, static_cast<long>(box.x1) + r);
  const long by0 = std::max(0L, static_cast<long>(box.y0) - r), by1 = std::min(h - 1, static_cast<long>(box.y1) + r);
  // Rows that can be non-zero after the x pass are the input rows; a reflected
  // source may lie outside the input box only near the grid border, where the
  // expanded box already reaches it. `tmp` holds rows by0..by1 only.
  const long rows = by1 - by0 + 1;
  std::vector<double> tmp(static_cast<std::size_t>(rows * w), 0.0);
  const auto& in = field.values();
  for (long y = static_cast<long>(box.y0); y <= static_cast<long>(box.y1); ++y) {
    const double* src = in.data() + y * w;
    double* dst = tmp.data() + (y - by0) * w;
    for (long x = bx0; x <= bx1; ++x) {
      double acc = 0.0;
      if (x - r >= 0 && x + r < w) {
        for (long k = -r; k <= r; ++k) acc += kernel[k + r] * src[x + k];
      } else {
        for (long k = -r; k <= r; ++k) acc += kernel[k + r] * src[detail::reflect_index(x + k, w)];
      }
      dst[x] = acc;
    }
  }
  auto& out = field.values();
  for (long y = by0; y <= by1; ++y) {
    const bool interior = y - r >= by0 && y + r <= by1;
    for (long x = bx0; x <= bx1; ++x) {
      double acc = 0.0;
      for (long k = -r; k <= r; ++k) {
        const long yy = interior ? y + k : detail::reflect_index(y + k, h);
        if (yy < by0 || yy > by1) continue;  // zero after the x pass
        acc += kernel[k + r] * tmp[(yy - by0) * w + x];
      }
      out[y * w + x] = acc;
    }
  }
}

struct IndentResult {
  HeightMap displacement;  // smoothed, clamped to [0, thickness]
  HeightMap raw;           // clipped rigid overlap before smoothing
  double penetration = 0.0;
  bool saturated = false;
  Box footprint;
  bool in_contact = false;
};

/// Gap of the indenter surface above each grid cell in its footprint.
struct GapSample {
  std::size_t index;
  double gap;
};

[[nodiscard]] inline std::vector<GapSample> indenter_gaps(const Params& p, const Indenter& ind, Box* box_out = nullptr) {
  std::vector<GapSample> out;
  const HeightMap& s = ind.shape;
  const double cx = 0.5 * s.extent_x(), cy = 0.5 * s.extent_y();
  const double reach = std::hypot(cx, cy);
  const double tx = ind.pose.translation.x(), ty = ind.pose.translation.y();
  const double yaw = ind.pose.rotation.z();
  const double cs = std::cos(yaw), sn = std::sin(yaw);
  const double res = p.resolution;
  auto clamp_idx = [](double v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(n - 1)));
  };
  Box box{clamp_idx(std::floor((tx - reach) / res - 0.5), p.grid_width), clamp_idx(std::floor((ty - reach) / res - 0.5), p.grid_height),
          clamp_idx(std::ceil((tx + reach) / res - 0.5), p.grid_width), clamp_idx(std::ceil((ty + reach) / res - 0.5), p.grid_height)};
  bool any = false;
  Box hit{p.grid_width, p.grid_height, 0, 0};
  for (std::size_t j = box.y0; j <= box.y1; ++j) {
    for (std::size_t i = box.x0; i <= box.x1; ++i) {
      const double px = (i + 0.5) * res - tx, py = (j + 0.5) * res - ty;
      const double lx = cs * px + sn * py + cx;
      const double ly = -sn * px + cs * py + cy;
      if (lx < 0.0 || ly < 0.0 || lx > s.extent_x() || ly > s.extent_y()) continue;
      out.push_back({j * p.grid_width + i, heightmap_sample(s, lx, ly)});
      any = true;
      hit.x0 = std::min(hit.x0, i);
      hit.y0 = std::min(hit.y0, j);
      hit.x1 = std::max(hit.x1, i);
      hit.y1 = std::max(hit.y1, j);
    }
  }
  if (box_out != nullptr) *box_out = any ? hit : Box{};
  return out;
}

/// Total Winkler force for a rigid penetration depth.
[[nodiscard]] inline double winkler_force(const std::vector<GapSample>& gaps, double depth, const Params& p) {
  double sum = 0.0;
  for (const auto& g : gaps) sum += std::max(0.0, depth - g.gap);
  return p.stiffness * sum * p.cell_area();
}

/// Solves for the penetration carrying the requested force (bisection to
/// 1e-6 N), smooths the overlap with the membrane kernel and clamps to the
/// elastomer thickness. Forces needing more than `thickness` of penetration
/// saturate (plate bottom-out) and set `saturated`.
[[nodiscard]] inline IndentResult quasi_static_indent(const Params& p, const Indenter& ind) {
  if (!(ind.force >= 0.0)) throw std::invalid_argument("quasi_static_indent: force must be >= 0");
  IndentResult r;
  r.displacement = zero_field(p);
  r.raw = zero_field(p);
  if (ind.force == 0.0) return r;
  Box box;
  const auto gaps = indenter_gaps(p, ind, &box);
  if (gaps.empty()) return r;
  double lo = 0.0, hi = p.thickness;
  if (winkler_force(gaps, hi, p) < ind.force) {
    r.saturated = true;
    r.penetration = hi;
  } else {
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double f = winkler_force(gaps, mid, p);
      if (std::abs(f - ind.force) < 1e-7) {
        lo = hi = mid;
        break;
      }
      (f < ind.force ? lo : hi) = mid;
    }
    r.penetration = 0.5 * (lo + hi);
  }
  auto& raw = r.raw.values();
  for (const auto& g : gaps) raw[g.index] = std::max(0.0, r.penetration - g.gap);
  r.displacement = r.raw;
  gaussian_smooth(r.displacement, p.sigma, box);
  for (double& v : r.displacement.values()) v = std::clamp(v, 0.0, p.thickness);
  r.footprint = box;
  r.in_contact = true;
  return r;
}

/// Winkler pressure (N/mm^2) of a displacement field.
[[nodiscard]] inline HeightMap pressure_field(const HeightMap& displacement, const Params& p) {
  HeightMap out = displacement;
  for (double& v : out.values()) v *= p.stiffness;
  return out;
}

// ---------------------------------------------------------------------------
// Dynamics

struct DeformationState {
  HeightMap displacement;
  HeightMap shear_x;
  HeightMap shear_y;
  double time = 0.0;

  [[nodiscard]] static DeformationState rest(const Params& p) { return {zero_field(p), zero_field(p), zero_field(p), 0.0}; }
};

/// Per-cell relaxation toward `target`, using tau_load where the target is
/// deeper than the current state and tau_recover where it is shallower.
[[nodiscard]] inline DeformationState step_dynamics(const DeformationState& s, const HeightMap& target, double dt, const Params& p) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_dynamics: dt must be positive");
  if (!s.displacement.same_grid(target)) throw std::invalid_argument("step_dynamics: grid mismatch");
  DeformationState out = s;
  const double a_load = 1.0 - std::exp(-dt / p.tau_load);
  const double a_rec = 1.0 - std::exp(-dt / p.tau_recover);
  auto& d = out.displacement.values();
  const auto& t = target.values();
  for (std::size_t k = 0; k < d.size(); ++k) {
    const double diff = t[k] - d[k];
    if (diff == 0.0) continue;
    d[k] += diff * (diff > 0.0 ? a_load : a_rec);
    d[k] = std::clamp(d[k], 0.0, p.thickness);
  }
  out.time = s.time + dt;
  return out;
}

struct SlipEvent {
  double time = 0.0;       // s, start of the slipping step
  double duration = 0.0;   // s
  double speed = 0.0;      // mm/s
  double area = 0.0;       // mm^2 of slipped cells
  double pressure = 0.0;   // N/mm^2, mean over slipped cells
  double friction = 0.0;
};

struct ContactReport {
  std::vector<std::uint8_t> mask;  // grid_width * grid_height, 1 = in contact
  double contact_area = 0.0;       // mm^2
  double mean_pressure = 0.0;      // N/mm^2 over the contact
  double normal_force = 0.0;       // N
  double slip_distance = 0.0;      // mm, slip this step averaged over the contact area
  std::vector<SlipEvent> slip_events;
};

struct TangentialResult {
  DeformationState state;
  ContactReport report;
};

/// Coulomb stick-slip. Shear accumulates with `delta` in contact cells; where
/// shear_stiffness * |shear| exceeds friction * pressure the cell slips, its
/// shear is projected back to the Coulomb limit and the step reports one slip
/// event (speed |delta| / dt). Cells out of contact lose their shear.
[[nodiscard]] inline TangentialResult tangential_update(const DeformationState& s, const Vec2& delta, const Params& p,
                                                        const HeightMap& pressure, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("tangential_update: dt must be positive");
  if (!s.displacement.same_grid(pressure)) throw std::invalid_argument("tangential_update: grid mismatch");
  TangentialResult r{s, {}};
  auto& sx = r.state.shear_x.values();
  auto& sy = r.state.shear_y.values();
  const auto& pr = pressure.values();
  ContactReport& rep = r.report;
  rep.mask.assign(pr.size(), 0);
  const double cell = p.cell_area();
  std::size_t n_contact = 0, n_slip = 0;
  double pressure_sum = 0.0, slip_pressure_sum = 0.0, slip_sum = 0.0;
  for (std::size_t k = 0; k < pr.size(); ++k) {
    if (!(pr[k] > 1e-12)) {
      sx[k] = 0.0;
      sy[k] = 0.0;
      continue;
    }
    rep.mask[k] = 1;
    ++n_contact;
    pressure_sum += pr[k];
    double x = sx[k] + delta.x(), y = sy[k] + delta.y();
    const double mag = std::hypot(x, y);
    const double limit = p.friction * pr[k] / p.shear_stiffness;
    if (mag > limit) {
      const double scale = limit / mag;
      slip_sum += mag - limit;
      x *= scale;
      y *= scale;
      ++n_slip;
      slip_pressure_sum += pr[k];
    }
    sx[k] = x;
    sy[k] = y;
  }
  rep.contact_area = static_cast<double>(n_contact) * cell;
  rep.normal_force = pressure_sum * cell;
  if (n_contact > 0) {
    rep.mean_pressure = pressure_sum / static_cast<double>(n_contact);
    rep.slip_distance = slip_sum / static_cast<double>(n_contact);
  }
  if (n_slip > 0) {
    rep.slip_events.push_back(SlipEvent{s.time, dt, delta.norm() / dt, static_cast<double>(n_slip) * cell,
                                        slip_pressure_sum / static_cast<double>(n_slip), p.friction});
  }
  return r;
}

}  // namespace tactwin::elastomer
