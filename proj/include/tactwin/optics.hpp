#pragma once

// Ray tracing of the finger's internal optical path:
// camera -> (at most one specular bounce off the back mirror) -> back plate
// or side window.
//
// Frames. Everything lives in one finger frame (mm). The back plate is a
// rectangle centered on its pose with local +z as its outward normal; plate
// hits are reported in plate coordinates [0, length] x [0, width] measured
// from the plate's local (-x, -y) corner. The mirror is a sagittal curve
// z = sag(x) in its local x-z plane, extruded along local y; its reflective
// side faces local +z.
//
// Camera. Pinhole with the optical axis on local +z, image u along local +x
// and v along local +y. Pixel (i, j) is centered at (i + 0.5, j + 0.5).

#include "tactwin/config.hpp"
#include "tactwin/core.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tactwin::optics {

struct CameraModel {
  int width = 640;
  int height = 480;
  double fov_diag_deg = 120.0;
  Pose6D pose;
  /// Flips the image u axis. A camera seen through a flat mirror is exactly a
  /// mirrored camera at the reflected position.
  bool mirrored = false;

  [[nodiscard]] double focal_px() const {
    const double half_diag = 0.5 * std::hypot(static_cast<double>(width), static_cast<double>(height));
    return half_diag / std::tan(0.5 * deg2rad(fov_diag_deg));
  }

  /// Unit ray direction in the finger frame through continuous pixel position (u, v).
  [[nodiscard]] Vec3 ray_direction(double u, double v) const {
    double x = u - 0.5 * width;
    if (mirrored) x = -x;
    const Vec3 local(x, v - 0.5 * height, focal_px());
    return pose.apply_direction(local).normalized();
  }

  void validate() const {
    if (width <= 0 || height <= 0) throw ConfigError("camera: resolution must be positive");
    if (!(fov_diag_deg > 0.0 && fov_diag_deg < 180.0)) throw ConfigError("camera: fov must be in (0, 180) degrees");
  }
};

enum class MirrorKind { None, Flat, CircularArc, Conic };

[[nodiscard]] inline const char* to_string(MirrorKind k) {
  switch (k) {
    case MirrorKind::None: return "none";
    case MirrorKind::Flat: return "flat";
    case MirrorKind::CircularArc: return "arc";
    case MirrorKind::Conic: return "conic";
  }
  return "?";
}

struct MirrorProfile {
  MirrorKind kind = MirrorKind::None;
  /// Signed radius of curvature at the vertex. Positive bends toward local +z
  /// (concave as seen from the reflective side).
  double radius = 0.0;
  /// Conic constant; 0 is a circle. Ignored unless kind == Conic.
  double conic_k = 0.0;
  double x_min = -50.0;
  double x_max = 50.0;
  double half_width = 15.0;
  Pose6D pose;

  [[nodiscard]] bool present() const { return kind != MirrorKind::None; }

  [[nodiscard]] double curvature() const {
    if (kind == MirrorKind::Flat || kind == MirrorKind::None) return 0.0;
    return 1.0 / radius;
  }
  [[nodiscard]] double conic() const { return kind == MirrorKind::Conic ? conic_k : 0.0; }

  /// Surface height over local x, or nullopt where the conic is undefined.
  [[nodiscard]] std::optional<double> sag(double x) const {
    const double c = curvature();
    const double disc = 1.0 - (1.0 + conic()) * c * c * x * x;
    if (disc < 0.0) return std::nullopt;
    return c * x * x / (1.0 + std::sqrt(disc));
  }

  void validate() const {
    if (!present()) return;
    if (!(x_max > x_min)) throw ConfigError("mirror: x_max must exceed x_min");
    if (!(half_width > 0.0)) throw ConfigError("mirror: half_width must be positive");
    if (kind != MirrorKind::Flat && !(std::abs(radius) > 0.0)) throw ConfigError("mirror: radius must be non-zero");
    // The curve is a graph over x, so it is simple as long as the sag exists
    // on the whole span.
    for (int i = 0; i <= 64; ++i) {
      const double x = x_min + (x_max - x_min) * i / 64.0;
      if (!sag(x)) throw ConfigError("mirror: profile undefined over [x_min, x_max]");
    }
  }
};

struct Rect {
  Pose6D pose;
  double size_x = 1.0;
  double size_y = 1.0;
};

struct BackPlate {
  Rect rect{Pose6D(Vec3(50.0, 0.0, 0.0), Vec3::Zero()), 100.0, 25.0};

  [[nodiscard]] double length() const { return rect.size_x; }
  [[nodiscard]] double width() const { return rect.size_y; }
  [[nodiscard]] Vec3 normal() const { return rect.pose.apply_direction(Vec3::UnitZ()); }
};

struct FingerOptics {
  CameraModel camera;
  MirrorProfile mirror;
  BackPlate plate;
  std::vector<Rect> side_windows;

  /// Throws ConfigError for unusable geometry, including a camera placed
  /// behind the mirror surface.
  void validate() const {
    camera.validate();
    mirror.validate();
    if (!(plate.rect.size_x > 0.0 && plate.rect.size_y > 0.0)) throw ConfigError("plate: side lengths must be positive");
    for (const auto& w : side_windows) {
      if (!(w.size_x > 0.0 && w.size_y > 0.0)) throw ConfigError("window: side lengths must be positive");
    }
    if (mirror.present()) {
      const Vec3 c = mirror.pose.apply_inverse(camera.pose.translation);
      if (c.x() >= mirror.x_min && c.x() <= mirror.x_max && std::abs(c.y()) <= mirror.half_width) {
        const auto s = mirror.sag(c.x());
        if (s && c.z() <= *s) throw ConfigError("optics: camera lies inside the mirror volume");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Tracing

enum class HitKind : std::uint8_t { Miss = 0, Plate = 1, Window = 2 };

struct Hit {
  HitKind kind = HitKind::Miss;
  int window = -1;
  /// Plate coordinates (mm) for plate hits; window-local coordinates in
  /// [0, size_x] x [0, size_y] for window hits.
  Vec2 point = Vec2::Zero();
  /// Angle between the ray and the plate normal (plate hits only).
  double incidence = 0.0;
  bool via_mirror = false;
};

namespace detail {

inline constexpr double kEps = 1e-9;

struct PreparedRect {
  RigidFrame frame;
  double half_x = 0.0;
  double half_y = 0.0;

  explicit PreparedRect(const Rect& r) : frame(r.pose), half_x(0.5 * r.size_x), half_y(0.5 * r.size_y) {}

  /// Ray parameter and local (x, y) in [-s/2, s/2] of the hit, if any.
  [[nodiscard]] std::optional<std::pair<double, Vec2>> intersect(const Vec3& o, const Vec3& d) const {
    const Vec3 lo = frame.apply_inverse(o);
    const Vec3 ld = frame.apply_inverse_direction(d);
    if (std::abs(ld.z()) < 1e-15) return std::nullopt;
    const double t = -lo.z() / ld.z();
    if (t <= kEps) return std::nullopt;
    const double x = lo.x() + t * ld.x();
    const double y = lo.y() + t * ld.y();
    if (std::abs(x) > half_x || std::abs(y) > half_y) return std::nullopt;
    return std::make_pair(t, Vec2(x, y));
  }
};

struct MirrorHit {
  double t;
  Vec3 point;   // finger frame
  Vec3 normal;  // finger frame, unit, reflective side
};

[[nodiscard]] inline Vec3 reflect(const Vec3& d, const Vec3& n) { return d - 2.0 * d.dot(n) * n; }

}  // namespace detail

/// Geometry with every frame evaluated once; trace many rays through it.
class Tracer {
 public:
  explicit Tracer(const FingerOptics& f)
      : optics_(&f), camera_(f.camera.pose), mirror_(f.mirror.pose), plate_(f.plate.rect),
        plate_normal_(f.plate.normal()), focal_(f.camera.focal_px()) {
    f.validate();
    windows_.reserve(f.side_windows.size());
    for (const auto& w : f.side_windows) windows_.emplace_back(w);
  }

  [[nodiscard]] Vec3 ray_direction(double u, double v) const {
    const auto& cam = optics_->camera;
    double x = u - 0.5 * cam.width;
    if (cam.mirrored) x = -x;
    return camera_.apply_direction(Vec3(x, v - 0.5 * cam.height, focal_)).normalized();
  }

  /// Traces the ray through continuous pixel position (u, v).
  [[nodiscard]] Hit trace(double u, double v) const {
    const Vec3 o = camera_.translation;
    const Vec3 d = ray_direction(u, v);
    double t_direct = 0.0;
    Hit direct = first_surface(o, d, &t_direct);
    const auto m = intersect_mirror(o, d);
    if (!m || m->t >= t_direct) return direct;
    Hit h = first_surface(m->point, detail::reflect(d, m->normal));
    h.via_mirror = h.kind != HitKind::Miss;
    return h;
  }

  /// Ray against the extruded implicit conic c x^2 + c (1+k) z^2 - 2 z = 0,
  /// restricted to the sag branch and the profile's span.
  [[nodiscard]] std::optional<detail::MirrorHit> intersect_mirror(const Vec3& o, const Vec3& d) const {
    const MirrorProfile& m = optics_->mirror;
    if (!m.present()) return std::nullopt;
    const Vec3 lo = mirror_.apply_inverse(o);
    const Vec3 ld = mirror_.apply_inverse_direction(d);
    const double c = m.curvature();
    const double q = c * (1.0 + m.conic());
    const double a = c * ld.x() * ld.x() + q * ld.z() * ld.z();
    const double b = 2.0 * (c * lo.x() * ld.x() + q * lo.z() * ld.z()) - 2.0 * ld.z();
    const double cc = c * lo.x() * lo.x() + q * lo.z() * lo.z() - 2.0 * lo.z();
    std::array<double, 2> roots{};
    int n = 0;
    if (std::abs(a) < 1e-14) {
      if (std::abs(b) < 1e-15) return std::nullopt;
      roots[n++] = -cc / b;
    } else {
      const double disc = b * b - 4.0 * a * cc;
      if (disc < 0.0) return std::nullopt;
      const double sq = std::sqrt(disc);
      const double qq = -0.5 * (b + (b >= 0.0 ? sq : -sq));
      roots[n++] = qq / a;
      if (qq != 0.0) roots[n++] = cc / qq;
      if (n == 2 && roots[1] < roots[0]) std::swap(roots[0], roots[1]);
    }
    for (int i = 0; i < n; ++i) {
      const double t = roots[i];
      if (t <= detail::kEps) continue;
      const Vec3 p = lo + t * ld;
      if (p.x() < m.x_min || p.x() > m.x_max || std::abs(p.y()) > m.half_width) continue;
      const auto s = m.sag(p.x());
      if (!s || std::abs(p.z() - *s) > 1e-6 * (1.0 + std::abs(*s))) continue;
      // Gradient of the implicit form, flipped to face local +z at the vertex.
      const Vec3 n_local = -Vec3(2.0 * c * p.x(), 0.0, 2.0 * q * p.z() - 2.0).normalized();
      return detail::MirrorHit{t, mirror_.apply(p), mirror_.apply_direction(n_local)};
    }
    return std::nullopt;
  }

  /// First plate or window hit along a ray; the mirror is not considered.
  [[nodiscard]] Hit first_surface(const Vec3& o, const Vec3& d, double* t_out = nullptr) const {
    Hit best;
    double best_t = std::numeric_limits<double>::infinity();
    if (auto h = plate_.intersect(o, d)) {
      best_t = h->first;
      best.kind = HitKind::Plate;
      best.point = Vec2(h->second.x() + plate_.half_x, h->second.y() + plate_.half_y);
      best.incidence = std::acos(std::min(1.0, std::abs(d.dot(plate_normal_))));
    }
    for (std::size_t i = 0; i < windows_.size(); ++i) {
      if (auto h = windows_[i].intersect(o, d); h && h->first < best_t) {
        best_t = h->first;
        best = Hit{};
        best.kind = HitKind::Window;
        best.window = static_cast<int>(i);
        best.point = Vec2(h->second.x() + windows_[i].half_x, h->second.y() + windows_[i].half_y);
      }
    }
    if (t_out != nullptr) *t_out = best_t;
    return best;
  }

 private:
  const FingerOptics* optics_;
  RigidFrame camera_;
  RigidFrame mirror_;
  detail::PreparedRect plate_;
  Vec3 plate_normal_;
  double focal_;
  std::vector<detail::PreparedRect> windows_;
};

/// Traces the ray through continuous pixel position (u, v).
[[nodiscard]] inline Hit trace_ray(const FingerOptics& f, double u, double v) { return Tracer(f).trace(u, v); }

/// Traces the center of pixel (i, j).
[[nodiscard]] inline Hit trace_pixel(const FingerOptics& f, int i, int j) {
  if (i < 0 || j < 0 || i >= f.camera.width || j >= f.camera.height) {
    throw std::out_of_range("trace_pixel: pixel outside the camera resolution");
  }
  return Tracer(f).trace(i + 0.5, j + 0.5);
}

// ---------------------------------------------------------------------------
// Pixel map

class PixelPlateMap {
 public:
  PixelPlateMap() = default;
  PixelPlateMap(int width, int height) : width_(width), height_(height), hits_(static_cast<std::size_t>(width) * height) {}

  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] const Hit& at(int i, int j) const { return hits_[static_cast<std::size_t>(j) * width_ + i]; }
  [[nodiscard]] Hit& at(int i, int j) { return hits_[static_cast<std::size_t>(j) * width_ + i]; }
  [[nodiscard]] const std::vector<Hit>& hits() const { return hits_; }

  struct Counts {
    std::size_t plate = 0, window = 0, miss = 0;
  };
  [[nodiscard]] Counts counts() const {
    Counts c;
    for (const auto& h : hits_) {
      if (h.kind == HitKind::Plate) ++c.plate;
      else if (h.kind == HitKind::Window) ++c.window;
      else ++c.miss;
    }
    return c;
  }

  // Binary layout, little-endian:
  //   "PLYTPMAP" | u32 width | u32 height | per pixel:
  //   u8 kind | u8 via_mirror | i16 window | f64 x | f64 y | f64 incidence
  [[nodiscard]] std::vector<std::uint8_t> serialize() const;
  [[nodiscard]] static PixelPlateMap deserialize(std::span<const std::uint8_t> bytes);

  friend bool operator==(const PixelPlateMap& a, const PixelPlateMap& b) {
    if (a.width_ != b.width_ || a.height_ != b.height_) return false;
    for (std::size_t k = 0; k < a.hits_.size(); ++k) {
      const Hit& x = a.hits_[k];
      const Hit& y = b.hits_[k];
      if (x.kind != y.kind || x.window != y.window || x.via_mirror != y.via_mirror || x.point != y.point ||
          x.incidence != y.incidence) {
        return false;
      }
    }
    return true;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Hit> hits_;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_f64(std::vector<std::uint8_t>& b, double v) {
  std::uint64_t u = 0;
  std::memcpy(&u, &v, 8);
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}
inline std::uint64_t get_le(std::span<const std::uint8_t> b, std::size_t off, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[off + i]) << (8 * i);
  return v;
}
inline double get_f64(std::span<const std::uint8_t> b, std::size_t off) {
  const std::uint64_t u = get_le(b, off, 8);
  double v = 0;
  std::memcpy(&v, &u, 8);
  return v;
}

inline constexpr std::size_t kMapRecord = 1 + 1 + 2 + 8 + 8 + 8;

}  // namespace detail

inline std::vector<std::uint8_t> PixelPlateMap::serialize() const {
  std::vector<std::uint8_t> b;
  b.reserve(16 + hits_.size() * detail::kMapRecord);
  for (char c : std::string_view("PLYTPMAP")) b.push_back(static_cast<std::uint8_t>(c));
  detail::put_u32(b, static_cast<std::uint32_t>(width_));
  detail::put_u32(b, static_cast<std::uint32_t>(height_));
  for (const auto& h : hits_) {
    b.push_back(static_cast<std::uint8_t>(h.kind));
    b.push_back(h.via_mirror ? 1 : 0);
    const auto w = static_cast<std::uint16_t>(static_cast<std::int16_t>(h.window));
    b.push_back(static_cast<std::uint8_t>(w & 0xff));
    b.push_back(static_cast<std::uint8_t>(w >> 8));
    detail::put_f64(b, h.point.x());
    detail::put_f64(b, h.point.y());
    detail::put_f64(b, h.incidence);
  }
  return b;
}

inline PixelPlateMap PixelPlateMap::deserialize(std::span<const std::uint8_t> b) {
  if (b.size() < 16 || std::string_view(reinterpret_cast<const char*>(b.data()), 8) != "PLYTPMAP") {
    throw std::runtime_error("pixel map: bad magic");
  }
  const auto w = static_cast<int>(detail::get_le(b, 8, 4));
  const auto h = static_cast<int>(detail::get_le(b, 12, 4));
  PixelPlateMap m(w, h);
  if (b.size() != 16 + m.hits_.size() * detail::kMapRecord) throw std::runtime_error("pixel map: size mismatch");
  std::size_t off = 16;
  for (auto& hit : m.hits_) {
    hit.kind = static_cast<HitKind>(b[off]);
    hit.via_mirror = b[off + 1] != 0;
    hit.window = static_cast<std::int16_t>(static_cast<std::uint16_t>(detail::get_le(b, off + 2, 2)));
    hit.point = Vec2(detail::get_f64(b, off + 4), detail::get_f64(b, off + 12));
    hit.incidence = detail::get_f64(b, off + 20);
    off += detail::kMapRecord;
  }
  return m;
}

/// One entry per camera pixel, identical to trace_pixel on each.
[[nodiscard]] inline PixelPlateMap pixel_plate_map(const FingerOptics& f) {
  const Tracer tracer(f);
  PixelPlateMap map(f.camera.width, f.camera.height);
  for (int j = 0; j < f.camera.height; ++j) {
    for (int i = 0; i < f.camera.width; ++i) map.at(i, j) = tracer.trace(i + 0.5, j + 0.5);
  }
  return map;
}

// ---------------------------------------------------------------------------
// Metrics

inline constexpr double kDefaultGridDensity = 2.0;  // samples per mm

/// Fraction of plate cells (grid_density cells per mm) hit by at least one pixel.
[[nodiscard]] inline double coverage_from_map(const PixelPlateMap& map, const BackPlate& plate,
                                              double grid_density = kDefaultGridDensity) {
  const auto nx = static_cast<int>(std::ceil(plate.length() * grid_density - 1e-9));
  const auto ny = static_cast<int>(std::ceil(plate.width() * grid_density - 1e-9));
  std::vector<std::uint8_t> occ(static_cast<std::size_t>(nx) * ny, 0);
  for (const auto& h : map.hits()) {
    if (h.kind != HitKind::Plate) continue;
    const int ix = std::clamp(static_cast<int>(h.point.x() * grid_density), 0, nx - 1);
    const int iy = std::clamp(static_cast<int>(h.point.y() * grid_density), 0, ny - 1);
    occ[static_cast<std::size_t>(iy) * nx + ix] = 1;
  }
  std::size_t n = 0;
  for (auto o : occ) n += o;
  return static_cast<double>(n) / static_cast<double>(occ.size());
}

[[nodiscard]] inline double coverage_metric(const FingerOptics& f, double grid_density = kDefaultGridDensity) {
  return coverage_from_map(pixel_plate_map(f), f.plate, grid_density);
}

struct AngleStats {  // radians
  double mean = 0.0;
  double max = 0.0;
  std::size_t samples = 0;
};

[[nodiscard]] inline AngleStats orthogonality_from_map(const PixelPlateMap& map) {
  AngleStats s;
  double sum = 0.0;
  for (const auto& h : map.hits()) {
    if (h.kind != HitKind::Plate) continue;
    sum += h.incidence;
    s.max = std::max(s.max, h.incidence);
    ++s.samples;
  }
  if (s.samples == 0) throw std::domain_error("orthogonality_metric: no pixel reaches the plate");
  s.mean = sum / static_cast<double>(s.samples);
  return s;
}

[[nodiscard]] inline AngleStats orthogonality_metric(const FingerOptics& f) {
  return orthogonality_from_map(pixel_plate_map(f));
}

/// Coefficient of variation of the local magnification ||d(plate)/d(pixel)||_F,
/// estimated with one-pixel forward differences over pixels whose right and
/// lower neighbours also land on the plate by the same path (direct or mirrored).
[[nodiscard]] inline double distortion_from_map(const PixelPlateMap& map, const BackPlate& plate,
                                                double grid_density = kDefaultGridDensity) {
  if (coverage_from_map(map, plate, grid_density) <= 0.5) {
    throw std::domain_error("distortion_metric: plate coverage must exceed 0.5");
  }
  double sum = 0.0, sum2 = 0.0;
  std::size_t n = 0;
  for (int j = 0; j + 1 < map.height(); ++j) {
    for (int i = 0; i + 1 < map.width(); ++i) {
      const Hit& h = map.at(i, j);
      const Hit& hu = map.at(i + 1, j);
      const Hit& hv = map.at(i, j + 1);
      if (h.kind != HitKind::Plate || hu.kind != HitKind::Plate || hv.kind != HitKind::Plate) continue;
      if (hu.via_mirror != h.via_mirror || hv.via_mirror != h.via_mirror) continue;
      const Vec2 du = hu.point - h.point;
      const Vec2 dv = hv.point - h.point;
      const double mag = std::sqrt(du.squaredNorm() + dv.squaredNorm());
      sum += mag;
      sum2 += mag * mag;
      ++n;
    }
  }
  if (n < 2) throw std::domain_error("distortion_metric: too few plate samples");
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sum2 / static_cast<double>(n) - mean * mean);
  return std::sqrt(var) / mean;
}

[[nodiscard]] inline double distortion_metric(const FingerOptics& f, double grid_density = kDefaultGridDensity) {
  return distortion_from_map(pixel_plate_map(f), f.plate, grid_density);
}

struct Report {
  double coverage = 0.0;
  AngleStats orthogonality;
  std::optional<double> distortion;
  PixelPlateMap::Counts counts;
};

[[nodiscard]] inline Report evaluate(const FingerOptics& f, double grid_density = kDefaultGridDensity) {
  const PixelPlateMap map = pixel_plate_map(f);
  Report r;
  r.counts = map.counts();
  r.coverage = coverage_from_map(map, f.plate, grid_density);
  if (r.counts.plate > 0) r.orthogonality = orthogonality_from_map(map);
  if (r.coverage > 0.5) r.distortion = distortion_from_map(map, f.plate, grid_density);
  return r;
}

// ---------------------------------------------------------------------------
// Geometry helpers

/// Replaces a flat mirror by the equivalent mirrored camera reflected across
/// the mirror plane. Only meaningful for kind == Flat.
[[nodiscard]] inline FingerOptics unfold_flat_mirror(const FingerOptics& f) {
  if (f.mirror.kind != MirrorKind::Flat) throw std::invalid_argument("unfold_flat_mirror: mirror is not flat");
  const Vec3 n = f.mirror.pose.apply_direction(Vec3::UnitZ());
  const Vec3 q = f.mirror.pose.translation;
  const Mat3 householder = Mat3::Identity() - 2.0 * n * n.transpose();
  FingerOptics out = f;
  out.mirror = MirrorProfile{};
  const Vec3 c = f.camera.pose.translation;
  const Vec3 c_ref = c - 2.0 * (c - q).dot(n) * n;
  // Reflected axes form a left-handed frame; negate x and flag the camera as
  // mirrored to keep a proper rotation with the same per-pixel rays.
  Mat3 axes = householder * f.camera.pose.matrix();
  axes.col(0) = -axes.col(0);
  out.camera.pose = Pose6D(c_ref, matrix_to_rotvec(axes));
  out.camera.mirrored = !f.camera.mirrored;
  return out;
}

/// Same assembly with the mirror removed and the camera re-aimed (pitch about
/// the finger y axis, image u kept along +y) to the orientation with the
/// highest plate coverage, ties broken by lower mean incidence.
struct BaselineResult {
  FingerOptics optics;
  double pitch_deg = 0.0;
  double coverage = 0.0;
  AngleStats orthogonality;
};

[[nodiscard]] inline BaselineResult best_mirror_free(const FingerOptics& f, double step_deg = 5.0) {
  BaselineResult best;
  best.coverage = -1.0;
  for (double pitch = -90.0; pitch <= 90.0 + 1e-9; pitch += step_deg) {
    FingerOptics g = f;
    g.mirror = MirrorProfile{};
    const double p = deg2rad(pitch);
    const Vec3 fwd(std::cos(p), 0.0, std::sin(p));
    g.camera.pose = look_pose(f.camera.pose.translation, fwd, Vec3::UnitY());
    const PixelPlateMap map = pixel_plate_map(g);
    if (map.counts().plate == 0) continue;
    const double cov = coverage_from_map(map, g.plate);
    const AngleStats a = orthogonality_from_map(map);
    if (cov > best.coverage + 1e-12 || (std::abs(cov - best.coverage) <= 1e-12 && a.mean < best.orthogonality.mean)) {
      best = BaselineResult{g, pitch, cov, a};
    }
  }
  if (best.coverage < 0.0) throw std::domain_error("best_mirror_free: no orientation reaches the plate");
  return best;
}

// ---------------------------------------------------------------------------
// Default geometry and mirror search

/// Parameters of the circular-arc back mirror explored by the grid search.
struct ArcParams {
  double radius = 0.0;  // mm, signed
  double tilt_deg = 0.0;
  double offset = 0.0;  // mm, depth of the mirror vertex below the plate plane
};

/// Finger geometry around a circular-arc mirror with the given parameters.
/// The camera sits at the finger base below the plate and looks along the
/// finger toward the mirror; two side windows flank the body.
[[nodiscard]] inline FingerOptics finger_with_arc(const ArcParams& p) {
  FingerOptics f;
  f.camera.width = 640;
  f.camera.height = 480;
  f.camera.fov_diag_deg = 120.0;
  f.camera.pose = look_pose(Vec3(15.5, 0.0, -11.5), Vec3(std::cos(deg2rad(-49.0)), 0.0, std::sin(deg2rad(-49.0))), Vec3::UnitY());
  f.mirror.kind = MirrorKind::CircularArc;
  f.mirror.radius = p.radius;
  f.mirror.x_min = -59.0;
  f.mirror.x_max = 59.0;
  f.mirror.half_width = 16.0;
  // Vertex at x = 85.5 along the finger, rotated about +y by -tilt so that a
  // positive tilt raises the far end toward the plate.
  f.mirror.pose = Pose6D(Vec3(85.5, 0.0, -p.offset), Vec3(0.0, -deg2rad(p.tilt_deg), 0.0));
  f.side_windows = {
      Rect{Pose6D(Vec3(50.0, 16.0, -22.0), Vec3(-std::numbers::pi / 2.0, 0.0, 0.0)), 80.0, 20.0},
      Rect{Pose6D(Vec3(50.0, -16.0, -22.0), Vec3(std::numbers::pi / 2.0, 0.0, 0.0)), 80.0, 20.0},
  };
  return f;
}

struct SearchCandidate {
  ArcParams params;
  Report report;
};

/// Coarse grid search minimizing distortion subject to coverage >= min_coverage.
/// Uses a reduced camera resolution scaled by `resolution_scale` for speed.
[[nodiscard]] inline std::optional<SearchCandidate> search_arc_mirror(std::span<const double> radii, std::span<const double> tilts,
                                                                      std::span<const double> offsets, double min_coverage = 0.99,
                                                                      double resolution_scale = 1.0) {
  std::optional<SearchCandidate> best;
  for (double r : radii) {
    for (double t : tilts) {
      for (double o : offsets) {
        const ArcParams p{r, t, o};
        FingerOptics f = finger_with_arc(p);
        f.camera.width = static_cast<int>(f.camera.width * resolution_scale);
        f.camera.height = static_cast<int>(f.camera.height * resolution_scale);
        try {
          f.validate();
        } catch (const ConfigError&) {
          continue;
        }
        const Report rep = evaluate(f);
        if (rep.coverage < min_coverage || !rep.distortion) continue;
        if (!best || *rep.distortion < *best->report.distortion) best = SearchCandidate{p, rep};
      }
    }
  }
  return best;
}

/// Grid explored by `optics-report --search`.
struct SearchAxes {
  std::vector<double> radii, tilts, offsets;
};

[[nodiscard]] inline SearchAxes default_search_axes() {
  SearchAxes a;
  for (int r = -600; r <= -250; r += 50) a.radii.push_back(r);
  for (int t = 12; t <= 20; ++t) a.tilts.push_back(t);
  for (int o = 30; o <= 38; o += 2) a.offsets.push_back(o);
  return a;
}

/// Solved mirror parameters, frozen from search_arc_mirror over default_search_axes().
inline constexpr ArcParams kDefaultArc{-600.0, 17.0, 38.0};

[[nodiscard]] inline FingerOptics default_geometry() { return finger_with_arc(kDefaultArc); }

// ---------------------------------------------------------------------------
// Config file I/O

namespace detail {

inline Pose6D read_pose(const config::Reader& r) {
  return Pose6D(r.vec3("position"), r.vec3("rotation", Vec3::Zero()));
}

inline void write_pose(config::Section& s, const Pose6D& p) {
  config::put(s, "position", config::fmt_vec3(p.translation));
  config::put(s, "rotation", config::fmt_vec3(p.rotation));
}

inline MirrorKind parse_mirror_kind(const config::Reader& r) {
  const std::string k = r.str("kind");
  if (k == "none") return MirrorKind::None;
  if (k == "flat") return MirrorKind::Flat;
  if (k == "arc") return MirrorKind::CircularArc;
  if (k == "conic") return MirrorKind::Conic;
  r.fail("kind", "mirror kind must be one of none|flat|arc|conic, got '" + k + "'");
}

}  // namespace detail

/// Reads optics sections ([camera], [mirror], [plate], [window.N]) from a
/// parsed document. Missing sections keep the default geometry's values.
[[nodiscard]] inline FingerOptics read_optics(const config::Document& doc) {
  FingerOptics f = default_geometry();
  if (const auto* s = doc.take("camera")) {
    config::Reader r(doc, *s);
    f.camera.width = static_cast<int>(r.integer("width", f.camera.width));
    f.camera.height = static_cast<int>(r.integer("height", f.camera.height));
    f.camera.fov_diag_deg = r.number("fov_deg", f.camera.fov_diag_deg);
    if (r.has("position")) f.camera.pose = detail::read_pose(r);
    const std::string mirrored = r.str("mirrored", "false");
    if (mirrored != "true" && mirrored != "false") r.fail("mirrored", "'mirrored' must be true or false");
    f.camera.mirrored = mirrored == "true";
  }
  if (const auto* s = doc.take("mirror")) {
    config::Reader r(doc, *s);
    f.mirror.kind = detail::parse_mirror_kind(r);
    f.mirror.radius = r.number("radius", f.mirror.radius);
    f.mirror.conic_k = r.number("conic_k", 0.0);
    f.mirror.x_min = r.number("x_min", f.mirror.x_min);
    f.mirror.x_max = r.number("x_max", f.mirror.x_max);
    f.mirror.half_width = r.number("half_width", f.mirror.half_width);
    if (r.has("position")) f.mirror.pose = detail::read_pose(r);
  }
  if (const auto* s = doc.take("plate")) {
    config::Reader r(doc, *s);
    f.plate.rect.size_x = r.number("length", f.plate.rect.size_x);
    f.plate.rect.size_y = r.number("width", f.plate.rect.size_y);
    if (r.has("position")) f.plate.rect.pose = detail::read_pose(r);
  }
  bool windows_given = false;
  std::vector<Rect> windows;
  for (int i = 0;; ++i) {
    const auto* s = doc.take("window." + std::to_string(i));
    if (s == nullptr) break;
    windows_given = true;
    config::Reader r(doc, *s);
    windows.push_back(Rect{detail::read_pose(r), r.number("size_x"), r.number("size_y")});
  }
  if (doc.take("windows") != nullptr) windows_given = true;  // explicit "no windows" marker
  if (windows_given) f.side_windows = std::move(windows);
  f.validate();
  return f;
}

[[nodiscard]] inline FingerOptics load_optics(const std::string& path) {
  const auto doc = config::Document::load(path);
  FingerOptics f = read_optics(doc);
  doc.reject_unused();
  return f;
}

inline void write_optics(config::Document& doc, const FingerOptics& f) {
  auto& cam = doc.add_section("camera");
  config::put(cam, "width", std::to_string(f.camera.width));
  config::put(cam, "height", std::to_string(f.camera.height));
  config::put(cam, "fov_deg", config::fmt_number(f.camera.fov_diag_deg));
  detail::write_pose(cam, f.camera.pose);
  if (f.camera.mirrored) config::put(cam, "mirrored", "true");
  auto& mir = doc.add_section("mirror");
  config::put(mir, "kind", to_string(f.mirror.kind));
  if (f.mirror.present()) {
    config::put(mir, "radius", config::fmt_number(f.mirror.radius));
    config::put(mir, "conic_k", config::fmt_number(f.mirror.conic_k));
    config::put(mir, "x_min", config::fmt_number(f.mirror.x_min));
    config::put(mir, "x_max", config::fmt_number(f.mirror.x_max));
    config::put(mir, "half_width", config::fmt_number(f.mirror.half_width));
    detail::write_pose(mir, f.mirror.pose);
  }
  auto& pl = doc.add_section("plate");
  config::put(pl, "length", config::fmt_number(f.plate.rect.size_x));
  config::put(pl, "width", config::fmt_number(f.plate.rect.size_y));
  detail::write_pose(pl, f.plate.rect.pose);
  if (f.side_windows.empty()) doc.add_section("windows");
  for (std::size_t i = 0; i < f.side_windows.size(); ++i) {
    auto& w = doc.add_section("window." + std::to_string(i));
    config::put(w, "size_x", config::fmt_number(f.side_windows[i].size_x));
    config::put(w, "size_y", config::fmt_number(f.side_windows[i].size_y));
    detail::write_pose(w, f.side_windows[i].pose);
  }
}

}  // namespace tactwin::optics
