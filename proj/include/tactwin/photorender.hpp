#pragma once

// Photometric rendering of the deformed elastomer and its inverse.
//
// Images of the tactile region share the elastomer grid: pixel (i, j) is the
// cell centered at ((i + 0.5) * res, (j + 0.5) * res) in plate millimetres.

#include "tactwin/core.hpp"
#include "tactwin/optics.hpp"

#include <fftw3.h>

#include <Eigen/SVD>

#include <array>
#include <deque>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

namespace tactwin::photorender {

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Illumination and materials

struct Source {
  std::string name;
  Vec3 direction = Vec3::UnitZ();  // unit vector from the surface toward the light
  Rgb emission;
  double wavelength_nm = 0.0;
};

enum SourceIndex : std::size_t { kBlue = 0, kPink = 1, kGreen = 2 };

struct IlluminationConfig {
  std::array<Source, 3> sources;
  Rgb filter{0.95, 0.9, 0.35};
  Rgb ambient{0.02, 0.02, 0.02};

  /// Blue LEDs along the short edge at x = 0, pink and green paint along the
  /// two long edges, all at 30 degrees elevation.
  [[nodiscard]] static IlluminationConfig defaults() {
    constexpr double kIntensity = 2.0;
    const double c = std::cos(deg2rad(30.0)), s = std::sin(deg2rad(30.0));
    IlluminationConfig cfg;
    auto scaled = [](Rgb chroma, double m) { return Rgb{chroma.r * m, chroma.g * m, chroma.b * m}; };
    cfg.sources[kBlue] = {"blue", Vec3(-c, 0.0, s), scaled({0.05, 0.25, 1.0}, 1.0 * kIntensity), 450.0};
    cfg.sources[kPink] = {"pink", Vec3(0.0, -c, s), scaled({1.0, 0.3, 0.6}, 0.45 * kIntensity), 610.0};
    cfg.sources[kGreen] = {"green", Vec3(0.0, c, s), scaled({0.2, 1.0, 0.25}, 0.45 * kIntensity), 530.0};
    return cfg;
  }

  void validate() const {
    auto nonneg = [](const Rgb& c) { return c.r >= 0 && c.g >= 0 && c.b >= 0; };
    for (const auto& src : sources) {
      if (std::abs(src.direction.norm() - 1.0) > 1e-9) throw ConfigError("illumination: source '" + src.name + "' direction must be unit-norm");
      if (!nonneg(src.emission)) throw ConfigError("illumination: source '" + src.name + "' emission must be non-negative");
    }
    if (!nonneg(filter) || filter.r > 1 || filter.g > 1 || filter.b > 1) throw ConfigError("illumination: filter must lie in [0,1]");
    if (!nonneg(ambient)) throw ConfigError("illumination: ambient must be non-negative");
  }
};

enum class AlbedoKind { SemiSpecular, Lambertian };

struct AlbedoModel {
  AlbedoKind kind = AlbedoKind::SemiSpecular;
  Rgb diffuse{0.7, 0.7, 0.7};
  double specular = 0.15;
  double shininess = 24.0;

  /// Aluminium-powder paint on VHB.
  [[nodiscard]] static AlbedoModel semi_specular() { return {}; }
  /// Silicone ink.
  [[nodiscard]] static AlbedoModel lambertian() { return {AlbedoKind::Lambertian, {0.8, 0.8, 0.8}, 0.0, 1.0}; }

  void validate() const {
    for (int c = 0; c < 3; ++c) {
      if (!(diffuse[c] >= 0.0 && diffuse[c] <= 1.0)) throw ConfigError("albedo: diffuse must lie in [0,1]");
    }
    if (!(specular >= 0.0 && shininess > 0.0)) throw ConfigError("albedo: specular must be >= 0 and shininess > 0");
  }
};

// ---------------------------------------------------------------------------
// Normal maps

struct NormalMap {
  std::size_t width = 0, height = 0;
  double resolution = 1.0;
  std::vector<Vec3> normals;

  NormalMap() = default;
  NormalMap(std::size_t w, std::size_t h, double res) : width(w), height(h), resolution(res), normals(w * h, Vec3::UnitZ()) {}

  [[nodiscard]] Vec3& at(std::size_t i, std::size_t j) { return normals[j * width + i]; }
  [[nodiscard]] const Vec3& at(std::size_t i, std::size_t j) const { return normals[j * width + i]; }
};

[[nodiscard]] inline double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

/// n = normalize(-dd/dx, -dd/dy, 1) with central differences (one-sided at the border).
[[nodiscard]] inline NormalMap normals_from_heightmap(const HeightMap& d) {
  const std::size_t w = d.width(), h = d.height();
  NormalMap out(w, h, d.resolution());
  const double res = d.resolution();
  for (std::size_t j = 0; j < h; ++j) {
    const std::size_t j0 = j == 0 ? 0 : j - 1, j1 = j + 1 == h ? j : j + 1;
    for (std::size_t i = 0; i < w; ++i) {
      const std::size_t i0 = i == 0 ? 0 : i - 1, i1 = i + 1 == w ? i : i + 1;
      const double gx = (d.at(i1, j) - d.at(i0, j)) / (static_cast<double>(i1 - i0) * res);
      const double gy = (d.at(i, j1) - d.at(i, j0)) / (static_cast<double>(j1 - j0) * res);
      out.at(i, j) = Vec3(-gx, -gy, 1.0).normalized();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shading

/// Diffuse-plus-Blinn reflectance of one source, before emission and filter.
[[nodiscard]] inline double reflectance(const Vec3& n, const Vec3& l, const AlbedoModel& albedo, int channel) {
  const double cos_l = n.dot(l);
  if (cos_l <= 0.0) return 0.0;
  double r = albedo.diffuse[channel] * cos_l;
  if (albedo.kind == AlbedoKind::SemiSpecular && albedo.specular > 0.0) {
    const Vec3 half = (l + Vec3::UnitZ()).normalized();
    const double e = albedo.shininess;
    r += albedo.specular * (e + 8.0) / (8.0 * std::numbers::pi) * std::pow(std::max(0.0, n.dot(half)), e);
  }
  return r;
}

/// Unclamped pixel value; `shade_normal` clamps it.
[[nodiscard]] inline Rgb shade_normal_unclamped(const Vec3& n, const IlluminationConfig& illum, const AlbedoModel& albedo) {
  std::array<double, 3> out{};
  for (int c = 0; c < 3; ++c) {
    double acc = illum.ambient[c];
    for (const auto& s : illum.sources) acc += s.emission[c] * reflectance(n, s.direction, albedo, c);
    out[c] = illum.filter[c] * acc;
  }
  return {out[0], out[1], out[2]};
}

[[nodiscard]] inline Rgb shade_normal(const Vec3& n, const IlluminationConfig& illum, const AlbedoModel& albedo) {
  const Rgb v = shade_normal_unclamped(n, illum, albedo);
  return {std::clamp(v.r, 0.0, 1.0), std::clamp(v.g, 0.0, 1.0), std::clamp(v.b, 0.0, 1.0)};
}

[[nodiscard]] inline RgbImage shade(const NormalMap& normals, const IlluminationConfig& illum, const AlbedoModel& albedo) {
  RgbImage img(normals.width, normals.height);
  const Rgb flat = shade_normal(Vec3::UnitZ(), illum, albedo);
  for (std::size_t j = 0; j < normals.height; ++j) {
    for (std::size_t i = 0; i < normals.width; ++i) {
      const Vec3& n = normals.at(i, j);
      img.set(i, j, n == Vec3::UnitZ() ? flat : shade_normal(n, illum, albedo));
    }
  }
  return img;
}

[[nodiscard]] inline RgbImage render_tactile(const HeightMap& displacement, const IlluminationConfig& illum, const AlbedoModel& albedo) {
  return shade(normals_from_heightmap(displacement), illum, albedo);
}

/// Column s holds the filtered colour of source s per unit reflectance.
[[nodiscard]] inline Mat3 mixing_matrix(const IlluminationConfig& illum) {
  Mat3 m;
  for (int s = 0; s < 3; ++s) {
    for (int c = 0; c < 3; ++c) m(c, s) = illum.filter[c] * illum.sources[static_cast<std::size_t>(s)].emission[c];
  }
  return m;
}

/// Per-source reflectance recovered from a pixel by unmixing the three source
/// colours (index with kBlue / kPink / kGreen).
[[nodiscard]] inline Vec3 source_responses(const Rgb& pixel, const IlluminationConfig& illum) {
  const Mat3 m = mixing_matrix(illum);
  Vec3 rhs;
  for (int c = 0; c < 3; ++c) rhs[c] = pixel[c] - illum.filter[c] * illum.ambient[c];
  return m.fullPivLu().solve(rhs);
}

// ---------------------------------------------------------------------------
// Calibration

class CalibrationLUT {
 public:
  static constexpr int kBins = 32;

  CalibrationLUT() : normals_(static_cast<std::size_t>(kBins * kBins * kBins), Vec3::UnitZ()) {}

  [[nodiscard]] static int bin_of(double v) { return std::clamp(static_cast<int>(v * kBins), 0, kBins - 1); }
  [[nodiscard]] static std::size_t index(int r, int g, int b) {
    return (static_cast<std::size_t>(r) * kBins + static_cast<std::size_t>(g)) * kBins + static_cast<std::size_t>(b);
  }

  [[nodiscard]] const Vec3& at(int r, int g, int b) const { return normals_[index(r, g, b)]; }
  [[nodiscard]] Vec3& at(int r, int g, int b) { return normals_[index(r, g, b)]; }
  [[nodiscard]] const std::vector<Vec3>& normals() const { return normals_; }

  /// Colour of the undeformed surface. Lookups are offset so that it maps to
  /// exactly (0, 0, 1); otherwise the small interpolation bias of the flat
  /// colour integrates into a large tilt over the whole plate.
  void set_reference(const Rgb& flat) {
    reference_ = flat;
    bias_ = Vec3::Zero();
    bias_ = lookup(flat) - Vec3::UnitZ();
  }
  [[nodiscard]] const Rgb& reference() const { return reference_; }

  /// Trilinear interpolation between bin centres; values outside the table clamp to the edge bins.
  [[nodiscard]] Vec3 lookup(const Rgb& c) const {
    std::array<int, 3> i0{};
    std::array<double, 3> t{};
    for (int k = 0; k < 3; ++k) {
      const double f = std::clamp(c[k] * kBins - 0.5, 0.0, static_cast<double>(kBins - 1));
      i0[k] = std::min(static_cast<int>(f), kBins - 2);
      t[k] = f - i0[k];
    }
    Vec3 acc = Vec3::Zero();
    for (int corner = 0; corner < 8; ++corner) {
      double w = 1.0;
      std::array<int, 3> idx{};
      for (int k = 0; k < 3; ++k) {
        const int bit = (corner >> k) & 1;
        idx[k] = i0[k] + bit;
        w *= bit != 0 ? t[k] : 1.0 - t[k];
      }
      if (w != 0.0) acc += w * at(idx[0], idx[1], idx[2]);
    }
    acc -= bias_;
    if (acc.z() <= 0.0 || acc.norm() < 1e-12) acc = Vec3::UnitZ();
    return acc.normalized();
  }

 private:
  std::vector<Vec3> normals_;
  Rgb reference_;
  Vec3 bias_ = Vec3::Zero();
};

/// Renders an indented sphere of the given radius (cap up to 60 degrees from
/// the pole, flat surround), bins pixel colours against the analytic normals,
/// averages per bin and fills empty bins from their nearest filled bin.
[[nodiscard]] inline CalibrationLUT build_calibration(const IlluminationConfig& illum, const AlbedoModel& albedo, double sphere_radius = 4.0) {
  illum.validate();
  albedo.validate();
  if (!(sphere_radius > 0.0)) throw std::invalid_argument("build_calibration: radius must be positive");
  const Eigen::JacobiSVD<Mat3> svd(mixing_matrix(illum));
  const auto sv = svd.singularValues();
  if (!(sv(2) > 1e-6 * sv(0))) throw CalibrationError("calibration: source colours are linearly dependent, normals are not recoverable");

  constexpr int K = CalibrationLUT::kBins;
  std::vector<Vec3> sum(static_cast<std::size_t>(K * K * K), Vec3::Zero());
  std::vector<int> count(sum.size(), 0);
  const double rim = sphere_radius * std::sin(deg2rad(60.0));
  const double half = 1.2 * sphere_radius;
  const double step = sphere_radius / 200.0;
  const int n = static_cast<int>(2.0 * half / step);
  for (int j = 0; j <= n; ++j) {
    for (int i = 0; i <= n; ++i) {
      const double x = -half + i * step, y = -half + j * step;
      const double r = std::hypot(x, y);
      const Vec3 normal = r < rim ? Vec3(Vec3(x, y, std::sqrt(sphere_radius * sphere_radius - r * r)) / sphere_radius) : Vec3(Vec3::UnitZ());
      const Rgb c = shade_normal(normal, illum, albedo);
      const std::size_t k = CalibrationLUT::index(CalibrationLUT::bin_of(c.r), CalibrationLUT::bin_of(c.g), CalibrationLUT::bin_of(c.b));
      sum[k] += normal;
      ++count[k];
    }
  }

  CalibrationLUT lut;
  std::vector<int> source(sum.size(), -1);
  std::deque<std::size_t> queue;
  for (std::size_t k = 0; k < sum.size(); ++k) {
    if (count[k] == 0) continue;
    Vec3 v = sum[k] / count[k];
    if (v.z() <= 0.0 || v.norm() < 1e-12) v = Vec3::UnitZ();
    lut.at(static_cast<int>(k / (K * K)), static_cast<int>(k / K % K), static_cast<int>(k % K)) = v.normalized();
    source[k] = static_cast<int>(k);
    queue.push_back(k);
  }
  if (queue.empty()) throw CalibrationError("calibration: no pixels were binned");
  // Multi-source BFS over the 6-neighbourhood: each empty bin copies the
  // normal of the filled bin that reached it first.
  while (!queue.empty()) {
    const std::size_t k = queue.front();
    queue.pop_front();
    const int r = static_cast<int>(k / (K * K)), g = static_cast<int>(k / K % K), b = static_cast<int>(k % K);
    const std::array<std::array<int, 3>, 6> nb{{{r - 1, g, b}, {r + 1, g, b}, {r, g - 1, b}, {r, g + 1, b}, {r, g, b - 1}, {r, g, b + 1}}};
    for (const auto& q : nb) {
      if (q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= K || q[1] >= K || q[2] >= K) continue;
      const std::size_t m = CalibrationLUT::index(q[0], q[1], q[2]);
      if (source[m] >= 0) continue;
      source[m] = source[k];
      lut.at(q[0], q[1], q[2]) = lut.at(r, g, b);
      queue.push_back(m);
    }
  }
  lut.set_reference(shade_normal(Vec3::UnitZ(), illum, albedo));
  return lut;
}

[[nodiscard]] inline NormalMap reconstruct_normals(const RgbImage& image, const CalibrationLUT& lut, double resolution) {
  NormalMap out(image.width(), image.height(), resolution);
  for (std::size_t j = 0; j < image.height(); ++j) {
    for (std::size_t i = 0; i < image.width(); ++i) out.at(i, j) = lut.lookup(image.get(i, j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Integration

namespace detail {
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// Least-squares surface for the gradient field (-n_x/n_z, -n_y/n_z): the
/// Neumann Poisson problem on half-point gradients, solved with a DCT. The
/// result is zero-mean.
[[nodiscard]] inline HeightMap integrate_normals(const NormalMap& nm) {
  const std::size_t w = nm.width, h = nm.height;
  if (w < 2 || h < 2) throw std::invalid_argument("integrate_normals: map must be at least 2x2");
  const double res = nm.resolution;
  std::vector<double> p(w * h), q(w * h);
  for (std::size_t k = 0; k < w * h; ++k) {
    const Vec3& n = nm.normals[k];
    if (!(n.z() > 0.0)) throw std::domain_error("integrate_normals: normals must have positive z");
    p[k] = -n.x() / n.z() * res;
    q[k] = -n.y() / n.z() * res;
  }
  // Divergence of the half-point gradients with zero flux across the border.
  std::vector<double> div(w * h, 0.0);
  for (std::size_t j = 0; j < h; ++j) {
    for (std::size_t i = 0; i + 1 < w; ++i) {
      const double gx = 0.5 * (p[j * w + i] + p[j * w + i + 1]);
      div[j * w + i] += gx;
      div[j * w + i + 1] -= gx;
    }
  }
  for (std::size_t j = 0; j + 1 < h; ++j) {
    for (std::size_t i = 0; i < w; ++i) {
      const double gy = 0.5 * (q[j * w + i] + q[(j + 1) * w + i]);
      div[j * w + i] += gy;
      div[(j + 1) * w + i] -= gy;
    }
  }
  std::vector<double> spec(w * h);
  fftw_plan fwd, inv;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fwd = fftw_plan_r2r_2d(static_cast<int>(h), static_cast<int>(w), div.data(), spec.data(), FFTW_REDFT10, FFTW_REDFT10, FFTW_ESTIMATE);
    inv = fftw_plan_r2r_2d(static_cast<int>(h), static_cast<int>(w), spec.data(), div.data(), FFTW_REDFT01, FFTW_REDFT01, FFTW_ESTIMATE);
  }
  fftw_execute(fwd);
  for (std::size_t l = 0; l < h; ++l) {
    const double ly = 2.0 * std::cos(std::numbers::pi * static_cast<double>(l) / static_cast<double>(h)) - 2.0;
    for (std::size_t k = 0; k < w; ++k) {
      const double lx = 2.0 * std::cos(std::numbers::pi * static_cast<double>(k) / static_cast<double>(w)) - 2.0;
      const double denom = lx + ly;
      spec[l * w + k] = (k == 0 && l == 0) ? 0.0 : spec[l * w + k] / denom;
    }
  }
  fftw_execute(inv);
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  HeightMap out(w, h, res);
  const double scale = 1.0 / (4.0 * static_cast<double>(w) * static_cast<double>(h));
  double mean = 0.0;
  for (std::size_t k = 0; k < w * h; ++k) mean += div[k] * scale;
  mean /= static_cast<double>(w * h);
  for (std::size_t k = 0; k < w * h; ++k) out.values()[k] = div[k] * scale - mean;
  return out;
}

// ---------------------------------------------------------------------------
// Full frame

/// The static part of a frame: window pixels sample that window's background
/// (stretched over the window rectangle), everything else is black.
[[nodiscard]] inline RgbImage background_frame(const std::vector<RgbImage>& backgrounds, const optics::PixelPlateMap& map,
                                               const optics::FingerOptics& geometry) {
  RgbImage frame(static_cast<std::size_t>(map.width()), static_cast<std::size_t>(map.height()));
  for (int j = 0; j < map.height(); ++j) {
    for (int i = 0; i < map.width(); ++i) {
      const optics::Hit& hit = map.at(i, j);
      if (hit.kind != optics::HitKind::Window) continue;
      const auto w = static_cast<std::size_t>(hit.window);
      if (w >= backgrounds.size() || backgrounds[w].empty()) {
        throw ConfigError("composite_frame: no background image for window " + std::to_string(hit.window));
      }
      const RgbImage& bg = backgrounds[w];
      const optics::Rect& rect = geometry.side_windows.at(w);
      frame.set(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                sample_image(bg, hit.point.x() / rect.size_x * static_cast<double>(bg.width()),
                             hit.point.y() / rect.size_y * static_cast<double>(bg.height()), 1.0));
    }
  }
  return frame;
}

/// Overwrites plate pixels with the tactile image sampled at their plate coordinates.
inline void overlay_tactile(RgbImage& frame, const RgbImage& tactile, double tactile_resolution, const optics::PixelPlateMap& map) {
  if (tactile.empty()) throw std::invalid_argument("composite_frame: empty tactile image");
  for (int j = 0; j < map.height(); ++j) {
    for (int i = 0; i < map.width(); ++i) {
      const optics::Hit& hit = map.at(i, j);
      if (hit.kind != optics::HitKind::Plate) continue;
      frame.set(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                sample_image(tactile, hit.point.x(), hit.point.y(), tactile_resolution));
    }
  }
}

[[nodiscard]] inline RgbImage composite_frame(const RgbImage& tactile, double tactile_resolution, const std::vector<RgbImage>& backgrounds,
                                              const optics::PixelPlateMap& map, const optics::FingerOptics& geometry) {
  if (tactile.empty()) throw std::invalid_argument("composite_frame: empty tactile image");
  RgbImage frame = background_frame(backgrounds, map, geometry);
  overlay_tactile(frame, tactile, tactile_resolution, map);
  return frame;
}

// ---------------------------------------------------------------------------
// PPM (P6, 8-bit)

[[nodiscard]] inline std::string encode_ppm(const RgbImage& img) {
  std::string out = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  out.reserve(out.size() + img.width() * img.height() * 3);
  for (std::size_t j = 0; j < img.height(); ++j) {
    for (std::size_t i = 0; i < img.width(); ++i) {
      const Rgb c = img.get(i, j);
      out.push_back(static_cast<char>(to_byte(c.r)));
      out.push_back(static_cast<char>(to_byte(c.g)));
      out.push_back(static_cast<char>(to_byte(c.b)));
    }
  }
  return out;
}

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  const std::string data = encode_ppm(img);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw std::runtime_error(path + ": write failed");
}

[[nodiscard]] inline RgbImage read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open");
  std::string magic;
  std::size_t w = 0, h = 0;
  int maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w == 0 || h == 0) throw std::runtime_error(path + ": not an 8-bit P6 pixmap");
  f.get();
  RgbImage img(w, h);
  std::vector<unsigned char> row(w * 3);
  for (std::size_t j = 0; j < h; ++j) {
    if (!f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()))) throw std::runtime_error(path + ": truncated");
    for (std::size_t i = 0; i < w; ++i) img.set(i, j, {row[3 * i] / 255.0, row[3 * i + 1] / 255.0, row[3 * i + 2] / 255.0});
  }
  return img;
}

}  // namespace tactwin::photorender
