#pragma once

// Shared geometric, image and time primitives.
//
// Units: millimeters for lengths, radians for angles, seconds in physics and
// microseconds on the wire.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace tactwin {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Raised when a configuration cannot be used (bad geometry, bad file, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Rotations

/// Rodrigues formula. Small angles use the second-order series.
[[nodiscard]] inline Mat3 rotvec_to_matrix(const Vec3& r) {
  const double theta = r.norm();
  Mat3 k;
  k << 0.0, -r.z(), r.y(),
       r.z(), 0.0, -r.x(),
       -r.y(), r.x(), 0.0;
  if (theta < 1e-8) {
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * k + b * k * k;
}

/// Inverse of rotvec_to_matrix. The returned magnitude is in [0, pi].
[[nodiscard]] inline Vec3 matrix_to_rotvec(const Mat3& m) {
  const Vec3 skew(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
  const double cos_theta = std::clamp((m.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::atan2(0.5 * skew.norm(), cos_theta);
  if (theta < 1e-6) {
    return 0.5 * skew;
  }
  if (std::numbers::pi - theta > 0.5) {
    return theta / (2.0 * std::sin(theta)) * skew;
  }
  // Near a half turn the skew part vanishes; recover the axis from
  // (sym(m) - cos I) / (1 - cos) = a a^T, using the largest diagonal entry.
  const Mat3 aat = (0.5 * (m + m.transpose()) - cos_theta * Mat3::Identity()) / (1.0 - cos_theta);
  int i = 0;
  aat.diagonal().maxCoeff(&i);
  Vec3 axis = aat.col(i) / std::sqrt(std::max(aat(i, i), 1e-300));
  axis.normalize();
  if (axis.dot(skew) < 0.0) axis = -axis;
  return theta * axis;
}

/// Wraps a rotation vector so its magnitude lies in [0, pi].
[[nodiscard]] inline Vec3 normalize_rotvec(const Vec3& r) {
  return matrix_to_rotvec(rotvec_to_matrix(r));
}

// ---------------------------------------------------------------------------
// Pose6D

/// Rigid transform: translation in mm plus a rotation vector (axis * angle).
/// Maps local points p to R p + t.
struct Pose6D {
  Vec3 translation = Vec3::Zero();
  Vec3 rotation = Vec3::Zero();

  Pose6D() = default;
  Pose6D(const Vec3& t, const Vec3& r) : translation(t), rotation(normalize_rotvec(r)) {
    if (!translation.allFinite() || !rotation.allFinite()) {
      throw std::invalid_argument("Pose6D: non-finite component");
    }
  }

  [[nodiscard]] static Pose6D identity() { return {}; }

  [[nodiscard]] Mat3 matrix() const { return rotvec_to_matrix(rotation); }
  [[nodiscard]] Vec3 apply(const Vec3& p) const { return matrix() * p + translation; }
  [[nodiscard]] Vec3 apply_direction(const Vec3& d) const { return matrix() * d; }
  /// Maps a point from the parent frame into this pose's local frame.
  [[nodiscard]] Vec3 apply_inverse(const Vec3& p) const {
    return matrix().transpose() * (p - translation);
  }
  [[nodiscard]] Vec3 apply_inverse_direction(const Vec3& d) const {
    return matrix().transpose() * d;
  }
};

/// Pose with its rotation matrix evaluated once, for hot loops.
struct RigidFrame {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  RigidFrame() = default;
  explicit RigidFrame(const Pose6D& p) : rotation(p.matrix()), translation(p.translation) {}

  [[nodiscard]] Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  [[nodiscard]] Vec3 apply_direction(const Vec3& d) const { return rotation * d; }
  [[nodiscard]] Vec3 apply_inverse(const Vec3& p) const { return rotation.transpose() * (p - translation); }
  [[nodiscard]] Vec3 apply_inverse_direction(const Vec3& d) const { return rotation.transpose() * d; }
};

/// a ∘ b: first b, then a.
[[nodiscard]] inline Pose6D pose_compose(const Pose6D& a, const Pose6D& b) {
  const Mat3 ra = a.matrix();
  return Pose6D(ra * b.translation + a.translation, matrix_to_rotvec(ra * b.matrix()));
}

[[nodiscard]] inline Pose6D pose_inverse(const Pose6D& p) {
  const Mat3 rt = p.matrix().transpose();
  return Pose6D(-(rt * p.translation), matrix_to_rotvec(rt));
}

/// Pose whose local +z axis points along `forward` and local +x along the
/// component of `right` orthogonal to it.
[[nodiscard]] inline Pose6D look_pose(const Vec3& position, const Vec3& forward, const Vec3& right) {
  const Vec3 z = forward.normalized();
  Vec3 x = right - right.dot(z) * z;
  if (x.norm() < 1e-12) throw std::invalid_argument("look_pose: right is parallel to forward");
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 m;
  m.col(0) = x;
  m.col(1) = y;
  m.col(2) = z;
  return Pose6D(position, matrix_to_rotvec(m));
}

[[nodiscard]] inline double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
[[nodiscard]] inline double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

// ---------------------------------------------------------------------------
// HeightMap

/// Regular grid of depths (mm). Node (i, j) sits at (i * resolution, j * resolution).
class HeightMap {
 public:
  HeightMap() = default;
  HeightMap(std::size_t width, std::size_t height, double resolution, double fill = 0.0)
      : width_(width), height_(height), resolution_(resolution), values_(width * height, fill) {
    if (width < 2 || height < 2) throw std::invalid_argument("HeightMap: dimensions must be >= 2x2");
    if (!(resolution > 0.0)) throw std::invalid_argument("HeightMap: resolution must be positive");
    if (!std::isfinite(fill)) throw std::invalid_argument("HeightMap: non-finite fill");
  }

  [[nodiscard]] std::size_t width() const { return width_; }
  [[nodiscard]] std::size_t height() const { return height_; }
  [[nodiscard]] double resolution() const { return resolution_; }
  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] double extent_x() const { return static_cast<double>(width_ - 1) * resolution_; }
  [[nodiscard]] double extent_y() const { return static_cast<double>(height_ - 1) * resolution_; }
  [[nodiscard]] double cell_area() const { return resolution_ * resolution_; }

  [[nodiscard]] double& at(std::size_t i, std::size_t j) { return values_[j * width_ + i]; }
  [[nodiscard]] double at(std::size_t i, std::size_t j) const { return values_[j * width_ + i]; }
  [[nodiscard]] std::vector<double>& values() { return values_; }
  [[nodiscard]] const std::vector<double>& values() const { return values_; }

  [[nodiscard]] bool same_grid(const HeightMap& o) const {
    return width_ == o.width_ && height_ == o.height_ && resolution_ == o.resolution_;
  }

  [[nodiscard]] bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  double resolution_ = 1.0;
  std::vector<double> values_;
};

/// Bilinear interpolation of the four surrounding nodes.
/// Throws std::domain_error outside [0, extent_x] x [0, extent_y].
[[nodiscard]] inline double heightmap_sample(const HeightMap& h, double x, double y) {
  if (!(x >= 0.0 && y >= 0.0 && x <= h.extent_x() && y <= h.extent_y())) {
    throw std::domain_error("heightmap_sample: query outside map extent");
  }
  const double fx = x / h.resolution();
  const double fy = y / h.resolution();
  auto i0 = static_cast<std::size_t>(fx);
  auto j0 = static_cast<std::size_t>(fy);
  i0 = std::min(i0, h.width() - 2);
  j0 = std::min(j0, h.height() - 2);
  const double tx = fx - static_cast<double>(i0);
  const double ty = fy - static_cast<double>(j0);
  const double v00 = h.at(i0, j0);
  const double v10 = h.at(i0 + 1, j0);
  const double v01 = h.at(i0, j0 + 1);
  const double v11 = h.at(i0 + 1, j0 + 1);
  return (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11);
}

// ---------------------------------------------------------------------------
// RgbImage

struct Rgb {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;

  [[nodiscard]] double operator[](int c) const { return c == 0 ? r : (c == 1 ? g : b); }
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// 8-bit quantization, round half up.
[[nodiscard]] inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5); }

/// Three-channel image, values clamped to [0, 1] on write.
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(std::size_t width, std::size_t height, Rgb fill = {})
      : width_(width), height_(height), data_(width * height * 3) {
    for (std::size_t p = 0; p < width * height; ++p) set(p % width, p / width, fill);
  }

  [[nodiscard]] std::size_t width() const { return width_; }
  [[nodiscard]] std::size_t height() const { return height_; }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] Rgb get(std::size_t x, std::size_t y) const {
    const std::size_t o = (y * width_ + x) * 3;
    return {data_[o], data_[o + 1], data_[o + 2]};
  }
  void set(std::size_t x, std::size_t y, const Rgb& c) {
    const std::size_t o = (y * width_ + x) * 3;
    data_[o] = std::clamp(c.r, 0.0, 1.0);
    data_[o + 1] = std::clamp(c.g, 0.0, 1.0);
    data_[o + 2] = std::clamp(c.b, 0.0, 1.0);
  }
  [[nodiscard]] const std::vector<double>& data() const { return data_; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<double> data_;
};

/// Bilinear sample with pixel-center convention: pixel (i, j) covers
/// [i*res, (i+1)*res) x [j*res, (j+1)*res) and its value sits at the center.
/// Coordinates outside the image are clamped to the border.
[[nodiscard]] inline Rgb sample_image(const RgbImage& img, double x_mm, double y_mm, double res) {
  const double fx = std::clamp(x_mm / res - 0.5, 0.0, static_cast<double>(img.width() - 1));
  const double fy = std::clamp(y_mm / res - 0.5, 0.0, static_cast<double>(img.height() - 1));
  const auto i0 = static_cast<std::size_t>(fx);
  const auto j0 = static_cast<std::size_t>(fy);
  const std::size_t i1 = std::min(i0 + 1, img.width() - 1);
  const std::size_t j1 = std::min(j0 + 1, img.height() - 1);
  const double tx = fx - static_cast<double>(i0);
  const double ty = fy - static_cast<double>(j0);
  const Rgb a = img.get(i0, j0), b = img.get(i1, j0), c = img.get(i0, j1), d = img.get(i1, j1);
  // Skip the blend when the weights are degenerate so uniform regions stay bit-exact.
  auto mix = [&](double va, double vb, double vc, double vd) {
    if (va == vb && vb == vc && vc == vd) return va;
    return (1.0 - ty) * ((1.0 - tx) * va + tx * vb) + ty * ((1.0 - tx) * vc + tx * vd);
  };
  return {mix(a.r, b.r, c.r, d.r), mix(a.g, b.g, c.g, d.g), mix(a.b, b.b, c.b, d.b)};
}

// ---------------------------------------------------------------------------
// Timestamp

/// Microseconds since session start.
struct Timestamp {
  std::uint64_t micros = 0;

  [[nodiscard]] static Timestamp from_seconds(double s) {
    return {static_cast<std::uint64_t>(std::llround(s * 1e6))};
  }
  [[nodiscard]] double seconds() const { return static_cast<double>(micros) * 1e-6; }

  friend auto operator<=>(const Timestamp&, const Timestamp&) = default;
};

}  // namespace tactwin
