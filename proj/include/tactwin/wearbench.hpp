#pragma once

// Accelerated rub-test: randomized grasp-and-rub cycles, Archard abrasion,
// failure detection, lifetime calibration and image-quality degradation.

#include "tactwin/core.hpp"
#include "tactwin/photorender.hpp"
#include "tactwin/random.hpp"

#include <optional>
#include <string>
#include <vector>

namespace tactwin::wearbench {

struct RubProtocol {
  double force_min = 10.0;       // N
  double force_max = 30.0;       // N
  double translation_max = 10.0; // mm, per axis, symmetric
  double rotation_max_deg = 5.0; // per axis, symmetric
  double period = 2.0;           // s per cycle

  void validate() const {
    if (!(force_min >= 0.0 && force_min <= force_max)) throw ConfigError("rub protocol: need 0 <= force_min <= force_max");
    if (!(translation_max >= 0.0 && rotation_max_deg >= 0.0)) throw ConfigError("rub protocol: ranges must be non-negative");
    if (!(period > 0.0)) throw ConfigError("rub protocol: period must be positive");
  }

  [[nodiscard]] double cycles_per_hour() const { return 3600.0 / period; }
};

struct Cycle {
  double force = 0.0;
  Pose6D delta;
};

/// Draw order: force, translation x/y/z, rotation x/y/z.
[[nodiscard]] inline Cycle sample_cycle(const RubProtocol& p, Pcg32& rng) {
  Cycle c;
  c.force = rng.uniform(p.force_min, p.force_max);
  Vec3 t, r;
  for (int k = 0; k < 3; ++k) t[k] = rng.uniform(-p.translation_max, p.translation_max);
  const double rmax = deg2rad(p.rotation_max_deg);
  for (int k = 0; k < 3; ++k) r[k] = rng.uniform(-rmax, rmax);
  c.delta = Pose6D(t, r);
  return c;
}

inline constexpr double kContactRadius = 12.5;  // mm, plate half-width

[[nodiscard]] inline double slip_length_of_cycle(const Pose6D& delta, double contact_radius = kContactRadius) {
  return delta.translation.norm() + delta.rotation.norm() * contact_radius;
}

enum class FailureMode { None, PaintLoss, Separation };

[[nodiscard]] inline const char* to_string(FailureMode m) {
  switch (m) {
    case FailureMode::None: return "none";
    case FailureMode::PaintLoss: return "paint-loss";
    case FailureMode::Separation: return "separation";
  }
  return "unknown";
}

struct WearState {
  double volume = 0.0;       // mm^3
  double K = 0.0;            // Archard coefficient
  double hardness = 1.0;     // N/mm^2
  double threshold = 5.0;    // mm^3
  FailureMode failure_tag = FailureMode::PaintLoss;  // mode reported when the threshold is crossed
  FailureMode mode = FailureMode::None;

  [[nodiscard]] bool failed() const { return mode != FailureMode::None; }
};

/// Archard increment K * F * s / H; sets the failure mode once the volume
/// reaches the threshold (with a 1e-12 relative allowance for summation error).
[[nodiscard]] inline WearState wear_step(const WearState& s, double force, double slip_mm) {
  if (!(slip_mm >= 0.0)) throw std::invalid_argument("wear_step: slip length must be >= 0");
  if (!(force >= 0.0)) throw std::invalid_argument("wear_step: force must be >= 0");
  WearState out = s;
  out.volume += s.K * force * slip_mm / s.hardness;
  if (!out.failed() && out.volume >= s.threshold * (1.0 - 1e-12)) out.mode = s.failure_tag;
  return out;
}

struct MaterialProfile {
  std::string name;
  std::string description;
  double target_hours = 1.0;
  bool target_is_lower_bound = false;
  double hardness = 1.0;
  double threshold = 5.0;
  FailureMode failure_tag = FailureMode::PaintLoss;
  double K = 0.0;
};

/// The four shipped profiles, uncalibrated (K = 0).
[[nodiscard]] inline std::vector<MaterialProfile> shipped_profiles() {
  return {
      {"vhb", "VHB tape with semi-specular paint", 35.0, true, 2.0, 5.0, FailureMode::PaintLoss, 0.0},
      {"gelA", "commercial gel A", 1.0, false, 0.5, 5.0, FailureMode::Separation, 0.0},
      {"gelB", "commercial gel B", 3.3, false, 0.8, 5.0, FailureMode::PaintLoss, 0.0},
      {"xp565", "XP-565 silicone gel", 25.0, false, 1.5, 5.0, FailureMode::PaintLoss, 0.0},
  };
}

[[nodiscard]] inline MaterialProfile find_profile(const std::string& name) {
  for (auto& p : shipped_profiles()) {
    if (p.name == name) return p;
  }
  throw ConfigError("unknown wear profile '" + name + "' (expected vhb, gelA, gelB or xp565)");
}

/// Monte-Carlo estimate of E[F * s] per cycle.
[[nodiscard]] inline double expected_work(const RubProtocol& p, std::size_t samples = 200000, std::uint64_t seed = 0xca11b8a7eULL) {
  Pcg32 rng(seed);
  double sum = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    const Cycle c = sample_cycle(p, rng);
    sum += c.force * slip_length_of_cycle(c.delta);
  }
  return sum / static_cast<double>(samples);
}

/// K = threshold * H / (E[F s] * cycles_per_hour * target_hours).
[[nodiscard]] inline double calibrate_K(double target_hours, const RubProtocol& p, double hardness, double threshold,
                                        std::optional<double> work = std::nullopt) {
  if (!(target_hours > 0.0)) throw std::invalid_argument("calibrate_K: target must be positive");
  const double w = work ? *work : expected_work(p);
  return threshold * hardness / (w * p.cycles_per_hour() * target_hours);
}

[[nodiscard]] inline MaterialProfile calibrated(MaterialProfile m, const RubProtocol& p, std::optional<double> work = std::nullopt) {
  m.K = calibrate_K(m.target_hours, p, m.hardness, m.threshold, work);
  return m;
}

struct LifetimeResult {
  double hours = 0.0;
  std::size_t cycles = 0;
  FailureMode mode = FailureMode::None;
  bool censored = false;
  double volume = 0.0;
};

/// Runs cycles until failure or until 10x the target horizon (censored).
[[nodiscard]] inline LifetimeResult simulate_lifetime(const MaterialProfile& m, const RubProtocol& p, std::uint64_t seed) {
  p.validate();
  Pcg32 rng(seed);
  WearState s;
  s.K = m.K;
  s.hardness = m.hardness;
  s.threshold = m.threshold;
  s.failure_tag = m.failure_tag;
  const auto horizon = static_cast<std::size_t>(std::ceil(10.0 * m.target_hours * p.cycles_per_hour()));
  LifetimeResult r;
  while (r.cycles < horizon) {
    const Cycle c = sample_cycle(p, rng);
    s = wear_step(s, c.force, slip_length_of_cycle(c.delta));
    ++r.cycles;
    if (s.failed()) break;
  }
  r.hours = static_cast<double>(r.cycles) * p.period / 3600.0;
  r.mode = s.mode;
  r.censored = !s.failed();
  r.volume = s.volume;
  return r;
}

struct LifetimeSummary {
  std::vector<LifetimeResult> runs;
  double mean_hours = 0.0;
  double cv = 0.0;
  double relative_error = 0.0;  // (mean - target) / target
  std::size_t censored = 0;
  bool pass = false;            // closure: |relative error| < 5% (or mean >= 0.95 target for lower bounds)
};

[[nodiscard]] inline LifetimeSummary summarize_lifetimes(const MaterialProfile& m, const RubProtocol& p, std::size_t seeds,
                                                         std::uint64_t first_seed = 1) {
  LifetimeSummary s;
  double sum = 0.0, sq = 0.0;
  for (std::size_t k = 0; k < seeds; ++k) {
    s.runs.push_back(simulate_lifetime(m, p, first_seed + k));
    sum += s.runs.back().hours;
    sq += s.runs.back().hours * s.runs.back().hours;
    s.censored += s.runs.back().censored ? 1 : 0;
  }
  const auto n = static_cast<double>(seeds);
  s.mean_hours = sum / n;
  const double var = seeds > 1 ? std::max(0.0, (sq - n * s.mean_hours * s.mean_hours) / (n - 1.0)) : 0.0;
  s.cv = s.mean_hours > 0.0 ? std::sqrt(var) / s.mean_hours : 0.0;
  s.relative_error = (s.mean_hours - m.target_hours) / m.target_hours;
  s.pass = s.censored == 0 && (m.target_is_lower_bound ? s.mean_hours >= 0.95 * m.target_hours : std::abs(s.relative_error) < 0.05);
  return s;
}

// ---------------------------------------------------------------------------
// Image quality

struct DegradedFrame {
  RgbImage frame;
  double quality = 1.0;
  double dropout_fraction = 0.0;
};

/// Fraction of painted cells lost at a given wear volume.
[[nodiscard]] inline double dropout_fraction(double volume, double threshold) {
  return std::clamp(0.6 * volume / threshold, 0.0, 1.0);
}

/// Luminance gradient energy over horizontal and vertical neighbour pairs,
/// optionally restricted to pairs where both pixels are intact.
[[nodiscard]] inline double gradient_energy(const RgbImage& img, const std::vector<std::uint8_t>* dropped = nullptr) {
  auto lum = [&](std::size_t i, std::size_t j) {
    const Rgb c = img.get(i, j);
    return (c.r + c.g + c.b) / 3.0;
  };
  auto intact = [&](std::size_t i, std::size_t j) { return dropped == nullptr || (*dropped)[j * img.width() + i] == 0; };
  double e = 0.0;
  for (std::size_t j = 0; j < img.height(); ++j) {
    for (std::size_t i = 0; i < img.width(); ++i) {
      if (!intact(i, j)) continue;
      if (i + 1 < img.width() && intact(i + 1, j)) e += std::pow(lum(i + 1, j) - lum(i, j), 2);
      if (j + 1 < img.height() && intact(i, j + 1)) e += std::pow(lum(i, j + 1) - lum(i, j), 2);
    }
  }
  return e;
}

/// Removes paint from a random, seed-fixed speckle of cells (nested in the
/// wear volume: a cell lost at volume v stays lost at every larger volume),
/// re-shades, and reports the share of the pristine gradient energy that
/// survives on intact neighbour pairs.
[[nodiscard]] inline DegradedFrame quality_degradation(double volume, double threshold, const HeightMap& displacement,
                                                       const photorender::IlluminationConfig& illum, const photorender::AlbedoModel& albedo,
                                                       std::uint64_t seed = 7) {
  if (!(volume >= 0.0 && threshold > 0.0)) throw std::invalid_argument("quality_degradation: need volume >= 0 and threshold > 0");
  const photorender::NormalMap normals = photorender::normals_from_heightmap(displacement);
  const RgbImage pristine = photorender::shade(normals, illum, albedo);
  DegradedFrame out;
  out.dropout_fraction = dropout_fraction(volume, threshold);
  std::vector<std::uint8_t> dropped(normals.normals.size(), 0);
  Pcg32 rng(seed, 0x77656172ULL);
  for (auto& d : dropped) d = rng.uniform() < out.dropout_fraction ? 1 : 0;
  photorender::AlbedoModel bare = albedo;
  bare.diffuse = {0.0, 0.0, 0.0};
  bare.specular = 0.0;
  out.frame = pristine;
  for (std::size_t j = 0; j < normals.height; ++j) {
    for (std::size_t i = 0; i < normals.width; ++i) {
      if (dropped[j * normals.width + i] != 0) out.frame.set(i, j, photorender::shade_normal(normals.at(i, j), illum, bare));
    }
  }
  const double base = gradient_energy(pristine);
  if (base > 0.0) {
    out.quality = std::clamp(gradient_energy(pristine, &dropped) / base, 0.0, 1.0);
  } else {
    // Featureless frame: fall back to the share of intact neighbour pairs.
    const std::size_t w = normals.width, h = normals.height;
    std::size_t intact = 0;
    for (std::size_t j = 0; j < h; ++j) {
      for (std::size_t i = 0; i < w; ++i) {
        if (dropped[j * w + i] != 0) continue;
        if (i + 1 < w && dropped[j * w + i + 1] == 0) ++intact;
        if (j + 1 < h && dropped[(j + 1) * w + i] == 0) ++intact;
      }
    }
    out.quality = static_cast<double>(intact) / static_cast<double>((w - 1) * h + w * (h - 1));
  }
  return out;
}

}  // namespace tactwin::wearbench
