#pragma once

// Contact-microphone channel: modal impact synthesis, band-limited slip
// noise, and a 48 kHz mixer that cuts the session into 20 ms chunks.
//
// Waveforms are kept in double precision in PCM units (full scale 32767) and
// only quantized when the mixer emits chunks.

#include "tactwin/core.hpp"
#include "tactwin/elastomer.hpp"
#include "tactwin/random.hpp"

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace tactwin::contactaudio {

inline constexpr int kSampleRate = 48000;
inline constexpr std::size_t kChunkSamples = 960;
inline constexpr std::uint64_t kChunkMicros = 20000;
inline constexpr double kPcmMax = 32767.0;
inline constexpr double kPcmMin = -32768.0;

struct Mode {
  double frequency = 0.0;  // Hz
  double damping = 0.0;    // 1/s
  double gain = 0.0;
};

struct ModalModel {
  std::vector<Mode> modes{{850.0, 60.0, 1.0}, {2300.0, 140.0, 0.6}, {5100.0, 300.0, 0.35}};
  double impact_coefficient = 500.0;  // PCM units per newton
  double slip_gain = 60000.0;         // PCM per (N/mm^2 * (mm/s)^exponent)
  double slip_exponent = 0.5;
  double band_low = 500.0;            // Hz
  double band_high = 8000.0;          // Hz

  void validate() const {
    if (modes.empty()) throw ConfigError("audio: at least one mode is required");
    for (const auto& m : modes) {
      if (!(m.frequency > 0.0 && m.frequency < kSampleRate / 2.0)) throw ConfigError("audio: mode frequency must lie in (0, 24000) Hz");
      if (!(m.damping > 0.0)) throw ConfigError("audio: mode damping must be positive");
    }
    if (!(impact_coefficient >= 0.0 && slip_gain >= 0.0 && slip_exponent > 0.0)) throw ConfigError("audio: gains must be non-negative");
    if (!(band_low > 0.0 && band_low < band_high && band_high < kSampleRate / 2.0)) throw ConfigError("audio: invalid slip band");
  }
};

struct Waveform {
  std::vector<double> samples;
  bool clipped = false;
};

/// Clamps to the 16-bit range and records whether anything was cut.
inline void clamp_pcm(Waveform& w) {
  for (double& s : w.samples) {
    if (s > kPcmMax || s < kPcmMin) {
      w.clipped = true;
      s = std::clamp(s, kPcmMin, kPcmMax);
    }
  }
}

[[nodiscard]] inline Waveform synth_impact(double force, const ModalModel& model, double duration) {
  if (!(force >= 0.0)) throw std::invalid_argument("synth_impact: force must be >= 0");
  if (!(duration >= 0.0)) throw std::invalid_argument("synth_impact: duration must be >= 0");
  const auto n = static_cast<std::size_t>(std::llround(duration * kSampleRate));
  Waveform w{std::vector<double>(n, 0.0), false};
  for (const auto& m : model.modes) {
    const double amp = m.gain * force * model.impact_coefficient;
    if (amp == 0.0) continue;
    const double omega = 2.0 * std::numbers::pi * m.frequency;
    for (std::size_t k = 0; k < n; ++k) {
      const double t = static_cast<double>(k) / kSampleRate;
      w.samples[k] += amp * std::exp(-m.damping * t) * std::sin(omega * t);
    }
  }
  clamp_pcm(w);
  return w;
}

/// RBJ cookbook biquad, direct form I.
class Biquad {
 public:
  static Biquad lowpass(double f0, double q = std::numbers::sqrt2 / 2.0) { return make(f0, q, false); }
  static Biquad highpass(double f0, double q = std::numbers::sqrt2 / 2.0) { return make(f0, q, true); }

  double operator()(double x) {
    const double y = b0_ * x + b1_ * x1_ + b2_ * x2_ - a1_ * y1_ - a2_ * y2_;
    x2_ = x1_;
    x1_ = x;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  static Biquad make(double f0, double q, bool high) {
    const double w0 = 2.0 * std::numbers::pi * f0 / kSampleRate;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double c = std::cos(w0);
    const double a0 = 1.0 + alpha;
    Biquad b;
    if (high) {
      b.b0_ = (1.0 + c) / 2.0 / a0;
      b.b1_ = -(1.0 + c) / a0;
    } else {
      b.b0_ = (1.0 - c) / 2.0 / a0;
      b.b1_ = (1.0 - c) / a0;
    }
    b.b2_ = b.b0_;
    b.a1_ = -2.0 * c / a0;
    b.a2_ = (1.0 - alpha) / a0;
    return b;
  }

  double b0_ = 1, b1_ = 0, b2_ = 0, a1_ = 0, a2_ = 0;
  double x1_ = 0, x2_ = 0, y1_ = 0, y2_ = 0;
};

[[nodiscard]] inline std::size_t sample_index(double seconds) {
  return static_cast<std::size_t>(std::llround(seconds * kSampleRate));
}

[[nodiscard]] inline std::size_t sample_index(Timestamp t) { return static_cast<std::size_t>((t.micros * 48 + 500) / 1000); }

/// Streaming slip-noise generator. One continuous white-noise stream
/// (starting at session sample 0) is band-passed and multiplied by a gate
/// built from the slip events, so the output is exactly zero outside every
/// event span and identical whether rendered at once or piecewise.
class SlipSynth {
 public:
  SlipSynth(const ModalModel& model, std::uint64_t seed)
      : model_(model), rng_(seed, 0x736c6970ULL), hp_(Biquad::highpass(model.band_low)), lp_(Biquad::lowpass(model.band_high)) {}

  void add_event(const elastomer::SlipEvent& e) {
    if (!(e.time >= 0.0 && e.duration >= 0.0)) throw std::invalid_argument("slip event time and duration must be >= 0");
    const std::size_t a = sample_index(e.time), b = sample_index(e.time + e.duration);
    if (a < cursor_) throw std::invalid_argument("slip event starts before the rendered position");
    if (gate_.size() < b - cursor_) gate_.resize(b - cursor_, 0.0);
    const double amp = slip_amplitude(e, model_);
    for (std::size_t k = a; k < b; ++k) gate_[k - cursor_] += amp;
  }

  /// Samples from the current position up to (excluding) `end_sample`.
  std::vector<double> render(std::size_t end_sample) {
    std::vector<double> out(end_sample > cursor_ ? end_sample - cursor_ : 0, 0.0);
    for (std::size_t k = 0; k < out.size(); ++k) {
      const double noise = lp_(hp_(rng_.normal()));
      const double g = k < gate_.size() ? gate_[k] : 0.0;
      out[k] = g == 0.0 ? 0.0 : g * noise;
    }
    gate_.erase(gate_.begin(), gate_.begin() + static_cast<std::ptrdiff_t>(std::min(out.size(), gate_.size())));
    cursor_ += out.size();
    return out;
  }

  [[nodiscard]] std::size_t position() const { return cursor_; }

  static double slip_amplitude(const elastomer::SlipEvent& e, const ModalModel& model) {
    return model.slip_gain * e.friction * e.pressure * std::pow(e.speed, model.slip_exponent);
  }

 private:
  ModalModel model_;
  Pcg32 rng_;
  Biquad hp_, lp_;
  std::vector<double> gate_;
  std::size_t cursor_ = 0;
};

/// Whole-session slip waveform starting at time 0.
[[nodiscard]] inline Waveform synth_slip(std::span<const elastomer::SlipEvent> events, const ModalModel& model, std::uint64_t seed) {
  Waveform w;
  if (events.empty()) return w;
  SlipSynth synth(model, seed);
  double prev = -std::numeric_limits<double>::infinity();
  std::size_t end = 0;
  for (const auto& e : events) {
    if (e.time < prev) throw std::invalid_argument("synth_slip: events must be time-ordered");
    prev = e.time;
    synth.add_event(e);
    end = std::max(end, sample_index(e.time + e.duration));
  }
  w.samples = synth.render(end);
  clamp_pcm(w);
  return w;
}

[[nodiscard]] inline double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

// ---------------------------------------------------------------------------
// Mixing

struct AudioChunk {
  static constexpr int sample_rate = kSampleRate;
  Timestamp start;
  std::vector<std::int16_t> samples;

  [[nodiscard]] std::uint64_t duration_us() const { return samples.size() * 1000000ULL / kSampleRate; }
};

/// Streaming mixer on the session clock. Waveforms are added at absolute
/// sample positions; `drain` emits every complete 960-sample chunk up to a
/// sample position, and `finish` flushes the final partial chunk.
class AudioMixer {
 public:
  void add(std::size_t start_sample, std::span<const double> samples) {
    if (start_sample < emitted_) throw std::invalid_argument("AudioMixer: waveform starts inside an emitted chunk");
    const std::size_t need = start_sample + samples.size() - emitted_;
    if (pending_.size() < need) pending_.resize(need, 0.0);
    for (std::size_t k = 0; k < samples.size(); ++k) pending_[start_sample - emitted_ + k] += samples[k];
  }

  void add(Timestamp start, const Waveform& w) { add(sample_index(start), w.samples); }

  /// Emits all chunks that end at or before `up_to_sample`.
  std::vector<AudioChunk> drain(std::size_t up_to_sample) {
    std::vector<AudioChunk> out;
    while (emitted_ + kChunkSamples <= up_to_sample) out.push_back(take(kChunkSamples));
    return out;
  }

  /// Emits everything up to `end_sample`, the last chunk possibly partial.
  std::vector<AudioChunk> finish(std::size_t end_sample) {
    auto out = drain(end_sample);
    if (end_sample > emitted_) out.push_back(take(end_sample - emitted_));
    return out;
  }

  [[nodiscard]] std::size_t emitted_samples() const { return emitted_; }
  [[nodiscard]] std::size_t clipped_samples() const { return clipped_; }

 private:
  AudioChunk take(std::size_t n) {
    AudioChunk c;
    c.start = Timestamp{static_cast<std::uint64_t>(emitted_ / kChunkSamples) * kChunkMicros};
    c.samples.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double v = k < pending_.size() ? std::round(pending_[k]) : 0.0;
      if (v > kPcmMax || v < kPcmMin) ++clipped_;
      c.samples[k] = static_cast<std::int16_t>(std::clamp(v, kPcmMin, kPcmMax));
    }
    pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(std::min(n, pending_.size())));
    emitted_ += n;
    return c;
  }

  std::vector<double> pending_;
  std::size_t emitted_ = 0;
  std::size_t clipped_ = 0;
};

struct PlacedWaveform {
  Timestamp start;
  Waveform wave;
};

/// Mixes all waveforms over [0, duration) and cuts the result into chunks.
[[nodiscard]] inline std::vector<AudioChunk> mix_stream(std::span<const PlacedWaveform> waves, double duration) {
  AudioMixer mixer;
  for (const auto& w : waves) mixer.add(w.start, w.wave);
  return mixer.finish(sample_index(duration));
}

// ---------------------------------------------------------------------------
// RIFF wave export (PCM, mono, 16-bit)

[[nodiscard]] inline std::string encode_wav(std::span<const AudioChunk> chunks) {
  std::size_t n = 0;
  for (const auto& c : chunks) n += c.samples.size();
  std::string out;
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  auto u16 = [&](std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
  };
  const auto data_bytes = static_cast<std::uint32_t>(n * 2);
  out += "RIFF";
  u32(36 + data_bytes);
  out += "WAVEfmt ";
  u32(16);
  u16(1);
  u16(1);
  u32(kSampleRate);
  u32(kSampleRate * 2);
  u16(2);
  u16(16);
  out += "data";
  u32(data_bytes);
  for (const auto& c : chunks) {
    for (std::int16_t s : c.samples) u16(static_cast<std::uint16_t>(s));
  }
  return out;
}

inline void write_wav(const std::string& path, std::span<const AudioChunk> chunks) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  const std::string data = encode_wav(chunks);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
}

}  // namespace tactwin::contactaudio
