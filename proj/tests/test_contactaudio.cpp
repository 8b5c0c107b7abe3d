#include "tactwin/contactaudio.hpp"

#include <gtest/gtest.h>

#include <complex>

using namespace tactwin;
using namespace tactwin::contactaudio;

namespace {

// Plain O(n^2) DFT magnitude, bins 0..n/2.
std::vector<double> dft_magnitude(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> mag(n / 2 + 1);
  for (std::size_t k = 0; k < mag.size(); ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t % n) / n);
    mag[k] = std::abs(acc);
  }
  return mag;
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

elastomer::SlipEvent slip(double t, double dur, double speed, double pressure = 0.01) {
  return {t, dur, speed, 1.0, pressure, 0.9};
}

ModalModel single_mode(double f, double damping) {
  ModalModel m;
  m.modes = {{f, damping, 1.0}};
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Impacts

TEST(Impact, ZeroForceIsSilent) {
  const Waveform w = synth_impact(0.0, ModalModel{}, 0.1);
  EXPECT_EQ(w.samples.size(), 4800u);
  for (double s : w.samples) EXPECT_EQ(s, 0.0);
  EXPECT_FALSE(w.clipped);
  EXPECT_THROW((void)synth_impact(-1.0, ModalModel{}, 0.1), std::invalid_argument);
}

TEST(Impact, MatchesModalSumSampleBySample) {
  const ModalModel m;
  const double force = 1.7;
  const Waveform w = synth_impact(force, m, 0.05);
  for (std::size_t k : {0u, 1u, 17u, 480u, 2399u}) {
    const double t = k / 48000.0;
    double expect = 0.0;
    for (const auto& mode : m.modes) expect += mode.gain * force * m.impact_coefficient * std::exp(-mode.damping * t) * std::sin(2 * std::numbers::pi * mode.frequency * t);
    EXPECT_NEAR(w.samples[k], expect, 1e-9);
  }
}

TEST(Impact, RmsIsLinearInForce) {
  const ModalModel m;
  for (double f : {0.01, 0.3, 1.0, 4.0}) {
    const Waveform a = synth_impact(f, m, 0.25), b = synth_impact(2 * f, m, 0.25);
    ASSERT_FALSE(b.clipped);
    EXPECT_NEAR(rms(b.samples) / rms(a.samples), 2.0, 1e-9);
  }
}

TEST(Impact, SpectralPeakWithinOneBin) {
  // 960-sample chunk: 50 Hz bins.
  for (double f : {1000.0, 850.0, 2300.0, 5125.0, 11111.0}) {
    const Waveform w = synth_impact(1.0, single_mode(f, 50.0), 0.02);
    ASSERT_EQ(w.samples.size(), kChunkSamples);
    const double peak_hz = static_cast<double>(argmax(dft_magnitude(w.samples))) * kSampleRate / kChunkSamples;
    EXPECT_LE(std::abs(peak_hz - f), 50.0) << f;
  }
}

TEST(Impact, ClipsAndFlags) {
  const Waveform w = synth_impact(1000.0, ModalModel{}, 0.02);
  EXPECT_TRUE(w.clipped);
  for (double s : w.samples) {
    ASSERT_LE(s, kPcmMax);
    ASSERT_GE(s, kPcmMin);
  }
}

TEST(Impact, ModelValidation) {
  ModalModel m;
  m.modes = {{30000.0, 10.0, 1.0}};
  EXPECT_THROW(m.validate(), ConfigError);
  m.modes = {{1000.0, 0.0, 1.0}};
  EXPECT_THROW(m.validate(), ConfigError);
  m = ModalModel{};
  m.band_low = 9000.0;
  EXPECT_THROW(m.validate(), ConfigError);
  EXPECT_NO_THROW(ModalModel{}.validate());
}

// ---------------------------------------------------------------------------
// Slip noise

TEST(Slip, NoEventsIsSilence) {
  EXPECT_TRUE(synth_slip({}, ModalModel{}, 1).samples.empty());
  SlipSynth s(ModalModel{}, 1);
  for (double v : s.render(4800)) EXPECT_EQ(v, 0.0);
}

TEST(Slip, SupportedOnlyOnEventSpans) {
  const std::vector<elastomer::SlipEvent> ev{slip(0.01, 0.02, 50.0), slip(0.05, 0.01, 20.0)};
  const Waveform w = synth_slip(ev, ModalModel{}, 3);
  ASSERT_EQ(w.samples.size(), sample_index(0.06));
  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::abs(v));
  ASSERT_GT(peak, 0.0);
  for (std::size_t k = 0; k < w.samples.size(); ++k) {
    const bool inside = (k >= 480 && k < 1440) || (k >= 2400 && k < 2880);
    if (!inside) {
      ASSERT_LT(std::abs(w.samples[k]), 1e-6 * peak) << k;
    }
  }
}

TEST(Slip, SquareRootSpeedLaw) {
  const ModalModel m;
  const Waveform slow = synth_slip(std::vector{slip(0.0, 0.5, 10.0)}, m, 9);
  const Waveform fast = synth_slip(std::vector{slip(0.0, 0.5, 40.0)}, m, 9);
  EXPECT_NEAR(rms(fast.samples) / rms(slow.samples), 2.0, 0.1);
  // Different noise realisations too.
  const Waveform fast2 = synth_slip(std::vector{slip(0.0, 0.5, 40.0)}, m, 10);
  EXPECT_NEAR(rms(fast2.samples) / rms(slow.samples), 2.0, 0.1);
}

TEST(Slip, AmplitudeScalesWithFrictionAndPressure) {
  const ModalModel m;
  auto e = slip(0.0, 0.1, 25.0, 0.02);
  EXPECT_NEAR(SlipSynth::slip_amplitude(e, m), m.slip_gain * 0.9 * 0.02 * 5.0, 1e-9);
  e.pressure = 0.04;
  EXPECT_NEAR(SlipSynth::slip_amplitude(e, m), m.slip_gain * 0.9 * 0.04 * 5.0, 1e-9);
}

TEST(Slip, EnergyConcentratedInBand) {
  const Waveform w = synth_slip(std::vector{slip(0.0, 0.4, 30.0)}, ModalModel{}, 5);
  std::span<const double> seg(w.samples.data() + 4800, 4800);  // skip the filter start-up
  const auto mag = dft_magnitude(seg);
  double in = 0.0, total = 0.0;
  for (std::size_t k = 1; k < mag.size(); ++k) {
    const double hz = static_cast<double>(k) * kSampleRate / 4800.0;
    total += mag[k] * mag[k];
    if (hz >= 500.0 && hz <= 8000.0) in += mag[k] * mag[k];
  }
  EXPECT_GT(in / total, 0.75);
}

TEST(Slip, DeterministicAndPiecewiseIdentical) {
  const std::vector<elastomer::SlipEvent> ev{slip(0.002, 0.004, 30.0), slip(0.006, 0.002, 60.0), slip(0.02, 0.01, 15.0)};
  const Waveform a = synth_slip(ev, ModalModel{}, 42), b = synth_slip(ev, ModalModel{}, 42);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_NE(a.samples, synth_slip(ev, ModalModel{}, 43).samples);

  // Events fed just ahead of rendering, in odd-sized pieces.
  SlipSynth s(ModalModel{}, 42);
  std::vector<double> pieces;
  std::size_t next = 0;
  for (std::size_t end : {50u, 96u, 300u, 700u, 960u, 1440u}) {
    while (next < ev.size() && sample_index(ev[next].time) < end) s.add_event(ev[next++]);
    const auto part = s.render(end);
    pieces.insert(pieces.end(), part.begin(), part.end());
  }
  pieces.resize(a.samples.size());
  EXPECT_EQ(pieces, a.samples);
  EXPECT_THROW(s.add_event(slip(0.001, 0.001, 1.0)), std::invalid_argument);
}

TEST(Slip, RejectsUnorderedEvents) {
  const std::vector<elastomer::SlipEvent> ev{slip(0.01, 0.01, 1.0), slip(0.005, 0.01, 1.0)};
  EXPECT_THROW((void)synth_slip(ev, ModalModel{}, 1), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Mixer

TEST(Mixer, EmptyStreamIsZeroChunksAtTwentyMs) {
  const auto chunks = mix_stream({}, 1.0);
  ASSERT_EQ(chunks.size(), 50u);
  for (std::size_t k = 0; k < chunks.size(); ++k) {
    EXPECT_EQ(chunks[k].start.micros, k * 20000u);
    ASSERT_EQ(chunks[k].samples.size(), kChunkSamples);
    for (auto s : chunks[k].samples) ASSERT_EQ(s, 0);
    EXPECT_EQ(chunks[k].duration_us(), 20000u);
  }
}

TEST(Mixer, ImpulsePlacementIsSampleAccurate) {
  for (double t : {1.0, 1.013, 0.0199999, 0.5 + 7.0 / 48000.0}) {
    const std::vector<PlacedWaveform> w{{Timestamp::from_seconds(t), Waveform{{1000.0}, false}}};
    const auto chunks = mix_stream(w, 1.5);
    const std::size_t target = sample_index(Timestamp::from_seconds(t));
    const std::size_t c = target / kChunkSamples;
    ASSERT_LT(c, chunks.size());
    EXPECT_LE(chunks[c].start.micros, Timestamp::from_seconds(t).micros);
    EXPECT_GT(chunks[c].start.micros + 20000, Timestamp::from_seconds(t).micros);
    std::size_t nonzero = 0, at = 0;
    for (std::size_t k = 0; k < chunks.size(); ++k) {
      for (std::size_t i = 0; i < chunks[k].samples.size(); ++i) {
        if (chunks[k].samples[i] != 0) {
          ++nonzero;
          at = k * kChunkSamples + i;
        }
      }
    }
    EXPECT_EQ(nonzero, 1u);
    EXPECT_EQ(at, static_cast<std::size_t>(std::llround((t - chunks[c].start.micros * 1e-6) * 48000.0)) + c * kChunkSamples);
  }
}

TEST(Mixer, FinalPartialChunk) {
  const auto chunks = mix_stream({}, 0.05);
  ASSERT_EQ(chunks.size(), 3u);
  EXPECT_EQ(chunks[2].samples.size(), 480u);
  EXPECT_EQ(chunks[2].start.micros, 40000u);
}

TEST(Mixer, AdditiveWithSaturatingClamp) {
  AudioMixer m;
  std::vector<double> a(960, 20000.0), b(960, 20000.0), c(960, -1234.4);
  m.add(0, a);
  m.add(0, b);
  m.add(960, c);
  const auto out = m.drain(1920);
  ASSERT_EQ(out.size(), 2u);
  for (auto s : out[0].samples) ASSERT_EQ(s, 32767);
  for (auto s : out[1].samples) ASSERT_EQ(s, -1234);
  EXPECT_EQ(m.clipped_samples(), 960u);
  EXPECT_THROW(m.add(100, a), std::invalid_argument);
}

TEST(Mixer, MixEqualsDirectSummation) {
  const ModalModel model;
  const Waveform imp = synth_impact(0.8, model, 0.1);
  const Waveform sl = synth_slip(std::vector{slip(0.03, 0.05, 40.0)}, model, 2);
  const std::vector<PlacedWaveform> waves{{Timestamp{12345}, imp}, {Timestamp{0}, sl}};
  const auto chunks = mix_stream(waves, 0.2);
  std::vector<double> direct(sample_index(0.2), 0.0);
  const std::size_t off = sample_index(Timestamp{12345});
  for (std::size_t k = 0; k < imp.samples.size(); ++k) direct[off + k] += imp.samples[k];
  for (std::size_t k = 0; k < sl.samples.size(); ++k) direct[k] += sl.samples[k];
  std::vector<double> mixed;
  for (const auto& c : chunks)
    for (auto s : c.samples) mixed.push_back(s);
  ASSERT_EQ(mixed.size(), direct.size());
  for (std::size_t k = 0; k < mixed.size(); ++k) ASSERT_NEAR(mixed[k], direct[k], 0.5) << k;
  // Energy: RMS^2(mix) bounded by the parts plus the cross term.
  const double ei = std::pow(rms(imp.samples), 2) * imp.samples.size(), es = std::pow(rms(sl.samples), 2) * sl.samples.size();
  const double em = std::pow(rms(direct), 2) * direct.size();
  EXPECT_LE(em, ei + es + 2 * std::sqrt(ei * es) + 1e-6);
}

TEST(Wav, HeaderDescribesMono16BitAt48k) {
  const auto chunks = mix_stream({}, 0.04);
  const std::string wav = encode_wav(chunks);
  ASSERT_EQ(wav.size(), 44u + 2 * 1920);
  EXPECT_EQ(wav.substr(0, 4), "RIFF");
  EXPECT_EQ(wav.substr(8, 8), "WAVEfmt ");
  auto u32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(wav[off + i])) << (8 * i);
    return v;
  };
  EXPECT_EQ(u32(4), 36u + 3840u);
  EXPECT_EQ(u32(24), 48000u);
  EXPECT_EQ(u32(28), 96000u);
  EXPECT_EQ(wav.substr(36, 4), "data");
  EXPECT_EQ(u32(40), 3840u);
}
