#pragma once

// Scenario files and the fixed-timestep simulation loop that drives every
// module: indenter timeline -> elastomer -> rendering -> audio -> stream.

#include "tactwin/config.hpp"
#include "tactwin/contactaudio.hpp"
#include "tactwin/core.hpp"
#include "tactwin/elastomer.hpp"
#include "tactwin/optics.hpp"
#include "tactwin/photorender.hpp"
#include "tactwin/streamproto.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace tactwin::scenario {

struct Keyframe {
  double t = 0.0;        // s
  double x = 50.0;       // mm, plate coordinates
  double y = 12.5;       // mm
  double yaw_deg = 0.0;  // rotation about the plate normal
  double force = 0.0;    // N
};

struct IndenterSpec {
  std::string shape = "sphere";  // sphere | flat | edge | image
  double radius = 5.0;
  double size_x = 10.0, size_y = 10.0;
  double length = 20.0;
  std::string image;
  double pixel_mm = 0.1;
  double depth_mm = 1.0;

  [[nodiscard]] HeightMap build(const std::filesystem::path& base_dir) const {
    if (shape == "sphere") return elastomer::sphere_shape(radius);
    if (shape == "flat") return elastomer::flat_shape(size_x, size_y);
    if (shape == "edge") return elastomer::edge_shape(length, radius);
    if (shape == "image") return elastomer::image_shape((base_dir / image).string(), pixel_mm, depth_mm);
    throw ConfigError("indenter: unknown shape '" + shape + "'");
  }
};

struct StreamSettings {
  double fps = 30.0;
  double chunk_ms = 20.0;
  std::string listen;  // empty = no network
  streamproto::PixelFormat format = streamproto::PixelFormat::Raw;
};

struct Scenario {
  std::string name = "scenario";
  double duration = 2.0;
  std::uint64_t seed = 1;
  std::string optics = "default";  // "default" or a path relative to the scenario file
  std::filesystem::path base_dir = ".";

  elastomer::Params elastomer = elastomer::Params::vhb();
  IndenterSpec indenter;
  std::vector<Keyframe> timeline{{0.0, 50.0, 12.5, 0.0, 0.0}};

  photorender::IlluminationConfig illumination = photorender::IlluminationConfig::defaults();
  photorender::AlbedoModel albedo = photorender::AlbedoModel::semi_specular();

  contactaudio::ModalModel audio;
  double impact_duration = 0.25;  // s

  StreamSettings stream;
  std::vector<std::string> backgrounds{"checker", "gradient"};  // per side window

  void validate() const {
    if (!(duration > 0.0)) throw ConfigError("scenario: duration must be positive");
    if (timeline.empty()) throw ConfigError("scenario: timeline must not be empty");
    for (std::size_t k = 0; k < timeline.size(); ++k) {
      if (k > 0 && !(timeline[k].t > timeline[k - 1].t)) throw ConfigError("timeline: times must be strictly increasing");
      if (!(timeline[k].force >= 0.0)) throw ConfigError("timeline: force must be >= 0");
    }
    elastomer.validate();
    illumination.validate();
    albedo.validate();
    audio.validate();
    if (!(stream.fps > 0.0)) throw ConfigError("stream: fps must be positive");
    if (stream.chunk_ms != 20.0) throw ConfigError("stream: only 20 ms audio chunks (960 samples at 48 kHz) are supported");
    if (!(impact_duration > 0.0)) throw ConfigError("audio: impact_duration must be positive");
  }

  /// Indenter keyframe at time t (linear interpolation, held outside the timeline).
  [[nodiscard]] Keyframe at(double t) const {
    if (t <= timeline.front().t) return timeline.front();
    if (t >= timeline.back().t) return timeline.back();
    const auto it = std::upper_bound(timeline.begin(), timeline.end(), t, [](double v, const Keyframe& k) { return v < k.t; });
    const Keyframe& b = *it;
    const Keyframe& a = *(it - 1);
    const double u = (t - a.t) / (b.t - a.t);
    auto lerp = [u](double p, double q) { return p + (q - p) * u; };
    return {t, lerp(a.x, b.x), lerp(a.y, b.y), lerp(a.yaw_deg, b.yaw_deg), lerp(a.force, b.force)};
  }
};

// ---------------------------------------------------------------------------
// Parsing and serialization

namespace detail {

inline Rgb rgb_of(const config::Reader& r, std::string_view key, Rgb fallback) {
  const Vec3 v = r.vec3(key, Vec3(fallback.r, fallback.g, fallback.b));
  return {v.x(), v.y(), v.z()};
}

inline std::string fmt_rgb(const Rgb& c) { return config::fmt_vec3(Vec3(c.r, c.g, c.b)); }

}  // namespace detail

[[nodiscard]] inline Scenario parse_scenario_text(std::string_view text, const std::string& source, const std::filesystem::path& base_dir) {
  const auto doc = config::Document::parse(text, source);
  Scenario s;
  s.base_dir = base_dir;
  const config::Section* sec = doc.take("scenario");
  if (sec == nullptr) throw ConfigError(source + ": missing [scenario] section");
  {
    const config::Reader r(doc, *sec);
    s.name = r.str("name", s.name);
    s.duration = r.number("duration");
    const long seed = r.integer("seed", 1);
    if (seed < 0) r.fail("seed", "'seed' must be non-negative");
    s.seed = static_cast<std::uint64_t>(seed);
    s.optics = r.str("optics", s.optics);
  }
  if (const auto* e = doc.take("elastomer")) {
    const config::Reader r(doc, *e);
    const std::string kind = r.str("kind", "vhb");
    if (kind != "vhb" && kind != "silicone") r.fail("kind", "elastomer kind must be 'vhb' or 'silicone'");
    s.elastomer = elastomer::Params::for_kind(kind == "vhb" ? elastomer::Kind::Vhb : elastomer::Kind::Silicone);
    s.albedo = kind == "vhb" ? photorender::AlbedoModel::semi_specular() : photorender::AlbedoModel::lambertian();
    auto& p = s.elastomer;
    p.thickness = r.number("thickness", p.thickness);
    p.stiffness = r.number("stiffness", p.stiffness);
    p.shear_stiffness = r.number("shear_stiffness", p.shear_stiffness);
    p.sigma = r.number("sigma", p.sigma);
    p.tau_load = r.number("tau_load", p.tau_load);
    p.tau_recover = r.number("tau_recover", p.tau_recover);
    p.friction = r.number("friction", p.friction);
  }
  if (const auto* e = doc.take("indenter")) {
    const config::Reader r(doc, *e);
    auto& in = s.indenter;
    in.shape = r.str("shape", in.shape);
    if (in.shape != "sphere" && in.shape != "flat" && in.shape != "edge" && in.shape != "image") {
      r.fail("shape", "indenter shape must be sphere, flat, edge or image");
    }
    in.radius = r.number("radius", in.radius);
    in.size_x = r.number("size_x", in.size_x);
    in.size_y = r.number("size_y", in.size_y);
    in.length = r.number("length", in.length);
    in.image = r.str("image", in.image);
    in.pixel_mm = r.number("pixel_mm", in.pixel_mm);
    in.depth_mm = r.number("depth_mm", in.depth_mm);
    if (in.shape == "image" && in.image.empty()) r.fail("shape", "image indenter needs 'image'");
  }
  if (const auto* e = doc.take("timeline")) {
    const config::Reader r(doc, *e);
    s.timeline.clear();
    for (const auto& entry : e->entries) {
      const double t = r.parse_number(entry, entry.key);
      const auto v = r.list(entry.key);
      if (v.size() != 4) doc.fail(entry.line, "timeline entry needs 'x, y, yaw_deg, force'");
      if (!s.timeline.empty() && !(t > s.timeline.back().t)) {
        doc.fail(entry.line, "timeline times must be strictly increasing (" + entry.key + " follows " + config::fmt_number(s.timeline.back().t) + ")");
      }
      if (v[3] < 0.0) doc.fail(entry.line, "timeline force must be >= 0");
      s.timeline.push_back({t, v[0], v[1], v[2], v[3]});
    }
    if (s.timeline.empty()) doc.fail(e->line, "timeline must have at least one entry");
  }
  if (const auto* e = doc.take("illumination")) {
    const config::Reader r(doc, *e);
    auto& il = s.illumination;
    il.filter = detail::rgb_of(r, "filter", il.filter);
    il.ambient = detail::rgb_of(r, "ambient", il.ambient);
    for (auto& src : il.sources) {
      src.direction = r.vec3(src.name + "_direction", src.direction);
      if (src.direction.norm() < 1e-12) r.fail(src.name + "_direction", "direction must be non-zero");
      src.direction.normalize();
      src.emission = detail::rgb_of(r, src.name + "_emission", src.emission);
    }
    if (r.has("albedo")) {
      const std::string a = r.str("albedo");
      if (a == "semi-specular") s.albedo = photorender::AlbedoModel::semi_specular();
      else if (a == "lambertian") s.albedo = photorender::AlbedoModel::lambertian();
      else r.fail("albedo", "albedo must be 'semi-specular' or 'lambertian'");
    }
    const Rgb d = detail::rgb_of(r, "diffuse", s.albedo.diffuse);
    s.albedo.diffuse = d;
    s.albedo.specular = r.number("specular", s.albedo.specular);
    s.albedo.shininess = r.number("shininess", s.albedo.shininess);
  }
  if (const auto* e = doc.take("audio")) {
    const config::Reader r(doc, *e);
    auto& a = s.audio;
    a.impact_coefficient = r.number("impact_coefficient", a.impact_coefficient);
    a.slip_gain = r.number("slip_gain", a.slip_gain);
    a.slip_exponent = r.number("slip_exponent", a.slip_exponent);
    a.band_low = r.number("band_low", a.band_low);
    a.band_high = r.number("band_high", a.band_high);
    s.impact_duration = r.number("impact_duration", s.impact_duration);
    if (r.has("modes")) {
      const auto v = r.list("modes");
      if (v.empty() || v.size() % 3 != 0) r.fail("modes", "'modes' needs frequency, damping, gain triples");
      a.modes.clear();
      for (std::size_t k = 0; k < v.size(); k += 3) a.modes.push_back({v[k], v[k + 1], v[k + 2]});
    }
  }
  if (const auto* e = doc.take("stream")) {
    const config::Reader r(doc, *e);
    s.stream.fps = r.number("fps", s.stream.fps);
    s.stream.chunk_ms = r.number("chunk_ms", s.stream.chunk_ms);
    s.stream.listen = r.str("listen", "");
    const std::string fmt = r.str("pixel_format", "raw");
    if (fmt == "raw") s.stream.format = streamproto::PixelFormat::Raw;
    else if (fmt == "rle") s.stream.format = streamproto::PixelFormat::Rle;
    else r.fail("pixel_format", "pixel_format must be 'raw' or 'rle'");
  }
  if (const auto* e = doc.take("backgrounds")) {
    const config::Reader r(doc, *e);
    for (std::size_t k = 0; k < s.backgrounds.size(); ++k) s.backgrounds[k] = r.str("window." + std::to_string(k), s.backgrounds[k]);
  }
  doc.reject_unused();
  try {
    s.validate();
  } catch (const ConfigError& err) {
    doc.fail(sec->line, err.what());
  }
  return s;
}

[[nodiscard]] inline Scenario parse_scenario(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(path + ": cannot open scenario");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_scenario_text(ss.str(), path, std::filesystem::path(path).parent_path());
}

[[nodiscard]] inline std::string serialize_scenario(const Scenario& s) {
  using config::fmt_number;
  using config::put;
  config::Document doc;
  auto& sc = doc.add_section("scenario");
  put(sc, "name", s.name);
  put(sc, "duration", fmt_number(s.duration));
  put(sc, "seed", std::to_string(s.seed));
  put(sc, "optics", s.optics);

  auto& el = doc.add_section("elastomer");
  const auto& p = s.elastomer;
  put(el, "kind", elastomer::to_string(p.kind));
  put(el, "thickness", fmt_number(p.thickness));
  put(el, "stiffness", fmt_number(p.stiffness));
  put(el, "shear_stiffness", fmt_number(p.shear_stiffness));
  put(el, "sigma", fmt_number(p.sigma));
  put(el, "tau_load", fmt_number(p.tau_load));
  put(el, "tau_recover", fmt_number(p.tau_recover));
  put(el, "friction", fmt_number(p.friction));

  auto& in = doc.add_section("indenter");
  put(in, "shape", s.indenter.shape);
  put(in, "radius", fmt_number(s.indenter.radius));
  put(in, "size_x", fmt_number(s.indenter.size_x));
  put(in, "size_y", fmt_number(s.indenter.size_y));
  put(in, "length", fmt_number(s.indenter.length));
  if (!s.indenter.image.empty()) put(in, "image", s.indenter.image);
  put(in, "pixel_mm", fmt_number(s.indenter.pixel_mm));
  put(in, "depth_mm", fmt_number(s.indenter.depth_mm));

  auto& tl = doc.add_section("timeline");
  for (const auto& k : s.timeline) {
    put(tl, fmt_number(k.t), fmt_number(k.x) + ", " + fmt_number(k.y) + ", " + fmt_number(k.yaw_deg) + ", " + fmt_number(k.force));
  }

  auto& il = doc.add_section("illumination");
  put(il, "filter", detail::fmt_rgb(s.illumination.filter));
  put(il, "ambient", detail::fmt_rgb(s.illumination.ambient));
  for (const auto& src : s.illumination.sources) {
    put(il, src.name + "_direction", config::fmt_vec3(src.direction));
    put(il, src.name + "_emission", detail::fmt_rgb(src.emission));
  }
  put(il, "albedo", s.albedo.kind == photorender::AlbedoKind::SemiSpecular ? "semi-specular" : "lambertian");
  put(il, "diffuse", detail::fmt_rgb(s.albedo.diffuse));
  put(il, "specular", fmt_number(s.albedo.specular));
  put(il, "shininess", fmt_number(s.albedo.shininess));

  auto& au = doc.add_section("audio");
  std::string modes;
  for (const auto& m : s.audio.modes) {
    if (!modes.empty()) modes += ", ";
    modes += fmt_number(m.frequency) + ", " + fmt_number(m.damping) + ", " + fmt_number(m.gain);
  }
  put(au, "modes", modes);
  put(au, "impact_coefficient", fmt_number(s.audio.impact_coefficient));
  put(au, "impact_duration", fmt_number(s.impact_duration));
  put(au, "slip_gain", fmt_number(s.audio.slip_gain));
  put(au, "slip_exponent", fmt_number(s.audio.slip_exponent));
  put(au, "band_low", fmt_number(s.audio.band_low));
  put(au, "band_high", fmt_number(s.audio.band_high));

  auto& st = doc.add_section("stream");
  put(st, "fps", fmt_number(s.stream.fps));
  put(st, "chunk_ms", fmt_number(s.stream.chunk_ms));
  if (!s.stream.listen.empty()) put(st, "listen", s.stream.listen);
  put(st, "pixel_format", s.stream.format == streamproto::PixelFormat::Raw ? "raw" : "rle");

  auto& bg = doc.add_section("backgrounds");
  for (std::size_t k = 0; k < s.backgrounds.size(); ++k) put(bg, "window." + std::to_string(k), s.backgrounds[k]);
  return doc.to_string();
}

// ---------------------------------------------------------------------------
// Simulation

/// Peripheral background: "checker", "gradient", "r, g, b" or a P6 file path.
[[nodiscard]] inline RgbImage make_background(const std::string& spec, const std::filesystem::path& base_dir) {
  constexpr std::size_t kW = 160, kH = 40;
  if (spec == "checker") {
    RgbImage img(kW, kH);
    for (std::size_t j = 0; j < kH; ++j) {
      for (std::size_t i = 0; i < kW; ++i) {
        const bool dark = ((i / 10) + (j / 10)) % 2 == 0;
        img.set(i, j, dark ? Rgb{0.25, 0.22, 0.2} : Rgb{0.75, 0.72, 0.65});
      }
    }
    return img;
  }
  if (spec == "gradient") {
    RgbImage img(kW, kH);
    for (std::size_t j = 0; j < kH; ++j) {
      for (std::size_t i = 0; i < kW; ++i) {
        const double u = static_cast<double>(i) / (kW - 1), v = static_cast<double>(j) / (kH - 1);
        img.set(i, j, {0.3 + 0.4 * u, 0.5 + 0.3 * v, 0.6});
      }
    }
    return img;
  }
  if (spec.find(',') != std::string::npos) {
    std::stringstream ss(spec);
    std::array<double, 3> c{};
    std::string item;
    for (double& v : c) {
      if (!std::getline(ss, item, ',')) throw ConfigError("background '" + spec + "': expected r, g, b");
      v = std::stod(item);
    }
    return RgbImage(2, 2, {c[0], c[1], c[2]});
  }
  return photorender::read_ppm((base_dir / spec).string());
}

struct RunOptions {
  std::optional<streamproto::Endpoint> listen;
  std::size_t min_clients = 0;
  bool realtime = false;
  std::string record_path;
  std::size_t backlog_limit = 8u << 20;
  std::string wav_path;
  std::function<void(std::uint16_t)> on_listening;
  std::function<void(std::size_t, const RgbImage&)> on_frame;  // frame index, full camera frame
};

struct RunReport {
  std::size_t frames = 0;
  std::size_t audio_chunks = 0;
  std::size_t physics_steps = 0;
  std::size_t saturated_steps = 0;
  std::size_t slip_events = 0;
  std::size_t impacts = 0;
  std::size_t clipped_samples = 0;
  std::size_t clients_accepted = 0;
  std::size_t backlog_disconnects = 0;
  std::uint64_t max_drift_us = 0;
  double wall_seconds = 0.0;
  double realtime_factor = 0.0;  // simulated seconds per wall second
  std::string episode_path;
};

/// Builds the message stream for a scenario; each call to next() advances the
/// simulation just far enough to produce the next message.
class Simulation {
 public:
  static constexpr std::uint64_t kStepUs = 2000;

  explicit Simulation(const Scenario& s)
      : sc_(s),
        optics_(s.optics == "default" ? optics::default_geometry() : optics::load_optics((s.base_dir / s.optics).string())),
        map_(optics::pixel_plate_map(optics_)),
        shape_(s.indenter.build(s.base_dir)),
        state_(elastomer::DeformationState::rest(s.elastomer)),
        slip_(s.audio, s.seed),
        schedule_(s.stream.fps, contactaudio::kChunkMicros, Timestamp::from_seconds(s.duration).micros) {
    sc_.validate();
    for (std::size_t k = 0; k < optics_.side_windows.size(); ++k) {
      backgrounds_.push_back(make_background(k < sc_.backgrounds.size() ? sc_.backgrounds[k] : "checker", sc_.base_dir));
    }
    background_ = photorender::background_frame(backgrounds_, map_, optics_);
    prev_key_ = sc_.at(0.0);
  }

  [[nodiscard]] const optics::FingerOptics& optics() const { return optics_; }
  [[nodiscard]] const Scenario& scenario() const { return sc_; }

  [[nodiscard]] std::string inventory() const {
    nlohmann::json j;
    j["scenario"] = sc_.name;
    j["duration_s"] = sc_.duration;
    j["seed"] = sc_.seed;
    j["streams"] = nlohmann::json::array(
        {{{"type", "video"}, {"fps", sc_.stream.fps}, {"width", map_.width()}, {"height", map_.height()},
          {"pixel_format", sc_.stream.format == streamproto::PixelFormat::Raw ? "raw" : "rle"}},
         {{"type", "audio"}, {"sample_rate", contactaudio::kSampleRate}, {"chunk_samples", contactaudio::kChunkSamples}},
         {{"type", "metadata"}}});
    return j.dump();
  }

  std::optional<streamproto::Message> next() {
    if (!sent_metadata_) {
      sent_metadata_ = true;
      return seq_.make(streamproto::MsgType::Metadata, 0, to_bytes(inventory()));
    }
    const auto ev = schedule_.next();
    if (!ev) return std::nullopt;
    advance_to(ev->publish_us);
    if (ev->type == streamproto::MsgType::Audio) {
      const std::size_t end = contactaudio::sample_index(Timestamp{ev->publish_us});
      append_slip(end);
      auto chunks = mixer_.drain(end);
      if (chunks.size() != 1) throw std::logic_error("Simulation: expected exactly one audio chunk per publish");
      ++report_.audio_chunks;
      streamproto::AudioPayload a{contactaudio::kSampleRate, std::move(chunks.front().samples)};
      if (record_audio_) audio_log_.push_back({chunks.front().start, a.samples});
      return seq_.make(streamproto::MsgType::Audio, ev->timestamp_us, streamproto::encode_audio(a));
    }
    const RgbImage frame = render_frame();
    if (on_frame_) on_frame_(report_.frames, frame);
    ++report_.frames;
    return seq_.make(streamproto::MsgType::Video, ev->timestamp_us,
                     streamproto::encode_video(streamproto::to_video_frame(frame), sc_.stream.format));
  }

  [[nodiscard]] RgbImage render_frame() const {
    RgbImage frame = background_;
    photorender::overlay_tactile(frame, photorender::render_tactile(state_.displacement, sc_.illumination, sc_.albedo),
                                 sc_.elastomer.resolution, map_);
    return frame;
  }

  void set_frame_callback(std::function<void(std::size_t, const RgbImage&)> f) { on_frame_ = std::move(f); }
  void keep_audio() { record_audio_ = true; }
  [[nodiscard]] const std::vector<contactaudio::AudioChunk>& audio_log() const { return audio_log_; }
  [[nodiscard]] const RunReport& report() const { return report_; }
  [[nodiscard]] const elastomer::DeformationState& state() const { return state_; }

 private:
  static streamproto::Bytes to_bytes(const std::string& s) { return {s.begin(), s.end()}; }

  void advance_to(std::uint64_t t_us) {
    while (time_us_ + kStepUs <= t_us) step();
  }

  void step() {
    const double dt = kStepUs * 1e-6;
    const std::uint64_t end_us = time_us_ + kStepUs;
    const double t_end = static_cast<double>(end_us) * 1e-6;
    const Keyframe key = sc_.at(t_end);
    const auto& p = sc_.elastomer;

    if (!target_ || key.x != prev_key_.x || key.y != prev_key_.y || key.yaw_deg != prev_key_.yaw_deg || key.force != prev_key_.force) {
      const elastomer::Indenter ind{shape_, Pose6D(Vec3(key.x, key.y, 0.0), Vec3(0.0, 0.0, deg2rad(key.yaw_deg))), key.force};
      auto res = elastomer::quasi_static_indent(p, ind);
      saturated_ = res.saturated;
      target_ = std::move(res.displacement);
    }
    report_.saturated_steps += saturated_ ? 1 : 0;

    if (prev_key_.force <= 0.0 && key.force > 0.0) {
      // Contact onset: strike with the force scripted 10 ms later.
      const double strike = sc_.at(t_end + 0.01).force;
      mixer_.add(contactaudio::sample_index(t_end), contactaudio::synth_impact(strike, sc_.audio, sc_.impact_duration).samples);
      ++report_.impacts;
    }

    state_ = elastomer::step_dynamics(state_, *target_, dt, p);
    const HeightMap pressure = elastomer::pressure_field(state_.displacement, p);
    const Vec2 delta(key.x - prev_key_.x, key.y - prev_key_.y);
    auto tr = elastomer::tangential_update(state_, delta, p, pressure, dt);
    state_ = std::move(tr.state);
    append_slip(contactaudio::sample_index(t_end));
    for (const auto& e : tr.report.slip_events) slip_.add_event(e);
    report_.slip_events += tr.report.slip_events.size();

    prev_key_ = key;
    time_us_ = end_us;
    ++report_.physics_steps;
  }

  void append_slip(std::size_t end_sample) {
    if (end_sample <= slip_.position()) return;
    const std::size_t start = slip_.position();
    const auto samples = slip_.render(end_sample);
    mixer_.add(start, samples);
  }

  Scenario sc_;
  optics::FingerOptics optics_;
  optics::PixelPlateMap map_;
  HeightMap shape_;
  std::vector<RgbImage> backgrounds_;
  RgbImage background_;
  elastomer::DeformationState state_;
  std::optional<HeightMap> target_;
  bool saturated_ = false;
  Keyframe prev_key_;
  std::uint64_t time_us_ = 0;
  contactaudio::SlipSynth slip_;
  contactaudio::AudioMixer mixer_;
  streamproto::AvSchedule schedule_;
  streamproto::Sequencer seq_;
  bool sent_metadata_ = false;
  bool record_audio_ = false;
  std::vector<contactaudio::AudioChunk> audio_log_;
  std::function<void(std::size_t, const RgbImage&)> on_frame_;
  RunReport report_;
};

[[nodiscard]] inline RunReport run_scenario(const Scenario& s, const RunOptions& opt = {}) {
  Simulation sim(s);
  if (opt.on_frame) sim.set_frame_callback(opt.on_frame);
  if (!opt.wav_path.empty()) sim.keep_audio();
  streamproto::SessionOptions so;
  so.listen = opt.listen;
  so.min_clients = opt.min_clients;
  so.realtime = opt.realtime;
  so.backlog_limit = opt.backlog_limit;
  so.record_path = opt.record_path;
  so.header.wallclock_us = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::system_clock::now().time_since_epoch()).count());
  const std::string text = serialize_scenario(s);
  so.header.config_hash = streamproto::fnv1a64(text);
  so.header.session_id = streamproto::fnv1a64(s.name + "#" + std::to_string(s.seed));
  so.header.inventory = sim.inventory();
  const auto st = streamproto::serve_session([&] { return sim.next(); }, so, opt.on_listening);
  RunReport r = sim.report();
  r.clipped_samples = 0;
  r.clients_accepted = st.clients_accepted;
  r.backlog_disconnects = st.backlog_disconnects;
  r.max_drift_us = st.max_drift_us;
  r.wall_seconds = st.wall_seconds;
  r.realtime_factor = st.wall_seconds > 0.0 ? s.duration / st.wall_seconds : 0.0;
  r.episode_path = opt.record_path;
  if (!opt.wav_path.empty()) contactaudio::write_wav(opt.wav_path, sim.audio_log());
  return r;
}

}  // namespace tactwin::scenario
