#pragma once

// Policy-evaluation bookkeeping: progress/success metrics over run logs,
// observation windows cut from recorded episodes, and the receding-horizon
// prediction/execution schedule.

#include "tactwin/config.hpp"
#include "tactwin/contactaudio.hpp"
#include "tactwin/core.hpp"
#include "tactwin/streamproto.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <fstream>
#include <string>
#include <vector>

namespace tactwin::evalkit {

class AlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Metrics

struct TaskSpec {
  std::string name;
  int stages = 3;
  std::vector<std::string> labels;

  void validate() const {
    if (name.empty()) throw ConfigError("task: name must not be empty");
    if (stages < 3 || stages > 7) throw ConfigError("task '" + name + "': stage count must lie in [3, 7]");
    if (!labels.empty() && labels.size() != static_cast<std::size_t>(stages)) {
      throw ConfigError("task '" + name + "': " + std::to_string(labels.size()) + " labels for " + std::to_string(stages) + " stages");
    }
  }
};

/// [task] name = ..., stages = N, labels = a, b, c
[[nodiscard]] inline TaskSpec load_task(const std::string& path) {
  const auto doc = config::Document::load(path);
  const config::Section* s = doc.take("task");
  if (s == nullptr) throw ConfigError(path + ": missing [task] section");
  const config::Reader r(doc, *s);
  TaskSpec t;
  t.name = r.str("name");
  t.stages = static_cast<int>(r.integer("stages"));
  if (r.has("labels")) {
    std::stringstream ss(r.str("labels"));
    std::string item;
    while (std::getline(ss, item, ',')) t.labels.push_back(config::detail::trim(item));
  }
  doc.reject_unused();
  try {
    t.validate();
  } catch (const ConfigError& e) {
    doc.fail(s->line, e.what());
  }
  return t;
}

struct RunLog {
  std::string task;
  int completed = 0;
  bool success = false;

  void validate(const TaskSpec& spec) const {
    if (task != spec.name) throw std::invalid_argument("run log for task '" + task + "' does not match '" + spec.name + "'");
    if (completed < 0 || completed > spec.stages) throw std::invalid_argument("run log: completed stages out of range");
    if (success && completed != spec.stages) throw std::invalid_argument("run log: success requires every stage completed");
  }
};

[[nodiscard]] inline double task_progress(std::span<const RunLog> runs, const TaskSpec& spec) {
  if (runs.empty()) throw std::domain_error("task_progress: no runs");
  double sum = 0.0;
  for (const auto& r : runs) {
    r.validate(spec);
    sum += static_cast<double>(r.completed) / spec.stages;
  }
  return sum / static_cast<double>(runs.size());
}

[[nodiscard]] inline double task_success(std::span<const RunLog> runs) {
  if (runs.empty()) throw std::domain_error("task_success: no runs");
  std::size_t ok = 0;
  for (const auto& r : runs) ok += r.success ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(runs.size());
}

/// Whole-number percentage, rounded half away from zero: 0.8125 -> "81%".
[[nodiscard]] inline std::string format_percent(double fraction) {
  return std::to_string(std::lround(fraction * 100.0)) + "%";
}

/// One JSON object per line: {"task": ..., "completed": N, "success": bool}.
/// Blank lines are ignored.
[[nodiscard]] inline std::vector<RunLog> read_runs_jsonl(std::istream& in, const std::string& source = "<stream>") {
  std::vector<RunLog> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (config::detail::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      RunLog r;
      r.task = j.at("task").get<std::string>();
      r.completed = j.at("completed").get<int>();
      r.success = j.at("success").get<bool>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

[[nodiscard]] inline std::vector<RunLog> read_runs_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(path + ": cannot open");
  return read_runs_jsonl(f, path);
}

// ---------------------------------------------------------------------------
// Observations and actions

inline constexpr std::size_t kHistory = 2;
inline constexpr std::size_t kHorizon = 16;
inline constexpr std::size_t kExecute = 8;
inline constexpr std::size_t kArmDims = 14;

struct ArmProprio {
  std::array<double, 6> actual_pose{};
  std::array<double, 6> desired_pose{};
  double actual_width = 0.0;   // mm
  double desired_width = 0.0;  // mm

  void validate() const {
    if (!(actual_width >= 0.0 && desired_width >= 0.0)) throw std::invalid_argument("proprio: gripper widths must be >= 0");
  }
};

/// Bimanual proprio: 2 x (6 + 6 + 1 + 1) = 28 values.
struct ProprioVector {
  std::array<ArmProprio, 2> arms;

  [[nodiscard]] std::vector<double> flatten() const {
    std::vector<double> v;
    v.reserve(2 * kArmDims);
    for (const auto& a : arms) {
      v.insert(v.end(), a.actual_pose.begin(), a.actual_pose.end());
      v.insert(v.end(), a.desired_pose.begin(), a.desired_pose.end());
      v.push_back(a.actual_width);
      v.push_back(a.desired_width);
    }
    return v;
  }

  [[nodiscard]] static ProprioVector unflatten(std::span<const double> v) {
    if (v.size() != 2 * kArmDims) throw std::invalid_argument("proprio: expected 28 values");
    ProprioVector p;
    for (std::size_t a = 0; a < 2; ++a) {
      const double* b = v.data() + a * kArmDims;
      std::copy(b, b + 6, p.arms[a].actual_pose.begin());
      std::copy(b + 6, b + 12, p.arms[a].desired_pose.begin());
      p.arms[a].actual_width = b[12];
      p.arms[a].desired_width = b[13];
      p.arms[a].validate();
    }
    return p;
  }
};

/// One bimanual command: per arm desired pose (6) and gripper width (1).
using Action = std::array<double, 14>;
using ActionChunk = std::array<Action, kHorizon>;

struct Observation {
  std::uint64_t timestamp_us = 0;
  streamproto::VideoFrame frame;
  std::vector<std::int16_t> audio;  // trailing window ending at timestamp_us
  std::optional<ProprioVector> proprio;
};

struct ObservationWindow {
  std::array<Observation, kHistory> steps;  // oldest first
};

struct WindowOptions {
  std::uint64_t tolerance_us = 16667;  // half a 30 fps frame period
  double audio_window_s = 1.0;
};

/// The two most recent video frames at or before `t`, each with the trailing
/// audio window and the latest proprio sample. Alignment is judged in arrival
/// order: the last audio chunk (and proprio sample) recorded before a frame
/// must end (be stamped) within the tolerance of the frame timestamp. A frame
/// inside the first audio chunk may precede every audio message (as in the
/// publish schedule); like sync_check it is not scored. Audio before the
/// session start is zero-padded.
[[nodiscard]] inline ObservationWindow build_obs_window(const streamproto::EpisodeReader& ep, Timestamp t, const WindowOptions& opt = {}) {
  using streamproto::MsgType;
  const auto& log = ep.arrival_order();
  struct FrameRef {
    std::size_t pos;
    std::uint64_t ts;
  };
  std::vector<FrameRef> frames;
  for (std::size_t k = 0; k < log.size(); ++k) {
    if (log[k].type == MsgType::Video && log[k].timestamp_us <= t.micros) frames.push_back({k, log[k].timestamp_us});
  }
  std::stable_sort(frames.begin(), frames.end(), [](const FrameRef& a, const FrameRef& b) { return a.ts < b.ts; });
  if (frames.size() < kHistory) throw std::domain_error("build_obs_window: fewer than 2 video frames at or before t");
  std::size_t audio_chunks = 0;
  bool any_proprio = false;
  for (const auto& m : log) {
    audio_chunks += m.type == MsgType::Audio ? 1 : 0;
    any_proprio = any_proprio || m.type == MsgType::Proprio;
  }
  if (audio_chunks < kHistory) throw std::domain_error("build_obs_window: fewer than 2 audio chunks in the episode");

  const auto window_samples = static_cast<std::size_t>(std::llround(opt.audio_window_s * contactaudio::kSampleRate));
  ObservationWindow w;
  for (std::size_t h = 0; h < kHistory; ++h) {
    const FrameRef& f = frames[frames.size() - kHistory + h];
    Observation& o = w.steps[h];
    o.timestamp_us = f.ts;
    o.frame = streamproto::decode_video(log[f.pos].payload);

    std::optional<std::uint64_t> audio_end;
    const streamproto::Message* proprio = nullptr;
    for (std::size_t k = 0; k < f.pos; ++k) {
      if (log[k].type == MsgType::Audio) {
        audio_end = log[k].timestamp_us + streamproto::audio_duration_us(streamproto::decode_audio(log[k].payload));
      } else if (log[k].type == MsgType::Proprio) {
        proprio = &log[k];
      }
    }
    if (audio_end) {
      const std::uint64_t gap = *audio_end > f.ts ? *audio_end - f.ts : f.ts - *audio_end;
      if (gap > opt.tolerance_us) {
        throw AlignmentError("audio misaligned by " + std::to_string(gap) + " us at frame " + std::to_string(f.ts) + " us");
      }
    } else if (f.ts >= contactaudio::kChunkMicros) {
      throw std::domain_error("build_obs_window: no audio recorded before frame at " + std::to_string(f.ts) + " us");
    }
    if (any_proprio && proprio != nullptr) {
      const std::uint64_t pg = proprio->timestamp_us > f.ts ? proprio->timestamp_us - f.ts : f.ts - proprio->timestamp_us;
      if (pg > opt.tolerance_us) throw AlignmentError("proprio misaligned by " + std::to_string(pg) + " us");
      o.proprio = ProprioVector::unflatten(streamproto::decode_proprio(proprio->payload));
    }

    // Trailing audio window [ts - window, ts) on the session sample grid.
    const std::size_t end = contactaudio::sample_index(Timestamp{f.ts});
    const std::size_t begin = end > window_samples ? end - window_samples : 0;
    o.audio.assign(window_samples, 0);
    const std::size_t pad = window_samples - (end - begin);
    for (const auto& m : log) {
      if (m.type != MsgType::Audio) continue;
      const auto a = streamproto::decode_audio(m.payload);
      const std::size_t s0 = contactaudio::sample_index(Timestamp{m.timestamp_us});
      for (std::size_t k = 0; k < a.samples.size(); ++k) {
        const std::size_t s = s0 + k;
        if (s >= begin && s < end) o.audio[pad + (s - begin)] = a.samples[k];
      }
    }
  }
  return w;
}

struct ScheduleStep {
  std::size_t predict_at = 0;
  std::size_t execute_begin = 0;
  std::size_t execute_end = 0;  // exclusive
};

/// Predict a 16-step chunk every 8 steps and execute its first 8 (the last
/// chunk is cut at T).
[[nodiscard]] inline std::vector<ScheduleStep> receding_horizon_schedule(std::size_t T, std::size_t horizon = kHorizon,
                                                                        std::size_t execute = kExecute) {
  if (T < horizon) throw std::domain_error("receding_horizon_schedule: episode shorter than the prediction horizon");
  if (execute == 0 || execute > horizon) throw std::invalid_argument("receding_horizon_schedule: need 0 < execute <= horizon");
  std::vector<ScheduleStep> out;
  for (std::size_t k = 0; k < T; k += execute) out.push_back({k, k, std::min(k + execute, T)});
  return out;
}

}  // namespace tactwin::evalkit
