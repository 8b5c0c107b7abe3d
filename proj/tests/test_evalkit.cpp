#include "tactwin/evalkit.hpp"
#include "tactwin/random.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

using namespace tactwin;
using namespace tactwin::evalkit;
using streamproto::Bytes;
using streamproto::Message;
using streamproto::MsgType;

namespace {

TaskSpec six_stage() { return {"t", 6, {}}; }

std::vector<double> proprio_at(std::uint64_t ts) {
  std::vector<double> v(28);
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<double>(ts) * 1e-6 + static_cast<double>(k);
  v[12] = v[13] = v[26] = v[27] = 40.0;
  return v;
}

// Scheduled 30 fps / 20 ms session. Every sample of audio chunk j holds j + 1
// and each frame is preceded by a proprio sample stamped with its time; the
// frame's first byte carries its index.
streamproto::EpisodeReader synthetic_episode(double seconds, std::int64_t audio_shift_us = 0, bool with_proprio = true) {
  streamproto::AvSchedule sched(30.0, contactaudio::kChunkMicros, static_cast<std::uint64_t>(seconds * 1e6));
  streamproto::Sequencer seq;
  const auto path = (std::filesystem::temp_directory_path() / "tactwin_evalkit_test.plyt").string();
  {
    streamproto::EpisodeWriter w(path, {0, 1, 2, "video,audio,proprio"});
    while (auto e = sched.next()) {
      if (e->type == MsgType::Audio) {
        const auto value = static_cast<std::int16_t>(e->index + 1);
        const auto ts = static_cast<std::uint64_t>(static_cast<std::int64_t>(e->timestamp_us) + audio_shift_us);
        w.append(seq.make(MsgType::Audio, ts, streamproto::encode_audio({48000, std::vector<std::int16_t>(960, value)})));
      } else {
        if (with_proprio) w.append(seq.make(MsgType::Proprio, e->timestamp_us, streamproto::encode_proprio(proprio_at(e->timestamp_us))));
        streamproto::VideoFrame f{2, 1, Bytes(6, 0)};
        f.rgb[0] = static_cast<std::uint8_t>(e->index);
        w.append(seq.make(MsgType::Video, e->timestamp_us, streamproto::encode_video(f)));
      }
    }
    w.close();
  }
  return streamproto::EpisodeReader(path);
}

std::uint64_t frame_ts(std::size_t k) { return static_cast<std::uint64_t>(std::llround(k * 1e6 / 30.0)); }

}  // namespace

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, ProgressArithmetic) {
  const auto spec = six_stage();
  const std::vector<RunLog> full{{"t", 6, true}, {"t", 6, true}};
  EXPECT_DOUBLE_EQ(task_progress(full, spec), 1.0);
  const std::vector<RunLog> mixed{{"t", 3, false}, {"t", 6, true}, {"t", 0, false}};
  EXPECT_DOUBLE_EQ(task_progress(mixed, spec), 0.5);
  EXPECT_THROW((void)task_progress(std::vector<RunLog>{}, spec), std::domain_error);
}

TEST(Metrics, SuccessArithmetic) {
  const std::vector<RunLog> fails{{"t", 2, false}, {"t", 0, false}};
  EXPECT_EQ(task_success(fails), 0.0);
  const std::vector<RunLog> two_of_three{{"t", 6, true}, {"t", 6, true}, {"t", 4, false}};
  EXPECT_DOUBLE_EQ(task_success(two_of_three), 2.0 / 3.0);
  EXPECT_THROW((void)task_success(std::vector<RunLog>{}), std::domain_error);
}

TEST(Metrics, SuccessNeverExceedsProgress) {
  Pcg32 rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    const TaskSpec spec{"t", 3 + static_cast<int>(rng.next_u32() % 5), {}};
    std::vector<RunLog> runs(1 + rng.next_u32() % 20);
    for (auto& r : runs) {
      r.task = "t";
      r.success = rng.uniform() < 0.4;
      r.completed = r.success ? spec.stages : static_cast<int>(rng.next_u32() % (spec.stages + 1));
    }
    EXPECT_LE(task_success(runs), task_progress(runs, spec) + 1e-15);
  }
}

TEST(Metrics, InconsistentRunsRejected) {
  const auto spec = six_stage();
  EXPECT_THROW((void)task_progress(std::vector<RunLog>{{"t", 5, true}}, spec), std::invalid_argument);
  EXPECT_THROW((void)task_progress(std::vector<RunLog>{{"t", 7, false}}, spec), std::invalid_argument);
  EXPECT_THROW((void)task_progress(std::vector<RunLog>{{"t", -1, false}}, spec), std::invalid_argument);
  EXPECT_THROW((void)task_progress(std::vector<RunLog>{{"other", 1, false}}, spec), std::invalid_argument);
}

TEST(Metrics, PercentFormatting) {
  EXPECT_EQ(format_percent(0.8125), "81%");
  EXPECT_EQ(format_percent(0.125), "13%");
  EXPECT_EQ(format_percent(1.0), "100%");
  EXPECT_EQ(format_percent(0.0), "0%");
  EXPECT_EQ(format_percent(2.0 / 3.0), "67%");
}

TEST(Tasks, StageCountBounds) {
  EXPECT_THROW((TaskSpec{"x", 2, {}}.validate()), ConfigError);
  EXPECT_THROW((TaskSpec{"x", 8, {}}.validate()), ConfigError);
  EXPECT_THROW((TaskSpec{"x", 3, {"a", "b"}}.validate()), ConfigError);
  EXPECT_THROW((TaskSpec{"", 3, {}}.validate()), ConfigError);
  EXPECT_NO_THROW((TaskSpec{"x", 7, {}}.validate()));
}

TEST(Tasks, ShippedTaskFilesLoad) {
  for (const char* name : {"crack_egg", "insert_wrench", "serve_egg", "sort_fruit"}) {
    const auto t = load_task(std::string(TACTWIN_CONFIGS) + "/tasks/" + name + ".ini");
    EXPECT_EQ(t.name, name);
    EXPECT_EQ(t.labels.size(), static_cast<std::size_t>(t.stages));
  }
}

TEST(RunsFile, ParsesAndReportsBadLine) {
  std::istringstream ok(R"({"task":"t","completed":3,"success":false}

{"task":"t","completed":6,"success":true}
)");
  const auto runs = read_runs_jsonl(ok);
  ASSERT_EQ(runs.size(), 2u);
  EXPECT_EQ(runs[1].completed, 6);
  EXPECT_TRUE(runs[1].success);

  std::istringstream bad("{\"task\":\"t\",\"completed\":3,\"success\":false}\n{\"task\":\"t\",\"completed\":\"x\"}\n");
  try {
    (void)read_runs_jsonl(bad, "runs.jsonl");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("runs.jsonl:2"), std::string::npos) << e.what();
  }
}

// ---------------------------------------------------------------------------
// Proprio and actions

TEST(Proprio, FlattenLayoutAndRoundTrip) {
  const auto v = proprio_at(123456);
  const auto p = ProprioVector::unflatten(v);
  EXPECT_EQ(p.arms[1].actual_pose[0], v[14]);
  EXPECT_EQ(p.arms[0].desired_pose[5], v[11]);
  EXPECT_EQ(p.arms[1].desired_width, v[27]);
  EXPECT_EQ(p.flatten(), v);
  EXPECT_THROW((void)ProprioVector::unflatten(std::vector<double>(27)), std::invalid_argument);
  auto neg = v;
  neg[13] = -1.0;
  EXPECT_THROW((void)ProprioVector::unflatten(neg), std::invalid_argument);
}

TEST(Actions, ChunkShape) {
  EXPECT_EQ(std::tuple_size_v<ActionChunk>, 16u);
  EXPECT_EQ(std::tuple_size_v<Action>, 14u);
}

// ---------------------------------------------------------------------------
// Receding horizon

TEST(Schedule, SmallCases) {
  const auto s16 = receding_horizon_schedule(16);
  ASSERT_EQ(s16.size(), 2u);
  EXPECT_EQ(s16[0].predict_at, 0u);
  EXPECT_EQ(s16[1].predict_at, 8u);
  EXPECT_EQ(s16[1].execute_end, 16u);
  const auto s24 = receding_horizon_schedule(24);
  ASSERT_EQ(s24.size(), 3u);
  EXPECT_EQ(s24[2].predict_at, 16u);
  EXPECT_THROW((void)receding_horizon_schedule(15), std::domain_error);
  EXPECT_THROW((void)receding_horizon_schedule(32, 16, 17), std::invalid_argument);
}

TEST(Schedule, EveryIndexExecutedExactlyOnce) {
  for (std::size_t T = 16; T <= 600; ++T) {
    std::vector<int> hits(T, 0);
    for (const auto& st : receding_horizon_schedule(T)) {
      ASSERT_EQ(st.execute_begin, st.predict_at);
      ASSERT_LE(st.execute_end - st.execute_begin, kExecute);
      ASSERT_LE(st.execute_end, st.predict_at + kHorizon);
      for (std::size_t k = st.execute_begin; k < st.execute_end; ++k) ++hits[k];
    }
    for (std::size_t k = 0; k < T; ++k) ASSERT_EQ(hits[k], 1) << "T=" << T << " k=" << k;
  }
}

// ---------------------------------------------------------------------------
// Observation windows

TEST(ObsWindow, ExactlyTwoFrames) {
  const auto ep = synthetic_episode(1.0);
  const auto w = build_obs_window(ep, Timestamp{frame_ts(1)});
  EXPECT_EQ(w.steps[0].timestamp_us, 0u);
  EXPECT_EQ(w.steps[1].timestamp_us, 33333u);
  EXPECT_EQ(w.steps[0].frame.rgb[0], 0);
  EXPECT_EQ(w.steps[1].frame.rgb[0], 1);
  EXPECT_THROW((void)build_obs_window(ep, Timestamp{frame_ts(1) - 1}), std::domain_error);
}

TEST(ObsWindow, MidStreamPicksTwoGreatestAndAudioOracle) {
  const auto ep = synthetic_episode(3.0);
  const std::size_t total_chunks = ep.count(MsgType::Audio);
  Pcg32 rng(4);
  for (int trial = 0; trial < 25; ++trial) {
    const auto t = static_cast<std::uint64_t>(rng.uniform(40000.0, 2.9e6));
    const auto w = build_obs_window(ep, Timestamp{t});
    std::size_t k = 0;
    while (frame_ts(k + 1) <= t) ++k;
    EXPECT_EQ(w.steps[1].timestamp_us, frame_ts(k)) << t;
    EXPECT_EQ(w.steps[0].timestamp_us, frame_ts(k - 1)) << t;
    for (const auto& o : w.steps) {
      ASSERT_EQ(o.audio.size(), 48000u);
      const auto end = static_cast<std::int64_t>((o.timestamp_us * 48 + 500) / 1000);
      for (std::size_t i = 0; i < o.audio.size(); i += 97) {
        const std::int64_t s = end - 48000 + static_cast<std::int64_t>(i);
        const std::size_t chunk = s < 0 ? 0 : static_cast<std::size_t>(s / 960);
        const std::int16_t expect = s < 0 || chunk >= total_chunks ? 0 : static_cast<std::int16_t>(chunk + 1);
        ASSERT_EQ(o.audio[i], expect) << "t=" << t << " i=" << i;
      }
      ASSERT_TRUE(o.proprio.has_value());
      EXPECT_EQ(o.proprio->flatten(), proprio_at(o.timestamp_us));
    }
  }
}

TEST(ObsWindow, AudioOffsetRaisesAlignmentError) {
  const auto ep = synthetic_episode(1.0, 40000);
  EXPECT_THROW((void)build_obs_window(ep, Timestamp{500000}), AlignmentError);
  const auto ok = synthetic_episode(1.0, 0);
  EXPECT_NO_THROW((void)build_obs_window(ok, Timestamp{500000}));
}

TEST(ObsWindow, WithoutProprioStreamLeavesItUnset) {
  const auto ep = synthetic_episode(0.5, 0, false);
  const auto w = build_obs_window(ep, Timestamp{300000});
  EXPECT_FALSE(w.steps[0].proprio.has_value());
  EXPECT_FALSE(w.steps[1].proprio.has_value());
}

TEST(ObsWindow, IdempotentAndReadOnly) {
  const auto ep = synthetic_episode(1.0);
  const auto before = ep.arrival_order();
  const auto a = build_obs_window(ep, Timestamp{700000});
  const auto b = build_obs_window(ep, Timestamp{700000});
  for (std::size_t h = 0; h < kHistory; ++h) {
    EXPECT_EQ(a.steps[h].timestamp_us, b.steps[h].timestamp_us);
    EXPECT_EQ(a.steps[h].frame, b.steps[h].frame);
    EXPECT_EQ(a.steps[h].audio, b.steps[h].audio);
  }
  EXPECT_EQ(ep.arrival_order(), before);
}
