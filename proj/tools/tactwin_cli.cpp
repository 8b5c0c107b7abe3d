// tactwin command-line entry point.
//
//   tactwin_cli optics-report [--config FILE] [--search] [--write FILE]
//   tactwin_cli simulate --scenario FILE [--listen HOST:PORT] [--record FILE] ...
//   tactwin_cli wear --profile NAME|all --seeds N [--out FILE]
//   tactwin_cli eval --runs FILE --task FILE
//   tactwin_cli inspect EPISODE
//
// Exit codes: 0 success, 2 configuration error, 3 runtime error.

#include "tactwin/evalkit.hpp"
#include "tactwin/optics.hpp"
#include "tactwin/scenario.hpp"
#include "tactwin/streamproto.hpp"
#include "tactwin/wearbench.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace {

using namespace tactwin;

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::string fixed(double v, int digits) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

void print_report(std::ostream& out, const std::string& label, const optics::Report& r) {
  out << label << ": coverage " << fixed(r.coverage, 4) << ", mean incidence " << fixed(rad2deg(r.orthogonality.mean), 2)
      << " deg (max " << fixed(rad2deg(r.orthogonality.max), 2) << ")";
  if (r.distortion) out << ", distortion " << fixed(*r.distortion, 4);
  out << "\n  pixels: plate " << r.counts.plate << ", window " << r.counts.window << ", miss " << r.counts.miss << "\n";
}

void print_kv(std::ostream& out, const std::string& prefix, double coverage, const optics::AngleStats& a) {
  out << prefix << "coverage=" << fixed(coverage, 6) << "\n";
  out << prefix << "incidence_mean_deg=" << fixed(rad2deg(a.mean), 6) << "\n";
  out << prefix << "incidence_max_deg=" << fixed(rad2deg(a.max), 6) << "\n";
}

int cmd_optics(const std::string& config_path, bool search, const std::string& write_path) {
  optics::FingerOptics f = config_path.empty() ? optics::default_geometry() : optics::load_optics(config_path);
  if (search) {
    const auto axes = optics::default_search_axes();
    const auto t0 = std::chrono::steady_clock::now();
    const auto found = optics::search_arc_mirror(axes.radii, axes.tilts, axes.offsets);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!found) {
      std::cerr << "optics-report: no arc-mirror candidate reaches the coverage threshold\n";
      return kExitRuntime;
    }
    std::cout << "search: radius " << found->params.radius << " mm, tilt " << found->params.tilt_deg << " deg, offset "
              << found->params.offset << " mm (" << fixed(secs, 1) << " s)\n";
    f = optics::finger_with_arc(found->params);
  }
  const auto report = optics::evaluate(f);
  const auto base = optics::best_mirror_free(f);

  std::cout << "mirror: " << optics::to_string(f.mirror.kind) << "\n";
  print_report(std::cout, "geometry", report);
  std::cout << "mirror-free baseline (pitch " << fixed(base.pitch_deg, 1) << " deg): coverage " << fixed(base.coverage, 4)
            << ", mean incidence " << fixed(rad2deg(base.orthogonality.mean), 2) << " deg\n";
  std::cout << "---\n";
  print_kv(std::cout, "", report.coverage, report.orthogonality);
  if (report.distortion) std::cout << "distortion=" << fixed(*report.distortion, 6) << "\n";
  std::cout << "pixels_plate=" << report.counts.plate << "\npixels_window=" << report.counts.window << "\n";
  std::cout << "baseline_pitch_deg=" << fixed(base.pitch_deg, 3) << "\n";
  print_kv(std::cout, "baseline_", base.coverage, base.orthogonality);
  std::cout << "incidence_below_baseline=" << (report.orthogonality.mean < base.orthogonality.mean ? "yes" : "no") << "\n";

  if (!write_path.empty()) {
    config::Document doc;
    optics::write_optics(doc, f);
    std::ofstream o(write_path);
    if (!o) throw std::runtime_error(write_path + ": cannot write");
    o << doc.to_string();
  }
  return 0;
}

struct SimulateArgs {
  std::string scenario;
  std::string listen;
  std::string record;
  std::string wav;
  std::string frames_dir;
  std::size_t frame_stride = 30;
  std::size_t min_clients = 0;
  bool realtime = false;
};

int cmd_simulate(const SimulateArgs& a) {
  auto sc = scenario::parse_scenario(a.scenario);
  scenario::RunOptions opt;
  const std::string listen = a.listen.empty() ? sc.stream.listen : a.listen;
  if (!listen.empty()) opt.listen = streamproto::parse_endpoint(listen);
  opt.min_clients = a.min_clients;
  opt.realtime = a.realtime;
  opt.record_path = a.record;
  opt.wav_path = a.wav;
  opt.on_listening = [](std::uint16_t port) { std::cout << "listening on port " << port << std::endl; };
  if (!a.frames_dir.empty()) {
    std::filesystem::create_directories(a.frames_dir);
    const std::size_t stride = std::max<std::size_t>(1, a.frame_stride);
    opt.on_frame = [dir = a.frames_dir, stride](std::size_t k, const RgbImage& img) {
      if (k % stride != 0) return;
      char name[32];
      std::snprintf(name, sizeof name, "frame_%05zu.ppm", k);
      photorender::write_ppm((std::filesystem::path(dir) / name).string(), img);
    };
  }
  const auto r = scenario::run_scenario(sc, opt);
  std::cout << "scenario " << sc.name << ": " << r.frames << " frames, " << r.audio_chunks << " audio chunks, "
            << r.physics_steps << " physics steps\n";
  std::cout << "contact: " << r.impacts << " impacts, " << r.slip_events << " slip events, " << r.saturated_steps
            << " saturated steps\n";
  std::cout << "clients served: " << r.clients_accepted << " (" << r.backlog_disconnects << " dropped for backlog)\n";
  std::cout << "max A/V drift: " << r.max_drift_us << " us\n";
  std::cout << "wall time " << fixed(r.wall_seconds, 2) << " s, real-time factor " << fixed(r.realtime_factor, 2) << "x\n";
  if (!r.episode_path.empty()) std::cout << "episode: " << r.episode_path << "\n";
  return 0;
}

int cmd_wear(const std::string& profile, std::size_t seeds, const std::string& out_path) {
  if (seeds == 0) throw ConfigError("wear: --seeds must be positive");
  const wearbench::RubProtocol proto;
  std::vector<wearbench::MaterialProfile> profiles;
  if (profile == "all") profiles = wearbench::shipped_profiles();
  else profiles.push_back(wearbench::find_profile(profile));

  std::ostringstream rep;
  bool all_pass = true;
  for (const auto& raw : profiles) {
    const auto m = wearbench::calibrated(raw, proto);
    const auto s = wearbench::summarize_lifetimes(m, proto, seeds);
    rep << "profile " << m.name << " (" << m.description << ")\n";
    rep << "  target " << fixed(m.target_hours, 2) << " h" << (m.target_is_lower_bound ? " (lower bound)" : "") << ", K "
        << std::scientific << std::setprecision(4) << m.K << std::defaultfloat << "\n";
    for (std::size_t k = 0; k < s.runs.size(); ++k) {
      const auto& run = s.runs[k];
      rep << "  seed " << std::setw(3) << (k + 1) << ": " << fixed(run.hours, 3) << " h, " << run.cycles << " cycles, "
          << (run.censored ? "censored" : wearbench::to_string(run.mode)) << "\n";
    }
    rep << "  mean " << fixed(s.mean_hours, 3) << " h, CV " << fixed(s.cv, 4) << ", error " << fixed(100.0 * s.relative_error, 2)
        << "% -> " << (s.pass ? "PASS" : "FAIL") << "\n";
    all_pass = all_pass && s.pass;
  }
  std::cout << rep.str();
  if (!out_path.empty()) {
    std::ofstream o(out_path);
    if (!o) throw std::runtime_error(out_path + ": cannot write");
    o << rep.str();
  }
  return all_pass ? 0 : kExitRuntime;
}

int cmd_eval(const std::string& runs_path, const std::string& task_path) {
  const auto spec = evalkit::load_task(task_path);
  auto runs = evalkit::read_runs_jsonl(runs_path);
  std::vector<evalkit::RunLog> mine;
  for (auto& r : runs) {
    if (r.task == spec.name) mine.push_back(std::move(r));
  }
  if (mine.empty()) throw ConfigError(runs_path + ": no runs for task '" + spec.name + "'");
  const double progress = evalkit::task_progress(mine, spec);
  const double success = evalkit::task_success(mine);
  std::cout << std::left << std::setw(20) << "task" << std::setw(8) << "runs" << std::setw(10) << "progress" << "success\n";
  std::cout << std::setw(20) << spec.name << std::setw(8) << mine.size() << std::setw(10) << evalkit::format_percent(progress)
            << evalkit::format_percent(success) << "\n";
  return 0;
}

int cmd_inspect(const std::string& path) {
  const streamproto::EpisodeReader ep(path);
  const auto& h = ep.header();
  std::cout << "episode " << path << "\n";
  std::cout << "  session " << std::hex << h.session_id << ", config hash " << h.config_hash << std::dec << "\n";
  std::cout << "  recorded at " << h.wallclock_us << " us since epoch\n";
  std::cout << "  index " << (ep.recovered() ? "missing (recovered by scan)" : "ok") << ", crc errors " << ep.crc_errors() << "\n";
  const auto& msgs = ep.arrival_order();
  std::uint64_t last = 0;
  for (const auto& m : msgs) last = std::max(last, m.timestamp_us);
  std::cout << "  messages " << msgs.size() << ", span " << fixed(last * 1e-6, 3) << " s\n";
  for (auto t : {streamproto::MsgType::Video, streamproto::MsgType::Audio, streamproto::MsgType::Proprio,
                 streamproto::MsgType::Metadata, streamproto::MsgType::Heartbeat}) {
    std::cout << "  " << std::left << std::setw(10) << streamproto::to_string(t) << std::right << ep.count(t) << "\n";
  }
  if (ep.count(streamproto::MsgType::Video) > 0) {
    const auto f = streamproto::decode_video(ep.nth(streamproto::MsgType::Video, 0).payload);
    std::cout << "  video " << f.width << "x" << f.height << "\n";
  }
  std::cout << "  max A/V drift " << streamproto::sync_check(msgs) << " us\n";
  if (!h.inventory.empty()) std::cout << "  inventory " << h.inventory << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tactwin: software twin of a multi-modal tactile finger"};
  app.require_subcommand(1);

  std::string optics_config, optics_write;
  bool optics_search = false;
  auto* optics_cmd = app.add_subcommand("optics-report", "Evaluate a finger geometry against the mirror-free baseline");
  optics_cmd->add_option("--config", optics_config, "Geometry file (default: shipped geometry)");
  optics_cmd->add_flag("--search", optics_search, "Run the arc-mirror design search first");
  optics_cmd->add_option("--write", optics_write, "Write the evaluated geometry to this file");

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Run a scenario, streaming and recording it");
  sim_cmd->add_option("--scenario", sim.scenario, "Scenario file")->required();
  sim_cmd->add_option("--listen", sim.listen, "Serve the stream on HOST:PORT");
  sim_cmd->add_option("--record", sim.record, "Episode container to write");
  sim_cmd->add_option("--min-clients", sim.min_clients, "Wait for this many clients before starting");
  sim_cmd->add_flag("--realtime", sim.realtime, "Pace publishing to wall-clock time");
  sim_cmd->add_option("--wav", sim.wav, "Also write the contact audio as WAV");
  sim_cmd->add_option("--frames-dir", sim.frames_dir, "Dump camera frames as PPM into this directory");
  sim_cmd->add_option("--frame-stride", sim.frame_stride, "Dump every Nth frame");

  std::string wear_profile, wear_out;
  std::size_t wear_seeds = 20;
  auto* wear_cmd = app.add_subcommand("wear", "Accelerated rub-test lifetime benchmark");
  wear_cmd->add_option("--profile", wear_profile, "Material profile name, or 'all'")->required();
  wear_cmd->add_option("--seeds", wear_seeds, "Number of seeds");
  wear_cmd->add_option("--out", wear_out, "Report file");

  std::string eval_runs, eval_task;
  auto* eval_cmd = app.add_subcommand("eval", "Progress and success table for a task");
  eval_cmd->add_option("--runs", eval_runs, "Run log (JSON lines)")->required();
  eval_cmd->add_option("--task", eval_task, "Task spec file")->required();

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "Summarize an episode container");
  inspect_cmd->add_option("episode", inspect_path, "Episode file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*optics_cmd) return cmd_optics(optics_config, optics_search, optics_write);
    if (*sim_cmd) return cmd_simulate(sim);
    if (*wear_cmd) return cmd_wear(wear_profile, wear_seeds, wear_out);
    if (*eval_cmd) return cmd_eval(eval_runs, eval_task);
    if (*inspect_cmd) return cmd_inspect(inspect_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
