// nienie: command-line front end for the stress/rhythm pipeline.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nienie/config.hpp"
#include "nienie/error.hpp"
#include "nienie/lstm.hpp"
#include "nienie/model.hpp"
#include "nienie/service.hpp"
#include "nienie/session.hpp"
#include "nienie/signal.hpp"
#include "nienie/stress.hpp"
#include "nienie/windowing.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nienie;

namespace {

enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kIo = 3,
  kVersion = 4,
  kData = 5,
  kChecksum = 6,
  kNumeric = 7,
};

constexpr const char* kExitHelp =
    "Exit codes: 0 ok, 1 failure (e.g. replay mismatch), 2 usage/unknown flag, 3 missing or unreadable file,\n"
    "4 file format version mismatch, 5 invalid or malformed data, 6 checksum mismatch, 7 numeric failure.";

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument:
      return kUsage;
    case ErrorCode::io:
      return kIo;
    case ErrorCode::version_mismatch:
      return kVersion;
    case ErrorCode::format:
    case ErrorCode::validation:
      return kData;
    case ErrorCode::checksum:
      return kChecksum;
    case ErrorCode::numeric:
      return kNumeric;
  }
  return kFailure;
}

constexpr const char* kDefaultSchedule =
    "baseline:1020,stress:1020,amusement:1020,baseline:1020,stress:1020,amusement:1020,"
    "baseline:1020,stress:1020,amusement:1020,baseline:1020,stress:1020,amusement:1020";

ingest::RecordingFormat detect_format(const std::string& path, const std::string& flag) {
  if (!flag.empty() && flag != "auto") return ingest::parse_format(flag);
  if (fs::is_directory(path)) return ingest::RecordingFormat::csv_dir;
  return ingest::RecordingFormat::jsonl;
}

std::shared_ptr<const StressModel> load_shared_model(const std::string& path) {
  return std::make_shared<const StressModel>(load_model(path));
}

void print_confusion(const lstm::Confusion& c) {
  std::printf("accuracy %.4f\n", c.accuracy);
  std::printf("%-10s %9s %9s %9s\n", "true\\pred", "baseline", "stress", "amusement");
  for (Eigen::Index r = 0; r < c.counts.rows(); ++r) {
    std::printf("%-10s", std::string(to_string(static_cast<Label>(r))).c_str());
    for (Eigen::Index col = 0; col < c.counts.cols(); ++col) std::printf(" %9ld", c.counts(r, col));
    std::printf("\n");
  }
}

// -- synth ------------------------------------------------------------------

struct SynthArgs {
  std::uint64_t seed = 0;
  std::string schedule = kDefaultSchedule;
  std::string out;
  std::string format = "csv_dir";
};

int cmd_synth(const SynthArgs& a) {
  auto schedule = ingest::parse_schedule(a.schedule);
  auto rec = ingest::synth_recording(a.seed, schedule);
  ingest::save_recording(rec, a.out, ingest::parse_format(a.format));
  std::printf("wrote %s (%zu segments)\n", a.out.c_str(), rec.segments.size());
  return kOk;
}

// -- convert ----------------------------------------------------------------

struct ConvertArgs {
  std::vector<std::string> inputs;
  std::string format = "auto";
  std::string out;
  std::string policy = "majority";
};

int cmd_convert(const ConvertArgs& a) {
  windowing::BoundaryPolicy policy;
  if (a.policy == "majority") policy = windowing::BoundaryPolicy::majority;
  else if (a.policy == "drop") policy = windowing::BoundaryPolicy::drop_straddling;
  else fail(ErrorCode::invalid_argument, "unknown boundary policy '" + a.policy + "' (majority|drop)");

  windowing::WindowedDataset all;
  std::size_t dropped = 0;
  for (const auto& in : a.inputs) {
    auto rec = ingest::load_recording(in, detect_format(in, a.format));
    auto series = ingest::truncate_and_stack(rec);
    for (const auto& w : series.warnings) std::fprintf(stderr, "warning: %s: %s\n", in.c_str(), w.c_str());
    auto built = windowing::build_dataset(series, windowing::kWindowLen, windowing::kStep, policy);
    dropped += built.dropped;
    windowing::append(all, built.dataset);
  }
  windowing::save_dataset(all, a.out);
  std::size_t counts[kNumClasses] = {};
  for (Label l : all.labels) ++counts[static_cast<int>(l)];
  std::printf("wrote %s: %zu windows (baseline %zu, stress %zu, amusement %zu), %zu dropped\n", a.out.c_str(),
              all.size(), counts[0], counts[1], counts[2], dropped);
  return kOk;
}

// -- train / eval -----------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string history;
  lstm::TrainConfig cfg;
  double test_frac = 0.2;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  auto ds = windowing::load_dataset(a.data);
  auto split = windowing::stratified_split(ds.labels, a.test_frac, a.cfg.seed);
  auto norm = windowing::fit_norm(ds.inputs, split.train);
  windowing::WindowedDataset normalized = ds;
  windowing::apply_norm(normalized.inputs, norm);

  const auto t0 = std::chrono::steady_clock::now();
  auto result = lstm::train(normalized, split, a.cfg, [&](const lstm::EpochStats& s) {
    if (!a.quiet) std::printf("epoch %2d  loss %.5f  test_acc %.4f\n", s.epoch, s.train_loss, s.test_accuracy);
    std::fflush(stdout);
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  StressModel model{std::move(result.params), norm};
  save_model(model, a.out);
  if (!a.history.empty()) {
    json h = {{"seed", a.cfg.seed},
              {"epochs", a.cfg.epochs},
              {"batch_size", a.cfg.batch_size},
              {"lr", a.cfg.lr},
              {"hidden", a.cfg.hidden},
              {"train_windows", split.train.size()},
              {"test_windows", split.test.size()},
              {"seconds", secs},
              {"history", json::array()}};
    for (const auto& s : result.history)
      h["history"].push_back({{"epoch", s.epoch}, {"train_loss", s.train_loss}, {"test_accuracy", s.test_accuracy}});
    std::ofstream out(a.history);
    if (!out) fail(ErrorCode::io, "cannot write history '" + a.history + "'");
    out << h.dump(2) << '\n';
  }
  std::printf("wrote %s (%.1f s, final test accuracy %.4f)\n", a.out.c_str(), secs,
              result.history.empty() ? 0.0 : result.history.back().test_accuracy);
  return kOk;
}

struct EvalArgs {
  std::string data;
  std::string model;
  std::uint64_t seed = 0;
  double test_frac = 0.2;
  bool as_json = false;
};

int cmd_eval(const EvalArgs& a) {
  auto ds = windowing::load_dataset(a.data);
  auto model = load_model(a.model);
  auto split = windowing::stratified_split(ds.labels, a.test_frac, a.seed);
  windowing::apply_norm(ds.inputs, model.norm);
  auto c = lstm::evaluate(model.params, ds, split.test);
  if (a.as_json) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < c.counts.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index col = 0; col < c.counts.cols(); ++col) row.push_back(c.counts(r, col));
      rows.push_back(row);
    }
    std::printf("%s\n", json{{"accuracy", c.accuracy}, {"confusion", rows}, {"test_windows", split.test.size()}}
                            .dump()
                            .c_str());
  } else {
    print_confusion(c);
  }
  return kOk;
}

// -- infer ------------------------------------------------------------------

struct InferArgs {
  std::string input;
  std::string format = "auto";
  std::string model;
  std::string out;
};

int cmd_infer(const InferArgs& a) {
  auto model = load_shared_model(a.model);
  auto rec = ingest::load_recording(a.input, detect_format(a.input, a.format));
  auto series = ingest::truncate_and_stack(rec);
  stress::StressStream stream(model);
  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) fail(ErrorCode::io, "cannot write '" + a.out + "'");
  }
  std::ostream& os = a.out.empty() ? std::cout : file;
  std::size_t n = 0;
  for (Eigen::Index t = 0; t < series.data.rows(); ++t) {
    Sample s{series.data(t, 0), series.data(t, 1), series.data(t, 2)};
    if (auto est = stream.push_sample(static_cast<std::int64_t>(t) * 1000, s)) {
      os << json{{"t_ms", est->t_ms},
                 {"probs", {est->probs[0], est->probs[1], est->probs[2]}},
                 {"stress", est->raw_score}}
                .dump()
         << '\n';
      ++n;
    }
  }
  const auto& lat = stream.latency();
  std::fprintf(stderr, "%zu estimates; latency median %.1f us, max %.1f us\n", n, lat.median(), lat.max());
  return kOk;
}

// -- simulate / replay --------------------------------------------------------

struct SimulateArgs {
  std::string model;
  std::uint64_t seed = 0;
  int runs = 1;
  session::SimulatedUser user;
  session::SessionConfig session;
  std::string log_dir;
  std::string config;
};

int cmd_simulate(SimulateArgs a) {
  auto model = load_shared_model(a.model);
  guidance::RemoteConfig remote;
  if (!a.config.empty()) remote = guidance::RemoteConfig::from_config(FlatConfig::load(a.config));
  else remote = guidance::RemoteConfig::from_env();
  if (!a.log_dir.empty()) fs::create_directories(a.log_dir);
  int decreased = 0;
  for (int r = 0; r < a.runs; ++r) {
    session::SessionConfig cfg = a.session;
    cfg.seed = a.seed + static_cast<std::uint64_t>(r);
    cfg.session_id = "sim-" + std::to_string(cfg.seed);
    cfg.mode = session::Mode::simulated;
    guidance::GuidanceService guide(remote);
    auto log = session::run_simulated(cfg, model, a.user, {0.0, &guide});
    auto summary = session::evaluate_session(log);
    if (summary.quarter_means[3] < summary.quarter_means[0]) ++decreased;
    json line = summary.to_json();
    line["session_id"] = cfg.session_id;
    line["seed"] = cfg.seed;
    std::printf("%s\n", line.dump().c_str());
    if (!a.log_dir.empty()) log.save((fs::path(a.log_dir) / (cfg.session_id + ".jsonl")).string());
  }
  std::printf("fourth-quarter stress below first quarter in %d of %d runs\n", decreased, a.runs);
  return kOk;
}

struct ReplayArgs {
  std::string log;
  std::string model;
  std::string out;
  bool check = false;
};

int cmd_replay(const ReplayArgs& a) {
  auto model = load_shared_model(a.model);
  auto recorded = session::EventLog::load(a.log);
  auto replayed = session::replay(recorded, model);
  if (!a.out.empty()) replayed.save(a.out);
  auto summary = session::evaluate_session(replayed);
  std::printf("%s\n", summary.to_json().dump().c_str());
  if (a.check) {
    const auto& x = recorded.records();
    const auto& y = replayed.records();
    for (std::size_t i = 0; i < std::max(x.size(), y.size()); ++i) {
      if (i >= x.size() || i >= y.size() || x[i].to_json() != y[i].to_json()) {
        std::fprintf(stderr, "error: replay diverges at record %zu\n", i);
        return kFailure;
      }
    }
    std::printf("replay matches the recorded log (%zu records)\n", x.size());
  }
  return kOk;
}

// -- serve --------------------------------------------------------------------

struct ServeArgs {
  std::string config;
  std::string model;
  std::string bind;
  int port = -1;
};

int cmd_serve(const ServeArgs& a) {
  FlatConfig flat = a.config.empty() ? FlatConfig{} : FlatConfig::load(a.config);
  if (!a.model.empty()) flat.set("model", a.model);
  if (!a.bind.empty()) flat.set("bind", a.bind);
  if (a.port >= 0) flat.set("port", std::to_string(a.port));
  auto cfg = service::ServiceConfig::from_config(flat);
  if (cfg.model_path.empty()) fail(ErrorCode::invalid_argument, "serve needs a model (--model or model = ...)");
  auto model = load_shared_model(cfg.model_path);  // refuse to start without a readable model
  service::Server server(cfg, model);
  const auto port = server.start();
  std::printf("listening on %s:%u\n", cfg.bind_address.c_str(), static_cast<unsigned>(port));
  std::fflush(stdout);
  server.run_until_signal();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nienie - stress-adaptive squeeze rhythm engine"};
  app.footer(kExitHelp);
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic labeled recording");
  s->add_option("--seed", synth.seed, "Random seed");
  s->add_option("--schedule", synth.schedule, "Comma list of label:seconds")->capture_default_str();
  s->add_option("--out", synth.out, "Output directory (csv_dir) or file (jsonl)")->required();
  s->add_option("--format", synth.format, "csv_dir or jsonl")->capture_default_str();

  ConvertArgs conv;
  auto* c = app.add_subcommand("convert", "Window recordings into an NNWD dataset");
  c->add_option("--input", conv.inputs, "Recording (repeatable)")->required();
  c->add_option("--format", conv.format, "auto, csv_dir or jsonl")->capture_default_str();
  c->add_option("--out", conv.out, "Output .nnwd file")->required();
  c->add_option("--policy", conv.policy, "Boundary windows: majority or drop")->capture_default_str();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train the LSTM classifier");
  t->add_option("--data", train.data, "NNWD dataset")->required();
  t->add_option("--out", train.out, "Output .nnlm model")->required();
  t->add_option("--history", train.history, "Write per-epoch history JSON");
  t->add_option("--epochs", train.cfg.epochs)->capture_default_str();
  t->add_option("--batch", train.cfg.batch_size)->capture_default_str();
  t->add_option("--lr", train.cfg.lr)->capture_default_str();
  t->add_option("--hidden", train.cfg.hidden)->capture_default_str();
  t->add_option("--clip", train.cfg.grad_clip_norm, "Global gradient-norm clip (<= 0 disables)")->capture_default_str();
  t->add_option("--seed", train.cfg.seed, "Seed for init, shuffling and the split")->capture_default_str();
  t->add_option("--test-frac", train.test_frac)->capture_default_str();
  t->add_flag("--quiet", train.quiet);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Accuracy and confusion matrix on the held-out split");
  e->add_option("--data", ev.data)->required();
  e->add_option("--model", ev.model)->required();
  e->add_option("--seed", ev.seed, "Split seed (same as train)")->capture_default_str();
  e->add_option("--test-frac", ev.test_frac)->capture_default_str();
  e->add_flag("--json", ev.as_json);

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Stream stress estimates for a recording as JSON lines");
  i->add_option("--input", inf.input)->required();
  i->add_option("--format", inf.format)->capture_default_str();
  i->add_option("--model", inf.model)->required();
  i->add_option("--out", inf.out, "Output file (default stdout)");

  SimulateArgs sim;
  auto* m = app.add_subcommand("simulate", "Run seeded closed-loop sessions against a simulated user");
  m->add_option("--model", sim.model)->required();
  m->add_option("--seed", sim.seed)->capture_default_str();
  m->add_option("--runs", sim.runs)->capture_default_str();
  m->add_option("--skill", sim.user.skill)->capture_default_str();
  m->add_option("--lambda", sim.user.physiology.recovery_rate, "Recovery rate per second")->capture_default_str();
  m->add_option("--elevation", sim.user.physiology.elevation, "Initial stress elevation")->capture_default_str();
  m->add_option("--length", sim.session.session_length_s, "Session length (s)")->capture_default_str();
  m->add_option("--calibration", sim.session.calibration_s)->capture_default_str();
  m->add_option("--log-dir", sim.log_dir, "Write one JSONL log per run");
  m->add_option("--config", sim.config, "Flat config file (llm_* keys)");

  ReplayArgs rep;
  auto* r = app.add_subcommand("replay", "Re-run a JSONL session log through the pipeline");
  r->add_option("--log", rep.log)->required();
  r->add_option("--model", rep.model)->required();
  r->add_option("--out", rep.out, "Write the replayed log");
  r->add_flag("--check", rep.check, "Fail unless the replay reproduces the log exactly");

  ServeArgs srv;
  auto* v = app.add_subcommand("serve", "Start the WebSocket session service");
  v->add_option("--config", srv.config, "Flat key=value config file");
  v->add_option("--model", srv.model);
  v->add_option("--bind", srv.bind);
  v->add_option("--port", srv.port);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kUsage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (c->parsed()) return cmd_convert(conv);
    if (t->parsed()) return cmd_train(train);
    if (e->parsed()) return cmd_eval(ev);
    if (i->parsed()) return cmd_infer(inf);
    if (m->parsed()) return cmd_simulate(sim);
    if (r->parsed()) return cmd_replay(rep);
    if (v->parsed()) return cmd_serve(srv);
  } catch (const Error& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return exit_code(ex.code());
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return kFailure;
  }
  return kUsage;
}
