// Prints one PASS/FAIL line per acceptance criterion; exits non-zero on any FAIL.
// Usage: acceptance --work <dir>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "json.hpp"
#include "nienie/error.hpp"
#include "nienie/guidance.hpp"
#include "nienie/lstm.hpp"
#include "nienie/model.hpp"
#include "nienie/rhythm.hpp"
#include "nienie/session.hpp"
#include "nienie/signal.hpp"
#include "nienie/stress.hpp"
#include "nienie/windowing.hpp"
// after Eigen: httplib pulls in resolv.h, whose _res macro breaks Eigen headers
#include "llm_stub.hpp"

using namespace nienie;
using Json = nlohmann::json;
using Clock = std::chrono::steady_clock;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int run(const std::string& cmd) {
  const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// 1 ------------------------------------------------------------------------
Outcome window_geometry() {
  const auto t0 = Clock::now();
  const std::map<std::size_t, std::size_t> want{{39, 0}, {40, 1}, {100, 4}, {1000, 49}};
  for (auto [T, n] : want) {
    ingest::CanonicalSeries s;
    s.data = Eigen::MatrixXd::Random(static_cast<Eigen::Index>(T), 3);
    s.segments = {{Label::baseline, 0, T}};
    const auto w = windowing::slide_windows(s);
    if (w.size() != n || windowing::window_count(T) != n) return {false, "T=" + std::to_string(T) + " gave " + std::to_string(w.size())};
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (w[k].start != 20 * k || w[k].values != s.data.block(static_cast<Eigen::Index>(20 * k), 0, 40, 3))
        return {false, "bad window start/content"};
    }
  }
  const double dt = seconds_since(t0);
  return {dt < 1.0, "counts {0,1,4,49}, " + fmt("%.3f s", dt)};
}

// 2 ------------------------------------------------------------------------
double batch_loss(const lstm::ModelParams& p, const Eigen::MatrixXd& packed, Eigen::Index T, std::span<const Label> y) {
  const Eigen::MatrixXd logits = lstm::forward_batch(p, packed, T, nullptr);
  double loss = 0.0;
  for (Eigen::Index b = 0; b < logits.cols(); ++b) loss += lstm::softmax_xent(logits.col(b), static_cast<int>(y[b])).loss;
  return loss / static_cast<double>(logits.cols());
}

Outcome gradient_check() {
  const auto t0 = Clock::now();
  const Eigen::Index T = 5, H = 8;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto p = lstm::init_params(3, H, seed);
    std::mt19937_64 rng(seed * 977);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<Eigen::MatrixXd> windows(4, Eigen::MatrixXd(T, 3));
    for (auto& w : windows)
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = d(rng);
    const std::vector<Label> y{Label::baseline, Label::stress, Label::amusement, Label::stress};
    const std::vector<std::size_t> idx{0, 1, 2, 3};
    const Eigen::MatrixXd packed = lstm::pack_batch(windows, idx);
    lstm::ForwardCache cache;
    lstm::forward_batch(p, packed, T, &cache);
    const auto g = lstm::backward_bptt(p, y, cache, 0.0);
    auto probe = p;
    lstm::for_each_tensor([&](auto& w, const auto& gw) {
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double orig = w.data()[i], h = 1e-5;
        w.data()[i] = orig + h;
        const double up = batch_loss(probe, packed, T, y);
        w.data()[i] = orig - h;
        const double down = batch_loss(probe, packed, T, y);
        w.data()[i] = orig;
        const double num = (up - down) / (2 * h), ana = gw.data()[i];
        worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6}));
      }
    }, probe, g.grads);
  }
  const double dt = seconds_since(t0);
  return {worst <= 1e-4 && dt < 30.0, fmt("max rel err %.2e", worst) + fmt(", %.2f s", dt)};
}

// 3 ------------------------------------------------------------------------
Outcome optimizer() {
  auto p = lstm::init_params(3, 3, 21);
  auto oracle = p;
  lstm::AdamConfig cfg;
  cfg.lr = 0.05;
  auto st = lstm::AdamState::for_params(p, cfg);
  auto m = lstm::ModelParams::zeros(3, 3), v = lstm::ModelParams::zeros(3, 3);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 1.0);
  for (int t = 1; t <= 10; ++t) {
    auto g = lstm::ModelParams::zeros(3, 3);
    lstm::for_each_tensor([&](auto& x) {
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = d(rng);
    }, g);
    lstm::adam_step(p, g, st);
    lstm::for_each_tensor([&](auto& w, auto& mm, auto& vv, const auto& gg) {
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double gi = gg.data()[i];
        mm.data()[i] = cfg.beta1 * mm.data()[i] + (1 - cfg.beta1) * gi;
        vv.data()[i] = cfg.beta2 * vv.data()[i] + (1 - cfg.beta2) * gi * gi;
        const double mh = mm.data()[i] / (1 - std::pow(cfg.beta1, t));
        const double vh = vv.data()[i] / (1 - std::pow(cfg.beta2, t));
        w.data()[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
      }
    }, oracle, m, v, g);
  }
  double worst = 0.0;
  lstm::for_each_tensor([&](const auto& a, const auto& b) { worst = std::max(worst, (a - b).cwiseAbs().maxCoeff()); }, p,
                        oracle);
  auto q = lstm::init_params(3, 3, 22);
  const auto before = q;
  auto st2 = lstm::AdamState::for_params(q);
  const auto zero = lstm::ModelParams::zeros(3, 3);
  for (int i = 0; i < 10; ++i) lstm::adam_step(q, zero, st2);
  bool fixed = true;
  lstm::for_each_tensor([&](const auto& a, const auto& b) { fixed = fixed && (a.array() == b.array()).all(); }, q, before);
  return {worst <= 1e-12 && fixed, fmt("trace max diff %.1e", worst) + (fixed ? ", zero-grad fixed point exact" : ", zero-grad moved")};
}

// 4 ------------------------------------------------------------------------
Outcome end_to_end(const fs::path& work) {
  const auto t0 = Clock::now();
  const std::string cli = NIENIE_CLI;
  const auto rec = (work / "synth.jsonl").string(), data = (work / "synth.nnwd").string();
  const auto model = (work / "model.nnlm").string(), hist = (work / "history.json").string();
  const auto eval = (work / "eval.json").string();
  if (run(cli + " synth --seed 7 --format jsonl --out " + rec) != 0) return {false, "synth failed"};
  if (run(cli + " convert --input " + rec + " --out " + data) != 0) return {false, "convert failed"};
  if (run(cli + " train --quiet --seed 0 --epochs 30 --data " + data + " --out " + model + " --history " + hist) != 0)
    return {false, "train failed"};
  if (std::system((cli + " eval --json --seed 0 --data " + data + " --model " + model + " > " + eval).c_str()) != 0)
    return {false, "eval failed"};
  const double dt = seconds_since(t0);
  const Json e = Json::parse(read_file(eval));
  const auto ds = windowing::load_dataset(data);
  std::array<int, 3> per_class{};
  for (auto l : ds.labels) ++per_class[static_cast<int>(l)];
  bool strat = true;
  for (int c = 0; c < 3; ++c) {
    int test = 0;
    for (int k = 0; k < 3; ++k) test += e["confusion"][c][k].get<int>();
    strat = strat && std::abs(test - 0.2 * per_class[c]) <= 1.0;
  }
  const double acc = e["accuracy"];
  const Json h = Json::parse(read_file(hist));
  const bool epochs_ok = h.contains("history") && h["history"].size() <= 30;
  return {ds.size() >= 600 && acc >= 0.90 && strat && epochs_ok && dt <= 300.0,
          std::to_string(ds.size()) + " windows, held-out accuracy " + fmt("%.4f", acc) +
              (strat ? ", stratified" : ", NOT stratified") + fmt(", %.1f s", dt)};
}

// 5 ------------------------------------------------------------------------
Outcome latency(const StressModel& model) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::MatrixXd w(40, 3);
  for (Eigen::Index t = 0; t < 40; ++t) w.row(t) << 5 + 2 * d(rng), 34 + 0.4 * d(rng), 85 + 8 * d(rng);
  std::vector<double> ms;
  volatile double sink = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto t0 = Clock::now();
    sink = sink + model.predict_proba(w)(1);
    ms.push_back(seconds_since(t0) * 1000.0);
  }
  std::nth_element(ms.begin(), ms.begin() + 500, ms.end());
  const double median = ms[500];
  return {median < 30.0, fmt("median %.3f ms over 1000 runs", median)};
}

// 6 ------------------------------------------------------------------------
Outcome streaming(std::shared_ptr<const StressModel> model) {
  const auto series = ingest::truncate_and_stack(
      ingest::synth_recording(11, ingest::parse_schedule("baseline:300,stress:300,amusement:307")));
  stress::StressStream stream(model);
  std::vector<stress::StressEstimate> out;
  for (Eigen::Index t = 0; t < series.data.rows(); ++t)
    if (auto e = stream.push_sample(t * 1000, {series.data(t, 0), series.data(t, 1), series.data(t, 2)})) out.push_back(*e);
  const auto windows = windowing::slide_windows(series);
  if (out.size() != windows.size()) return {false, "count mismatch"};
  double worst = 0.0;
  for (std::size_t k = 0; k < windows.size(); ++k)
    worst = std::max(worst, (model->predict_proba(windows[k].values) - out[k].probs).cwiseAbs().maxCoeff());
  return {worst <= 1e-9, std::to_string(out.size()) + " emissions" + fmt(", max diff %.1e", worst)};
}

// 7 ------------------------------------------------------------------------
Outcome calibration() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> raw(2 + trial % 5);
    for (auto& r : raw) r = u(rng);
    const double c = (u(rng) - 0.5) * 20.0;
    auto shifted = raw;
    for (auto& r : shifted) r += c;
    const auto a = stress::calibrate(raw), b = stress::calibrate(shifted);
    for (double r : raw) worst = std::max(worst, std::abs(stress::adjusted_score(r, a) - stress::adjusted_score(r + c, b)));
  }
  return {worst <= 1e-9, fmt("max diff %.1e over 1000 shifts", worst)};
}

// 8 ------------------------------------------------------------------------
Outcome adherence_oracle() {
  const std::int64_t tol = 250;
  std::mt19937_64 rng(77);
  int agree = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::uniform_int_distribution<int> nb(1, 6), no(0, 8);
    std::uniform_int_distribution<std::int64_t> gap(2 * tol, 3 * tol), jit(-2 * tol, 2 * tol);
    std::vector<std::int64_t> beats, onsets;
    std::int64_t t = 0;
    for (int i = nb(rng); i > 0; --i) beats.push_back(t += gap(rng));
    std::uniform_int_distribution<std::size_t> pick(0, beats.size() - 1);
    for (int i = no(rng); i > 0; --i) onsets.push_back(beats[pick(rng)] + jit(rng));
    std::sort(onsets.begin(), onsets.end());
    // exhaustive: most hits, then least total error
    int best_hits = 0;
    std::int64_t best_err = 0;
    std::vector<bool> used(onsets.size());
    std::function<void(std::size_t, int, std::int64_t)> go = [&](std::size_t i, int hits, std::int64_t err) {
      if (i == beats.size()) {
        if (hits > best_hits || (hits == best_hits && err < best_err)) best_hits = hits, best_err = err;
        return;
      }
      go(i + 1, hits, err);
      for (std::size_t j = 0; j < onsets.size(); ++j) {
        const auto e = std::llabs(onsets[j] - beats[i]);
        if (used[j] || e > tol) continue;
        used[j] = true;
        go(i + 1, hits + 1, err + e);
        used[j] = false;
      }
    };
    go(0, 0, 0);
    const auto got = rhythm::match_onsets(beats, onsets, tol);
    std::int64_t err = 0;
    for (const auto& m : got.matches) err += std::llabs(m.error_ms);
    agree += got.report.beats_hit == best_hits && err == best_err;
  }
  std::vector<std::int64_t> beats, onsets;
  for (int i = 0; i < 10; ++i) beats.push_back(i * 2000), onsets.push_back(i * 2000 + 100);
  const double s = rhythm::match_onsets(beats, onsets, tol).report.sync_score;
  return {agree == 1000 && s == 0.6, std::to_string(agree) + "/1000 agree, +100 ms offset scores " + fmt("%.15g", s) + (s == 0.6 ? " (== 0.6)" : " (!= 0.6)")};
}

// 9 ------------------------------------------------------------------------
Outcome closed_loop(std::shared_ptr<const StressModel> model) {
  const auto t0 = Clock::now();
  auto decreased = [&](double skill) {
    int n = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      session::SessionConfig cfg;
      cfg.seed = seed;
      cfg.session_id = "acc-" + std::to_string(seed);
      session::SimulatedUser user;
      user.skill = skill;
      user.physiology.recovery_rate = 0.02;
      guidance::GuidanceService guide;
      session::SimulationOptions opts;
      opts.guidance = &guide;
      const auto s = session::evaluate_session(session::run_simulated(cfg, model, user, opts));
      n += s.quarter_means[3] < s.quarter_means[0];
    }
    return n;
  };
  const int skilled = decreased(0.9);
  const int control = decreased(0.0);
  const double dt = seconds_since(t0);
  return {skilled >= 19 && (20 - control) >= 15 && dt < 60.0,
          "skilled decrease " + std::to_string(skilled) + "/20, control no-decrease " + std::to_string(20 - control) +
              "/20" + fmt(", %.1f s", dt)};
}

// 10 -----------------------------------------------------------------------
Outcome determinism(std::shared_ptr<const StressModel> model, const fs::path& work) {
  session::SessionConfig cfg;
  cfg.seed = 42;
  cfg.session_id = "det";
  guidance::GuidanceService g1, g2;
  session::SimulationOptions o1, o2;
  o1.guidance = &g1;
  o2.guidance = &g2;
  const auto a = session::run_simulated(cfg, model, {}, o1);
  const auto b = session::run_simulated(cfg, model, {}, o2);
  const bool same = a.to_jsonl() == b.to_jsonl();
  const auto path = (work / "det.jsonl").string();
  a.save(path);
  const bool replayed = session::replay(session::EventLog::load(path), model).to_jsonl() == a.to_jsonl();
  const auto cli_ok = run(std::string(NIENIE_CLI) + " replay --check --log " + path + " --model " + (work / "model.nnlm").string()) == 0;

  save_model(*model, (work / "roundtrip.nnlm").string());
  const auto back = load_model((work / "roundtrip.nnlm").string());
  bool bits = true;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    Eigen::MatrixXd w(40, 3);
    for (Eigen::Index t = 0; t < 40; ++t) w.row(t) << 5 + 2 * d(rng), 34 + 0.4 * d(rng), 85 + 8 * d(rng);
    const Eigen::VectorXd x = model->predict_proba(w), y = back.predict_proba(w);
    bits = bits && std::memcmp(x.data(), y.data(), 3 * sizeof(double)) == 0;
  }
  return {same && replayed && cli_ok && bits, std::string(same ? "identical logs" : "logs differ") +
                                                  (replayed ? ", replay exact" : ", replay differs") +
                                                  (cli_ok ? ", CLI replay --check ok" : ", CLI replay failed") +
                                                  (bits ? ", model round trip bit-identical" : ", model round trip differs")};
}

// 11 -----------------------------------------------------------------------
Outcome guidance_robustness(std::shared_ptr<const StressModel> model) {
  session::SessionConfig cfg;
  cfg.seed = 5;
  cfg.session_id = "hang";
  session::SimulatedUser user;

  guidance::GuidanceService local;
  session::SimulationOptions plain;
  plain.guidance = &local;
  const auto reference = session::run_simulated(cfg, model, user, plain);

  testing::LlmStub stub;
  stub.set_mode(testing::LlmStub::Mode::hang);
  guidance::RemoteConfig remote;
  remote.url = stub.url();
  remote.timeout_s = 2.0;
  guidance::GuidanceService hanging(remote);
  session::SimulationOptions paced;
  paced.guidance = &hanging;
  paced.time_scale = 20.0;  // 180 s of session time in ~9 s
  const auto log = session::run_simulated(cfg, model, user, paced);
  stub.release();

  auto cues = [](const session::EventLog& l) {
    std::vector<std::pair<std::string, std::int64_t>> out;
    for (const auto& r : l.records())
      if (r.type == "cue") out.emplace_back(r.payload["kind"].get<std::string>(), r.payload["due_ms"].get<std::int64_t>());
    return out;
  };
  const bool cues_same = !cues(log).empty() && cues(log) == cues(reference);
  int messages = 0;
  bool all_template = true, spaced = true;
  std::optional<std::int64_t> prev;
  for (const auto& r : log.records()) {
    if (r.type != "guidance") continue;
    ++messages;
    all_template = all_template && r.payload["source"] == "template" &&
                   guidance::valid_text(r.payload["text"].get<std::string>());
    if (prev) spaced = spaced && r.t_ms - *prev >= 10000;
    prev = r.t_ms;
  }
  return {cues_same && messages > 0 && all_template && spaced && stub.calls() > 0,
          std::string(cues_same ? "cue times identical" : "cue times differ") + ", " + std::to_string(messages) +
              " messages (" + (all_template ? "all template fallbacks" : "non-template present") + ", " +
              (spaced ? "gate held" : "gate violated") + "), " + std::to_string(stub.calls()) + " stub calls"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "nienie_acceptance";
  for (int i = 1; i + 1 < argc; ++i)
    if (std::strcmp(argv[i], "--work") == 0) work = argv[i + 1];
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %2d %-28s %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "window geometry", window_geometry);
  report(2, "gradient correctness", gradient_check);
  report(3, "optimizer correctness", optimizer);
  report(4, "end-to-end training", [&] { return end_to_end(work); });

  std::shared_ptr<const StressModel> model;
  try {
    model = std::make_shared<StressModel>(load_model((work / "model.nnlm").string()));
  } catch (const std::exception& e) {
    std::printf("no trained model: %s\n", e.what());
  }
  auto with_model = [&](auto f) {
    return [&, f]() -> Outcome {
      if (!model) return {false, "no trained model"};
      return f();
    };
  };
  report(5, "inference latency", with_model([&] { return latency(*model); }));
  report(6, "streaming equivalence", with_model([&] { return streaming(model); }));
  report(7, "calibration invariance", calibration);
  report(8, "adherence oracle", adherence_oracle);
  report(9, "closed-loop regulation", with_model([&] { return closed_loop(model); }));
  report(10, "determinism and replay", with_model([&] { return determinism(model, work); }));
  report(11, "guidance robustness", with_model([&] { return guidance_robustness(model); }));
  return failures == 0 ? 0 : 1;
}
