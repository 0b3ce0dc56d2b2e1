#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "nienie/guidance.hpp"
#include "nienie/model.hpp"
#include "nienie/session.hpp"

namespace nienie {
class FlatConfig;
}

namespace nienie::service {

struct ServiceConfig {
  std::string bind_address = "127.0.0.1";
  std::uint16_t port = 8765;  // 0 picks a free port
  std::string model_path;
  guidance::RemoteConfig llm;
  std::size_t max_sessions = 4;
  std::string log_dir;     // per-session JSONL logs; empty disables
  std::string static_dir;  // optional static files (the browser client)
  double time_scale = 1.0; // session ms per wall ms; tests run faster than real time
  std::int64_t squeeze_min_interval_ms = 30;  // ~30 Hz input cap
  session::SessionConfig session;             // template for every session
  session::Physiology physiology;             // server-side simulated physiology

  // Keys: bind, port, model, max_sessions, log_dir, static_dir, time_scale,
  // session_length_s, calibration_s, replan_interval_s, cue_lead_ms,
  // input_grace_ms, guidance_interval_s, llm_url, llm_key, llm_model,
  // llm_timeout_s. NIENIE_<KEY> environment variables override.
  static ServiceConfig from_config(const FlatConfig& cfg);
};

// WebSocket session service (JSON text frames on /ws) with GET /health and
// GET /sessions/<id>/summary.
class Server {
 public:
  Server(ServiceConfig config, std::shared_ptr<const StressModel> model);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds and starts the I/O thread; returns the bound port.
  std::uint16_t start();
  void stop();
  // Blocks until SIGINT/SIGTERM or stop().
  void run_until_signal();

  std::size_t active_sessions() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace nienie::service
