#include "nienie/service.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <queue>
#include <sstream>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "nienie/config.hpp"
#include "nienie/error.hpp"
#include "nienie/random.hpp"

namespace nienie::service {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;
using session::Json;

ServiceConfig ServiceConfig::from_config(const FlatConfig& cfg) {
  ServiceConfig c;
  c.bind_address = cfg.get_or("bind", c.bind_address);
  const auto port = cfg.get_int("port", c.port);
  if (port < 0 || port > 65535) fail(ErrorCode::invalid_argument, "port out of range");
  c.port = static_cast<std::uint16_t>(port);
  c.model_path = cfg.get_or("model", "");
  c.llm = guidance::RemoteConfig::from_config(cfg);
  const auto max_sessions = cfg.get_int("max_sessions", static_cast<long long>(c.max_sessions));
  if (max_sessions < 1) fail(ErrorCode::invalid_argument, "max_sessions must be >= 1");
  c.max_sessions = static_cast<std::size_t>(max_sessions);
  c.log_dir = cfg.get_or("log_dir", "");
  c.static_dir = cfg.get_or("static_dir", "");
  c.time_scale = cfg.get_double("time_scale", c.time_scale);
  if (!(c.time_scale > 0.0)) fail(ErrorCode::invalid_argument, "time_scale must be positive");
  c.squeeze_min_interval_ms = cfg.get_int("squeeze_min_interval_ms", c.squeeze_min_interval_ms);
  auto& s = c.session;
  s.mode = session::Mode::live;
  s.input_grace_ms = 300;
  s.session_length_s = cfg.get_double("session_length_s", s.session_length_s);
  s.calibration_s = cfg.get_double("calibration_s", s.calibration_s);
  s.replan_interval_s = cfg.get_double("replan_interval_s", s.replan_interval_s);
  s.cue_lead_ms = cfg.get_int("cue_lead_ms", s.cue_lead_ms);
  s.input_grace_ms = cfg.get_int("input_grace_ms", s.input_grace_ms);
  s.guidance_interval_s = cfg.get_double("guidance_interval_s", s.guidance_interval_s);
  s.validate();
  return c;
}

namespace {

struct Registry {
  std::mutex mu;
  std::size_t active = 0;
  std::uint64_t next_id = 1;
  std::map<std::string, Json> summaries;  // finished sessions
};

Json frame(const std::string& type, const std::string& session_id, std::uint64_t seq, std::int64_t t_ms,
           Json payload) {
  return Json{{"type", type}, {"session_id", session_id}, {"seq", seq}, {"t_ms", t_ms}, {"payload", std::move(payload)}};
}

struct Shared {
  ServiceConfig config;
  std::shared_ptr<const StressModel> model;
  Registry registry;
};

// One WebSocket connection; at most one session at a time.
class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, std::shared_ptr<Shared> shared)
      : ws_(std::move(socket)), timer_(ws_.get_executor()), shared_(std::move(shared)) {}

  void accept(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->read();
    });
  }

 private:
  struct PendingSqueeze {
    std::int64_t t;
    std::uint64_t order;
    double intensity;
    bool operator>(const PendingSqueeze& o) const { return t != o.t ? t > o.t : order > o.order; }
  };

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->on_closed("connection_lost");
        return;
      }
      std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->on_message(text);
      if (!self->closing_) self->read();
    });
  }

  void send(const std::string& type, std::int64_t t_ms, Json payload) {
    outbox_.push_back(frame(type, session_id_, out_seq_++, t_ms, std::move(payload)).dump());
    if (outbox_.size() == 1) write_next();
  }

  void send_error(const std::string& code, const std::string& message, Json extra = Json::object()) {
    extra["code"] = code;
    extra["message"] = message;
    send("error", engine_ ? engine_->now() : 0, std::move(extra));
  }

  void write_next() {
    if (outbox_.empty()) return;
    ws_.text(true);
    ws_.async_write(net::buffer(outbox_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->outbox_.clear();
        return;
      }
      self->outbox_.pop_front();
      if (!self->outbox_.empty()) {
        self->write_next();
      } else if (self->close_after_flush_) {
        self->close_after_flush_ = false;
        self->ws_.async_close(websocket::close_code::normal, [self](beast::error_code) {});
      }
    });
  }

  void on_message(const std::string& text) {
    Json msg = Json::parse(text, nullptr, false);
    if (msg.is_discarded() || !msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
      send_error("malformed", "expected a JSON object with a string 'type'");
      return;
    }
    const std::string type = msg["type"].get<std::string>();
    if (msg.contains("seq")) {
      if (!msg["seq"].is_number_integer()) {
        send_error("malformed", "seq must be an integer");
        return;
      }
      const auto seq = msg["seq"].get<std::int64_t>();
      if (last_in_seq_ && seq <= *last_in_seq_) {
        send_error("bad_seq", "seq must increase strictly", {{"seq", seq}});
        return;
      }
      last_in_seq_ = seq;
    }
    const Json payload = msg.value("payload", Json::object());
    try {
      if (type == "hello") on_hello(payload);
      else if (type == "squeeze") on_squeeze(msg, payload);
      else if (type == "bye") on_bye();
      else send_error("unknown_type", "unsupported message type '" + type + "'");
    } catch (const std::exception& ex) {
      send_error("invalid", ex.what());
    }
  }

  void on_hello(const Json& payload) {
    if (engine_) {
      send_error("already_started", "this connection already has a session");
      return;
    }
    std::uint64_t id = 0;
    {
      std::unique_lock lock(shared_->registry.mu);
      if (shared_->registry.active >= shared_->config.max_sessions) {
        lock.unlock();
        send_error("session_limit", "the service is at its session limit",
                   {{"max_sessions", shared_->config.max_sessions}});
        return;
      }
      ++shared_->registry.active;
      id = shared_->registry.next_id++;
    }
    counted_ = true;

    session::SessionConfig cfg = shared_->config.session;
    cfg.mode = session::Mode::live;
    cfg.seed = payload.is_object() ? payload.value("seed", id) : id;
    session_id_ = "s" + std::to_string(id);
    cfg.session_id = session_id_;
    guidance_ = std::make_unique<guidance::GuidanceService>(shared_->config.llm);
    engine_ = std::make_unique<session::SessionEngine>(cfg, shared_->model, guidance_.get());
    engine_->log().set_listener([this](const session::LogRecord& r) { forward(r); });
    phys_rng_ = make_stream(cfg.seed, "physiology");
    phys_ = session::init_physiology(shared_->config.physiology, phys_rng_);
    wall0_ = std::chrono::steady_clock::now();
    engine_->start({{"transport", "websocket"}, {"physiology", shared_->config.physiology.to_json()}});
    tick();
  }

  // Translates engine log records into outgoing frames.
  void forward(const session::LogRecord& r) {
    if (r.type == "phase") {
      send("state", r.t_ms, {{"phase", r.payload["phase"]}});
    } else if (r.type == "estimate") {
      send("stress", r.t_ms, r.payload);
    } else if (r.type == "adherence") {
      Json p = r.payload;
      p.erase("matches");
      send("adherence", r.t_ms, std::move(p));
    } else if (r.type == "guidance") {
      send("guidance", r.t_ms, r.payload);
    }
  }

  std::int64_t logical_now() const {
    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - wall0_).count();
    return static_cast<std::int64_t>(std::floor(wall_ms * shared_->config.time_scale));
  }

  void tick() {
    if (!engine_ || engine_->phase() == session::Phase::ended) return;
    const std::int64_t now = logical_now();
    const std::int64_t engine_t = std::min(now - engine_->config().input_grace_ms, engine_->config().end_ms());
    try {
      step_inputs(engine_t);
      if (engine_t > engine_->now()) engine_->advance_to(engine_t);
      if (engine_t >= engine_->config().end_ms()) engine_->finish();
      announce(now);
    } catch (const std::exception& ex) {
      send_error("internal", ex.what());
      end_session("error");
      return;
    }
    if (engine_->phase() == session::Phase::ended) {
      end_session("complete");
      return;
    }
    timer_.expires_after(std::chrono::milliseconds(10));
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (!ec) self->tick();
    });
  }

  // Feeds physiology samples and queued squeezes up to engine time t in order.
  void step_inputs(std::int64_t t) {
    while (true) {
      const bool sample_due = next_sample_ <= t && next_sample_ < engine_->config().end_ms();
      const bool squeeze_due = !squeezes_.empty() && squeezes_.top().t <= t;
      if (!sample_due && !squeeze_due) break;
      if (sample_due && (!squeeze_due || next_sample_ <= squeezes_.top().t)) {
        const auto& phys = shared_->config.physiology;
        Sample x;
        if (next_sample_ == 0) {
          x = session::physiology_mean(phys, phys_.elevation);
          for (std::size_t c = 0; c < x.size(); ++c) x[c] += phys_.noise[c];
        } else {
          engine_->advance_to(next_sample_);
          x = session::step_physiology(phys, phys_, engine_->adherent_at(next_sample_), 1.0, phys_rng_);
        }
        engine_->on_sample(next_sample_, x);
        next_sample_ += 1000;
      } else {
        engine_->on_squeeze(squeezes_.top().t, squeezes_.top().intensity);
        squeezes_.pop();
      }
    }
  }

  void announce(std::int64_t now) {
    const std::int64_t horizon = now + engine_->config().cue_lead_ms;
    if (horizon <= announced_until_) return;
    for (const auto& cue : engine_->cues_between(announced_until_ + 1, horizon + 1)) {
      Json p{{"kind", std::string(rhythm::to_string(cue.kind))}, {"due_ms", cue.due_ms}, {"block", cue.block},
             {"beat", cue.beat}};
      if (cue.kind == rhythm::CueKind::squeeze) p["squeeze_ms"] = engine_->squeeze_window_at(cue.due_ms);
      send("beat", now, std::move(p));
    }
    announced_until_ = horizon;
  }

  void on_squeeze(const Json& msg, const Json& payload) {
    if (!engine_ || engine_->phase() == session::Phase::ended) {
      send_error("no_session", "send hello first");
      return;
    }
    if (!msg.contains("t_ms") || !msg["t_ms"].is_number()) {
      send_error("malformed", "squeeze needs a numeric t_ms");
      return;
    }
    const auto t = static_cast<std::int64_t>(std::llround(msg["t_ms"].get<double>()));
    if (!payload.is_object() || !payload.contains("intensity") || !payload["intensity"].is_number()) {
      send_error("malformed", "squeeze needs payload.intensity");
      return;
    }
    const double intensity = payload["intensity"].get<double>();
    if (!std::isfinite(intensity) || intensity < 0.0 || intensity > 1.0) {
      send_error("invalid", "intensity must lie in [0, 1]");
      return;
    }
    if (last_squeeze_t_ && t < *last_squeeze_t_) {
      send_error("out_of_order", "squeeze t_ms decreased", {{"t_ms", t}, {"last_t_ms", *last_squeeze_t_}});
      return;
    }
    if (t < engine_->now()) {
      send_error("late", "squeeze arrived after its time was processed", {{"t_ms", t}});
      return;
    }
    if (last_squeeze_t_ && t - *last_squeeze_t_ < shared_->config.squeeze_min_interval_ms) {
      ++dropped_;
      if (!last_drop_warning_ || logical_now() - *last_drop_warning_ >= 1000) {
        last_drop_warning_ = logical_now();
        send_error("rate_limited", "squeeze samples above ~30 Hz are dropped", {{"dropped", dropped_}});
      }
      return;
    }
    last_squeeze_t_ = t;
    squeezes_.push({t, squeeze_order_++, intensity});
  }

  void on_bye() {
    if (!engine_) {
      closing_ = true;
      close_after_flush_ = true;
      send("bye", 0, Json::object());
      return;
    }
    if (engine_->phase() != session::Phase::ended) {
      const std::int64_t t = std::max(engine_->now(), std::min(logical_now(), engine_->config().end_ms()));
      step_inputs(std::min(t, engine_->now()));
      engine_->disconnect(t, "client_bye");
    }
    end_session("client_bye");
  }

  void on_closed(const std::string& reason) {
    closing_ = true;
    timer_.cancel();
    if (engine_ && engine_->phase() != session::Phase::ended) {
      try {
        engine_->disconnect(std::max(engine_->now(), std::min(logical_now(), engine_->config().end_ms())), reason);
      } catch (...) {
      }
      finalize(false);
    } else if (engine_) {
      finalize(false);
    }
  }

  void end_session(const std::string&) {
    Json summary = finalize(true);
    closing_ = true;
    close_after_flush_ = true;
    send("bye", engine_ ? engine_->now() : 0, {{"summary", summary}});
  }

  Json finalize(bool connected) {
    if (finalized_) return summary_;
    finalized_ = true;
    timer_.cancel();
    engine_->log().set_listener({});
    try {
      summary_ = session::evaluate_session(engine_->log()).to_json();
    } catch (const std::exception& ex) {
      summary_ = {{"error", ex.what()}};
    }
    summary_["dropped_squeezes"] = dropped_;
    if (!shared_->config.log_dir.empty()) {
      try {
        std::filesystem::create_directories(shared_->config.log_dir);
        engine_->log().save((std::filesystem::path(shared_->config.log_dir) / (session_id_ + ".jsonl")).string());
      } catch (...) {
      }
    }
    std::lock_guard lock(shared_->registry.mu);
    shared_->registry.summaries[session_id_] = summary_;
    if (counted_) {
      --shared_->registry.active;
      counted_ = false;
    }
    (void)connected;
    return summary_;
  }

  websocket::stream<beast::tcp_stream> ws_;
  net::steady_timer timer_;
  beast::flat_buffer buffer_;
  std::shared_ptr<Shared> shared_;
  std::deque<std::string> outbox_;
  bool closing_ = false;
  bool close_after_flush_ = false;

  std::string session_id_;
  std::uint64_t out_seq_ = 0;
  std::optional<std::int64_t> last_in_seq_;
  std::unique_ptr<guidance::GuidanceService> guidance_;
  std::unique_ptr<session::SessionEngine> engine_;
  bool counted_ = false;
  bool finalized_ = false;
  Json summary_;

  std::chrono::steady_clock::time_point wall0_;
  std::mt19937_64 phys_rng_;
  session::PhysiologyState phys_;
  std::int64_t next_sample_ = 0;
  std::int64_t announced_until_ = -1;
  std::priority_queue<PendingSqueeze, std::vector<PendingSqueeze>, std::greater<>> squeezes_;
  std::uint64_t squeeze_order_ = 0;
  std::optional<std::int64_t> last_squeeze_t_;
  std::optional<std::int64_t> last_drop_warning_;
  std::uint64_t dropped_ = 0;
};

std::string mime_type(const std::string& path) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".html") return "text/html";
  if (ext == ".js") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  return "application/octet-stream";
}

// Plain HTTP request; upgrades to a WsSession on /ws.
class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, std::shared_ptr<Shared> shared) : stream_(std::move(socket)), shared_(std::move(shared)) {}

  void run() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->handle();
    });
  }

 private:
  void handle() {
    const std::string target(req_.target());
    if (websocket::is_upgrade(req_)) {
      if (target != "/ws") {
        respond(http::status::not_found, "application/json", R"({"error":"websocket endpoint is /ws"})");
        return;
      }
      stream_.expires_never();
      std::make_shared<WsSession>(stream_.release_socket(), shared_)->accept(std::move(req_));
      return;
    }
    if (req_.method() != http::verb::get) {
      respond(http::status::method_not_allowed, "application/json", R"({"error":"GET only"})");
      return;
    }
    if (target == "/health") {
      std::size_t n = 0;
      {
        std::lock_guard lock(shared_->registry.mu);
        n = shared_->registry.active;
      }
      respond(http::status::ok, "application/json", Json{{"status", "ok"}, {"sessions", n}}.dump());
      return;
    }
    const std::string prefix = "/sessions/";
    const std::string suffix = "/summary";
    if (target.rfind(prefix, 0) == 0 && target.size() > prefix.size() + suffix.size() &&
        target.compare(target.size() - suffix.size(), suffix.size(), suffix) == 0) {
      const auto id = target.substr(prefix.size(), target.size() - prefix.size() - suffix.size());
      std::optional<Json> found;
      {
        std::lock_guard lock(shared_->registry.mu);
        auto it = shared_->registry.summaries.find(id);
        if (it != shared_->registry.summaries.end()) found = it->second;
      }
      if (found) respond(http::status::ok, "application/json", found->dump());
      else respond(http::status::not_found, "application/json", R"({"error":"unknown or unfinished session"})");
      return;
    }
    if (!shared_->config.static_dir.empty()) {
      std::string rel = target == "/" ? "/index.html" : target.substr(0, target.find('?'));
      if (rel.find("..") == std::string::npos) {
        const auto path = std::filesystem::path(shared_->config.static_dir) / rel.substr(1);
        std::ifstream in(path, std::ios::binary);
        if (in) {
          std::stringstream ss;
          ss << in.rdbuf();
          respond(http::status::ok, mime_type(path.string()), ss.str());
          return;
        }
      }
    }
    respond(http::status::not_found, "application/json", R"({"error":"not found"})");
  }

  void respond(http::status status, const std::string& type, std::string body) {
    auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
    res->set(http::field::content_type, type);
    res->keep_alive(false);
    res->body() = std::move(body);
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ec;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  std::shared_ptr<Shared> shared_;
};

}  // namespace

struct Server::Impl {
  std::shared_ptr<Shared> shared;
  net::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  std::thread thread;
  std::atomic<bool> running{false};

  void do_accept() {
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<HttpSession>(std::move(socket), shared)->run();
      do_accept();
    });
  }
};

Server::Server(ServiceConfig config, std::shared_ptr<const StressModel> model) : impl_(std::make_unique<Impl>()) {
  if (!model) fail(ErrorCode::invalid_argument, "service needs a loaded model");
  config.session.validate();
  impl_->shared = std::make_shared<Shared>();
  impl_->shared->config = std::move(config);
  impl_->shared->model = std::move(model);
}

Server::~Server() { stop(); }

std::uint16_t Server::start() {
  auto& cfg = impl_->shared->config;
  const tcp::endpoint ep(net::ip::make_address(cfg.bind_address), cfg.port);
  impl_->acceptor.open(ep.protocol());
  impl_->acceptor.set_option(net::socket_base::reuse_address(true));
  impl_->acceptor.bind(ep);
  impl_->acceptor.listen(net::socket_base::max_listen_connections);
  impl_->do_accept();
  impl_->running = true;
  impl_->thread = std::thread([this] { impl_->ioc.run(); });
  return impl_->acceptor.local_endpoint().port();
}

void Server::stop() {
  if (!impl_ || !impl_->running.exchange(false)) return;
  net::post(impl_->ioc, [this] {
    beast::error_code ec;
    impl_->acceptor.close(ec);
    impl_->ioc.stop();
  });
  if (impl_->thread.joinable()) impl_->thread.join();
}

void Server::run_until_signal() {
  net::io_context sig_ioc;
  net::signal_set signals(sig_ioc, SIGINT, SIGTERM);
  signals.async_wait([&](beast::error_code, int) { sig_ioc.stop(); });
  sig_ioc.run();
  stop();
}

std::size_t Server::active_sessions() const {
  std::lock_guard lock(impl_->shared->registry.mu);
  return impl_->shared->registry.active;
}

}  // namespace nienie::service
