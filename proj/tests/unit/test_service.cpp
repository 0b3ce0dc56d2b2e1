#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "nienie/service.hpp"
#include "nienie/session.hpp"
#include "support.hpp"

// after Eigen: these pull in resolv.h, whose _res macro breaks Eigen headers
#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "httplib.h"

using namespace nienie;
using Json = nlohmann::json;
namespace net = boost::asio;
namespace websocket = boost::beast::websocket;

namespace {

class WsClient {
 public:
  explicit WsClient(std::uint16_t port) : ws_(ioc_) {
    net::ip::tcp::resolver resolver(ioc_);
    net::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", "/ws");
  }
  void send(Json msg) {
    msg["seq"] = seq_++;
    ws_.text(true);
    ws_.write(net::buffer(msg.dump()));
  }
  void send_raw(const std::string& text) { ws_.write(net::buffer(text)); }
  Json read() {
    boost::beast::flat_buffer buf;
    ws_.read(buf);
    return Json::parse(boost::beast::buffers_to_string(buf.data()));
  }
  Json read_until(const std::string& type) {
    for (;;) {
      Json f = read();
      if (f["type"] == type) return f;
    }
  }

 private:
  net::io_context ioc_;
  websocket::stream<net::ip::tcp::socket> ws_;
  std::int64_t seq_ = 0;
};

service::ServiceConfig fast_config(std::size_t max_sessions = 4) {
  service::ServiceConfig c;
  c.port = 0;
  c.max_sessions = max_sessions;
  c.time_scale = 25.0;
  c.session.input_grace_ms = 1500;
  c.log_dir = testing::temp_dir("service_logs").string();
  return c;
}

Json http_get(std::uint16_t port, const std::string& path, int* status = nullptr) {
  httplib::Client cli("127.0.0.1", port);
  auto res = cli.Get(path);
  REQUIRE(res);
  if (status) *status = res->status;
  return Json::parse(res->body);
}

}  // namespace

TEST_CASE("health endpoint and first frame after hello") {
  service::Server server(fast_config(), testing::tiny_model());
  const auto port = server.start();
  CHECK(http_get(port, "/health") == Json{{"status", "ok"}, {"sessions", 0}});

  WsClient c(port);
  c.send({{"type", "hello"}, {"payload", {{"seed", 3}}}});
  const Json first = c.read();
  CHECK(first["type"] == "state");
  CHECK(first["payload"]["phase"] == "calibrating");
  CHECK(first["seq"] == 0);
  CHECK(first["session_id"].get<std::string>().size() > 0);
  CHECK(http_get(port, "/health")["sessions"] == 1);
  int status = 0;
  http_get(port, "/sessions/nope/summary", &status);
  CHECK(status == 404);
}

TEST_CASE("malformed, unknown and out-of-order input yields error frames and keeps the connection") {
  service::Server server(fast_config(), testing::tiny_model());
  const auto port = server.start();
  WsClient c(port);
  c.send({{"type", "hello"}});
  CHECK(c.read()["type"] == "state");

  c.send({{"type", "dance"}});
  Json e = c.read_until("error");
  CHECK(e["payload"]["code"] == "unknown_type");

  c.send_raw("{oops");
  CHECK(c.read_until("error")["payload"]["code"] == "malformed");

  c.send({{"type", "squeeze"}, {"t_ms", 5000}, {"payload", {{"intensity", 0.9}}}});
  c.send({{"type", "squeeze"}, {"t_ms", 4000}, {"payload", {{"intensity", 0.0}}}});
  e = c.read_until("error");
  CHECK(e["payload"]["code"] == "out_of_order");

  c.send({{"type", "squeeze"}, {"t_ms", 6000}, {"payload", {{"intensity", 3.0}}}});
  CHECK(c.read_until("error")["payload"]["code"] == "invalid");

  // still alive: a second hello is refused with a typed error, not a disconnect
  c.send({{"type", "hello"}});
  CHECK(c.read_until("error")["payload"]["code"] == "already_started");
}

TEST_CASE("excess squeeze rate is dropped with a counted warning") {
  service::Server server(fast_config(), testing::tiny_model());
  const auto port = server.start();
  WsClient c(port);
  c.send({{"type", "hello"}});
  c.read();
  for (int i = 0; i < 5; ++i) c.send({{"type", "squeeze"}, {"t_ms", 10000 + i * 5}, {"payload", {{"intensity", 0.5}}}});
  const Json e = c.read_until("error");
  CHECK(e["payload"]["code"] == "rate_limited");
  CHECK(e["payload"]["dropped"].get<int>() >= 1);
}

TEST_CASE("session limit is reported as a typed error frame") {
  service::Server server(fast_config(1), testing::tiny_model());
  const auto port = server.start();
  WsClient a(port);
  a.send({{"type", "hello"}});
  CHECK(a.read()["type"] == "state");
  WsClient b(port);
  b.send({{"type", "hello"}});
  const Json e = b.read();
  CHECK(e["type"] == "error");
  CHECK(e["payload"]["code"] == "session_limit");
  CHECK(server.active_sessions() == 1);
}

TEST_CASE("client bye ends the session with a summary") {
  service::Server server(fast_config(), testing::tiny_model());
  const auto port = server.start();
  WsClient c(port);
  c.send({{"type", "hello"}});
  const auto id = c.read()["session_id"].get<std::string>();
  c.send({{"type", "bye"}});
  const Json bye = c.read_until("bye");
  CHECK(bye["payload"]["summary"].contains("error"));  // never reached the active phase
  const Json stored = http_get(port, "/sessions/" + id + "/summary");
  CHECK(stored == bye["payload"]["summary"]);
  CHECK(server.active_sessions() == 0);
}

TEST_CASE("full session over the wire matches offline replay") {
  auto cfg = fast_config();
  service::Server server(cfg, testing::tiny_model());
  const auto port = server.start();
  WsClient c(port);
  c.send({{"type", "hello"}, {"payload", {{"seed", 11}}}});
  const auto id = c.read()["session_id"].get<std::string>();

  std::set<std::int64_t> answered;
  std::vector<Json> adherence;
  std::int64_t last_seq = 0;
  Json bye;
  std::set<std::string> seen;
  for (;;) {
    const Json f = c.read();
    CHECK(f["seq"].get<std::int64_t>() == last_seq + 1);
    last_seq = f["seq"];
    const std::string type = f["type"];
    seen.insert(type);
    if (type == "beat" && f["payload"]["kind"] == "squeeze") {
      const auto due = f["payload"]["due_ms"].get<std::int64_t>();
      const auto w = f["payload"]["squeeze_ms"].get<std::int64_t>();
      CHECK(f["t_ms"].get<std::int64_t>() <= due);  // announced ahead
      if (answered.insert(due).second) {
        c.send({{"type", "squeeze"}, {"t_ms", due + 60}, {"payload", {{"intensity", 0.9}}}});
        c.send({{"type", "squeeze"}, {"t_ms", due + 60 + w}, {"payload", {{"intensity", 0.0}}}});
      }
    } else if (type == "adherence") {
      adherence.push_back(f["payload"]);
    } else if (type == "error") {
      FAIL("unexpected error frame: " << f.dump());
    } else if (type == "bye") {
      bye = f;
      break;
    }
  }
  CHECK(seen.count("stress") == 1);
  CHECK(seen.count("beat") == 1);
  REQUIRE(!adherence.empty());
  const Json summary = bye["payload"]["summary"];
  CHECK(summary["beats_hit"].get<int>() == summary["beats_total"].get<int>());
  CHECK(summary["mean_abs_timing_error_ms"].get<double>() == doctest::Approx(60.0));
  CHECK(http_get(port, "/sessions/" + id + "/summary") == summary);

  // the service log replays offline to the same records and adherence
  const auto path = std::filesystem::path(cfg.log_dir) / (id + ".jsonl");
  REQUIRE(std::filesystem::exists(path));
  const auto live = session::EventLog::load(path.string());
  const auto again = session::replay(live, testing::tiny_model());
  CHECK(again.to_jsonl() == live.to_jsonl());
  const auto offline = session::evaluate_session(again);
  CHECK(offline.adherence.sync_score == summary["sync_score"].get<double>());
}
