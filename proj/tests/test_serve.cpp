#include <doctest.h>

#include <atomic>
#include <thread>

#include "wayfinder/serve.hpp"

#include <httplib.h>
#include <json.hpp>

using namespace wayfinder;
using namespace wayfinder::serve;
using nlohmann::json;

namespace {

const char* kDirection = "go to the kitchen that is down the hallway";

int hypothesized(const json& snap) {
  int n = 0;
  for (const auto& p : snap["particles"]) {
    for (const auto& r : p["regions"]) n += r["status"] == "hypothesized";
  }
  return n;
}

struct Fixture {
  SimLoop loop;
  Server server;
  int port = 0;
  std::thread thread;
  httplib::Client client;

  explicit Fixture(ServeConfig cfg = {})
      : loop(cfg, harness::default_policy()), server(loop), port(server.bind("127.0.0.1", 0)),
        thread([this] { server.listen(); }), client("127.0.0.1", port) {
    client.set_read_timeout(10, 0);
  }
  ~Fixture() {
    server.stop();
    thread.join();
    loop.stop();
  }

  json state() {
    auto r = client.Get("/state");
    REQUIRE(r);
    REQUIRE(r->status == 200);
    return json::parse(r->body);
  }
  httplib::Result control(const std::string& verb) {
    return client.Post("/control", json{{"action", verb}}.dump(), "application/json");
  }
};

}  // namespace

TEST_CASE("state snapshot carries the documented fields") {
  Fixture f;
  const auto s = f.state();
  for (const char* k : {"step", "robot", "particles", "action", "metrics", "goal", "mode", "version"}) {
    CHECK(s.contains(k));
  }
  CHECK(s["step"] == 0);
  CHECK(s["mode"] == "paused");
  CHECK(s["particles"].size() == 20);
  CHECK(hypothesized(s) == 0);
}

TEST_CASE("a posted direction produces hypotheses in the next snapshot") {
  Fixture f;
  auto r = f.client.Post("/command", json{{"text", kDirection}}.dump(), "application/json");
  REQUIRE(r);
  CHECK(r->status == 200);
  const auto reply = json::parse(r->body);
  CHECK(reply["goal"]["type"] == "kitchen");
  const auto& ann = reply["annotations"];
  CHECK(std::find(ann.begin(), ann.end(), "kitchen(down(hallway))") != ann.end());

  REQUIRE(f.control("step"));
  const auto s = f.state();
  CHECK(s["step"] == 1);
  CHECK(hypothesized(s) > 0);
}

TEST_CASE("pause then step advances exactly one step; reset returns to zero") {
  ServeConfig cfg;
  cfg.text = kDirection;
  cfg.tick = std::chrono::milliseconds(1);
  Fixture f(cfg);
  REQUIRE(f.control("run"));
  for (int i = 0; i < 200 && f.state()["step"] < 2; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  REQUIRE(f.control("pause"));
  const auto a = f.state();
  CHECK(a["mode"] == "paused");
  std::this_thread::sleep_for(std::chrono::milliseconds(30));
  const auto b = f.state();
  CHECK(b["step"] == a["step"]);
  CHECK(b["version"] == a["version"]);

  if (!a["done"].get<bool>()) {
    REQUIRE(f.control("step"));
    CHECK(f.state()["step"] == a["step"].get<int>() + 1);
  }
  REQUIRE(f.control("reset"));
  const auto c = f.state();
  CHECK(c["step"] == 0);
  CHECK(c["mode"] == "paused");
}

TEST_CASE("concurrent readers see identical snapshots") {
  Fixture f;
  std::string x, y;
  std::thread t1([&] {
    httplib::Client c("127.0.0.1", f.port);
    if (auto r = c.Get("/state")) x = r->body;
  });
  std::thread t2([&] {
    httplib::Client c("127.0.0.1", f.port);
    if (auto r = c.Get("/state")) y = r->body;
  });
  t1.join();
  t2.join();
  CHECK_FALSE(x.empty());
  CHECK(x == y);
}

TEST_CASE("event stream delivers snapshots") {
  Fixture f;
  std::string stream;
  std::atomic<bool> connected{false};
  std::thread stepper([&] {
    for (int i = 0; i < 1000 && !connected; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    httplib::Client c("127.0.0.1", f.port);
    c.Post("/control", "step", "text/plain");
  });
  httplib::Client c("127.0.0.1", f.port);
  c.set_read_timeout(10, 0);
  int events = 0;
  c.Get("/events", [&](const char* data, std::size_t n) {
    stream.append(data, n);
    events = 0;
    for (std::size_t p = stream.find("event: state"); p != std::string::npos; p = stream.find("event: state", p + 1)) {
      events += stream.find("\n\n", p) != std::string::npos;  // complete events only
    }
    if (events > 0) connected = true;
    return events < 2;
  });
  stepper.join();
  REQUIRE(events >= 2);
  const auto a = stream.find("data: ");
  const auto b = stream.find("\n\n", a);
  const auto first = json::parse(stream.substr(a + 6, b - a - 6));
  CHECK(first["step"] == 0);
  const auto c2 = stream.find("data: ", b);
  const auto second = json::parse(stream.substr(c2 + 6, stream.find("\n\n", c2) - c2 - 6));
  CHECK(second["step"] == 1);
}

TEST_CASE("malformed requests get diagnostics") {
  Fixture f;
  auto r = f.client.Post("/command", "not json", "application/json");
  REQUIRE(r);
  CHECK(r->status == 400);
  CHECK(json::parse(r->body).contains("error"));
  r = f.client.Post("/command", json{{"text", "  "}}.dump(), "application/json");
  REQUIRE(r);
  CHECK(r->status == 400);
  r = f.client.Post("/command", json{{"text", "blah blah"}}.dump(), "application/json");
  REQUIRE(r);
  CHECK(r->status == 400);
  r = f.control("jump");
  REQUIRE(r);
  CHECK(r->status == 400);
  CHECK(f.state()["step"] == 0);
}
