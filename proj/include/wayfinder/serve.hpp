#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <future>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "wayfinder/harness.hpp"

namespace httplib {
class Server;
}

namespace wayfinder::serve {

struct ServeConfig {
  std::string world = "sim-3room";
  std::string text;       ///< initial direction; empty starts idle
  int start_region = -1;  ///< -1: the world's start region
  int goal_region = -1;   ///< -1: the world's goal region
  harness::Baseline baseline = harness::Baseline::WithLanguage;
  harness::RunConfig run;
  std::uint64_t seed = 1;
  std::chrono::milliseconds tick{200};  ///< delay between steps while running
  bool running = false;
};

/// Published state; never mutated after publication.
struct Snapshot {
  std::uint64_t version = 0;
  std::string json;
};

struct Reply {
  int status = 200;
  std::string body;  ///< JSON
};

enum class Mode { Paused, Running };

/// One simulation loop. Commands and controls go through an ordered queue
/// and are applied on the loop thread between steps.
class SimLoop {
 public:
  SimLoop(const ServeConfig& cfg, policy::PolicyWeights weights);
  ~SimLoop();
  SimLoop(const SimLoop&) = delete;
  SimLoop& operator=(const SimLoop&) = delete;

  std::shared_ptr<const Snapshot> latest() const;
  /// Blocks until a snapshot newer than `version` exists or `timeout` passes;
  /// returns the latest either way (null once stopped).
  std::shared_ptr<const Snapshot> wait_newer(std::uint64_t version, std::chrono::milliseconds timeout) const;

  /// Grounds `text` and injects its annotations at the next filter step.
  Reply command(const std::string& text);
  /// run | pause | step | reset
  Reply control(const std::string& verb);

  void stop();
  bool stopped() const;

 private:
  struct Item {
    bool is_command = false;
    std::string arg;
    std::promise<Reply> done;
  };

  Reply submit(bool is_command, const std::string& arg);
  void loop();
  Reply apply(const Item& it);
  void advance();
  void publish();
  std::unique_ptr<harness::Session> fresh_session() const;

  ServeConfig cfg_;
  harness::Direction dir_;
  policy::PolicyWeights weights_;
  std::unique_ptr<harness::Session> session_;  // loop thread only
  Mode mode_ = Mode::Paused;                    // loop thread only
  std::chrono::steady_clock::time_point next_tick_;

  mutable std::mutex m_;
  mutable std::condition_variable cv_;
  std::deque<Item> queue_;
  std::shared_ptr<const Snapshot> snapshot_;
  std::uint64_t version_ = 0;
  bool quit_ = false;
  std::thread thread_;
};

/// HTTP front end: GET /state, GET /events, POST /command, POST /control.
class Server {
 public:
  explicit Server(SimLoop& loop);
  ~Server();

  /// Binds to `host:port` (port 0 picks a free port); returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();

 private:
  SimLoop& loop_;
  std::unique_ptr<httplib::Server> http_;
  std::atomic<bool> closing_{false};
};

/// Starts a loop and serves it on `port` until the process is interrupted.
int serve(const ServeConfig& cfg, const policy::PolicyWeights& weights, const std::string& host, int port);

}  // namespace wayfinder::serve
