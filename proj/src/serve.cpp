#include "wayfinder/serve.hpp"

#include <iostream>
#include <stdexcept>

#include <httplib.h>
#include <json.hpp>

namespace wayfinder::serve {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

Reply error_reply(int status, const std::string& msg) { return {status, json{{"error", msg}}.dump()}; }

const char* mode_name(Mode m) { return m == Mode::Running ? "running" : "paused"; }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

SimLoop::SimLoop(const ServeConfig& cfg, policy::PolicyWeights weights)
    : cfg_(cfg), weights_(std::move(weights)) {
  const auto& w = harness::world_named(cfg.world);
  dir_ = {cfg.text, cfg.world, cfg.start_region >= 0 ? cfg.start_region : w.start_region,
          cfg.goal_region >= 0 ? cfg.goal_region : w.goal_region};
  session_ = fresh_session();
  mode_ = cfg.running ? Mode::Running : Mode::Paused;
  next_tick_ = Clock::now();
  publish();
  thread_ = std::thread([this] { loop(); });
}

SimLoop::~SimLoop() { stop(); }

std::unique_ptr<harness::Session> SimLoop::fresh_session() const {
  return std::make_unique<harness::Session>(harness::world_named(cfg_.world), dir_, cfg_.baseline, cfg_.run,
                                            cfg_.seed);
}

void SimLoop::stop() {
  {
    std::lock_guard lk(m_);
    if (quit_) return;
    quit_ = true;
  }
  cv_.notify_all();
  if (thread_.joinable()) thread_.join();
  std::lock_guard lk(m_);
  for (auto& it : queue_) it.done.set_value(error_reply(503, "session stopped"));
  queue_.clear();
}

bool SimLoop::stopped() const {
  std::lock_guard lk(m_);
  return quit_;
}

std::shared_ptr<const Snapshot> SimLoop::latest() const {
  std::lock_guard lk(m_);
  return snapshot_;
}

std::shared_ptr<const Snapshot> SimLoop::wait_newer(std::uint64_t version, std::chrono::milliseconds timeout) const {
  std::unique_lock lk(m_);
  cv_.wait_for(lk, timeout, [&] { return quit_ || snapshot_->version > version; });
  return quit_ ? nullptr : snapshot_;
}

Reply SimLoop::command(const std::string& text) { return submit(true, text); }
Reply SimLoop::control(const std::string& verb) { return submit(false, verb); }

Reply SimLoop::submit(bool is_command, const std::string& arg) {
  std::future<Reply> f;
  {
    std::lock_guard lk(m_);
    if (quit_) return error_reply(503, "session stopped");
    queue_.push_back({is_command, arg, {}});
    f = queue_.back().done.get_future();
  }
  cv_.notify_all();
  return f.get();
}

void SimLoop::publish() {
  auto j = json::parse(session_->snapshot_json());
  j["mode"] = mode_name(mode_);
  std::lock_guard lk(m_);
  j["version"] = ++version_;
  auto s = std::make_shared<Snapshot>();
  s->version = version_;
  s->json = j.dump();
  snapshot_ = std::move(s);
  cv_.notify_all();
}

void SimLoop::advance() {
  if (session_->done()) {
    mode_ = Mode::Paused;
    return;
  }
  session_->step(weights_);
  if (session_->done()) mode_ = Mode::Paused;
  publish();
}

Reply SimLoop::apply(const Item& it) {
  if (it.is_command) {
    const std::string text = trim(it.arg);
    if (text.empty()) return error_reply(400, "empty command");
    std::vector<ground::Symbol> roots;
    try {
      roots = session_->command(text);
    } catch (const std::exception& e) {
      return error_reply(400, e.what());
    }
    json out;
    out["annotations"] = json::array();
    for (const auto& r : roots) out["annotations"].push_back(ground::SymbolSpace::bundled().to_string(r));
    publish();
    out["goal"] = json::parse(snapshot_->json)["goal"];
    return {200, out.dump()};
  }
  const std::string verb = trim(it.arg);
  if (verb == "run") {
    mode_ = Mode::Running;
    next_tick_ = Clock::now();
    publish();
  } else if (verb == "pause") {
    mode_ = Mode::Paused;
    publish();
  } else if (verb == "step") {
    mode_ = Mode::Paused;
    if (session_->done()) publish();
    else advance();
  } else if (verb == "reset") {
    session_ = fresh_session();
    mode_ = Mode::Paused;
    publish();
  } else {
    return error_reply(400, "unknown control '" + verb + "' (run | pause | step | reset)");
  }
  return {200, json{{"mode", mode_name(mode_)}, {"step", session_->record().decisions}, {"done", session_->done()}}
                   .dump()};
}

void SimLoop::loop() {
  std::unique_lock lk(m_);
  while (!quit_) {
    const bool ticking = mode_ == Mode::Running && !session_->done();
    const auto ready = [this] { return quit_ || !queue_.empty(); };
    if (ticking) cv_.wait_until(lk, next_tick_, ready);
    else cv_.wait(lk, ready);
    if (quit_) break;
    if (!queue_.empty()) {
      Item it = std::move(queue_.front());
      queue_.pop_front();
      lk.unlock();
      Reply r;
      try {
        r = apply(it);
      } catch (const std::exception& e) {
        r = error_reply(500, e.what());
      }
      it.done.set_value(std::move(r));
      lk.lock();
      continue;
    }
    if (ticking && Clock::now() >= next_tick_) {
      lk.unlock();
      advance();
      lk.lock();
      next_tick_ = Clock::now() + cfg_.tick;
    }
  }
}

// ---- HTTP ----

Server::Server(SimLoop& loop) : loop_(loop), http_(std::make_unique<httplib::Server>()) {
  auto& h = *http_;
  h.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  h.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  });

  h.Get("/state", [this](const httplib::Request&, httplib::Response& res) {
    const auto s = loop_.latest();
    if (!s) {
      res.status = 503;
      return;
    }
    res.set_content(s->json, "application/json");
  });

  h.Get("/events", [this](const httplib::Request&, httplib::Response& res) {
    res.set_header("Cache-Control", "no-cache");
    auto last = std::make_shared<std::uint64_t>(0);
    res.set_chunked_content_provider("text/event-stream", [this, last](std::size_t, httplib::DataSink& sink) {
      const auto s = *last == 0 ? loop_.latest() : loop_.wait_newer(*last, std::chrono::milliseconds(500));
      if (!s || closing_) {
        sink.done();
        return true;
      }
      std::string msg;
      if (s->version != *last) {
        msg = "id: " + std::to_string(s->version) + "\nevent: state\ndata: " + s->json + "\n\n";
        *last = s->version;
      } else {
        msg = ": keepalive\n\n";
      }
      return sink.write(msg.data(), msg.size());
    });
  });

  h.Post("/command", [this](const httplib::Request& req, httplib::Response& res) {
    Reply r;
    const auto body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("text") || !body["text"].is_string()) {
      r = error_reply(400, "expected {\"text\": string}");
    } else {
      r = loop_.command(body["text"].get<std::string>());
    }
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });

  h.Post("/control", [this](const httplib::Request& req, httplib::Response& res) {
    // accepts {"action": verb}, a JSON string, or the bare verb
    std::string verb = req.body;
    const auto body = json::parse(req.body, nullptr, false);
    if (!body.is_discarded()) {
      if (body.is_string()) verb = body.get<std::string>();
      else if (body.is_object() && body.contains("action") && body["action"].is_string()) verb = body["action"];
      else verb.clear();
    }
    const Reply r = loop_.control(verb);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });
}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
  if (port == 0) return http_->bind_to_any_port(host);
  if (!http_->bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void Server::listen() { http_->listen_after_bind(); }

void Server::stop() {
  closing_ = true;
  if (http_->is_running()) http_->stop();
}

int serve(const ServeConfig& cfg, const policy::PolicyWeights& weights, const std::string& host, int port) {
  SimLoop loop(cfg, weights);
  Server server(loop);
  const int bound = server.bind(host, port);
  std::cout << "serving " << cfg.world << " on http://" << host << ":" << bound << std::endl;
  server.listen();
  return 0;
}

}  // namespace wayfinder::serve
