#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "steer/engine.hpp"
#include "steer/json_io.hpp"
#include "steer/report.hpp"

namespace steer {

/// One server-sent event.
struct ServiceEvent {
  std::uint64_t id = 0;  // per session, from 1
  std::string type;      // "state" or "closed"
  json data;
};

/// HTTP front end over an Engine. Every request that touches the engine
/// takes the engine mutex; a second feedback for a session that is still
/// being handled is refused with 409.
class SessionService {
 public:
  explicit SessionService(Engine& engine) : engine_(engine) { routes(); }
  ~SessionService() { stop(); }

  SessionService(const SessionService&) = delete;
  SessionService& operator=(const SessionService&) = delete;

  /// Binds and serves on a background thread. Port 0 picks a free port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    if (port == 0)
      port_ = server_.bind_to_any_port(host);
    else if (server_.bind_to_port(host, port))
      port_ = port;
    else
      port_ = -1;
    if (port_ < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stop().
  void serve_forever(const std::string& host, int port) {
    if (!server_.listen(host, port)) throw IoError("cannot listen on port " + std::to_string(port));
  }

  void stop() {
    stopping_ = true;
    events_cv_.notify_all();
    if (server_.is_running()) server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

  /// The session view shared by GET /sessions/{id} and feedback replies.
  json view(const std::string& id) const {
    const auto& info = engine_.session(id);
    const auto& h = engine_.history();
    const auto& rec = h.record(info.current);
    const auto& st = rec.state.stats;
    json v;
    v["session_id"] = info.id;
    v["question_id"] = info.question_id;
    v["source"] = to_string(info.source);
    v["open"] = info.open;
    v["close_reason"] = info.close_reason;
    v["t"] = rec.t;
    v["last_operator"] = rec.produced_by >= 0 ? engine_.catalog().at(rec.produced_by).name
                                              : std::string("history_travel");
    json named = json::array();
    for (const auto& [pid, count] : st.named_multiset) named.push_back({{"id", pid}, {"count", count}});
    v["description"] = {{"n_boxes", st.n_boxes},
                        {"unique_named", st.unique_named},
                        {"named_occurrences", st.named_occurrences},
                        {"box_ranges", st.box_ranges},
                        {"disjuncts", st.disjuncts},
                        {"conjuncts", st.conjuncts},
                        {"vol_named_total", st.vol_named_total},
                        {"vol_named_unique", st.vol_named_unique},
                        {"vol_box_total", st.vol_box_total},
                        {"vol_box_unique", st.vol_box_unique},
                        {"vol_conjunct_total", st.vol_conjunct_total},
                        {"vol_conjunct_unique", st.vol_conjunct_unique},
                        {"named_predicates", named},
                        {"fingerprint", st.fingerprint}};
    v["params"] = rec.state.params;

    const auto& w = engine_.weights();
    std::vector<int> order(w.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return w[a] > w[b]; });
    auto weight_row = [&](int i) {
      return json{{"selector_id", i}, {"name", engine_.selectors()[i].name}, {"weight", w[i]}};
    };
    json top = json::array(), bottom = json::array();
    for (std::size_t i = 0; i < std::min<std::size_t>(10, order.size()); ++i) {
      top.push_back(weight_row(order[i]));
      bottom.push_back(weight_row(order[order.size() - 1 - i]));
    }
    v["weights_top"] = top;
    v["weights_bottom"] = bottom;

    json last_d = nullptr;
    for (auto it = info.records.rbegin(); it != info.records.rend(); ++it)
      if (const auto& r = h.record(*it); r.trace) {
        last_d = r.trace->d_samp;
        break;
      }
    v["last_d_samp"] = last_d;
    v["success_rate"] = h.global_success_rate();
    v["allowed_actions"] = info.open ? json::array({"m", "l", "b", "u"}) : json::array();
    json timeline = json::array();
    for (auto idx : info.records) {
      const auto& r = h.record(idx);
      timeline.push_back({{"t", r.t},
                          {"fingerprint", r.state.stats.fingerprint},
                          {"produced_by", r.produced_by}});
    }
    v["timeline"] = timeline;
    return v;
  }

 private:
  struct SessionEvents {
    std::vector<ServiceEvent> events;
    bool closed = false;
    bool busy = false;
  };

  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }
  static void send_error(httplib::Response& res, int status, const std::string& msg) {
    send_json(res, status, json{{"error", msg}});
  }

  void push_event(const std::string& id, std::string type, json data) {
    {
      std::lock_guard lk(events_mu_);
      auto& s = events_[id];
      s.events.push_back({s.events.size() + 1, std::move(type), std::move(data)});
      if (s.events.back().type == "closed") s.closed = true;
    }
    events_cv_.notify_all();
  }

  json catalog_json() const {
    json ops = json::array();
    for (std::size_t i = 0; i < engine_.catalog().size(); ++i) {
      const auto& op = engine_.catalog().at(static_cast<int>(i));
      ops.push_back({{"index", op.index},
                     {"name", op.name},
                     {"category", to_string(op.category)},
                     {"selectable", engine_.catalog().is_selectable(op.index)},
                     {"mutation", op.mutation}});
    }
    return ops;
  }

  json metrics(const std::string& id) const {
    const auto& h = engine_.history();
    const auto& info = engine_.session(id);
    std::vector<InteractionRecord> mine;
    for (auto idx : info.records) mine.push_back(h.record(idx));
    json m;
    m["session_id"] = id;
    m["global_success_rate"] = h.global_success_rate();
    m["adjudicated"] = h.adjudicated_count();
    json curve = json::array();
    for (const auto& p : success_curve(h.records()))
      curve.push_back({{"step", p.step}, {"rate", p.rate}, {"lo", p.lo}, {"hi", p.hi}});
    m["success_curve"] = curve;
    json ent = json::array();
    for (const auto& p : entropy_series(mine))
      ent.push_back({{"t", p.t}, {"entropy", p.entropy}, {"running_mean", p.running_mean}});
    m["entropy"] = ent;
    json usage = json::array();
    const auto counts = h.use_counts();
    for (std::size_t i = 0; i < engine_.catalog().selectable_count(); ++i)
      usage.push_back({{"op", i},
                       {"name", engine_.catalog().at(static_cast<int>(i)).name},
                       {"uses", i < counts.size() ? counts[i] : 0}});
    m["operator_usage"] = usage;
    return m;
  }

  void routes() {
    server_.Get("/catalog", [this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lk(engine_mu_);
      send_json(res, 200, catalog_json());
    });

    server_.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      json body = json::object();
      if (!req.body.empty()) {
        try {
          body = json::parse(req.body);
        } catch (const json::exception& e) {
          return send_error(res, 400, e.what());
        }
        if (!body.is_object()) return send_error(res, 400, "body must be a JSON object");
      }
      if (body.contains("autouser")) {
        try {
          AutouserConfig au;
          body["autouser"].get_to(au);
          au.validate();
        } catch (const std::exception& e) {
          return send_error(res, 422, e.what());
        }
      }
      std::lock_guard lk(engine_mu_);
      const auto id = engine_.open_session(UserSource::interactive);
      {
        std::lock_guard ek(events_mu_);
        events_[id];
      }
      send_json(res, 200, view(id));
    });

    server_.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lk(engine_mu_);
      const auto id = req.matches[1].str();
      if (!engine_.has_session(id)) return send_error(res, 404, "unknown session " + id);
      send_json(res, 200, view(id));
    });

    server_.Get(R"(/sessions/([^/]+)/metrics)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  std::lock_guard lk(engine_mu_);
                  const auto id = req.matches[1].str();
                  if (!engine_.has_session(id))
                    return send_error(res, 404, "unknown session " + id);
                  send_json(res, 200, metrics(id));
                });

    server_.Post(R"(/sessions/([^/]+)/feedback)",
                 [this](const httplib::Request& req, httplib::Response& res) {
                   handle_feedback(req.matches[1].str(), req.body, res);
                 });

    server_.Get(R"(/sessions/([^/]+)/events)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  const auto id = req.matches[1].str();
                  {
                    std::lock_guard lk(engine_mu_);
                    if (!engine_.has_session(id))
                      return send_error(res, 404, "unknown session " + id);
                  }
                  std::uint64_t after = 0;
                  if (req.has_header("Last-Event-ID")) {
                    try {
                      after = std::stoull(req.get_header_value("Last-Event-ID"));
                    } catch (...) {
                      return send_error(res, 400, "bad Last-Event-ID");
                    }
                  }
                  stream_events(id, after, res);
                });
  }

  void handle_feedback(const std::string& id, const std::string& body, httplib::Response& res) {
    Feedback f;
    try {
      f = feedback_from_json(json::parse(body));
    } catch (const std::exception& e) {
      return send_error(res, 400, e.what());
    }
    {
      std::lock_guard lk(engine_mu_);
      if (!engine_.has_session(id)) return send_error(res, 404, "unknown session " + id);
      if (!engine_.session(id).open) return send_error(res, 409, "session is closed");
    }
    {
      std::lock_guard ek(events_mu_);
      auto& s = events_[id];
      if (s.busy) return send_error(res, 409, "a request for this session is in flight");
      s.busy = true;
    }
    struct Release {
      SessionService* self;
      std::string id;
      ~Release() {
        std::lock_guard ek(self->events_mu_);
        self->events_[id].busy = false;
      }
    } release{this, id};

    std::lock_guard lk(engine_mu_);
    StepResult step;
    try {
      step = engine_.feedback(id, f);
    } catch (const SessionClosed& e) {
      return send_error(res, 409, e.what());
    } catch (const BadFeedback& e) {
      return send_error(res, 400, e.what());
    } catch (const IoError& e) {
      return send_error(res, 500, e.what());
    }
    json out;
    out["view"] = view(id);
    out["resolved_reward"] = step.resolved_reward ? json(*step.resolved_reward) : json();
    out["chosen"] = step.chosen ? json(*step.chosen) : json();
    out["fell_back"] = step.fell_back;
    out["trace"] = step.trace ? json(*step.trace) : json();
    if (f.kind == FeedbackKind::user_op && f.action == UserOpAction::list_disallowed)
      out["disallowed"] = step.disallowed;
    const auto& h = engine_.history();
    json ev{{"session_id", id},
            {"resolved_reward", out["resolved_reward"]},
            {"weights_l1", step.resolved_index ? json(h.record(*step.resolved_index).weights_l1)
                                               : json()}};
    if (step.closed) {
      push_event(id, "closed", ev);
    } else {
      ev["t"] = h.record(*step.state_index).t;
      ev["description"] = out["view"]["description"];
      ev["trace"] = out["trace"];
      ev["chosen"] = out["chosen"];
      push_event(id, "state", ev);
    }
    send_json(res, 200, out);
  }

  void stream_events(const std::string& id, std::uint64_t after, httplib::Response& res) {
    auto cursor = std::make_shared<std::uint64_t>(after);
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream", [this, id, cursor](std::size_t, httplib::DataSink& sink) {
          std::unique_lock lk(events_mu_);
          auto& s = events_[id];
          events_cv_.wait_for(lk, std::chrono::milliseconds(250), [&] {
            return stopping_.load() || s.events.size() > *cursor || s.closed;
          });
          std::string chunk;
          while (*cursor < s.events.size()) {
            const auto& e = s.events[*cursor];
            chunk += "id: " + std::to_string(e.id) + "\nevent: " + e.type +
                     "\ndata: " + e.data.dump() + "\n\n";
            ++*cursor;
          }
          const bool done = stopping_.load() || (s.closed && *cursor >= s.events.size());
          lk.unlock();
          if (!chunk.empty() && !sink.write(chunk.data(), chunk.size())) return false;
          if (done) sink.done();
          return true;
        });
  }

  Engine& engine_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::mutex engine_mu_;
  std::mutex events_mu_;
  std::condition_variable events_cv_;
  std::map<std::string, SessionEvents> events_;
  std::atomic<bool> stopping_{false};
};

}  // namespace steer
