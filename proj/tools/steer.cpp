// steer: command-line front end for the operator-selection engine.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "steer/steer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

steer::EngineConfig load_engine_config(const std::string& path) {
  steer::EngineConfig cfg;
  if (path.empty()) return cfg;
  try {
    steer::read_json_file(path).get_to(cfg);
  } catch (const steer::json::exception& e) {
    throw steer::ConfigError(path + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw steer::ConfigError(path + ": " + e.what());
  }
  return cfg;
}

void print_summary(const steer::BootstrapSummary& s) {
  steer::json j{{"sessions", s.sessions},
                {"timesteps", s.timesteps},
                {"adjudicated", s.adjudicated},
                {"successes", s.successes},
                {"global_success", s.global_success},
                {"trailing_success", s.trailing_success},
                {"seconds", s.seconds},
                {"terminations", s.terminations}};
  std::cout << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Operator-selection learning engine"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "Engine config JSON (any subset of keys)");

  auto* boot = app.add_subcommand("bootstrap", "Run autouser sessions and log them");
  std::size_t sessions = 10;
  std::uint64_t seed = 0;
  int max_adjustments = 200;
  std::string out_dir;
  std::string policy = "learned";
  bool log_weights = false;
  bool local_counts = false;
  bool flip = false;
  boot->add_option("--sessions", sessions, "Number of sessions")->check(CLI::PositiveNumber);
  boot->add_option("--seed", seed, "Master seed");
  boot->add_option("--max-adjustments", max_adjustments, "Adjustment cap per session")
      ->check(CLI::PositiveNumber);
  boot->add_option("--out", out_dir, "Log directory")->required();
  boot->add_option("--policy", policy, "learned or blank_only")
      ->check(CLI::IsMember({"learned", "blank_only"}));
  boot->add_flag("--log-weights", log_weights, "Write the full weight vector on every record");
  boot->add_flag("--per-session-counts", local_counts, "Use per-session operator counts in UCB");
  boot->add_flag("--sign-flip", flip, "Invert the autouser's criterion sign convention");

  auto* replay = app.add_subcommand("replay", "Rebuild history statistics from a log");
  std::string replay_path;
  replay->add_option("--log", replay_path, "Session JSONL file or run directory")->required();

  auto* report = app.add_subcommand("report", "Compute the metrics battery from a run");
  std::string report_dir, format = "json", report_out;
  std::size_t window = 100;
  report->add_option("--log", report_dir, "Run directory or session file")->required();
  report->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  report->add_option("--out", report_out, "Output directory (csv) or file (json)");
  report->add_option("--window", window, "Trailing window for the success curve")
      ->check(CLI::PositiveNumber);

  auto* exportc = app.add_subcommand("export", "Flatten records to CSV keyed by (session, t)");
  std::string export_log, export_session, export_request;
  std::optional<int> export_op;
  exportc->add_option("--log", export_log, "Run directory or session file")->required();
  exportc->add_option("--session", export_session, "Only this session");
  exportc->add_option("--operator", export_op, "Only records answered with this operator");
  exportc->add_option("--request", export_request, "Only this request kind (m, l, b, u)");

  auto* serve = app.add_subcommand("serve", "Serve the session HTTP API");
  int port = 8080;
  std::string host = "127.0.0.1", serve_log;
  std::uint64_t serve_seed = 0;
  serve->add_option("--port", port, "TCP port")->check(CLI::Range(1, 65535));
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--seed", serve_seed, "Master seed");
  serve->add_option("--out", serve_log, "Log directory for interactive sessions");

  auto* catalog = app.add_subcommand("catalog", "Print the operator catalog as JSON");
  auto* selectors = app.add_subcommand("selectors", "Print the selector census as JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = load_engine_config(config_path);
    if (*boot) {
      cfg.seed = seed;
      cfg.autouser.max_adjustments = max_adjustments;
      cfg.log_dir = out_dir;
      cfg.policy = policy == "learned" ? steer::Policy::learned : steer::Policy::blank_only;
      cfg.log_weights = log_weights;
      cfg.global_use_counts = !local_counts;
      if (flip) cfg.autouser.sign_convention_flip = true;
      steer::Engine engine(cfg);
      print_summary(engine.run_bootstrap(sessions));
    } else if (*replay) {
      const auto log = steer::load_run(replay_path);
      steer::HistoryConfig hc;
      if (log.engine_state) {
        steer::EngineConfig ec;
        (*log.engine_state)["config"].get_to(ec);
        hc.reservoir_capacity = ec.reservoir_capacity;
        hc.seed = steer::mix_seed({ec.seed, steer::fnv1a("history")});
      }
      const auto h = steer::replay_history(log.records, hc);
      steer::json j;
      j["records"] = h.size();
      j["adjudicated"] = h.adjudicated_count();
      j["global_success"] = h.global_success_rate();
      j["use_counts"] = h.use_counts();
      std::vector<double> means;
      for (std::size_t f = 0; f < steer::kNumFeatures; ++f) means.push_back(h.moments(f).mean());
      j["feature_means"] = means;
      if (log.engine_state && log.engine_state->contains("use_counts"))
        j["use_counts_match"] = (*log.engine_state)["use_counts"] == j["use_counts"];
      std::cout << j.dump(2) << '\n';
    } else if (*report) {
      const auto rep = steer::build_report(steer::load_run(report_dir), window);
      if (format == "json") {
        const auto text = steer::report_json(rep).dump(2);
        if (report_out.empty()) {
          std::cout << text << '\n';
        } else {
          std::ofstream f(report_out);
          if (!f) throw steer::IoError("cannot write " + report_out);
          f << text << '\n';
        }
      } else {
        const auto dir = report_out.empty()
                             ? std::filesystem::path(report_dir) / "report"
                             : std::filesystem::path(report_out);
        steer::write_report_csv(rep, dir);
        std::cout << dir.string() << '\n';
      }
    } else if (*exportc) {
      const auto log = steer::load_run(export_log);
      std::cout << "session_id,t,seq,request,chosen,fell_back,reward,unique_named,box_ranges,"
                   "conjuncts,vol_named_total,vol_box_total,fingerprint\n";
      for (const auto& r : log.records) {
        if (!export_session.empty() && r.session_id != export_session) continue;
        if (export_op && r.chosen != export_op) continue;
        const std::string req = r.request ? std::string(steer::to_string(r.request->kind)) : "";
        if (!export_request.empty() && req != export_request) continue;
        const auto& s = r.state.stats;
        std::cout << r.session_id << ',' << r.t << ',' << r.seq << ',' << req << ','
                  << (r.chosen ? std::to_string(*r.chosen) : "") << ',' << r.fell_back << ','
                  << (r.reward ? std::to_string(*r.reward) : "") << ',' << s.unique_named << ','
                  << s.box_ranges << ',' << s.conjuncts << ',' << s.vol_named_total << ','
                  << s.vol_box_total << ',' << s.fingerprint << '\n';
      }
    } else if (*serve) {
      cfg.seed = serve_seed;
      if (!serve_log.empty()) cfg.log_dir = serve_log;
      steer::Engine engine(cfg);
      steer::SessionService service(engine);
      std::cerr << "listening on " << host << ':' << port << '\n';
      service.serve_forever(host, port);
    } else if (*catalog) {
      const auto c = steer::build_catalog(cfg.env);
      steer::json ops = steer::json::array();
      for (std::size_t i = 0; i < c.size(); ++i) {
        const auto& op = c.at(static_cast<int>(i));
        ops.push_back({{"index", op.index},
                       {"name", op.name},
                       {"category", steer::to_string(op.category)},
                       {"selectable", c.is_selectable(op.index)},
                       {"mutation", op.mutation}});
      }
      std::cout << ops.dump(2) << '\n';
    } else if (*selectors) {
      const auto specs = steer::build_selectors(steer::build_catalog(cfg.env), cfg.selectors);
      std::cout << steer::json(specs).dump(2) << '\n';
    }
  } catch (const steer::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const steer::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitOk;
}
