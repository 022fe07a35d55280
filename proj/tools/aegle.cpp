#include "aegle/commands.hpp"
#include "aegle/errors.hpp"
#include "aegle/service.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <iostream>

namespace {

void add_engine_options(CLI::App& cmd, aegle::EngineOptions& o) {
  cmd.add_option("--profile", o.profile, "Backend profile JSON")->required()->check(CLI::ExistingFile);
  cmd.add_option("--prompts", o.prompts_dir, "Prompt asset directory (default: shipped v1)")
      ->check(CLI::ExistingDirectory);
  cmd.add_option("--ablate", o.ablation, "full, without-ss, without-gi, without-dt or without-dr")
      ->capture_default_str();
  cmd.add_option("--max-turns", o.max_turns, "Inquiry budget per session")->capture_default_str()->check(
      CLI::PositiveNumber);
  cmd.add_option("--k-max", o.k_max, "Most specialists activated per round")->capture_default_str()->check(
      CLI::PositiveNumber);
  cmd.add_option("--seed", o.seed, "Recorded in the run config")->capture_default_str();
  cmd.add_option("--static-panel-size", o.static_panel_size, "Panel size when dynamic routing is ablated")
      ->capture_default_str();
  cmd.add_flag("!--no-backend-merge", o.backend_merge, "Resolve conflicts and synthesis with deterministic rules");
  cmd.add_flag("!--sequential-specialists", o.parallel_specialists, "Consult specialists one after another");
}

void add_dataset_options(CLI::App& cmd, aegle::DatasetOptions& o, bool required) {
  auto* opt = cmd.add_option("--dataset", o.dataset, "Case directory, JSON or JSONL file");
  if (required) opt->required();
  cmd.add_option("--adapter", o.adapter, "native or clinicalbench")->capture_default_str();
}

aegle::SessionConfig g_serve_config;
aegle::HttpService* g_service = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Virtual multi-disciplinary-team consultation engine"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

  aegle::SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Run every case against the standardized patient");
  add_engine_options(*simulate, sim.engine);
  add_dataset_options(*simulate, sim.data, true);
  simulate->add_option("--out", sim.out, "New run directory")->required();
  simulate->add_option("--name", sim.name, "Run name stored in the manifest")->capture_default_str();
  simulate->add_option("--parallelism", sim.parallelism, "Concurrent sessions")->capture_default_str();

  aegle::ConsultOptions con;
  auto* consult = app.add_subcommand("consult", "Run or play through a single consultation");
  add_engine_options(*consult, con.engine);
  add_dataset_options(*consult, con.data, false);
  consult->add_option("--case-id", con.case_id, "Case to run");
  consult->add_flag("--interactive", con.interactive, "Answer as the patient on stdin");
  consult->add_option("--transcript", con.transcript_out, "Write the transcript JSON here");

  aegle::EvaluateOptions ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score a run directory");
  evaluate->add_option("--run", ev.run, "Run directory")->required()->check(CLI::ExistingDirectory);
  add_dataset_options(*evaluate, ev.data, true);
  evaluate->add_option("--profile", ev.profile, "Backend profile binding the judge");
  evaluate->add_option("--prompts", ev.prompts_dir, "Prompt asset directory");
  evaluate->add_flag("--skip-judge", ev.skip_judge, "Only chrF++, turns, activation and matched accuracy");
  evaluate->add_option("--accuracy-mode", ev.accuracy_mode, "normalized_match or judge")->capture_default_str();
  evaluate->add_flag("--by-department", ev.group_by_department, "Add per-department groups");
  evaluate->add_option("--out", ev.out, "Report directory (default: <run>/evaluation)");

  aegle::AblateOptions ab;
  auto* ablate = app.add_subcommand("ablate", "Run and score every architectural variant");
  add_engine_options(*ablate, ab.engine);
  add_dataset_options(*ablate, ab.data, true);
  ablate->add_option("--out", ab.out, "New directory holding one run per variant")->required();
  ablate->add_option("--variants", ab.variants, "Variants to run")->capture_default_str();
  ablate->add_option("--parallelism", ab.parallelism, "Concurrent sessions")->capture_default_str();
  ablate->add_flag("!--judge", ab.skip_judge, "Also run the rubric judge");

  aegle::ReportOptions rep;
  auto* report = app.add_subcommand("report", "Print result tables from evaluation reports");
  report->add_option("reports", rep.reports, "report.json files")->check(CLI::ExistingFile);
  report->add_option("--correlate", rep.correlate, "Two-column judge,human score CSV")->check(CLI::ExistingFile);

  aegle::EngineOptions srv;
  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Serve live sessions over HTTP");
  add_engine_options(*serve, srv);
  serve->add_option("--host", host, "Bind address")->capture_default_str();
  serve->add_option("--port", port, "Port (0 picks a free one)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and --version report success; every usage error is a configuration error.
    const int code = app.exit(e);
    return code == 0 ? aegle::kExitOk : aegle::kExitConfigError;
  }

  auto logger = spdlog::stderr_color_mt("aegle");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*simulate) return aegle::cmd_simulate(sim, std::cout);
    if (*consult) return aegle::cmd_consult(con, std::cin, std::cout);
    if (*evaluate) return aegle::cmd_evaluate(ev, std::cout);
    if (*ablate) return aegle::cmd_ablate(ab, std::cout);
    if (*report) return aegle::cmd_report(rep, std::cout);
    if (*serve) {
      g_serve_config = aegle::build_session_config(srv);
      aegle::HttpService service(g_serve_config);
      g_service = &service;
      std::signal(SIGINT, [](int) {
        if (g_service != nullptr) g_service->stop();
      });
      service.run(host, port, [&](int bound) { std::cout << "listening on " << host << ":" << bound << std::endl; });
      g_service = nullptr;
      return aegle::kExitOk;
    }
  } catch (const aegle::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return aegle::kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return aegle::kExitConfigError;
  }
  return aegle::kExitOk;
}
