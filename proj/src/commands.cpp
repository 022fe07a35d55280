#include "aegle/commands.hpp"

#include "aegle/errors.hpp"

#include <spdlog/spdlog.h>

#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace aegle {

SessionConfig build_session_config(const EngineOptions& options, BackendBindings* bindings_out) {
  if (options.profile.empty()) {
    throw ValidationError("a backend profile is required (--profile)");
  }
  auto profile = load_backend_profile(options.profile);
  SessionConfig config;
  config.max_turns = options.max_turns;
  config.k_max = options.k_max;
  config.seed = options.seed;
  config.ablations = ablation_from_name(options.ablation);
  config.backend_merge = options.backend_merge;
  config.parallel_specialists = options.parallel_specialists;
  config.static_panel_size = options.static_panel_size;
  config.backends = profile.bindings;
  if (profile.sampling) config.sampling = *profile.sampling;
  const auto dir = options.prompts_dir.empty() ? default_assets_dir() / "prompts" / "v1" : options.prompts_dir;
  config.prompts = std::make_shared<const PromptLibrary>(PromptLibrary::load(dir));
  config.validate();
  if (bindings_out != nullptr) *bindings_out = profile.bindings;
  return config;
}

std::vector<CaseRecord> load_dataset(const DatasetOptions& options) {
  if (options.dataset.empty()) throw ValidationError("a dataset is required (--dataset)");
  auto loaded = load_cases(options.dataset, case_adapter_from_string(options.adapter));
  for (const auto& w : loaded.warnings) spdlog::warn("{}", w);
  if (!loaded.errors.empty()) {
    std::string msg = std::to_string(loaded.errors.size()) + " malformed case record(s):";
    for (const auto& e : loaded.errors) msg += "\n  " + e.source + ": " + e.message;
    throw ValidationError(msg);
  }
  if (loaded.cases.empty()) throw ValidationError("dataset " + options.dataset.string() + " holds no cases");
  return std::move(loaded.cases);
}

namespace {

int count_errors(const std::vector<Transcript>& transcripts) {
  return static_cast<int>(std::count_if(transcripts.begin(), transcripts.end(),
                                        [](const Transcript& t) { return t.stop_reason == StopReason::Error; }));
}

std::filesystem::path run_simulation(const SessionConfig& config, const std::vector<CaseRecord>& cases,
                                     const std::filesystem::path& out, const std::string& name,
                                     std::size_t parallelism, std::vector<Transcript>& transcripts) {
  transcripts = run_batch(cases, config, parallelism);
  RunExport run;
  run.name = name;
  run.config = config.to_json();
  for (const auto& t : transcripts) run.transcripts.push_back(to_json(t));
  export_run(run, out);
  return out;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

int cmd_simulate(const SimulateOptions& options, std::ostream& log) {
  const auto config = build_session_config(options.engine);
  const auto cases = load_dataset(options.data);
  if (options.out.empty()) throw ValidationError("an output directory is required (--out)");
  if (std::filesystem::exists(options.out)) {
    throw RunExistsError("output directory " + options.out.string() + " already exists");
  }
  std::vector<Transcript> transcripts;
  run_simulation(config, cases, options.out, options.name, options.parallelism, transcripts);
  const int errors = count_errors(transcripts);
  log << "simulated " << transcripts.size() << " case(s) [" << ablation_name(config.ablations) << "] into "
      << options.out.string() << "; " << errors << " session error(s)\n";
  for (const auto& t : transcripts) {
    if (t.stop_reason == StopReason::Error) log << "  " << t.case_id << ": " << t.error << "\n";
  }
  return errors > 0 ? kExitSessionError : kExitOk;
}

int cmd_consult(const ConsultOptions& options, std::istream& in, std::ostream& out) {
  const auto config = build_session_config(options.engine);
  Transcript transcript;
  if (options.interactive) {
    std::string department = "gastroenterology";
    std::string case_id = options.case_id.empty() ? "interactive" : options.case_id;
    if (!options.data.dataset.empty() && !options.case_id.empty()) {
      for (const auto& c : load_dataset(options.data)) {
        if (c.case_id == options.case_id) department = c.department;
      }
    }
    Session session(case_id, case_id, department, config);
    session.start();
    std::string line;
    while (session.awaiting_patient()) {
      out << "Doctor: " << session.last_question() << "\nPatient> " << std::flush;
      if (!std::getline(in, line)) break;
      if (trim(line).empty()) continue;
      session.submit_patient_text(line);
    }
    if (session.ready_for_synthesis()) session.run_diagnostic_synthesis();
    transcript = session.transcript();
    if (!transcript.turns.empty() && transcript.turns.back().kind == kTurnClosing) {
      out << "Doctor: " << transcript.turns.back().text << "\n";
    }
  } else {
    if (options.case_id.empty()) throw ValidationError("--case-id is required without --interactive");
    const auto cases = load_dataset(options.data);
    const auto it = std::find_if(cases.begin(), cases.end(),
                                 [&](const CaseRecord& c) { return c.case_id == options.case_id; });
    if (it == cases.end()) throw ValidationError("case '" + options.case_id + "' not found in the dataset");
    transcript = run_consultation(*it, config);
    out << render_history(transcript.turns) << "\n";
  }
  out << "\n" << transcript.final_ipn;
  out << "\nstop_reason: " << to_string(transcript.stop_reason) << "\n";
  if (!transcript.error.empty()) out << "error: " << transcript.error << "\n";
  if (!options.transcript_out.empty()) {
    write_file(options.transcript_out, to_json(transcript).dump(2) + "\n");
  }
  return transcript.stop_reason == StopReason::Error ? kExitSessionError : kExitOk;
}

EvaluationReport evaluate_run_dir(const EvaluateOptions& options) {
  const auto run = load_run(options.run);
  const auto cases = load_dataset(options.data);
  std::vector<Transcript> transcripts;
  transcripts.reserve(run.transcripts.size());
  for (const auto& doc : run.transcripts) transcripts.push_back(transcript_from_json(doc));

  EvaluationOptions eval;
  eval.skip_judge = options.skip_judge;
  eval.accuracy_mode = accuracy_mode_from_string(options.accuracy_mode);
  eval.group_by_department = options.group_by_department;
  if (!options.skip_judge || eval.accuracy_mode == AccuracyMode::Judge) {
    if (options.profile.empty()) throw ValidationError("a judge profile is required unless --skip-judge");
    const auto profile = load_backend_profile(options.profile);
    if (!profile.bindings.judge) throw ValidationError("the profile binds no judge backend");
    eval.judge.backend = profile.bindings.judge;
    if (profile.sampling) {
      eval.judge.temperature = profile.sampling->judge;
      eval.judge.max_tokens = profile.sampling->max_tokens;
    }
    const auto dir = options.prompts_dir.empty() ? default_assets_dir() / "prompts" / "v1" : options.prompts_dir;
    eval.judge.prompts = std::make_shared<const PromptLibrary>(PromptLibrary::load(dir));
  }
  if (eval.accuracy_mode == AccuracyMode::Judge && options.skip_judge) {
    throw ValidationError("--accuracy-mode judge conflicts with --skip-judge");
  }
  return evaluate_run(transcripts, cases, eval);
}

int cmd_evaluate(const EvaluateOptions& options, std::ostream& log) {
  const auto report = evaluate_run_dir(options);
  const auto out = options.out.empty() ? options.run / "evaluation" : options.out;
  std::filesystem::create_directories(out);
  write_file(out / "report.json", to_json(report).dump(2) + "\n");
  write_file(out / "report.csv", to_csv(report));
  log << "evaluated " << report.cases.size() << " case(s); accuracy " << fixed(report.accuracy.percent, 1) << "% ("
      << report.accuracy.correct << "/" << report.accuracy.evaluated << ")";
  for (const auto& [name, metric] : report.metrics) {
    log << "; " << name << " " << fixed(metric.mean, 2);
  }
  log << "\nreport: " << (out / "report.json").string() << "\n";
  return kExitOk;
}

int cmd_ablate(const AblateOptions& options, std::ostream& log) {
  if (options.out.empty()) throw ValidationError("an output directory is required (--out)");
  if (std::filesystem::exists(options.out)) {
    throw RunExistsError("output directory " + options.out.string() + " already exists");
  }
  if (options.variants.empty()) throw ValidationError("no ablation variants requested");
  // Resolve every variant before running any, so a typo fails fast.
  std::vector<SessionConfig> configs;
  for (const auto& v : options.variants) {
    auto engine = options.engine;
    engine.ablation = v;
    configs.push_back(build_session_config(engine));
  }
  const auto cases = load_dataset(options.data);
  std::filesystem::create_directories(options.out);

  Json variants = Json::array();
  std::map<std::string, double> full_means;
  int errors = 0;
  std::ostringstream csv;
  csv << "variant,metric,mean,std,drop_vs_full\n";
  for (std::size_t i = 0; i < options.variants.size(); ++i) {
    const auto name = ablation_name(configs[i].ablations);
    const auto dir = options.out / name;
    std::vector<Transcript> transcripts;
    run_simulation(configs[i], cases, dir, name, options.parallelism, transcripts);
    errors += count_errors(transcripts);

    EvaluateOptions eval;
    eval.run = dir;
    eval.data = options.data;
    eval.profile = options.engine.profile;
    eval.prompts_dir = options.engine.prompts_dir;
    eval.skip_judge = options.skip_judge;
    const auto report = evaluate_run_dir(eval);
    std::filesystem::create_directories(dir / "evaluation");
    write_file(dir / "evaluation" / "report.json", to_json(report).dump(2) + "\n");
    write_file(dir / "evaluation" / "report.csv", to_csv(report));

    std::map<std::string, double> means;
    for (const auto& [metric, r] : report.metrics) means[metric] = r.mean;
    means["Acc. (%)"] = report.accuracy.percent;
    if (name == "full") full_means = means;

    Json metrics = Json::object();
    for (const auto& [metric, mean] : means) {
      Json entry{{"mean", mean}};
      const auto it = report.metrics.find(metric);
      if (it != report.metrics.end()) entry["std"] = it->second.std;
      const auto base = full_means.find(metric);
      entry["drop_vs_full"] = base == full_means.end() ? Json(nullptr) : Json(base->second - mean);
      metrics[metric] = entry;
      csv << name << "," << metric << "," << fixed(mean, 4) << ","
          << (it != report.metrics.end() ? fixed(it->second.std, 4) : "") << ","
          << (base == full_means.end() ? "" : fixed(base->second - mean, 4)) << "\n";
    }
    variants.push_back(Json{{"variant", name},
                            {"metrics", std::move(metrics)},
                            {"activation", report.activation ? to_json(*report.activation) : Json(nullptr)},
                            {"session_errors", count_errors(transcripts)}});
    log << name << ": " << transcripts.size() << " case(s), mean turns "
        << (report.metrics.count("Turns") ? fixed(report.metrics.at("Turns").mean, 2) : "n/a") << "\n";
  }
  write_file(options.out / "ablation.json", Json{{"variants", std::move(variants)}}.dump(2) + "\n");
  write_file(options.out / "ablation.csv", csv.str());
  return errors > 0 ? kExitSessionError : kExitOk;
}

int cmd_report(const ReportOptions& options, std::ostream& out) {
  if (options.reports.empty() && options.correlate.empty()) {
    throw ValidationError("nothing to report: pass report files and/or --correlate");
  }
  std::vector<std::pair<std::string, Json>> rows;
  for (const auto& path : options.reports) {
    Json doc = Json::parse(read_file(path));
    if (!doc.contains("summary")) throw ValidationError(path.string() + " is not an evaluation report");
    rows.emplace_back(doc.value("variant", path.parent_path().filename().string()), std::move(doc));
  }
  const auto table = [&](const std::string& title, const std::vector<std::string>& cols) {
    std::vector<std::string> present;
    for (const auto& c : cols) {
      const bool any = std::any_of(rows.begin(), rows.end(), [&](const auto& r) {
        return r.second.at("summary").at("values").contains(c);
      });
      if (any) present.push_back(c);
    }
    if (present.empty()) return;
    out << "### " << title << "\n\n| Variant |";
    for (const auto& c : present) out << " " << c << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < present.size(); ++i) out << "---|";
    out << "\n";
    for (const auto& [name, doc] : rows) {
      out << "| " << name << " |";
      const auto& values = doc.at("summary").at("values");
      for (const auto& c : present) {
        out << " " << (values.contains(c) ? values.at(c).at("display").get<std::string>() : "-") << " |";
      }
      out << "\n";
    }
    out << "\n";
  };
  if (!rows.empty()) {
    table("Documentation quality", {"IDEA", "SOAP", "READ", "chrF++"});
    table("Consultation capability", {"CA", "QT", "VER", "PJ", "SP", "AB", "Turns"});
    table("Diagnosis accuracy and activation", {"Acc. (%)", "Experts per Case", "Experts per Round"});
  }
  if (!options.correlate.empty()) {
    const auto [judge, human] = read_score_pairs_csv(read_file(options.correlate));
    const auto r = correlations(judge, human);
    out << "### Judge reliability\n\n| n | Pearson r | p | Spearman rho | p |\n|---|---|---|---|---|\n| " << r.n
        << " | " << fixed(r.pearson_r, 3) << " | " << fixed(r.pearson_p, 4) << " | " << fixed(r.spearman_rho, 3)
        << " | " << fixed(r.spearman_p, 4) << " |\n";
  }
  return kExitOk;
}

}  // namespace aegle
