#include "aegle/commands.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <fstream>

using namespace aegle;
using namespace aegle::testing;

namespace {

std::string quoted(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

std::string engine_args(const std::string& dataset = "cases3.jsonl") {
  return "--profile " + quoted(fixtures_dir() / "profile.json") + " --dataset " + quoted(fixtures_dir() / dataset);
}

}  // namespace

TEST_CASE("simulate then evaluate on the fixture corpus") {
  TempDir dir;
  const auto sim = run_cli("simulate " + engine_args() + " --out " + quoted(dir / "run") + " --parallelism 2");
  INFO(sim.output);
  REQUIRE(sim.exit_code == 0);
  const auto run = load_run(dir / "run");
  CHECK(run.transcripts.size() == 3);
  CHECK(run.config.at("max_turns") == 30);

  const auto ev = run_cli("evaluate --run " + quoted(dir / "run") + " --dataset " +
                          quoted(fixtures_dir() / "cases3.jsonl") + " --skip-judge");
  INFO(ev.output);
  REQUIRE(ev.exit_code == 0);
  CHECK(ev.output.find("accuracy 66.7% (2/3)") != std::string::npos);
  const auto report = Json::parse(read_file(dir / "run" / "evaluation" / "report.json"));
  CHECK(report.at("accuracy").at("correct") == 2);
  CHECK(std::filesystem::exists(dir / "run" / "evaluation" / "report.csv"));

  const auto judged = run_cli("evaluate --run " + quoted(dir / "run") + " --dataset " +
                              quoted(fixtures_dir() / "cases3.jsonl") + " --profile " +
                              quoted(fixtures_dir() / "profile.json") + " --out " + quoted(dir / "judged"));
  INFO(judged.output);
  REQUIRE(judged.exit_code == 0);
  const auto full = Json::parse(read_file(dir / "judged" / "report.json"));
  CHECK(full.at("metrics").contains("IDEA"));
  CHECK(full.at("metrics").contains("AB"));

  const auto rep = run_cli("report " + quoted(dir / "judged" / "report.json") + " " +
                           quoted(dir / "run" / "evaluation" / "report.json"));
  REQUIRE(rep.exit_code == 0);
  CHECK(rep.output.find("| Variant | IDEA | SOAP | READ | chrF++ |") != std::string::npos);
  CHECK(rep.output.find("Experts per Round") != std::string::npos);
}

TEST_CASE("runs are never overwritten") {
  TempDir dir;
  std::filesystem::create_directories(dir / "run");
  const auto r = run_cli("simulate " + engine_args() + " --out " + quoted(dir / "run"));
  CHECK(r.exit_code == kExitConfigError);
  CHECK(r.output.find("already exists") != std::string::npos);
  CHECK(std::filesystem::is_empty(dir / "run"));
}

TEST_CASE("configuration problems exit 2 before any session starts") {
  TempDir dir;
  {
    std::ofstream(dir / "bad.json") << R"({"default": {"type": "warp"}})";
  }
  const auto bad_profile = run_cli("simulate --profile " + quoted(dir / "bad.json") + " --dataset " +
                                   quoted(fixtures_dir() / "cases3.jsonl") + " --out " + quoted(dir / "run"));
  CHECK(bad_profile.exit_code == kExitConfigError);
  CHECK_FALSE(std::filesystem::exists(dir / "run"));
  CHECK(run_cli("simulate " + engine_args() + " --out " + quoted(dir / "run") + " --ablate nope").exit_code ==
        kExitConfigError);
  CHECK(run_cli("simulate --dataset x --out y").exit_code == kExitConfigError);
  CHECK(run_cli("frobnicate").exit_code == kExitConfigError);
  CHECK(run_cli("--help").exit_code == kExitOk);
}

TEST_CASE("a session error exits 1 and still exports the run") {
  TempDir dir;
  {
    std::ofstream(dir / "script.json") << R"({"entries": [{"role_tag": "orchestrator", "response": "{\"activated\": [\"neurology\"]}"}]})";
    std::ofstream(dir / "profile.json") << R"({"default": {"type": "scripted", "script": "script.json"}})";
  }
  const auto r = run_cli("simulate --profile " + quoted(dir / "profile.json") + " --dataset " +
                         quoted(fixtures_dir() / "cases3.jsonl") + " --out " + quoted(dir / "run"));
  CHECK(r.exit_code == kExitSessionError);
  const auto run = load_run(dir / "run");
  REQUIRE(run.transcripts.size() == 3);
  CHECK(run.transcripts[0].at("stop_reason") == "error");
}

TEST_CASE("scripted runs are byte-for-byte reproducible") {
  TempDir dir;
  REQUIRE(run_cli("simulate " + engine_args() + " --out " + quoted(dir / "a")).exit_code == 0);
  REQUIRE(run_cli("simulate " + engine_args() + " --out " + quoted(dir / "b") + " --parallelism 3").exit_code == 0);
  const auto a = tree_checksums(dir / "a");
  CHECK(a.size() == 3);
  CHECK(a == tree_checksums(dir / "b"));
}

TEST_CASE("ablate runs every variant and reports drops") {
  TempDir dir;
  const auto r = run_cli("ablate " + engine_args() + " --out " + quoted(dir / "abl") + " --max-turns 10");
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  for (const auto* v : {"full", "without-ss", "without-gi", "without-dt", "without-dr"})
    CHECK(std::filesystem::exists(dir / "abl" / v / "transcripts.jsonl"));
  const auto summary = Json::parse(read_file(dir / "abl" / "ablation.json"));
  CHECK(summary.dump().find("without-ss") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "abl" / "ablation.csv"));
}

TEST_CASE("consult runs one case, scripted or typed") {
  TempDir dir;
  const auto r = run_cli("consult " + engine_args() + " --case-id c03 --transcript " + quoted(dir / "t.json"));
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  const auto t = transcript_from_json(Json::parse(read_file(dir / "t.json")));
  CHECK(t.case_id == "c03");
  CHECK(t.stop_reason == StopReason::Completeness);

  {
    std::ofstream(dir / "replies.txt") << "Chest pain\n52\nIt started yesterday\n";
  }
  const auto typed = run_cli("consult " + engine_args() + " --case-id c03 --interactive --max-turns 3 < " +
                             quoted(dir / "replies.txt"));
  INFO(typed.output);
  CHECK(typed.exit_code == 0);
  CHECK(typed.output.find("preliminary diagnosis") != std::string::npos);
  CHECK(run_cli("consult " + engine_args() + " --case-id zz").exit_code == kExitConfigError);
}

TEST_CASE("report computes the judge reliability table") {
  TempDir dir;
  {
    std::ofstream(dir / "pairs.csv") << "judge,human\n1,2\n2,1\n3,4\n4,3\n5,7\n6,8\n7,6\n8,5\n";
  }
  const auto r = run_cli("report --correlate " + quoted(dir / "pairs.csv"));
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("| 8 | 0.738 | 0.0366 | 0.738 | 0.0366 |") != std::string::npos);
}
