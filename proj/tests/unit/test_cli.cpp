#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "../support/cli_pipeline.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path tmp(const std::string& name) { return fs::temp_directory_path() / ("sg_cli_" + name); }

json load(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("mock pipeline runs end to end and twice gives identical bytes") {
  const auto a = tmp("a"), b = tmp("b");
  REQUIRE(sgtest::run_mock_pipeline(a) == "");
  REQUIRE(sgtest::run_mock_pipeline(b) == "");
  const auto sa = sgtest::snapshot(a), sb = sgtest::snapshot(b);
  CHECK(sa.size() >= 30);
  REQUIRE(sa.size() == sb.size());
  for (const auto& [name, bytes] : sa) {
    INFO(name);
    REQUIRE(sb.count(name));
    // Paths differ between the two runs only if they leak into artifacts, which they must not.
    CHECK(bytes == sb.at(name));
  }

  // Reports carry the mode tag and provenance.
  {
    const auto full = load(a / "full.jsonl.report.json");
    const auto iso = load(a / "iso.jsonl.report.json");
    CHECK(full["mode"] == "Full");
    CHECK(iso["mode"] == "NoContext");
    CHECK(full["meta"]["command"] == "eval-ground");
    CHECK(full["meta"]["config_hash"] != iso["meta"]["config_hash"]);
    CHECK(load(a / "nav_modular.jsonl.report.json")["mode"] == "NoContext");
    const auto side = load(a / "c/scenes.jsonl.meta.json");
    CHECK(side["seed"] == 11);
    CHECK(side["command"] == "synth");
    CHECK(load(a / "ablate.json")["deltas"].is_object());
  }
  {
    const auto nav = load(a / "nav_oracle.jsonl.report.json");
    CHECK(nav["metrics"]["s_sr"].get<double>() == doctest::Approx(1.0));
    CHECK(nav["meta"]["seed"] == 7);
  }
}

TEST_CASE("bad invocations exit nonzero with a module-qualified error") {
  const auto dir = tmp("errors");
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto log = dir / "out.log";

  CHECK(sgtest::run_cli("frobnicate", log) == 64);
  CHECK(slurp(log).find("error: cli/UnknownCommand") != std::string::npos);
  CHECK(slurp(log).find("Usage:") != std::string::npos);

  fs::remove(log);
  CHECK(sgtest::run_cli("synth --no-such-flag --out " + dir.string(), log) == 64);
  CHECK(slurp(log).find("error: cli/BadFlag") != std::string::npos);

  fs::remove(log);
  CHECK(sgtest::run_cli("stats --tasks " + (dir / "missing.jsonl").string(), log) != 0);
  CHECK(slurp(log).find("error: ") == 0);

  fs::remove(log);
  {
    std::ofstream(dir / "rc.json") << R"({"eval-nav": {"flux": 2}})";
  }
  CHECK(sgtest::run_cli("--run-config " + (dir / "rc.json").string() + " eval-nav --scenes x --tasks y --out z", log) ==
        2);
  CHECK(slurp(log).find("cli/BadFlag") != std::string::npos);
}

TEST_CASE("run config values win over flags") {
  const auto dir = tmp("runcfg");
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream(dir / "rc.json") << R"({"seed": 5, "synth": {"n-scenes": 2}})";
  }
  REQUIRE(sgtest::run_cli("--run-config " + (dir / "rc.json").string() + " synth --seed 9 --n-scenes 3 --out " +
                              (dir / "c").string(),
                          dir / "out.log") == 0);
  CHECK(load(dir / "c/scenes.jsonl.meta.json")["seed"] == 5);
  std::ifstream in(dir / "c/scenes.jsonl");
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == 2);
}
