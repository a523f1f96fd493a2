#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "orbsde/cli.hpp"
#include "orbsde/report.hpp"
#include "orbsde/scenario.hpp"
#include "orbsde/switching.hpp"

using namespace orbsde;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kScenarios = ORBSDE_SCENARIO_DIR;

std::string scenario(const std::string& name) { return kScenarios + "/" + name + ".json"; }

json load_json(const std::string& path) {
  std::ifstream in(path);
  return json::parse(in);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "orbsde-test-XXXXXX").string();
    path = mkdtemp(tmpl.data());
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "orbsde");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// Path reported by the first violation of a failed parse, or "" if it parsed.
std::string parse_error(const json& doc) {
  try {
    parse_scenario(doc);
  } catch (const ValidationError& e) {
    REQUIRE_FALSE(e.report().violations.empty());
    return e.report().violations.front().message;
  }
  return "";
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

TEST_CASE("bundled scenarios parse and build") {
  for (const char* name : {"counterexample", "decoupled", "switch2x2"}) {
    CAPTURE(name);
    const auto s = load_scenario(scenario(name));
    CHECK(s.name == name);
    CHECK_NOTHROW(build(s));
  }
}

TEST_CASE("normalized scenario JSON round-trips") {
  for (const char* name : {"counterexample", "decoupled", "switch2x2"}) {
    CAPTURE(name);
    const json once = to_json(load_scenario(scenario(name)));
    const json twice = to_json(parse_scenario(once));
    CHECK(once == twice);
  }
}

TEST_CASE("scenario errors name the offending path") {
  const json base = load_json(scenario("switch2x2"));
  SUBCASE("format") {
    auto doc = base;
    doc["format"] = 2;
    CHECK(starts_with(parse_error(doc), "/format"));
  }
  SUBCASE("too few modes") {
    auto doc = base;
    doc["modes"] = 1;
    CHECK(starts_with(parse_error(doc), "/modes"));
  }
  SUBCASE("unknown tree type") {
    auto doc = base;
    doc["tree"]["type"] = "lattice";
    CHECK(starts_with(parse_error(doc), "/tree"));
  }
  SUBCASE("negative generator slope") {
    auto doc = base;
    doc["generators"][1] = {{"family", "linear"}, {"a", 0.0}, {"b", -1.0}};
    CHECK(starts_with(parse_error(doc), "/generators/1/b"));
  }
  SUBCASE("unknown generator family") {
    auto doc = base;
    doc["generators"][0]["family"] = "cubic";
    CHECK(starts_with(parse_error(doc), "/generators/0/family"));
  }
  SUBCASE("increasing generator table") {
    auto doc = base;
    doc["generators"][0] = {{"family", "table"}, {"y", {0.0, 1.0}}, {"values", {{0.0, 1.0}}}};
    CHECK(starts_with(parse_error(doc), "/generators/0/values"));
  }
  SUBCASE("cost matrix of the wrong size") {
    auto doc = base;
    doc["costs"] = {{0.0, 0.3}};
    CHECK(starts_with(parse_error(doc), "/costs"));
  }
  SUBCASE("missing upper barrier") {
    auto doc = base;
    doc.erase("upper");
    CHECK(parse_error(doc).find("upper") != std::string::npos);
  }
  SUBCASE("solver options") {
    auto doc = base;
    doc["solver"] = {{"tol", "small"}};
    CHECK(starts_with(parse_error(doc), "/solver/tol"));
  }
  SUBCASE("table of the wrong length fails at build time") {
    auto doc = base;
    doc["terminal"][0]["values"] = {1.0, 2.0};
    const auto s = parse_scenario(doc);
    CHECK_THROWS_AS(build(s), ValidationError);
  }
}

TEST_CASE("invalid JSON is a scenario error") {
  TempDir dir;
  std::ofstream(dir / "bad.json") << "{\"format\": 1,";
  CHECK_THROWS_AS(load_scenario(dir / "bad.json"), ValidationError);
  const auto r = run({"solve", dir / "bad.json", "--out", dir / "out"});
  CHECK(r.code == exit_status::validation);
  CHECK(json::parse(r.out)["exit_code"] == 2);
}

TEST_CASE("solution CSV round-trips exactly") {
  TempDir dir;
  const auto r = run({"solve", scenario("switch2x2"), "--out", dir / "out"});
  REQUIRE(r.code == exit_status::ok);
  const std::string text = slurp(dir / "out/solution.csv");
  CHECK(starts_with(text, std::string(kSolutionHeader) + "\n"));
  CHECK(text.find('\r') == std::string::npos);

  const auto built = build(load_scenario(scenario("switch2x2")));
  std::istringstream in(text);
  const auto sol = read_solution_csv(in, built.tree, built.problem.modes);
  std::ostringstream again;
  write_solution_csv(again, built.tree, sol);
  CHECK(again.str() == text);

  std::istringstream truncated(text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(read_solution_csv(truncated, built.tree, built.problem.modes), ValidationError);
}

TEST_CASE("repeat runs are byte-identical") {
  TempDir dir;
  for (const char* name : {"decoupled", "switch2x2"}) {
    CAPTURE(name);
    REQUIRE(run({"solve", scenario(name), "--out", dir / "a"}).code == 0);
    REQUIRE(run({"solve", scenario(name), "--out", dir / "b"}).code == 0);
    CHECK(slurp(dir / "a/solution.csv") == slurp(dir / "b/solution.csv"));
  }
}

TEST_CASE("counterexample is rejected at every node before the horizon") {
  TempDir dir;
  const auto r = run({"solve", scenario("counterexample"), "--out", dir / "out"});
  CHECK(r.code == exit_status::validation);
  const json diag = json::parse(r.out);
  CHECK(diag["exit_code"] == 2);
  CHECK(diag == load_json(dir / "out/diagnostic.json"));
  std::set<std::size_t> nodes;
  for (const auto& v : diag["violations"]) {
    if (v["code"] == "H(U) > U") nodes.insert(v["node"].get<std::size_t>());
  }
  CHECK(nodes == std::set<std::size_t>{0, 1, 2, 3});
  CHECK(fs::exists(dir / "out/summary.txt"));
  CHECK_FALSE(fs::exists(dir / "out/solution.csv"));
}

TEST_CASE("bundled scenarios verify") {
  TempDir dir;
  for (const char* name : {"decoupled", "switch2x2"}) {
    CAPTURE(name);
    const auto r = run({"verify", scenario(name), "--out", dir / name});
    CHECK(r.code == exit_status::ok);
    CHECK(fs::exists(dir / (std::string(name) + "/solution.csv")));
    CHECK(fs::exists(dir / (std::string(name) + "/summary.txt")));
  }
}

TEST_CASE("decoupled scenario matches per-mode upper reflection") {
  const auto built = build(load_scenario(scenario("decoupled")));
  const auto& tree = built.tree;
  const auto& p = built.problem;
  const auto sol = picard_solve(tree, p);
  for (int j = 0; j < p.modes; ++j) {
    const auto jj = static_cast<std::size_t>(j);
    ScalarProblem sp;
    sp.terminal = p.terminal[jj];
    sp.upper = p.upper[jj];
    sp.drift = p.drift[jj];
    sp.generator = [g = p.generators[jj], jj, d = p.modes](GeneratorPoint at, double y) {
      std::vector<double> v(static_cast<std::size_t>(d), 0.0);
      v[jj] = y;
      return g(at, v);
    };
    CHECK(std::abs(solve_upper(tree, sp).y[tree.root()] - sol.modes[jj].y[tree.root()]) <= 1e-12);
  }
}

TEST_CASE("switch2x2 system value equals brute force") {
  const auto built = build(load_scenario(scenario("switch2x2")));
  const auto sol = picard_solve(built.tree, built.problem);
  for (int j = 0; j < 2; ++j) {
    const double y = sol.modes[static_cast<std::size_t>(j)].y[built.tree.root()];
    CHECK(std::abs(brute_force_value(built.tree, built.problem, built.tree.root(), j).value - y) <= 1e-8);
  }
}

TEST_CASE("a written solution verifies and a tampered one does not") {
  TempDir dir;
  REQUIRE(run({"solve", scenario("switch2x2"), "--out", dir / "solved"}).code == 0);
  const auto ok = run({"verify", scenario("switch2x2"), "--solution", dir / "solved/solution.csv", "--out",
                       dir / "checked"});
  CHECK(ok.code == exit_status::ok);

  const auto built = build(load_scenario(scenario("switch2x2")));
  std::ifstream in(dir / "solved/solution.csv");
  auto sol = read_solution_csv(in, built.tree, built.problem.modes);
  sol.modes[0].y[built.tree.root()] += 0.05;
  {
    std::ofstream bad(dir / "bad.csv");
    write_solution_csv(bad, built.tree, sol);
  }
  const auto r = run({"verify", scenario("switch2x2"), "--solution", dir / "bad.csv", "--out", dir / "bad"});
  CHECK(r.code == exit_status::oracle);
  CHECK(json::parse(r.out)["exit_code"] == 4);
}

TEST_CASE("other commands write their tables") {
  TempDir dir;
  CHECK(run({"sweep-penalization", scenario("switch2x2"), "--out", dir / "pen"}).code == 0);
  CHECK(fs::exists(dir / "pen/penalization.csv"));
  CHECK(run({"brute-force", scenario("switch2x2"), "--out", dir / "bf"}).code == 0);
  CHECK(fs::exists(dir / "bf/brute_force.csv"));
}

TEST_CASE("usage and I/O errors exit with 1") {
  TempDir dir;
  SUBCASE("no arguments") { CHECK(run({}).code == exit_status::io); }
  SUBCASE("unknown command") { CHECK(run({"optimize", scenario("decoupled")}).code == exit_status::io); }
  SUBCASE("bad option value") {
    CHECK(run({"solve", scenario("decoupled"), "--tol", "x", "--out", dir / "o"}).code == exit_status::io);
  }
  SUBCASE("--solution outside verify") {
    CHECK(run({"solve", scenario("decoupled"), "--solution", "x.csv", "--out", dir / "o"}).code ==
          exit_status::io);
  }
  SUBCASE("missing scenario") {
    const auto r = run({"solve", dir / "absent.json", "--out", dir / "o"});
    CHECK(r.code == exit_status::io);
    CHECK(json::parse(r.out)["exit_code"] == 1);
  }
  SUBCASE("out path is a file") {
    std::ofstream(dir / "blocker") << "x";
    CHECK(run({"solve", scenario("decoupled"), "--out", dir / "blocker"}).code == exit_status::io);
  }
  SUBCASE("missing solution file") {
    CHECK(run({"verify", scenario("decoupled"), "--solution", dir / "none.csv", "--out", dir / "o"}).code ==
          exit_status::io);
  }
}

TEST_CASE("sweep cap exhaustion exits with 3") {
  TempDir dir;
  const auto r = run({"solve", scenario("switch2x2"), "--max-sweeps", "1", "--out", dir / "o"});
  CHECK(r.code == exit_status::convergence);
  CHECK(json::parse(r.out)["exit_code"] == 3);
}
