#include "orbsde/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "orbsde/report.hpp"
#include "orbsde/scenario.hpp"
#include "orbsde/switching.hpp"

namespace orbsde {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kMinimalityTol = 1e-10;
constexpr double kSnellTol = 1e-9;
constexpr double kValueTol = 1e-8;
constexpr double kMartingaleTol = 1e-12;
constexpr int kDominanceSamples = 256;

struct Options {
  std::string command;
  std::string scenario;
  std::string out_dir = "out";
  std::string solution;
  std::optional<double> tol;
  std::optional<int> max_sweeps;
  std::uint64_t seed = 0;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Check {
  std::string name;
  std::string status;  // pass | fail | skip
  double value = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

std::string mode_label(std::size_t j) { return std::to_string(j + 1); }

std::string short_number(double x) {
  std::ostringstream s;
  s << x;
  return s.str();
}

json violation_json(const Violation& v, const EventTree* tree) {
  json out{{"code", v.code}, {"message", v.message}};
  if (v.node) out["node"] = *v.node;
  if (v.time) {
    out["time_index"] = *v.time;
    if (tree) out["time"] = tree->dt() * *v.time;
  }
  if (v.mode) out["mode"] = *v.mode + 1;
  return out;
}

class Session {
 public:
  Session(Options opts, std::ostream& out, std::ostream& err) : opts_(std::move(opts)), out_(out), err_(err) {}

  int run() {
    try {
      return dispatch();
    } catch (const ValidationError& e) {
      write_summary_text("validation failed\n" + e.report().summary(1000) + "\n");
      return fail(exit_status::validation, "validation", e.what(), e.report().violations);
    } catch (const ConvergenceError& e) {
      std::vector<Violation> where;
      if (e.node()) {
        where.push_back({"convergence", e.what(), e.node(),
                         built_ ? std::optional<int>(built_->tree.time(*e.node())) : std::nullopt, e.mode()});
      }
      json extra{{"sweep", e.sweep()}, {"delta", e.delta()},
                 {"reason", e.kind() == ConvergenceError::Kind::NonMonotoneSweep ? "non-monotone sweep"
                                                                                   : "max sweeps exhausted"}};
      return fail(exit_status::convergence, "convergence", e.what(), where, extra);
    } catch (const ImplicitStepError& e) {
      std::vector<Violation> where;
      if (e.node()) {
        where.push_back({"implicit-step", e.what(), e.node(),
                         built_ ? std::optional<int>(built_->tree.time(*e.node())) : std::nullopt, {}});
      }
      return fail(exit_status::convergence, "implicit-step", e.what(), where);
    } catch (const EnumerationCapError& e) {
      return fail(exit_status::validation, "enumeration-cap", e.what(), {});
    } catch (const PreconditionError& e) {
      return fail(exit_status::validation, "precondition", e.what(), {});
    } catch (const IoError& e) {
      return fail(exit_status::io, "io", e.what(), {});
    } catch (const std::exception& e) {
      return fail(exit_status::io, "error", e.what(), {});
    }
  }

 private:
  int dispatch() {
    try {
      scenario_ = load_scenario(opts_.scenario);
    } catch (const ValidationError&) {
      throw;
    } catch (const std::runtime_error& e) {
      throw IoError(e.what());
    }
    if (opts_.tol) scenario_.solver.tol = *opts_.tol;
    if (opts_.max_sweeps) scenario_.solver.max_sweeps = *opts_.max_sweeps;
    built_ = build(scenario_);

    if (opts_.command == "brute-force") return brute_force();

    auto report = validate_problem(built_->tree, built_->problem);
    if (!report.ok()) throw ValidationError(std::move(report));
    notes_ = report.notes;

    if (opts_.command == "solve") return solve();
    if (opts_.command == "verify") return verify();
    return sweep_penalization();
  }

  const EventTree& tree() const { return built_->tree; }
  const ObliqueProblem& problem() const { return built_->problem; }

  SystemSolution picard() {
    PicardOptions po;
    po.tol = scenario_.solver.tol;
    po.max_sweeps = scenario_.solver.max_sweeps;
    po.validate = false;
    return picard_solve(tree(), problem(), po);
  }

  void ensure_out_dir() {
    std::error_code ec;
    fs::create_directories(opts_.out_dir, ec);
    if (ec || !fs::is_directory(opts_.out_dir)) {
      throw IoError("cannot create output directory " + opts_.out_dir + ": " + ec.message());
    }
  }

  void write_file(const std::string& name, const std::string& content) {
    ensure_out_dir();
    const fs::path path = fs::path(opts_.out_dir) / name;
    std::ofstream f(path, std::ios::binary);
    f << content;
    if (!f) throw IoError("cannot write " + path.string());
  }

  void write_summary_text(const std::string& body) {
    try {
      write_file("summary.txt", header() + body);
    } catch (const IoError&) {
    }
  }

  std::string header() const {
    std::ostringstream s;
    s << "command: " << opts_.command << "\nscenario: " << opts_.scenario;
    if (!scenario_.name.empty()) s << " (" << scenario_.name << ")";
    s << '\n';
    if (built_) {
      s << "modes: " << problem().modes << ", nodes: " << tree().size() << ", steps: " << tree().horizon()
        << ", dt: " << tree().dt() << '\n';
    }
    return s.str();
  }

  int fail(int code, const std::string& kind, const std::string& message, const std::vector<Violation>& violations,
           const json& extra = json::object()) {
    json diag{{"status", "error"}, {"exit_code", code},         {"kind", kind},
              {"message", message}, {"command", opts_.command}, {"scenario", opts_.scenario}};
    json list = json::array();
    for (const auto& v : violations) list.push_back(violation_json(v, built_ ? &built_->tree : nullptr));
    diag["violations"] = std::move(list);
    for (auto it = extra.begin(); it != extra.end(); ++it) diag[it.key()] = it.value();
    const std::string text = diag.dump(2) + "\n";
    out_ << text;
    err_ << "orbsde: " << kind << ": " << message << '\n';
    try {
      write_file("diagnostic.json", text);
    } catch (const IoError&) {
    }
    return code;
  }

  std::string solution_summary(const SystemSolution& sol, const MinimalityReport& min) const {
    std::ostringstream s;
    s << std::setprecision(17);
    s << "sweeps to tolerance: " << sol.log.sweeps_to_tolerance << " (restarts " << sol.log.restarts
      << ", polish sweeps " << sol.log.polish_sweeps << ")\n";
    s << "root values:\n";
    for (std::size_t j = 0; j < sol.modes.size(); ++j) {
      s << "  mode " << mode_label(j) << ": Y = " << format_double(sol.modes[j].y[tree().root()]) << '\n';
    }
    s << "max flat-off residual: " << format_double(std::max(min.flat_off_k, min.flat_off_a)) << '\n';
    s << "worst minimality residual: " << format_double(min.worst()) << '\n';
    for (const auto& n : notes_) s << "note: " << n << '\n';
    return s.str();
  }

  int solve() {
    const SystemSolution sol = picard();
    const auto min = verify_minimality(tree(), problem(), sol, kMinimalityTol);
    std::ostringstream csv;
    write_solution_csv(csv, tree(), sol);
    write_file("solution.csv", csv.str());
    const std::string summary = header() + solution_summary(sol, min);
    write_file("summary.txt", summary);
    out_ << summary;
    return exit_status::ok;
  }

  SystemSolution load_or_solve() {
    if (opts_.solution.empty()) {
      SystemSolution sol = picard();
      std::ostringstream csv;
      write_solution_csv(csv, tree(), sol);
      write_file("solution.csv", csv.str());
      return sol;
    }
    std::ifstream in(opts_.solution);
    if (!in) throw IoError("cannot read solution file " + opts_.solution);
    return read_solution_csv(in, tree(), problem().modes);
  }

  int verify() {
    const SystemSolution sol = load_or_solve();
    const NodeId root = tree().root();
    const auto d = static_cast<std::size_t>(problem().modes);
    std::vector<Check> checks;

    const auto min = verify_minimality(tree(), problem(), sol, kMinimalityTol);
    {
      std::string detail = std::to_string(min.violations.size()) + " violation(s)";
      if (!min.violations.empty()) {
        const auto& v = min.violations.front();
        detail += "; first: [" + v.code + "] " + v.message + (v.node ? " at node " + std::to_string(*v.node) : "");
      }
      checks.push_back({"minimality", min.ok() ? "pass" : "fail", min.worst(), kMinimalityTol, detail});
    }

    const EnumerationCaps caps{scenario_.solver.max_stopping_depth, scenario_.solver.max_stopping_times};
    const auto y = sol.values();
    for (std::size_t j = 0; j < d; ++j) {
      const std::string name = "snell-representation mode " + mode_label(j);
      try {
        const auto sp = mode_problem(tree(), problem(), y, static_cast<int>(j));
        const double gap = verify_snell_representation(tree(), sp, sol.modes[j], caps);
        checks.push_back({name, gap <= kSnellTol ? "pass" : "fail", gap, kSnellTol, ""});
      } catch (const EnumerationCapError& e) {
        checks.push_back({name, "skip", 0.0, kSnellTol, e.what()});
      }
    }

    if (!generators_decoupled(tree(), problem())) {
      checks.push_back({"switching", "skip", 0.0, kValueTol, "generators depend on other modes"});
    } else {
      std::mt19937_64 rng(opts_.seed);
      for (std::size_t j = 0; j < d; ++j) {
        const int mode = static_cast<int>(j);
        const double yj = sol.modes[j].y[root];
        try {
          const auto bf = brute_force_value(tree(), problem(), root, mode, scenario_.solver.max_strategies);
          const double gap = std::abs(bf.value - yj);
          checks.push_back({"brute-force mode " + mode_label(j), gap <= kValueTol ? "pass" : "fail", gap, kValueTol,
                            "brute force " + format_double(bf.value) + " vs " + format_double(yj) + " over " +
                                std::to_string(bf.evaluated) + " strategies"});
        } catch (const EnumerationCapError& e) {
          checks.push_back(sampled_dominance(sol, mode, rng, e.what()));
        }
        const auto hat = construct_optimal_strategy(tree(), problem(), sol, root, mode);
        const double r = solve_for_strategy(tree(), problem(), hat).entry_value;
        const double gap = std::abs(r - yj);
        checks.push_back({"optimal-strategy mode " + mode_label(j), gap <= kValueTol ? "pass" : "fail", gap,
                          kValueTol, "R = " + format_double(r)});
        const auto mart = check_switched_martingale(tree(), sol, hat);
        checks.push_back({"switched-martingale mode " + mode_label(j), mart.ok(kMartingaleTol) ? "pass" : "fail",
                          mart.worst, kMartingaleTol,
                          mart.node ? "worst at node " + std::to_string(*mart.node) : std::string()});
      }
    }

    std::ostringstream s;
    s << header();
    if (!opts_.solution.empty()) s << "solution: " << opts_.solution << '\n';
    s << "root values:\n";
    for (std::size_t j = 0; j < d; ++j) s << "  mode " << mode_label(j) << ": Y = " << format_double(y[j][root]) << '\n';
    bool ok = true;
    json failed = json::array();
    for (const auto& c : checks) {
      s << std::left << std::setw(5) << (c.status == "pass" ? "PASS" : c.status == "fail" ? "FAIL" : "SKIP") << ' '
        << c.name << ": " << format_double(c.value) << " (tol " << short_number(c.tolerance) << ")";
      if (!c.detail.empty()) s << " " << c.detail;
      s << '\n';
      if (c.status == "fail") {
        ok = false;
        failed.push_back({{"check", c.name}, {"value", c.value}, {"tolerance", c.tolerance}, {"detail", c.detail}});
      }
    }
    const std::string summary = s.str();
    write_file("summary.txt", summary);
    if (!ok) {
      err_ << summary;
      return fail(exit_status::oracle, "oracle-mismatch", std::to_string(failed.size()) + " check(s) failed",
                  min.violations, json{{"checks", failed}});
    }
    out_ << summary;
    return exit_status::ok;
  }

  Check sampled_dominance(const SystemSolution& sol, int mode, std::mt19937_64& rng, const std::string& why) {
    const NodeId root = tree().root();
    const double yj = sol.modes[static_cast<std::size_t>(mode)].y[root];
    std::uniform_int_distribution<int> pick(0, problem().modes - 1);
    double worst = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < kDominanceSamples; ++i) {
      SwitchingStrategy a = constant_strategy(tree(), root, mode);
      for (NodeId u : tree().subtree(root)) a.mode[u] = pick(rng);
      worst = std::max(worst, solve_for_strategy(tree(), problem(), a).entry_value - yj);
    }
    return {"sampled-dominance mode " + mode_label(static_cast<std::size_t>(mode)),
            worst <= kValueTol ? "pass" : "fail", worst, kValueTol,
            std::to_string(kDominanceSamples) + " random strategies, seed " + std::to_string(opts_.seed) +
                " (exhaustive check skipped: " + why + ")"};
  }

  int sweep_penalization() {
    const SystemSolution sol = picard();
    const auto y = sol.values();
    const NodeId root = tree().root();
    std::ostringstream csv;
    csv << "mode,p,q,Y_root,exact_root,gap\n";
    std::ostringstream s;
    s << header() << "penalized root values (rows p, columns q):\n";
    for (std::size_t j = 0; j < y.size(); ++j) {
      const auto sp = mode_problem(tree(), problem(), y, static_cast<int>(j));
      const double exact = sol.modes[j].y[root];
      s << "mode " << mode_label(j) << " (exact " << format_double(exact) << ")\n";
      for (double p : scenario_.solver.penalty_ladder) {
        s << "  p=" << std::setw(8) << std::left << p << std::right;
        for (double q : scenario_.solver.penalty_ladder) {
          const double v = solve_penalized(tree(), sp, {p, q}).path.y[root];
          csv << j + 1 << ',' << format_double(p) << ',' << format_double(q) << ',' << format_double(v) << ','
              << format_double(exact) << ',' << format_double(v - exact) << '\n';
          s << ' ' << std::setw(14) << std::setprecision(8) << v;
        }
        s << '\n';
      }
    }
    write_file("penalization.csv", csv.str());
    write_file("summary.txt", s.str());
    out_ << s.str();
    return exit_status::ok;
  }

  int brute_force() {
    const NodeId root = tree().root();
    std::ostringstream csv;
    csv << "start_mode,node_id,parent_id,time_index,mode\n";
    std::ostringstream s;
    s << header();
    for (int j = 0; j < problem().modes; ++j) {
      const auto bf = brute_force_value(tree(), problem(), root, j, scenario_.solver.max_strategies);
      s << "start mode " << j + 1 << ": value " << format_double(bf.value) << " over " << bf.evaluated
        << " strategies\n";
      for (NodeId u : tree().subtree(root)) {
        const auto parent = tree().parent(u);
        csv << j + 1 << ',' << u << ',' << (parent ? std::to_string(*parent) : std::string()) << ','
            << tree().time(u) << ',' << bf.best.mode[u] + 1 << '\n';
      }
      for (NodeId leaf : tree().leaves()) {
        const auto sw = switches_along(tree(), bf.best, leaf);
        if (sw.empty()) continue;
        s << "  path to node " << leaf << ":";
        for (const auto& e : sw) s << " t=" << e.time << " " << e.from + 1 << "->" << e.to + 1;
        s << '\n';
      }
    }
    write_file("brute_force.csv", csv.str());
    write_file("summary.txt", s.str());
    out_ << s.str();
    return exit_status::ok;
  }

  Options opts_;
  std::ostream& out_;
  std::ostream& err_;
  Scenario scenario_;
  std::optional<BuiltScenario> built_;
  std::vector<std::string> notes_;
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options opts;
  CLI::App app{"Oblique reflected BSDE solver on finite event trees"};
  app.require_subcommand(1, 1);
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"solve", "run the Picard iteration and write solution.csv"},
      {"verify", "solve (or read --solution) and run every oracle check"},
      {"sweep-penalization", "root values of the penalized equations over the (p, q) ladder"},
      {"brute-force", "exhaustive switching-strategy search from the root"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("scenario", opts.scenario, "scenario JSON file")->required();
    sub->add_option("--tol", opts.tol, "Picard stopping tolerance");
    sub->add_option("--max-sweeps", opts.max_sweeps, "Picard sweep limit");
    sub->add_option("--out", opts.out_dir, "output directory")->capture_default_str();
    sub->add_option("--seed", opts.seed, "seed for sampled strategy checks");
    if (name == "verify") sub->add_option("--solution", opts.solution, "solution CSV to verify instead of solving");
    sub->callback([&opts, name = name] { opts.command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_status::ok;
  } catch (const CLI::ParseError& e) {
    json diag{{"status", "error"}, {"exit_code", exit_status::io}, {"kind", "usage"},
              {"message", e.what()}, {"violations", json::array()}};
    out << diag.dump(2) << '\n';
    err << "orbsde: " << e.what() << "\n" << app.help();
    return exit_status::io;
  }
  return Session(std::move(opts), out, err).run();
}

}  // namespace orbsde
