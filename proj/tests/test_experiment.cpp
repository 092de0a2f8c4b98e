#include "doctest.h"

#include "mkvlab/experiment.hpp"
#include "mkvlab/io.hpp"

#include <filesystem>

using namespace mkv;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
  const auto p = fs::temp_directory_path() / "mkvlab-test-experiment" / name;
  fs::remove_all(p);
  fs::remove_all(p.string() + ".staging");
  return p;
}

bool mentions(const std::vector<std::string>& errs, const std::string& needle)
{
  for (const auto& e : errs)
    if (e.find(needle) != std::string::npos)
      return true;
  return false;
}

json results_of(const fs::path& dir)
{
  return json::parse(read_text(dir / "results.json"));
}

RunResult run(const json& doc, const fs::path& dir)
{
  return run_experiment(resolve_config(doc), dir);
}

} // namespace

TEST_CASE("schema problems are listed together")
{
  const json doc = {{"experiment", "simulate-mkv"},
                    {"seed", -3},
                    {"colour", "red"},
                    {"coefficients", {{"family", "quartic"}, {"sigma0", "big"}}},
                    {"numerics", {{"dt", -1.0}, {"x_min", 2.0}, {"x_max", 1.0}, {"checkpoint", 3}}},
                    {"ergodicity", json::object()}};
  const auto errs = validate_config(doc);
  CHECK(mentions(errs, "'seed' must be a non-negative integer"));
  CHECK(mentions(errs, "unknown key 'colour'"));
  CHECK(mentions(errs, "'coefficients.sigma0' must be a number"));
  CHECK(mentions(errs, "'coefficients.family' must be one of"));
  CHECK(mentions(errs, "'numerics.dt' must be positive"));
  CHECK(mentions(errs, "'numerics.x_max' must exceed"));
  CHECK(mentions(errs, "unknown key 'numerics.checkpoint'"));
  CHECK(mentions(errs, "section 'ergodicity' does not apply"));
  CHECK(errs.size() == 8);
  CHECK_THROWS_AS(resolve_config(doc), ConfigError);

  CHECK(mentions(validate_config(json{{"seed", 1}}), "'experiment' is required"));
  CHECK(mentions(validate_config(json{{"experiment", "teleport"}}), "got 'teleport'"));
  CHECK(validate_config(json{{"experiment", "solve-fpe"}}).empty());
}

TEST_CASE("resolved configuration")
{
  for (const auto& name : experiment_names()) {
    const auto cfg = resolve_config(json{{"experiment", name}, {"output", {{"dir", "somewhere"}}}});
    CHECK(to_string(cfg.kind) == name);
    CHECK(cfg.output_dir == "somewhere");
    CHECK_FALSE(cfg.tree["output"].contains("dir"));
    CHECK(cfg.tree.contains(name));
    // defaults are themselves valid
    CHECK(validate_config(json::parse(default_config(cfg.kind).dump())).empty());
  }
  const auto cfg = resolve_config(json{{"experiment", "simulate-mkv"}, {"numerics", {{"dt", 1}}}});
  CHECK(cfg.tree["numerics"]["dt"].is_number_float());
  CHECK(cfg.tree["numerics"]["dt"].get<double>() == 1.0);
}

TEST_CASE("simulate-mkv artifacts and determinism")
{
  const json doc = {{"experiment", "simulate-mkv"},
                    {"seed", 7},
                    {"numerics", {{"n_particles", 500}, {"dt", 1e-2}, {"dx", 5e-2}, {"horizon", 0.5}}},
                    {"simulate-mkv", {{"compare_fpe", true}}}};
  const auto a = scratch("sim-a"), b = scratch("sim-b");
  const auto ra = run(doc, a);
  CHECK(ra.exit_code == kExitOk);
  for (const auto* f : {"results.csv", "results.json", "plot.svg", "manifest.json"})
    CHECK(fs::exists(a / f));
  CHECK_FALSE(fs::exists(a.string() + ".staging"));
  run(doc, b);
  for (const auto* f : {"results.csv", "results.json", "plot.svg", "manifest.json"})
    CHECK(read_text(a / f) == read_text(b / f));

  const auto csv = parse_csv(read_text(a / "results.csv"));
  CHECK(csv.columns == std::vector<std::string>{"t", "mean", "variance", "second_moment", "l1_fpe"});
  CHECK(csv.rows.size() == 5);
  const auto manifest = json::parse(read_text(a / "manifest.json"));
  CHECK(manifest["seed"] == 7);
  CHECK(manifest["config"]["numerics"]["n_particles"] == 500);
  CHECK(manifest["artifacts"].size() == 3);
  CHECK(manifest["artifacts"][0]["fnv1a64"] == fnv1a_hex(read_text(a / "results.csv")));
  const auto text = read_text(a / "manifest.json");
  CHECK(text.find("time\"") == std::string::npos);
  CHECK(text.find("date") == std::string::npos);

  // rerunning from the manifest's config reproduces the artifacts
  auto again = manifest["config"];
  again["output"] = {{"plot", true}};
  const auto c = scratch("sim-c");
  run(again, c);
  CHECK(read_text(a / "results.csv") == read_text(c / "results.csv"));

  auto other = doc;
  other["seed"] = 8;
  run(other, b);
  CHECK(read_text(a / "results.csv") != read_text(b / "results.csv"));
}

TEST_CASE("solve-fpe")
{
  const auto dir = scratch("fpe");
  const auto r = run({{"experiment", "solve-fpe"}, {"numerics", {{"dt", 1e-2}, {"dx", 5e-2}, {"horizon", 0.5}}}}, dir);
  CHECK(r.exit_code == kExitOk);
  const auto res = results_of(dir);
  CHECK(res["status"] == "ok");
  CHECK(res["summary"]["conservation"]["max_mass_error"].get<double>() <= 1e-12);
  CHECK(fs::exists(dir / "density.csv"));
}

TEST_CASE("frozen-compare")
{
  const auto dir = scratch("frozen");
  const auto r = run({{"experiment", "frozen-compare"},
                      {"numerics", {{"n_particles", 4000}, {"dx", 2e-2}, {"horizon", 0.5}}}},
                     dir);
  CHECK(r.exit_code == kExitOk);
  CHECK(results_of(dir)["summary"]["breaches"] == 0);
}

TEST_CASE("check-ck: within tolerance, and an invariant violation")
{
  const auto dir = scratch("ck");
  const auto r = run({{"experiment", "check-ck"}}, dir);
  CHECK(r.exit_code == kExitOk);
  CHECK(results_of(dir)["summary"]["residual"].get<double>() <= 1e-5);

  const auto bad = run({{"experiment", "check-ck"}, {"check-ck", {{"tolerance", 1e-300}}}}, dir);
  CHECK(bad.exit_code == kExitInvariant);
  CHECK(results_of(dir)["status"] == "invariant_violation");
}

TEST_CASE("ergodicity")
{
  const auto dir = scratch("erg");
  const json doc = {{"experiment", "ergodicity"},
                    {"numerics", {{"n_particles", 2000}, {"dt", 1e-2}, {"horizon", 3.0}, {"checkpoints", 6}}}};
  const auto r = run(doc, dir);
  CHECK(r.exit_code == kExitOk);
  CHECK(fs::exists(dir / "plot.svg"));

  // lambda <= kappa: refused before anything is written
  auto refuse = doc;
  refuse["coefficients"] = {{"kappa0", 2.5}};
  const auto none = scratch("erg-refused");
  CHECK_THROWS_WITH_AS(run(refuse, none), doctest::Contains("lambda > kappa"), Error);
  CHECK_FALSE(fs::exists(none));
  CHECK_FALSE(fs::exists(none.string() + ".staging"));
}

TEST_CASE("feynman-kac")
{
  const auto dir = scratch("fk");
  const auto r = run({{"experiment", "feynman-kac"},
                      {"feynman-kac", {{"Phi", "one"}, {"V", -0.5}, {"replicas", 200}, {"flow_particles", 1000},
                                       {"x", {0.0, 1.0}}}}},
                     dir);
  CHECK(r.exit_code == kExitOk);
  const auto csv = parse_csv(read_text(dir / "results.csv"));
  for (double v : csv.column("value"))
    CHECK(v == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(results_of(dir)["summary"]["config_hashes"].size() == 2);
}

TEST_CASE("gradient-check")
{
  const auto dir = scratch("grad");
  CHECK(run({{"experiment", "gradient-check"}}, dir).exit_code == kExitOk);
  CHECK(results_of(dir)["summary"]["failed"] == 0);
  CHECK(run({{"experiment", "gradient-check"}, {"gradient-check", {{"min_order", 5.0}}}}, dir).exit_code ==
        kExitInvariant);
}

TEST_CASE("validate-hypotheses")
{
  const auto dir = scratch("hyp");
  CHECK(run({{"experiment", "validate-hypotheses"}, {"validate-hypotheses", {{"samples", 2000}}}}, dir).exit_code ==
        kExitOk);
  CHECK(run({{"experiment", "validate-hypotheses"},
             {"coefficients", {{"family", "nldbm"}}},
             {"validate-hypotheses", {{"samples", 2000}}}},
            dir)
          .exit_code == kExitOk);
  CHECK(results_of(dir)["summary"]["passed"] == true);
}

TEST_CASE("output directory safety")
{
  const auto dir = scratch("foreign");
  fs::create_directories(dir);
  write_text(dir / "notes.txt", "keep me");
  const json doc = {{"experiment", "gradient-check"}, {"gradient-check", {{"functions", 2}}}};
  CHECK_THROWS_WITH_AS(run(doc, dir), doctest::Contains("refusing to replace"), Error);
  CHECK(read_text(dir / "notes.txt") == "keep me");
  CHECK_FALSE(fs::exists(dir.string() + ".staging"));

  // an empty directory or a previous run is replaced
  const auto prev = scratch("previous");
  fs::create_directories(prev);
  CHECK(run(doc, prev).exit_code == kExitOk);
  write_text(prev / "stale.txt", "x");
  CHECK(run(doc, prev).exit_code == kExitOk);
  CHECK_FALSE(fs::exists(prev / "stale.txt"));
}
