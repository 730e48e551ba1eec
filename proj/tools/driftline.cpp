// driftline command-line front end.
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "driftline/pipeline.hpp"

namespace dp = driftline::pipeline;

namespace {

int exit_code(driftline::Errc c) {
  switch (c) {
    case driftline::Errc::kConfiguration: return 2;
    case driftline::Errc::kNotFound: return 3;
    case driftline::Errc::kData: return 4;
    default: return 1;
  }
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw driftline::Error(driftline::Errc::kNotFound, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw driftline::Error(driftline::Errc::kConfiguration, path + ": not valid JSON (" + e.what() + ")");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Drift-aware streaming model lifecycle simulator"};
  app.require_subcommand(1);

  std::string config, out, in, spec, run_dir, format = "text";
  std::optional<std::uint64_t> seed;
  bool single = false;

  auto* run = app.add_subcommand("run", "Run a scenario and write the stores");
  run->add_option("--config", config, "scenario JSON")->required();
  run->add_option("--out", out, "run directory (created, must be empty)")->required();
  run->add_option("--seed", seed, "override the config seed");
  run->add_flag("--single-thread", single, "serial kernels, one OpenMP thread");

  auto* inject = app.add_subcommand("inject", "Apply drift injections to a JSONL event stream");
  inject->add_option("--in", in, "input JSONL")->required();
  inject->add_option("--out", out, "output JSONL")->required();
  inject->add_option("--spec", spec, "injection spec JSON: a list, or {seed, injections}")->required();

  auto* rep = app.add_subcommand("report", "Summarize a finished run from its stores");
  rep->add_option("--run", run_dir, "run directory")->required();
  rep->add_option("--format", format, "text or jsonl")->check(CLI::IsMember({"text", "jsonl"}));

  auto* rpl = app.add_subcommand("replay", "Re-evaluate recorded snapshots and check provenance");
  rpl->add_option("--run", run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);
  dp::configure_logging();

  try {
    if (*run) {
      auto j = read_json(config);
      if (seed) j["seed"] = *seed;
      auto cfg = dp::ScenarioConfig::parse(j);
      auto r = dp::run(cfg, out, {single, nullptr});
      std::cout << r.text();
    } else if (*inject) {
      const auto j = read_json(spec);
      std::uint64_t s = 0;
      const nlohmann::json* list = &j;
      if (j.is_object()) {
        s = j.value("seed", std::uint64_t{0});
        if (!j.contains("injections"))
          throw driftline::Error(driftline::Errc::kConfiguration, "injections: missing");
        list = &j.at("injections");
      }
      dp::inject_file(in, out, dp::parse_injections(*list, "injections", 0), s);
    } else if (*rep) {
      const auto r = dp::report(run_dir);
      if (format == "jsonl")
        std::cout << r.json().dump() << "\n";
      else
        std::cout << r.text();
    } else if (*rpl) {
      const auto r = dp::replay(run_dir);
      std::cout << "snapshots " << r.snapshots << ", decisions " << r.decisions << ", mismatches " << r.mismatches
                << ", chains checked " << r.chains_checked << ", broken " << r.broken_chains.size() << "\n";
      for (const auto& b : r.broken_chains) std::cout << "  " << b << "\n";
      return r.mismatches == 0 && r.broken_chains.empty() ? 0 : 5;
    }
  } catch (const driftline::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  }
  return 0;
}
