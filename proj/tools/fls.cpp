#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "fls/config.hpp"
#include "fls/pipeline.hpp"
#include "fls/teleop.hpp"

using namespace fls;
using namespace fls::harness;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string profile;
  std::string out;
  bool resume = false;
  int port = -1;
};

RunConfig resolve(const Options& o) {
  RunConfig cfg = o.config.empty() ? defaultRunConfig() : loadRunConfig(o.config);
  if (!o.profile.empty()) {
    const auto p = parseProfile(o.profile);
    if (p != cfg.profile) {
      const auto shapes = learningProfile(p);
      cfg.learning.ae = shapes.ae;
      cfg.learning.rnn = shapes.rnn;
      cfg.profile = p;
    }
  }
  if (o.seed) cfg.seeds = Seeds::fromBase(*o.seed);
  if (!o.out.empty()) cfg.out = o.out;
  if (o.port >= 0) cfg.teleop.port = o.port;
  cfg.validate();
  return cfg;
}

int report(const PipelineReport& r) {
  for (const auto& s : r.stages) {
    if (s.status == "not-requested") continue;
    std::cout << stageName(s.stage) << ": " << s.status;
    if (s.status == "ran") std::cout << " (" << s.seconds << " s)";
    if (!s.message.empty()) std::cout << " - " << s.message;
    std::cout << '\n';
  }
  std::cout << "manifest: " << r.manifest.string() << '\n';
  return r.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* lvl = std::getenv("FLS_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(lvl));

  CLI::App app{"Constrained imitation learning pipeline for simulated FLS peg transfer"};
  app.require_subcommand(1);
  Options o;
  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "run configuration (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "base seed; shifts every seed stream");
    sub->add_option("--profile", o.profile, "learning profile")->check(CLI::IsMember({"paper", "desk"}));
    sub->add_option("--out", o.out, "output directory");
  };

  std::optional<Stage> stage;
  for (auto s : kStages) {
    auto* sub = app.add_subcommand(stageName(s), std::string("run the ") + stageName(s) + " stage");
    common(sub);
    sub->callback([&stage, s] { stage = s; });
  }
  auto* pipeline = app.add_subcommand("pipeline", "run every stage and write the manifest");
  common(pipeline);
  pipeline->add_flag("--resume", o.resume, "keep stages whose outputs already exist");
  auto* serve = app.add_subcommand("serve", "websocket teleoperation service");
  common(serve);
  serve->add_option("--port", o.port, "TCP port")->check(CLI::Range(0, 65535));

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = resolve(o);
    if (serve->parsed()) {
      teleop::serveTeleop(cfg, static_cast<unsigned short>(cfg.teleop.port));
      return 0;
    }
    PipelineOptions opts;
    opts.resume = o.resume;
    opts.only = stage;
    return report(runPipeline(cfg, opts));
  } catch (const std::exception& e) {
    std::cerr << "fls: " << e.what() << '\n';
    return 2;
  }
}
