#include "fls/config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "fls/common.hpp"

namespace fls::harness {

using nlohmann::json;

const char* profileName(Profile p) { return p == Profile::Paper ? "paper" : "desk"; }

Profile parseProfile(const std::string& s) {
  if (s == "paper") return Profile::Paper;
  if (s == "desk") return Profile::Desk;
  throw DomainError("unknown profile '" + s + "' (expected paper or desk)");
}

LearningConfig learningProfile(Profile p) {
  LearningConfig c;
  if (p == Profile::Paper) {
    c.ae.channels = {16, 32, 64, 128, 256};
    c.rnn = learning::RnnpbSpec::paper(2);
  } else {
    c.rnn = learning::RnnpbSpec::desk(2);
  }
  return c;
}

RunConfig defaultRunConfig(Profile p) {
  RunConfig c;
  c.cell = cell::defaultCellConfig();
  c.profile = p;
  c.learning = learningProfile(p);
  return c;
}

void RunConfig::validate() const {
  transition.validate();
  if (exemplaryPeg < 0 || exemplaryPeg > 2) throw DomainError("exemplary peg must be 0, 1 or 2");
  if (demoCount < 1) throw DomainError("demo count must be positive");
  if (lateralJitterStd < 0.0 || depthBiasStd < 0.0 || pauseJitter < 0) throw DomainError("operator noise must be non-negative");
  learning.ae.validate();
  learning.rnn.validate();
  if (learning.ae.latent != learning.rnn.ns) throw DomainError("autoencoder latent size must equal RNNPB ns");
  if (learning.aeEpochs < 0 || learning.rnnEpochs < 0 || learning.aeBatch < 2 || learning.aeFrameStride < 1)
    throw DomainError("invalid learning schedule");
  if (!(learning.learningRate > 0.0) || !(learning.pbLearningRate >= 0.0) || !(learning.noiseScale >= 0.0))
    throw DomainError("invalid optimizer settings");
  if (eval.trialsPerPeg < 1 || eval.maxSteps < 1 || eval.startJitter < 0.0) throw DomainError("invalid evaluation settings");
  if (teleop.port < 0 || teleop.port > 65535) throw DomainError("teleop port out of range");
  if (!(teleop.tickHz > 0.0) || teleop.frameEvery < 0 || teleop.feedbackGain < 0.0) throw DomainError("invalid teleop settings");
  if (teleop.sourcePeg < 0 || teleop.sourcePeg > 2) throw DomainError("teleop source peg must be 0, 1 or 2");
  if (cellConfigPath && !std::filesystem::exists(*cellConfigPath))
    throw DomainError("cell config " + cellConfigPath->string() + " does not exist");
}

namespace {

template <class T>
void read(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

std::uint64_t readSeed(const json& j, const char* key, std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
    throw DomainError(std::string("seed '") + key + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

}  // namespace

RunConfig runConfigFromJson(const json& j, const std::filesystem::path& baseDir) {
  RunConfig c = defaultRunConfig(parseProfile(j.value("profile", std::string("desk"))));
  try {
    if (j.contains("cell_config")) {
      std::filesystem::path p = j.at("cell_config").get<std::string>();
      if (p.is_relative()) p = baseDir / p;
      if (!std::filesystem::exists(p)) throw DomainError("cell config " + p.string() + " does not exist");
      std::ifstream is(p);
      c.cell = cell::cellConfigFromJson(json::parse(is));
      c.cellConfigPath = p;
    }
    if (j.contains("geometry")) c.cell.geometry = scene::geometryFromJson(j.at("geometry"));
    if (j.contains("transition")) {
      const auto& t = j.at("transition");
      read(t, "velocity_threshold", c.transition.velocityThreshold);
      read(t, "n_thre_constraint_gen", c.transition.nThreConstraintGen);
      read(t, "n_thre_collection", c.transition.nThreCollection);
    }
    if (j.contains("teacher")) {
      const auto& t = j.at("teacher");
      read(t, "exemplary_peg", c.exemplaryPeg);
      read(t, "demo_count", c.demoCount);
      read(t, "lateral_jitter_std", c.lateralJitterStd);
      read(t, "depth_bias_std", c.depthBiasStd);
      read(t, "pause_jitter", c.pauseJitter);
      read(t, "compliance", c.teacher.compliance);
    }
    if (j.contains("learning")) {
      const auto& l = j.at("learning");
      read(l, "ae_epochs", c.learning.aeEpochs);
      read(l, "ae_batch", c.learning.aeBatch);
      read(l, "ae_frame_stride", c.learning.aeFrameStride);
      read(l, "rnn_epochs", c.learning.rnnEpochs);
      read(l, "learning_rate", c.learning.learningRate);
      read(l, "pb_learning_rate", c.learning.pbLearningRate);
      read(l, "noise_scale", c.learning.noiseScale);
      if (l.contains("np")) {
        const int np = l.at("np").get<int>();
        c.learning.rnn.np = np;
        c.learning.rnn.units[0] = c.learning.rnn.ns + c.learning.rnn.nu + np;
      }
    }
    if (j.contains("seeds")) {
      const auto& s = j.at("seeds");
      c.seeds.teacher = readSeed(s, "teacher", c.seeds.teacher);
      c.seeds.aeInit = readSeed(s, "ae_init", c.seeds.aeInit);
      c.seeds.aeTrain = readSeed(s, "ae_train", c.seeds.aeTrain);
      c.seeds.rnn = readSeed(s, "rnn", c.seeds.rnn);
      c.seeds.eval = readSeed(s, "eval", c.seeds.eval);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      read(e, "trials_per_peg", c.eval.trialsPerPeg);
      read(e, "start_jitter", c.eval.startJitter);
      read(e, "max_steps", c.eval.maxSteps);
    }
    if (j.contains("teleop")) {
      const auto& t = j.at("teleop");
      read(t, "port", c.teleop.port);
      read(t, "tick_hz", c.teleop.tickHz);
      read(t, "frame_every", c.teleop.frameEvery);
      read(t, "feedback_gain", c.teleop.feedbackGain);
      read(t, "source_peg", c.teleop.sourcePeg);
    }
    if (j.contains("out")) {
      std::filesystem::path o = j.at("out").get<std::string>();
      c.out = o.is_relative() ? baseDir / o : o;
    }
  } catch (const json::exception& e) {
    throw DomainError(std::string("bad run config: ") + e.what());
  }
  c.teacher.transition = c.transition;
  c.validate();
  return c;
}

RunConfig loadRunConfig(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DomainError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw DomainError(path.string() + ": " + e.what());
  }
  return runConfigFromJson(j, path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
}

json runConfigToJson(const RunConfig& c) {
  json j;
  j["profile"] = profileName(c.profile);
  if (c.cellConfigPath) j["cell_config"] = c.cellConfigPath->string();
  j["geometry"] = scene::geometryToJson(c.cell.geometry);
  j["transition"] = {{"velocity_threshold", c.transition.velocityThreshold},
                     {"n_thre_constraint_gen", c.transition.nThreConstraintGen},
                     {"n_thre_collection", c.transition.nThreCollection}};
  j["teacher"] = {{"exemplary_peg", c.exemplaryPeg},       {"demo_count", c.demoCount},
                  {"lateral_jitter_std", c.lateralJitterStd}, {"depth_bias_std", c.depthBiasStd},
                  {"pause_jitter", c.pauseJitter},         {"compliance", c.teacher.compliance}};
  j["learning"] = {{"ae_epochs", c.learning.aeEpochs},
                   {"ae_batch", c.learning.aeBatch},
                   {"ae_frame_stride", c.learning.aeFrameStride},
                   {"rnn_epochs", c.learning.rnnEpochs},
                   {"learning_rate", c.learning.learningRate},
                   {"pb_learning_rate", c.learning.pbLearningRate},
                   {"noise_scale", c.learning.noiseScale},
                   {"np", c.learning.rnn.np},
                   {"ae_channels", c.learning.ae.channels},
                   {"rnn_units", c.learning.rnn.units}};
  j["seeds"] = {{"teacher", c.seeds.teacher}, {"ae_init", c.seeds.aeInit}, {"ae_train", c.seeds.aeTrain},
                {"rnn", c.seeds.rnn},         {"eval", c.seeds.eval}};
  j["eval"] = {{"trials_per_peg", c.eval.trialsPerPeg}, {"start_jitter", c.eval.startJitter}, {"max_steps", c.eval.maxSteps}};
  j["teleop"] = {{"port", c.teleop.port},
                 {"tick_hz", c.teleop.tickHz},
                 {"frame_every", c.teleop.frameEvery},
                 {"feedback_gain", c.teleop.feedbackGain},
                 {"source_peg", c.teleop.sourcePeg}};
  j["out"] = c.out.string();
  return j;
}

}  // namespace fls::harness
