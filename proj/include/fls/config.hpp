#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>

#include "fls/autoencoder.hpp"
#include "fls/cell.hpp"
#include "fls/phase_constraints.hpp"
#include "fls/rnnpb.hpp"
#include "fls/teacher.hpp"

namespace fls::harness {

enum class Profile { Paper, Desk };
const char* profileName(Profile p);
Profile parseProfile(const std::string& s);

struct LearningConfig {
  learning::AutoencoderSpec ae;
  learning::RnnpbSpec rnn;
  int aeEpochs = 15;
  int aeBatch = 32;
  int aeFrameStride = 3;  // every n-th demo frame enters the autoencoder corpus
  int rnnEpochs = 4000;
  double learningRate = 1e-3;
  double pbLearningRate = 1e-3;
  double noiseScale = 0.3;
};

/// Shapes and schedules of a profile. `paper` uses the published unit counts.
LearningConfig learningProfile(Profile p);

struct Seeds {
  std::uint64_t teacher = 7;
  std::uint64_t aeInit = 1;
  std::uint64_t aeTrain = 2;
  std::uint64_t rnn = 3;
  std::uint64_t eval = 1000;
  bool operator==(const Seeds&) const = default;
  /// Shifts every stream by `base`; base 0 gives the defaults.
  static Seeds fromBase(std::uint64_t base) {
    Seeds s;
    for (auto* v : {&s.teacher, &s.aeInit, &s.aeTrain, &s.rnn, &s.eval}) *v += base;
    return s;
  }
};

struct EvalConfig {
  int trialsPerPeg = 5;
  double startJitter = 2.0;  // mm, std of the starting tip offset per trial
  int maxSteps = 320;
};

struct TeleopConfig {
  int port = 8765;
  double tickHz = 10.0;
  int frameEvery = 3;
  double feedbackGain = 0.1;  // kp, N per mm of band violation
  int sourcePeg = 0;
};

struct RunConfig {
  std::optional<std::filesystem::path> cellConfigPath;
  cell::CellConfig cell;
  phase::TransitionConfig transition;
  teacher::TeacherConfig teacher;
  int exemplaryPeg = 1;
  int demoCount = 12;
  double lateralJitterStd = 1.0;
  double depthBiasStd = 6.0;
  int pauseJitter = 3;
  Profile profile = Profile::Desk;
  LearningConfig learning;
  Seeds seeds;
  EvalConfig eval;
  TeleopConfig teleop;
  std::filesystem::path out = "out";

  void validate() const;
};

RunConfig defaultRunConfig(Profile p = Profile::Desk);
/// Reads a JSON config; relative paths resolve against the file's directory.
/// Missing keys keep their defaults; a referenced path must exist.
RunConfig loadRunConfig(const std::filesystem::path& path);
RunConfig runConfigFromJson(const nlohmann::json& j, const std::filesystem::path& baseDir);
nlohmann::json runConfigToJson(const RunConfig& c);

}  // namespace fls::harness
