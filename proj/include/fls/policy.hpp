#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fls/autoencoder.hpp"
#include "fls/cell.hpp"
#include "fls/rnnpb.hpp"
#include "fls/teacher.hpp"

namespace fls::learning {

/// Affine map of the (s;u) vector into training space. Gripper entries are
/// kept raw (mean 0, scale 1).
struct Normalizer {
  Vec mean, scale;
  Vec apply(const Vec& x) const { return (x - mean).cwiseQuotient(scale); }
  Vec invert(const Vec& y) const { return y.cwiseProduct(scale) + mean; }
  bool operator==(const Normalizer&) const = default;
};

/// z-scores all but the last `rawTail` dimensions; scales below 1e-6 become 1.
Normalizer fitNormalizer(const std::vector<Mat>& seqs, int rawTail);

struct TrainingMeta {
  int aeEpochs = 0;
  int rnnEpochs = 0;
  std::uint64_t aeSeed = 0;
  std::uint64_t rnnSeed = 0;
  double learningRate = 0.0;
  double pbLearningRate = 0.0;
  double noiseScale = 0.0;
  std::vector<double> aeLoss;
  std::vector<double> rnnLoss;
  bool operator==(const TrainingMeta&) const = default;
};

struct PolicyModel {
  std::shared_ptr<Autoencoder> ae;
  std::shared_ptr<Rnnpb> rnn;
  Mat pbTable;  // K x np
  Normalizer norm;
  TrainingMeta meta;

  /// One prediction in raw units: (s_{t+1}, u_{t+1}); advances `hidden`.
  std::pair<Vec, Vec> forward(const Vec& s, const Vec& u, const Vec& p, RnnState& hidden) const;
};

/// u = (x_ref left, x_ref right, h left, h right).
Vec controlVector(const TrajectoryStep& s);
/// (s;u) per step; every step must carry a latent.
Mat demoSequence(const teacher::DemoRecord& d);

scene::Frame renderStep(const TrajectoryStep& s, const scene::SceneGeometry& g);
/// Frames of every `stride`-th step of every demo, as input columns.
Mat demoFrames(const std::vector<teacher::DemoRecord>& demos, const scene::SceneGeometry& g, int stride = 1);
/// Fills TrajectoryStep::latent from the rendered frame of each step.
void encodeDemos(Autoencoder& ae, std::vector<teacher::DemoRecord>& demos, const scene::SceneGeometry& g);

/// Trains the recurrent model on encoded demos (latents filled in).
PolicyModel trainPolicy(std::shared_ptr<Autoencoder> ae, const std::vector<teacher::DemoRecord>& demos,
                        const RnnpbSpec& spec, const RnnpbTrainSettings& settings, const RnnEpochCallback& onEpoch = {});

struct ExecutionSettings {
  int maxSteps = 320;
  double gripThreshold = 0.5;
  double gripHysteresis = 0.02;
};

struct ExecutionResult {
  std::vector<scene::SceneState> history;  // index 0 = starting scene
  std::vector<TrajectoryStep> steps;
  Mat latents;  // hidden x steps (both recurrent layers)
  scene::SuccessFlags flags;
  bool ikFailure = false;
  std::string termination;  // inserted | fallen | max-steps | ik-failure
};

/// Closed loop at one step per tick: render, encode, predict, command the
/// arms through the port-constrained IK, step the scene. The run starts
/// with the tips at `startTips` (home if not given).
ExecutionResult executePolicy(const PolicyModel& model, const cell::CellConfig& cellConfig, int sourcePeg, const Vec& p,
                              const ExecutionSettings& settings = {},
                              const std::optional<std::array<Vec3, 2>>& startTips = std::nullopt);

/// Structured-text tensor dump with shape headers.
void saveCheckpoint(const std::filesystem::path& path, const PolicyModel& model);
PolicyModel loadCheckpoint(const std::filesystem::path& path);

}  // namespace fls::learning
