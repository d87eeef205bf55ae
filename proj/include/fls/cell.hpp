#pragma once

#include <array>
#include <nlohmann/json_fwd.hpp>

#include "fls/constrained_ik.hpp"
#include "fls/kinematics.hpp"
#include "fls/scene.hpp"

namespace fls::cell {

/// Two port-constrained arms over the peg board.
struct CellConfig {
  std::array<kinematics::ChainModel, 2> chains;  // left, right
  std::array<kinematics::JointState, 2> nominalSeeds;
  scene::SceneGeometry geometry;
  ik::IkSettings ik;
};

/// Synthetic Panda-like arms mounted on either side of the box trainer.
CellConfig defaultCellConfig();
CellConfig cellConfigFromJson(const nlohmann::json& j);
nlohmann::json cellConfigToJson(const CellConfig& c);

struct StepResult {
  std::array<ik::IkSolution, 2> ik;
  bool ikOk = true;
};

/// Owns the simulated world and the arm joint states for one episode.
class Cell {
 public:
  Cell(CellConfig config, int sourcePeg);

  /// Solves IK for both commanded tips (warm start), then advances the scene
  /// with the achieved tip positions.
  StepResult apply(const std::array<Vec3, 2>& tipTargets, const std::array<bool, 2>& grippers);

  const scene::SceneState& state() const { return state_; }
  const std::array<kinematics::JointState, 2>& joints() const { return joints_; }
  const CellConfig& config() const { return config_; }
  const scene::SceneGeometry& geometry() const { return config_.geometry; }

 private:
  CellConfig config_;
  scene::SceneState state_;
  std::array<kinematics::JointState, 2> joints_;
};

/// Joint states placing both tips at their home positions through the ports.
std::array<kinematics::JointState, 2> homeJoints(const CellConfig& config);

}  // namespace fls::cell
