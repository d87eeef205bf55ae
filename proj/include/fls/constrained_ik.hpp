#pragma once

#include <optional>
#include <vector>

#include "fls/kinematics.hpp"

namespace fls::ik {

struct Box {
  Vec3 lo;
  Vec3 hi;
  bool contains(const Vec3& p) const { return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all(); }
};

/// Solver knobs shared by single solves and streamed tracking.
struct IkSettings {
  double tolTip = 1e-3;   // mm
  double tolPort = 1e-3;  // mm
  int maxIters = 200;
  double damping = 1e-3;
  double tipWeight = 1.0;
  double portWeight = 1.0;
  double maxJointStep = 0.2;     // rad per iteration
  double maxVirtualStep = 20.0;  // mm per iteration
  std::optional<Box> workspace;
};

struct IkProblem {
  Vec3 targetTip;
  Vec3 port;
  kinematics::JointState seed;
  IkSettings settings;
};

struct IkSolution {
  kinematics::JointState q;
  double residualTip = 0.0;
  double residualPort = 0.0;
  int iterations = 0;
  bool converged = false;
  bool diverged = false;
};

/// Drives the forceps tip onto targetTip while pinning the virtual-joint tip
/// to the port. Damped least squares on the stacked 6-row residual with
/// per-iteration clamping to the joint box. Returns the best iterate when the
/// tolerances are not met.
IkSolution solveIk(const kinematics::ChainModel& chain, const IkProblem& problem);

/// Warm-started streaming IK: solution k seeds solve k+1.
std::vector<IkSolution> trackTrajectory(const kinematics::ChainModel& chain, const std::vector<Vec3>& targets,
                                        const Vec3& port, const kinematics::JointState& seed,
                                        const IkSettings& settings = {});

}  // namespace fls::ik
