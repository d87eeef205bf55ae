#pragma once

#include <Eigen/Core>
#include <array>
#include <string>

#include "fls/common.hpp"
#include "fls/scene.hpp"

namespace fls {

/// One 10 Hz sample of a demonstration or an execution run.
struct TrajectoryStep {
  long t = 0;
  std::array<Vec3, 2> xRef{Vec3::Zero(), Vec3::Zero()};  // commanded tips: left, right
  std::array<bool, 2> gripperClosed{false, false};       // h: left, right
  std::array<Vec3, 2> tip{Vec3::Zero(), Vec3::Zero()};   // achieved tips
  Vec3 objectPosition = Vec3::Zero();
  scene::Attachment objectTag = scene::Attachment::OnPeg;
  int objectPeg = 0;
  Arm objectHolder = Arm::Right;
  std::string frameRef;
  Eigen::VectorXd latent;  // ξ, filled once frames are encoded

  bool operator==(const TrajectoryStep&) const = default;
};

}  // namespace fls
