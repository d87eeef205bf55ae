#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <filesystem>
#include <nlohmann/json_fwd.hpp>
#include <vector>

#include "fls/common.hpp"

namespace fls::kinematics {

struct RevoluteJoint {
  Vec3 axis = Vec3::UnitZ();    // unit, expressed in the parent link frame
  Vec3 origin = Vec3::Zero();   // mm, offset from the previous joint in the parent link frame
  double lo = -M_PI;
  double hi = M_PI;
};

/// Serial chain of revolute joints carrying a straight forceps on the flange.
///
/// Link frames coincide with the base frame at the zero configuration, so each
/// joint is fully described by an axis and an origin offset. The virtual
/// prismatic joint slides along `toolAxis` (hand frame) starting at the flange.
struct ChainModel {
  std::vector<RevoluteJoint> joints;
  double forcepLength = 300.0;  // mm, flange to forceps tip
  Vec3 toolAxis = Vec3::UnitZ();
  Vec3 flangeOffset = Vec3::Zero();  // mm, last joint to flange
  Vec3 basePosition = Vec3::Zero();
  Eigen::Quaterniond baseOrientation = Eigen::Quaterniond::Identity();

  std::size_t dof() const { return joints.size(); }
  /// Throws DomainError when an invariant is broken.
  void validate() const;
};

struct JointState {
  Eigen::VectorXd theta;
  double thetaVirtual = 0.0;  // mm

  /// theta followed by thetaVirtual.
  Eigen::VectorXd packed() const;
  static JointState unpack(const Eigen::VectorXd& v);
  bool operator==(const JointState&) const = default;
};

struct Pose3 {
  Vec3 position = Vec3::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();
};

struct FkResult {
  Pose3 hand;
  Vec3 forcepTip;
  Vec3 virtualTip;
  Vec3 toolAxisWorld;
};

struct Jacobians {
  Eigen::Matrix<double, 3, Eigen::Dynamic> forcep;
  Eigen::Matrix<double, 3, Eigen::Dynamic> virtualTip;
};

/// Throws DomainError naming the first joint outside its limits, or a
/// virtual extension outside [0, forcepLength].
void checkLimits(const ChainModel& chain, const JointState& q);

/// Projects q onto the joint box (and the virtual range).
JointState clampToLimits(const ChainModel& chain, const JointState& q);

FkResult forwardKinematics(const ChainModel& chain, const JointState& q);

/// Columns 0..n-1 are the revolute joints, column n the virtual joint.
Jacobians jacobians(const ChainModel& chain, const JointState& q);

/// Synthetic 7R chain with Panda-like link offsets (about 850 mm reach).
/// Not the manufacturer's parameters.
ChainModel syntheticPandaLikeChain();

ChainModel chainFromJson(const nlohmann::json& j);
nlohmann::json chainToJson(const ChainModel& chain);
ChainModel loadChain(const std::filesystem::path& path);

}  // namespace fls::kinematics
