#include "fls/kinematics.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace fls::kinematics {

namespace {

constexpr double kUnitTol = 1e-9;

Vec3 vec3FromJson(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw DomainError(std::string(what) + " must be a 3-array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

nlohmann::json vec3ToJson(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

}  // namespace

void ChainModel::validate() const {
  if (joints.empty()) throw DomainError("chain has no joints");
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const auto& jt = joints[i];
    if (std::abs(jt.axis.norm() - 1.0) > kUnitTol)
      throw DomainError("joint " + std::to_string(i) + " axis is not unit length");
    if (!(jt.lo < jt.hi)) throw DomainError("joint " + std::to_string(i) + " has lo >= hi");
  }
  if (!(forcepLength > 0.0)) throw DomainError("forcepLength must be positive");
  if (std::abs(toolAxis.norm() - 1.0) > kUnitTol) throw DomainError("tool axis is not unit length");
  if (std::abs(baseOrientation.norm() - 1.0) > kUnitTol) throw DomainError("base orientation is not a unit quaternion");
}

Eigen::VectorXd JointState::packed() const {
  Eigen::VectorXd v(theta.size() + 1);
  v.head(theta.size()) = theta;
  v[theta.size()] = thetaVirtual;
  return v;
}

JointState JointState::unpack(const Eigen::VectorXd& v) {
  JointState q;
  q.theta = v.head(v.size() - 1);
  q.thetaVirtual = v[v.size() - 1];
  return q;
}

void checkLimits(const ChainModel& chain, const JointState& q) {
  if (static_cast<std::size_t>(q.theta.size()) != chain.dof())
    throw DomainError("joint vector has " + std::to_string(q.theta.size()) + " entries, chain has " +
                      std::to_string(chain.dof()));
  for (std::size_t i = 0; i < chain.dof(); ++i) {
    const double a = q.theta[static_cast<Eigen::Index>(i)];
    if (!std::isfinite(a) || a < chain.joints[i].lo || a > chain.joints[i].hi) {
      std::ostringstream os;
      os << "joint " << i << " angle " << a << " outside [" << chain.joints[i].lo << ", " << chain.joints[i].hi << "]";
      throw DomainError(os.str());
    }
  }
  if (!std::isfinite(q.thetaVirtual) || q.thetaVirtual < 0.0 || q.thetaVirtual > chain.forcepLength) {
    std::ostringstream os;
    os << "joint " << chain.dof() << " (virtual) extension " << q.thetaVirtual << " outside [0, " << chain.forcepLength
       << "]";
    throw DomainError(os.str());
  }
}

JointState clampToLimits(const ChainModel& chain, const JointState& q) {
  JointState out = q;
  for (std::size_t i = 0; i < chain.dof(); ++i) {
    auto& a = out.theta[static_cast<Eigen::Index>(i)];
    a = std::clamp(a, chain.joints[i].lo, chain.joints[i].hi);
  }
  out.thetaVirtual = std::clamp(out.thetaVirtual, 0.0, chain.forcepLength);
  return out;
}

namespace {

struct ChainFrames {
  std::vector<Vec3> jointPos;   // world position of each joint
  std::vector<Vec3> jointAxis;  // world axis of each joint
  Eigen::Matrix3d handRot;
  Vec3 handPos;
};

ChainFrames computeFrames(const ChainModel& chain, const JointState& q) {
  ChainFrames f;
  f.jointPos.reserve(chain.dof());
  f.jointAxis.reserve(chain.dof());
  Eigen::Matrix3d R = chain.baseOrientation.toRotationMatrix();
  Vec3 p = chain.basePosition;
  for (std::size_t i = 0; i < chain.dof(); ++i) {
    const auto& jt = chain.joints[i];
    p += R * jt.origin;
    f.jointPos.push_back(p);
    f.jointAxis.push_back(R * jt.axis);
    R = R * Eigen::AngleAxisd(q.theta[static_cast<Eigen::Index>(i)], jt.axis).toRotationMatrix();
  }
  f.handRot = R;
  f.handPos = p + R * chain.flangeOffset;
  return f;
}

}  // namespace

FkResult forwardKinematics(const ChainModel& chain, const JointState& q) {
  checkLimits(chain, q);
  const ChainFrames f = computeFrames(chain, q);
  FkResult r;
  r.hand.position = f.handPos;
  r.hand.orientation = Eigen::Quaterniond(f.handRot).normalized();
  r.toolAxisWorld = f.handRot * chain.toolAxis;
  r.forcepTip = f.handPos + chain.forcepLength * r.toolAxisWorld;
  r.virtualTip = f.handPos + q.thetaVirtual * r.toolAxisWorld;
  return r;
}

Jacobians jacobians(const ChainModel& chain, const JointState& q) {
  checkLimits(chain, q);
  const ChainFrames f = computeFrames(chain, q);
  const Vec3 axis = f.handRot * chain.toolAxis;
  const Vec3 tip = f.handPos + chain.forcepLength * axis;
  const Vec3 vtip = f.handPos + q.thetaVirtual * axis;
  const auto n = static_cast<Eigen::Index>(chain.dof());
  Jacobians J;
  J.forcep.setZero(3, n + 1);
  J.virtualTip.setZero(3, n + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3& w = f.jointAxis[static_cast<std::size_t>(i)];
    const Vec3& o = f.jointPos[static_cast<std::size_t>(i)];
    J.forcep.col(i) = w.cross(tip - o);
    J.virtualTip.col(i) = w.cross(vtip - o);
  }
  J.virtualTip.col(n) = axis;
  return J;
}

ChainModel syntheticPandaLikeChain() {
  ChainModel c;
  // Offsets in mm, axes in the (shared) zero-configuration frame.
  c.joints = {
      {Vec3(0, 0, 1), Vec3(0, 0, 333), -2.8973, 2.8973},
      {Vec3(0, 1, 0), Vec3(0, 0, 0), -1.7628, 1.7628},
      {Vec3(0, 0, 1), Vec3(0, 0, 316), -2.8973, 2.8973},
      {Vec3(0, -1, 0), Vec3(82.5, 0, 0), -3.0718, -0.0698},
      {Vec3(0, 0, 1), Vec3(-82.5, 0, 384), -2.8973, 2.8973},
      {Vec3(0, -1, 0), Vec3(0, 0, 0), -0.0175, 3.7525},
      {Vec3(0, 0, -1), Vec3(88, 0, 0), -2.8973, 2.8973},
  };
  c.flangeOffset = Vec3(0, 0, -107);
  c.toolAxis = Vec3(0, 0, -1);
  c.forcepLength = 300.0;
  return c;
}

ChainModel chainFromJson(const nlohmann::json& j) {
  ChainModel c;
  const auto& axes = j.at("axes");
  const auto& origins = j.at("origins");
  const auto& limits = j.at("limits");
  if (axes.size() != origins.size() || axes.size() != limits.size())
    throw DomainError("axes, origins and limits must have equal length");
  for (std::size_t i = 0; i < axes.size(); ++i) {
    RevoluteJoint jt;
    jt.axis = vec3FromJson(axes[i], "axes[i]");
    jt.origin = vec3FromJson(origins[i], "origins[i]");
    if (!limits[i].is_array() || limits[i].size() != 2) throw DomainError("limits[i] must be a 2-array");
    jt.lo = limits[i][0].get<double>();
    jt.hi = limits[i][1].get<double>();
    c.joints.push_back(jt);
  }
  c.forcepLength = j.at("forcep_length_mm").get<double>();
  c.toolAxis = vec3FromJson(j.at("tool_axis"), "tool_axis");
  if (j.contains("flange_offset")) c.flangeOffset = vec3FromJson(j["flange_offset"], "flange_offset");
  if (j.contains("base_position")) c.basePosition = vec3FromJson(j["base_position"], "base_position");
  if (j.contains("base_rpy")) {
    const Vec3 rpy = vec3FromJson(j["base_rpy"], "base_rpy");
    c.baseOrientation = Eigen::AngleAxisd(rpy.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(rpy.y(), Vec3::UnitY()) *
                        Eigen::AngleAxisd(rpy.x(), Vec3::UnitX());
  }
  c.validate();
  return c;
}

nlohmann::json chainToJson(const ChainModel& chain) {
  nlohmann::json j;
  j["axes"] = nlohmann::json::array();
  j["origins"] = nlohmann::json::array();
  j["limits"] = nlohmann::json::array();
  for (const auto& jt : chain.joints) {
    j["axes"].push_back(vec3ToJson(jt.axis));
    j["origins"].push_back(vec3ToJson(jt.origin));
    j["limits"].push_back({jt.lo, jt.hi});
  }
  j["forcep_length_mm"] = chain.forcepLength;
  j["tool_axis"] = vec3ToJson(chain.toolAxis);
  j["flange_offset"] = vec3ToJson(chain.flangeOffset);
  j["base_position"] = vec3ToJson(chain.basePosition);
  const Vec3 ypr = chain.baseOrientation.toRotationMatrix().eulerAngles(2, 1, 0);
  j["base_rpy"] = vec3ToJson(Vec3(ypr[2], ypr[1], ypr[0]));
  return j;
}

ChainModel loadChain(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open chain config " + path.string());
  return chainFromJson(nlohmann::json::parse(in));
}

}  // namespace fls::kinematics
