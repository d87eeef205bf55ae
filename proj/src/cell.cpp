#include "fls/cell.hpp"

#include <nlohmann/json.hpp>

namespace fls::cell {

using kinematics::ChainModel;
using kinematics::JointState;

namespace {

ChainModel mountedArm(const Vec3& base, double yaw) {
  ChainModel c = kinematics::syntheticPandaLikeChain();
  c.basePosition = base;
  c.baseOrientation = Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Vec3::UnitZ()));
  return c;
}

JointState readySeed() {
  JointState q;
  q.theta.resize(7);
  q.theta << 0.0, 0.2, 0.0, -1.9, 0.0, 2.3, 0.0;
  q.thetaVirtual = 200.0;
  return q;
}

nlohmann::json jointsToJson(const JointState& q) {
  nlohmann::json j;
  j["theta"] = std::vector<double>(q.theta.data(), q.theta.data() + q.theta.size());
  j["theta_virtual"] = q.thetaVirtual;
  return j;
}

JointState jointsFromJson(const nlohmann::json& j) {
  JointState q;
  const auto v = j.at("theta").get<std::vector<double>>();
  q.theta = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  q.thetaVirtual = j.at("theta_virtual").get<double>();
  return q;
}

}  // namespace

CellConfig defaultCellConfig() {
  CellConfig c;
  c.chains[0] = mountedArm(Vec3(40, 900, -200), -M_PI / 2);
  c.chains[1] = mountedArm(Vec3(100, -900, -200), M_PI / 2);
  c.nominalSeeds = {readySeed(), readySeed()};
  return c;
}

CellConfig cellConfigFromJson(const nlohmann::json& j) {
  CellConfig c = defaultCellConfig();
  if (j.contains("left_chain")) c.chains[0] = kinematics::chainFromJson(j["left_chain"]);
  if (j.contains("right_chain")) c.chains[1] = kinematics::chainFromJson(j["right_chain"]);
  if (j.contains("left_seed")) c.nominalSeeds[0] = jointsFromJson(j["left_seed"]);
  if (j.contains("right_seed")) c.nominalSeeds[1] = jointsFromJson(j["right_seed"]);
  if (j.contains("scene")) c.geometry = scene::geometryFromJson(j["scene"]);
  if (j.contains("ik")) {
    const auto& k = j["ik"];
    c.ik.tolTip = k.value("tol_tip_mm", c.ik.tolTip);
    c.ik.tolPort = k.value("tol_port_mm", c.ik.tolPort);
    c.ik.maxIters = k.value("max_iters", c.ik.maxIters);
    c.ik.damping = k.value("damping", c.ik.damping);
    c.ik.tipWeight = k.value("tip_weight", c.ik.tipWeight);
    c.ik.portWeight = k.value("port_weight", c.ik.portWeight);
  }
  return c;
}

nlohmann::json cellConfigToJson(const CellConfig& c) {
  nlohmann::json j;
  j["left_chain"] = kinematics::chainToJson(c.chains[0]);
  j["right_chain"] = kinematics::chainToJson(c.chains[1]);
  j["left_seed"] = jointsToJson(c.nominalSeeds[0]);
  j["right_seed"] = jointsToJson(c.nominalSeeds[1]);
  j["scene"] = scene::geometryToJson(c.geometry);
  j["ik"] = {{"tol_tip_mm", c.ik.tolTip},   {"tol_port_mm", c.ik.tolPort},   {"max_iters", c.ik.maxIters},
             {"damping", c.ik.damping},     {"tip_weight", c.ik.tipWeight}, {"port_weight", c.ik.portWeight}};
  return j;
}

std::array<JointState, 2> homeJoints(const CellConfig& config) {
  std::array<JointState, 2> out;
  for (std::size_t a = 0; a < 2; ++a) {
    ik::IkSettings s = config.ik;
    s.maxIters = 2000;
    const ik::IkProblem p{config.geometry.homeTips[a], config.geometry.ports[a], config.nominalSeeds[a], s};
    const auto sol = ik::solveIk(config.chains[a], p);
    if (!sol.converged)
      throw DomainError(std::string("home pose unreachable for the ") + armName(static_cast<Arm>(a)) + " arm");
    out[a] = sol.q;
  }
  return out;
}

Cell::Cell(CellConfig config, int sourcePeg)
    : config_(std::move(config)), state_(scene::initialState(config_.geometry, sourcePeg)), joints_(homeJoints(config_)) {}

StepResult Cell::apply(const std::array<Vec3, 2>& tipTargets, const std::array<bool, 2>& grippers) {
  StepResult r;
  std::array<Vec3, 2> achieved;
  for (std::size_t a = 0; a < 2; ++a) {
    const ik::IkProblem p{tipTargets[a], config_.geometry.ports[a], joints_[a], config_.ik};
    r.ik[a] = ik::solveIk(config_.chains[a], p);
    r.ikOk = r.ikOk && r.ik[a].converged;
    joints_[a] = r.ik[a].q;
    achieved[a] = kinematics::forwardKinematics(config_.chains[a], joints_[a]).forcepTip;
  }
  state_ = scene::step(state_, config_.geometry, achieved, grippers);
  return r;
}

}  // namespace fls::cell
