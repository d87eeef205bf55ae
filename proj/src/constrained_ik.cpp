#include "fls/constrained_ik.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <deque>

namespace fls::ik {

using kinematics::ChainModel;
using kinematics::JointState;

namespace {

constexpr int kDivergenceWindow = 20;
constexpr double kDivergenceFactor = 10.0;

void validate(const ChainModel& chain, const IkProblem& p) {
  if (!p.targetTip.allFinite() || !p.port.allFinite()) throw DomainError("IK target or port is not finite");
  if (!p.seed.theta.allFinite() || !std::isfinite(p.seed.thetaVirtual)) throw DomainError("IK seed is not finite");
  const auto& s = p.settings;
  if (!(s.tolTip > 0.0) || !(s.tolPort > 0.0)) throw DomainError("IK tolerances must be positive");
  if (s.maxIters < 1) throw DomainError("IK maxIters must be >= 1");
  if (!(s.damping >= 0.0)) throw DomainError("IK damping must be non-negative");
  if (s.workspace && !s.workspace->contains(p.targetTip)) throw DomainError("IK target outside workspace box");
  kinematics::checkLimits(chain, p.seed);
}

}  // namespace

IkSolution solveIk(const ChainModel& chain, const IkProblem& problem) {
  validate(chain, problem);
  const auto& s = problem.settings;
  const auto n = static_cast<Eigen::Index>(chain.dof());

  JointState q = problem.seed;
  IkSolution best;
  double bestCost = std::numeric_limits<double>::infinity();
  std::deque<double> history;

  for (int it = 0;; ++it) {
    const auto fk = kinematics::forwardKinematics(chain, q);
    const Vec3 eTip = problem.targetTip - fk.forcepTip;
    const Vec3 ePort = problem.port - fk.virtualTip;
    const double rt = eTip.norm();
    const double rp = ePort.norm();
    const double cost = s.tipWeight * rt + s.portWeight * rp;

    if (cost < bestCost || !std::isfinite(bestCost)) {
      bestCost = cost;
      best.q = q;
      best.residualTip = rt;
      best.residualPort = rp;
      best.iterations = it;
    }
    if (rt <= s.tolTip && rp <= s.tolPort) {
      best = {q, rt, rp, it, true, false};
      return best;
    }
    if (it >= s.maxIters) break;

    history.push_back(cost);
    if (static_cast<int>(history.size()) > kDivergenceWindow + 1) history.pop_front();
    if (static_cast<int>(history.size()) == kDivergenceWindow + 1 &&
        history.back() > kDivergenceFactor * history.front()) {
      best.diverged = true;
      break;
    }

    const auto J = kinematics::jacobians(chain, q);
    Eigen::Matrix<double, 6, Eigen::Dynamic> A(6, n + 1);
    A.topRows<3>() = s.tipWeight * J.forcep;
    A.bottomRows<3>() = s.portWeight * J.virtualTip;
    Eigen::Matrix<double, 6, 1> e;
    e << s.tipWeight * eTip, s.portWeight * ePort;

    const Eigen::Matrix<double, 6, 6> G =
        A * A.transpose() + (s.damping * s.damping) * Eigen::Matrix<double, 6, 6>::Identity();
    Eigen::VectorXd dq = A.transpose() * G.ldlt().solve(e);

    // uniform step scaling keeps the update direction
    double scale = 1.0;
    const double maxRev = dq.head(n).cwiseAbs().maxCoeff();
    if (maxRev > s.maxJointStep) scale = std::min(scale, s.maxJointStep / maxRev);
    if (std::abs(dq[n]) > s.maxVirtualStep) scale = std::min(scale, s.maxVirtualStep / std::abs(dq[n]));
    dq *= scale;
    if (!dq.allFinite()) {
      best.diverged = true;
      break;
    }
    q = kinematics::clampToLimits(chain, JointState::unpack(q.packed() + dq));
  }
  best.converged = false;
  return best;
}

std::vector<IkSolution> trackTrajectory(const ChainModel& chain, const std::vector<Vec3>& targets, const Vec3& port,
                                        const JointState& seed, const IkSettings& settings) {
  if (targets.empty()) throw DomainError("trackTrajectory needs at least one target");
  std::vector<IkSolution> out;
  out.reserve(targets.size());
  JointState current = seed;
  for (const auto& t : targets) {
    IkProblem p{t, port, current, settings};
    out.push_back(solveIk(chain, p));
    current = out.back().q;
  }
  return out;
}

}  // namespace fls::ik
