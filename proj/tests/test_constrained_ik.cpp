#include <doctest.h>

#include <cmath>
#include <random>

#include "fls/cell.hpp"
#include "fls/constrained_ik.hpp"

using namespace fls;
using namespace fls::kinematics;
using namespace fls::ik;

namespace {

JointState interiorState(const ChainModel& c, std::mt19937_64& rng) {
  JointState q;
  q.theta.resize(static_cast<Eigen::Index>(c.dof()));
  for (std::size_t i = 0; i < c.dof(); ++i) {
    const double pad = 0.1 * (c.joints[i].hi - c.joints[i].lo);
    q.theta[static_cast<Eigen::Index>(i)] =
        std::uniform_real_distribution<double>(c.joints[i].lo + pad, c.joints[i].hi - pad)(rng);
  }
  q.thetaVirtual = std::uniform_real_distribution<double>(0.2 * c.forcepLength, 0.8 * c.forcepLength)(rng);
  return q;
}

JointState nearby(const ChainModel& c, const JointState& q, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.1);
  JointState s = q;
  for (Eigen::Index i = 0; i < s.theta.size(); ++i) s.theta[i] += n(rng);
  s.thetaVirtual += 100.0 * n(rng);
  return clampToLimits(c, s);
}

ChainModel planar3R() {
  ChainModel c;
  c.joints = {{Vec3::UnitZ(), Vec3::Zero(), -M_PI, M_PI},
              {Vec3::UnitZ(), Vec3(100, 0, 0), -M_PI, M_PI},
              {Vec3::UnitZ(), Vec3(80, 0, 0), -M_PI, M_PI}};
  c.flangeOffset = Vec3(50, 0, 0);
  c.forcepLength = 60.0;
  c.toolAxis = Vec3::UnitX();
  return c;
}

}  // namespace

TEST_CASE("zero residual at the seed returns immediately") {
  const auto c = syntheticPandaLikeChain();
  std::mt19937_64 rng(1);
  const auto q = interiorState(c, rng);
  const auto fk = forwardKinematics(c, q);
  const auto sol = solveIk(c, {fk.forcepTip, fk.virtualTip, q, {}});
  CHECK(sol.converged);
  CHECK(sol.iterations <= 2);
  CHECK((sol.q.packed() - q.packed()).norm() < 1e-9);
}

TEST_CASE("FK-generated targets are reached with the port pinned") {
  const auto c = syntheticPandaLikeChain();
  std::mt19937_64 rng(2024);
  int converged = 0;
  const int trials = 200;
  for (int k = 0; k < trials; ++k) {
    const auto qStar = interiorState(c, rng);
    const auto fk = forwardKinematics(c, qStar);
    const auto sol = solveIk(c, {fk.forcepTip, fk.virtualTip, nearby(c, qStar, rng), {}});
    if (sol.converged) ++converged;
    CHECK(sol.residualTip < 1e-3);
    CHECK(sol.residualPort < 1e-3);
    CHECK(sol.q.thetaVirtual >= 0.0);
    CHECK(sol.q.thetaVirtual <= c.forcepLength);
  }
  CHECK(converged == trials);
}

TEST_CASE("unreachable target ends unconverged with finite residuals") {
  const auto c = syntheticPandaLikeChain();
  std::mt19937_64 rng(4);
  const auto q = interiorState(c, rng);
  const auto fk = forwardKinematics(c, q);
  const auto sol = solveIk(c, {fk.forcepTip + Vec3(10000, 0, 0), fk.virtualTip, q, {}});
  CHECK_FALSE(sol.converged);
  CHECK(std::isfinite(sol.residualTip));
  CHECK(std::isfinite(sol.residualPort));
  CHECK(sol.residualTip > 1000.0);
  CHECK_NOTHROW(checkLimits(c, sol.q));
}

TEST_CASE("invalid problems raise domain errors") {
  const auto c = syntheticPandaLikeChain();
  JointState q{Eigen::VectorXd::Zero(7), 10.0};
  q.theta[3] = -1.0;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(solveIk(c, {Vec3(nan, 0, 0), Vec3::Zero(), q, {}}), DomainError);
  CHECK_THROWS_AS(solveIk(c, {Vec3::Zero(), Vec3(0, std::numeric_limits<double>::infinity(), 0), q, {}}), DomainError);
  IkSettings s;
  s.workspace = Box{Vec3(-100, -100, -100), Vec3(100, 100, 100)};
  CHECK_THROWS_AS(solveIk(c, {Vec3(500, 0, 0), Vec3::Zero(), q, s}), DomainError);
  s = {};
  s.maxIters = 0;
  CHECK_THROWS_AS(solveIk(c, {Vec3::Zero(), Vec3::Zero(), q, s}), DomainError);
  s = {};
  s.tolTip = 0.0;
  CHECK_THROWS_AS(solveIk(c, {Vec3::Zero(), Vec3::Zero(), q, s}), DomainError);
  CHECK_THROWS_AS(trackTrajectory(c, {}, Vec3::Zero(), q), DomainError);
}

TEST_CASE("solves are bit-reproducible") {
  const auto c = syntheticPandaLikeChain();
  std::mt19937_64 rng(8);
  const auto qStar = interiorState(c, rng);
  const auto fk = forwardKinematics(c, qStar);
  const IkProblem p{fk.forcepTip, fk.virtualTip, nearby(c, qStar, rng), {}};
  const auto a = solveIk(c, p);
  const auto b = solveIk(c, p);
  CHECK(a.q == b.q);
  CHECK(a.iterations == b.iterations);
  CHECK(a.residualTip == b.residualTip);
}

TEST_CASE("constant target tracks to a fixed point") {
  const auto cc = cell::defaultCellConfig();
  const auto home = cell::homeJoints(cc);
  const auto& chain = cc.chains[1];
  const Vec3 port = cc.geometry.ports[1];
  const std::vector<Vec3> targets(10, Vec3(80, -40, 50));
  const auto sols = trackTrajectory(chain, targets, port, home[1]);
  REQUIRE(sols.size() == targets.size());
  for (std::size_t k = 1; k < sols.size(); ++k) CHECK(sols[k].q == sols[1].q);
  for (const auto& s : sols) CHECK(s.converged);
}

TEST_CASE("straight sweep keeps both residuals within tolerance") {
  const auto cc = cell::defaultCellConfig();
  const auto home = cell::homeJoints(cc);
  const auto& chain = cc.chains[1];
  const Vec3 port = cc.geometry.ports[1];
  const Vec3 a(70, -40, 40), b = a + Vec3(30, 20, 30).normalized() * 50.0;
  std::vector<Vec3> targets;
  for (int k = 0; k < 100; ++k) targets.push_back(a + (b - a) * (k / 99.0));
  const auto sols = trackTrajectory(chain, targets, port, home[1]);
  REQUIRE(sols.size() == 100);
  double maxTip = 0.0, maxPort = 0.0;
  for (std::size_t k = 0; k < sols.size(); ++k) {
    maxTip = std::max(maxTip, sols[k].residualTip);
    maxPort = std::max(maxPort, sols[k].residualPort);
    // independent check: FK of the returned joints lands on the target
    const auto fk = forwardKinematics(chain, sols[k].q);
    CHECK((fk.forcepTip - targets[k]).norm() < 1e-3);
    CHECK((fk.virtualTip - port).norm() < 1e-3);
    // cold start from the home pose agrees on the tip
    const auto cold = solveIk(chain, {targets[k], port, home[1], {}});
    CHECK(cold.converged);
  }
  CHECK(maxTip < 1e-3);
  CHECK(maxPort < 1e-3);
}

TEST_CASE("forward then reversed sweep returns to the start on a planar chain") {
  const auto c = planar3R();
  const JointState q0{Vec3(0.3, -0.5, 0.4), 25.0};
  const auto fk0 = forwardKinematics(c, q0);
  const Vec3 port = fk0.virtualTip;
  // tangent to the reachable set: rotate the shaft about the port
  const Vec3 side = Vec3::UnitZ().cross(fk0.toolAxisWorld);
  std::vector<Vec3> fwd;
  for (int k = 0; k <= 40; ++k) {
    const double ang = 0.2 * k / 40.0;
    const Vec3 dir = std::cos(ang) * fk0.toolAxisWorld + std::sin(ang) * side;
    fwd.push_back(port + (c.forcepLength - q0.thetaVirtual - 0.25 * k) * dir);
  }
  auto path = fwd;
  path.insert(path.end(), fwd.rbegin(), fwd.rend());
  IkSettings tight;
  tight.tolTip = tight.tolPort = 1e-9;
  const auto sols = trackTrajectory(c, path, port, q0, tight);
  for (const auto& s : sols) CHECK(s.converged);
  CHECK((sols.back().q.theta - q0.theta).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(std::abs(sols.back().q.thetaVirtual - q0.thetaVirtual) < 1e-6);
}
