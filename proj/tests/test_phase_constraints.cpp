#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "fls/cell.hpp"
#include "fls/phase_constraints.hpp"
#include "fls/teacher.hpp"

using namespace fls;
using namespace fls::phase;

namespace {

TrajectoryStep sample(long t, const Vec3& left, const Vec3& right, bool hl = false, bool hr = false) {
  TrajectoryStep s;
  s.t = t;
  s.xRef = {left, right};
  s.gripperClosed = {hl, hr};
  return s;
}

// Left arm parked, right arm following the given depth profile.
std::vector<TrajectoryStep> rightDepthProfile(const std::vector<double>& z) {
  std::vector<TrajectoryStep> out;
  for (std::size_t k = 0; k < z.size(); ++k) out.push_back(sample(static_cast<long>(k), Vec3(0, 0, 50), Vec3(0, 0, z[k])));
  return out;
}

// Linear ramp with 5 mm steps (fast) followed by `dwell` stationary samples.
void appendSegment(std::vector<double>& z, double to, int dwell) {
  const double from = z.back();
  const int n = std::max(1, static_cast<int>(std::ceil(std::abs(to - from) / 5.0)));
  for (int k = 1; k <= n; ++k) z.push_back(from + (to - from) * k / n);
  for (int k = 0; k < dwell; ++k) z.push_back(to);
}

}  // namespace

TEST_CASE("constant velocity without gripper events never transitions") {
  std::vector<TrajectoryStep> d;
  for (int k = 0; k < 200; ++k) d.push_back(sample(k, Vec3(2.0 * k, 0, 50), Vec3(0, 1.5 * k, 50)));
  const auto tr = detectPhases(d, 1.0, 20);
  CHECK(tr.boundaries.empty());
  CHECK(tr.phaseCount() == 1);
}

TEST_CASE("stationary for exactly nThre steps gives one boundary") {
  // step 0 has no predecessor, so nThre slow samples need nThre + 1 in total
  const int nThre = 20;
  std::vector<TrajectoryStep> d;
  for (int k = 0; k <= nThre; ++k) d.push_back(sample(k, Vec3(1, 2, 3), Vec3(4, 5, 6)));
  const auto tr = detectPhases(d, 1.0, nThre);
  REQUIRE(tr.boundaries.size() == 1);
  CHECK(tr.boundaries[0] == nThre);
  CHECK(tr.causes[0] == BoundaryCause::Converged);
  CHECK(tr.nStopSeries[static_cast<std::size_t>(nThre - 1)] == nThre - 1);
  CHECK(tr.nStopSeries[static_cast<std::size_t>(nThre)] == 0);

  d.pop_back();
  CHECK(detectPhases(d, 1.0, nThre).boundaries.empty());
}

TEST_CASE("both arms must be slow") {
  std::vector<TrajectoryStep> d;
  for (int k = 0; k < 60; ++k) d.push_back(sample(k, Vec3(0, 0, 50), Vec3(3.0 * k, 0, 50)));
  CHECK(detectPhases(d, 1.0, 10).boundaries.empty());
}

TEST_CASE("gripper changes transition immediately and reset the counter") {
  std::vector<TrajectoryStep> d;
  for (int k = 0; k < 8; ++k) d.push_back(sample(k, Vec3::Zero(), Vec3::Zero()));
  d.push_back(sample(8, Vec3::Zero(), Vec3::Zero(), false, true));
  for (int k = 9; k < 16; ++k) d.push_back(sample(k, Vec3::Zero(), Vec3::Zero(), false, true));
  d.push_back(sample(16, Vec3::Zero(), Vec3::Zero(), true, true));
  const auto tr = detectPhases(d, 1.0, 10);
  REQUIRE(tr.boundaries.size() == 2);
  CHECK(tr.boundaries[0] == 8);
  CHECK(tr.causes[0] == BoundaryCause::GripperChangeRight);
  CHECK(tr.boundaries[1] == 16);
  CHECK(tr.causes[1] == BoundaryCause::GripperChangeLeft);
  CHECK(tr.nStopSeries[8] == 0);
  CHECK(tr.nStopSeries[15] == 7);
}

TEST_CASE("counter invariants on random streams") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::bernoulli_distribution still(0.8), toggle(0.03), bigStep(0.1);
  for (int run = 0; run < 50; ++run) {
    std::vector<TrajectoryStep> d;
    Vec3 l = Vec3::Zero(), r = Vec3::Zero();
    std::array<bool, 2> h{false, false};
    for (int k = 0; k < 300; ++k) {
      if (!still(rng)) l += Vec3(u(rng), u(rng), u(rng)) * (bigStep(rng) ? 5.0 : 0.5);
      if (!still(rng)) r += Vec3(u(rng), u(rng), u(rng)) * (bigStep(rng) ? 5.0 : 0.5);
      if (toggle(rng)) h[0] = !h[0];
      if (toggle(rng)) h[1] = !h[1];
      d.push_back(sample(k, l, r, h[0], h[1]));
    }
    const auto tr = detectPhases(d, 1.0, 10);
    for (std::size_t i = 1; i < tr.boundaries.size(); ++i) CHECK(tr.boundaries[i] > tr.boundaries[i - 1]);
    for (long b : tr.boundaries) CHECK(tr.nStopSeries[static_cast<std::size_t>(b)] == 0);
    for (std::size_t k = 1; k < d.size(); ++k) {
      const bool fast = (d[k].xRef[0] - d[k - 1].xRef[0]).norm() >= 1.0 || (d[k].xRef[1] - d[k - 1].xRef[1]).norm() >= 1.0;
      if (fast) CHECK(tr.nStopSeries[k] == 0);
      CHECK(tr.nStopSeries[k] < 10);
    }
  }
}

TEST_CASE("detector rejects short demos and bad settings") {
  CHECK_THROWS_AS(detectPhases({sample(0, Vec3::Zero(), Vec3::Zero())}, 1.0, 10), DomainError);
  CHECK_THROWS_AS(PhaseDetector(0.0, 10), DomainError);
  CHECK_THROWS_AS(PhaseDetector(1.0, 0), DomainError);
  TransitionConfig c;
  CHECK_NOTHROW(c.validate());
  c.nThreCollection = 30;
  CHECK_THROWS_AS(c.validate(), DomainError);
}

TEST_CASE("bands come from the start and end samples only") {
  std::vector<double> z{40.0};
  // descend 40 -> 20 with a dip to 15 in the middle, then dwell
  for (double v : {35.0, 30.0, 25.0, 20.0, 15.0, 18.0, 20.0}) z.push_back(v);
  for (int k = 0; k < 12; ++k) z.push_back(20.0);
  const auto d = rightDepthProfile(z);
  const auto tr = detectPhases(d, 1.0, 10);
  REQUIRE(tr.phaseCount() == 2);
  const auto bands = extractConstraints(d, tr);
  const auto c1 = activeConstraint(bands, 1, Arm::Right);
  REQUIRE(c1);
  CHECK(c1->zLo == 20.0);
  CHECK(c1->zHi == 40.0);
}

TEST_CASE("three-phase profile yields the nested band pattern") {
  const double z0 = 10.0, z1 = 30.0, z2 = 60.0;
  std::vector<double> z{z2};
  appendSegment(z, z1, 12);
  appendSegment(z, z0, 12);
  appendSegment(z, z2, 0);
  const auto d = rightDepthProfile(z);
  const auto tr = detectPhases(d, 1.0, 10);
  REQUIRE(tr.phaseCount() == 3);
  const auto bands = extractConstraints(d, tr);
  REQUIRE(bands.size() == 6);
  CHECK(*activeConstraint(bands, 1, Arm::Right) == PhaseConstraint{1, Arm::Right, z1, z2});
  CHECK(*activeConstraint(bands, 2, Arm::Right) == PhaseConstraint{2, Arm::Right, z0, z1});
  CHECK(*activeConstraint(bands, 3, Arm::Right) == PhaseConstraint{3, Arm::Right, z0, z2});
  CHECK(*activeConstraint(bands, 2, Arm::Left) == PhaseConstraint{2, Arm::Left, 50.0, 50.0});
  // indices past the set fall back to the last phase
  CHECK(activeConstraint(bands, 9, Arm::Right)->phaseIndex == 3);
  CHECK_FALSE(activeConstraint(bands, 0, Arm::Right));
}

TEST_CASE("extraction is invariant to mid-phase noise") {
  const auto cc = cell::defaultCellConfig();
  const auto demo = teacher::exemplaryDemo(cc, 0);
  const auto tr = detectPhases(demo.steps, TransitionConfig{});
  const auto ref = extractConstraints(demo.steps, tr);
  std::vector<long> keep{0, static_cast<long>(demo.steps.size()) - 1};
  keep.insert(keep.end(), tr.boundaries.begin(), tr.boundaries.end());
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n(0.0, 8.0);
  for (int trial = 0; trial < 20; ++trial) {
    auto noisy = demo.steps;
    for (std::size_t k = 0; k < noisy.size(); ++k) {
      if (std::find(keep.begin(), keep.end(), static_cast<long>(k)) != keep.end()) continue;
      for (auto& x : noisy[k].xRef) x.z() += n(rng);
    }
    CHECK(extractConstraints(noisy, tr) == ref);
  }
}

TEST_CASE("inconsistent traces are rejected") {
  const auto d = rightDepthProfile({1, 2, 3, 4});
  PhaseTrace tr;
  tr.boundaries = {2, 9};
  CHECK_THROWS_AS(extractConstraints(d, tr), DomainError);
  tr.boundaries = {2, 2};
  CHECK_THROWS_AS(extractConstraints(d, tr), DomainError);
}

TEST_CASE("force law") {
  const PhaseConstraint c{1, Arm::Right, 20.0, 40.0};
  CHECK(feedbackForce(20.0, c, 0.5) == 0.0);
  CHECK(feedbackForce(40.0, c, 0.5) == 0.0);
  CHECK(feedbackForce(30.0, c, 0.5) == 0.0);
  CHECK(feedbackForce(18.0, c, 0.5) == 1.0);
  CHECK(feedbackForce(43.0, c, 0.5) == -1.5);
  CHECK_THROWS_AS(feedbackForce(30.0, c, -1.0), DomainError);

  // dense sweep: piecewise linear with slopes -kp, 0, -kp and no jumps
  const double kp = 0.7, h = 1e-3;
  double maxJump = 0.0, prev = feedbackForce(0.0, c, kp);
  for (int k = 1; k <= 60000; ++k) {
    const double z = k * h;
    const double f = feedbackForce(z, c, kp);
    const double expectedSlope = (z <= c.zLo || z - h >= c.zHi) ? -kp : ((z - h >= c.zLo && z <= c.zHi) ? 0.0 : 99.0);
    if (expectedSlope != 99.0) CHECK((f - prev) / h == doctest::Approx(expectedSlope).epsilon(1e-6));
    maxJump = std::max(maxJump, std::abs(f - prev) - kp * h);
    prev = f;
  }
  CHECK(maxJump < 1e-12);
  for (double b : {c.zLo, c.zHi}) {
    CHECK(std::abs(feedbackForce(std::nextafter(b, -1e9), c, kp) - feedbackForce(b, c, kp)) < 1e-12);
    CHECK(std::abs(feedbackForce(std::nextafter(b, 1e9), c, kp) - feedbackForce(b, c, kp)) < 1e-12);
  }
}

TEST_CASE("constrained filter") {
  const PhaseConstraint c{2, Arm::Left, 20.0, 40.0};
  CHECK(constrainedFilter(10.0, c, 1.0) == 20.0);
  CHECK(constrainedFilter(50.0, c, 1.0) == 40.0);
  CHECK(constrainedFilter(10.0, c, 0.0) == 10.0);
  CHECK(constrainedFilter(16.0, c, 0.5) == 18.0);
  CHECK(constrainedFilter(30.0, c, 0.3) == 30.0);
  CHECK_THROWS_AS(constrainedFilter(30.0, c, 1.5), DomainError);

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-100.0, 200.0);
  std::vector<double> stream(10000);
  for (auto& z : stream) z = u(rng);
  const auto out = constrainedFilter(stream, c, 1.0);
  CHECK(std::all_of(out.begin(), out.end(), [&](double z) { return z >= c.zLo && z <= c.zHi; }));
  // the filtered value equals z + compliance * F / kp
  for (std::size_t k = 0; k < 100; ++k)
    CHECK(constrainedFilter(stream[k], c, 0.9) == doctest::Approx(stream[k] + 0.9 * feedbackForce(stream[k], c, 2.0) / 2.0));
}

TEST_CASE("constraint files round trip exactly") {
  const std::vector<PhaseConstraint> set{{1, Arm::Left, 70.0, 70.0}, {1, Arm::Right, 45.0, 70.1234567890123},
                                         {2, Arm::Left, 0.1 + 0.2, 1.0 / 3.0}};
  const auto path = std::filesystem::temp_directory_path() / "fls_constraints_test.txt";
  writeConstraints(path, set);
  CHECK(readConstraints(path) == set);
  std::filesystem::remove(path);
}
