#include "fls/phase_constraints.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fls::phase {

void TransitionConfig::validate() const {
  if (!(velocityThreshold > 0.0)) throw DomainError("velocity threshold must be positive");
  if (nThreConstraintGen < 1 || nThreCollection < 1) throw DomainError("N_thre values must be positive");
  if (nThreCollection > nThreConstraintGen) throw DomainError("nThreCollection must not exceed nThreConstraintGen");
}

const char* causeName(BoundaryCause c) {
  switch (c) {
    case BoundaryCause::Converged: return "converged";
    case BoundaryCause::GripperChangeLeft: return "gripper_left";
    case BoundaryCause::GripperChangeRight: return "gripper_right";
  }
  return "?";
}

PhaseDetector::PhaseDetector(double velocityThreshold, int nThre) : threshold_(velocityThreshold), nThre_(nThre) {
  if (!(velocityThreshold > 0.0) || nThre < 1) throw DomainError("invalid phase detector settings");
}

std::optional<BoundaryCause> PhaseDetector::push(const TrajectoryStep& s) {
  ++count_;
  std::optional<BoundaryCause> cause;
  if (prev_) {
    if (s.gripperClosed[armIndex(Arm::Right)] != prev_->gripperClosed[armIndex(Arm::Right)]) {
      cause = BoundaryCause::GripperChangeRight;
    } else if (s.gripperClosed[armIndex(Arm::Left)] != prev_->gripperClosed[armIndex(Arm::Left)]) {
      cause = BoundaryCause::GripperChangeLeft;
    } else {
      const bool slow = (s.xRef[0] - prev_->xRef[0]).norm() < threshold_ && (s.xRef[1] - prev_->xRef[1]).norm() < threshold_;
      nStop_ = slow ? nStop_ + 1 : 0;
      if (nStop_ >= nThre_) cause = BoundaryCause::Converged;
    }
  }
  if (cause) {
    nStop_ = 0;
    ++phase_;
  }
  prev_ = s;
  return cause;
}

PhaseTrace detectPhases(const std::vector<TrajectoryStep>& demo, double velocityThreshold, int nThre) {
  if (demo.size() < 2) throw DomainError("phase detection needs at least 2 samples");
  PhaseDetector det(velocityThreshold, nThre);
  PhaseTrace trace;
  trace.nStopSeries.reserve(demo.size());
  for (std::size_t k = 0; k < demo.size(); ++k) {
    if (auto c = det.push(demo[k])) {
      trace.boundaries.push_back(static_cast<long>(k));
      trace.causes.push_back(*c);
    }
    trace.nStopSeries.push_back(det.nStop());
  }
  return trace;
}

std::vector<PhaseConstraint> extractConstraints(const std::vector<TrajectoryStep>& demo, const PhaseTrace& trace) {
  if (demo.empty()) throw DomainError("empty demonstration");
  const long last = static_cast<long>(demo.size()) - 1;
  for (std::size_t i = 0; i < trace.boundaries.size(); ++i) {
    if (trace.boundaries[i] < 0 || trace.boundaries[i] > last || (i > 0 && trace.boundaries[i] <= trace.boundaries[i - 1]))
      throw DomainError("phase trace inconsistent with demonstration");
  }
  std::vector<PhaseConstraint> out;
  const int nc = trace.phaseCount();
  for (int i = 1; i <= nc; ++i) {
    const long start = (i == 1) ? 0 : trace.boundaries[static_cast<std::size_t>(i - 2)];
    const long end = (i == nc) ? last : trace.boundaries[static_cast<std::size_t>(i - 1)];
    for (Arm a : {Arm::Left, Arm::Right}) {
      const double z0 = demo[static_cast<std::size_t>(start)].xRef[armIndex(a)].z();
      const double z1 = demo[static_cast<std::size_t>(end)].xRef[armIndex(a)].z();
      out.push_back({i, a, std::min(z0, z1), std::max(z0, z1)});
    }
  }
  return out;
}

double feedbackForce(double zRef, const PhaseConstraint& c, double kp) {
  if (!(kp >= 0.0)) throw DomainError("kp must be non-negative");
  if (zRef < c.zLo) return kp * (c.zLo - zRef);
  if (zRef > c.zHi) return kp * (c.zHi - zRef);
  return 0.0;
}

double constrainedFilter(double zRef, const PhaseConstraint& c, double compliance) {
  if (!(compliance >= 0.0 && compliance <= 1.0)) throw DomainError("compliance must lie in [0, 1]");
  // zRef + compliance * F/kp, written around the violated bound so that
  // compliance 1 lands exactly on it
  if (compliance == 0.0 || (zRef >= c.zLo && zRef <= c.zHi)) return zRef;
  const double bound = zRef < c.zLo ? c.zLo : c.zHi;
  return bound + (1.0 - compliance) * (zRef - bound);
}

std::vector<double> constrainedFilter(const std::vector<double>& zRef, const PhaseConstraint& c, double compliance) {
  std::vector<double> out;
  out.reserve(zRef.size());
  for (double z : zRef) out.push_back(constrainedFilter(z, c, compliance));
  return out;
}

std::optional<PhaseConstraint> activeConstraint(const std::vector<PhaseConstraint>& set, int phaseIndex, Arm arm) {
  std::optional<PhaseConstraint> best;
  for (const auto& c : set) {
    if (c.arm != arm || c.phaseIndex > phaseIndex) continue;
    if (!best || c.phaseIndex > best->phaseIndex) best = c;
  }
  return best;
}

void writeConstraints(const std::filesystem::path& path, const std::vector<PhaseConstraint>& set) {
  std::ofstream out(path);
  if (!out) throw DomainError("cannot write " + path.string());
  out << "# phase arm z_lo_mm z_hi_mm\n" << std::setprecision(17);
  for (const auto& c : set) out << c.phaseIndex << ' ' << armName(c.arm) << ' ' << c.zLo << ' ' << c.zHi << '\n';
}

std::vector<PhaseConstraint> readConstraints(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot read " + path.string());
  std::vector<PhaseConstraint> out;
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    PhaseConstraint c;
    std::string arm;
    if (!(is >> c.phaseIndex >> arm >> c.zLo >> c.zHi))
      throw DomainError(path.string() + ":" + std::to_string(lineNo) + ": malformed constraint line");
    c.arm = parseArm(arm);
    if (c.zLo > c.zHi) throw DomainError(path.string() + ":" + std::to_string(lineNo) + ": z_lo > z_hi");
    out.push_back(c);
  }
  return out;
}

}  // namespace fls::phase
