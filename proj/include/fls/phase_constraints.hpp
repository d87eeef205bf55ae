#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "fls/trajectory.hpp"

namespace fls::phase {

struct TransitionConfig {
  double velocityThreshold = 1.0;  // mm per 10 Hz step
  int nThreConstraintGen = 20;
  int nThreCollection = 10;
  void validate() const;
};

enum class BoundaryCause { Converged, GripperChangeLeft, GripperChangeRight };
const char* causeName(BoundaryCause c);

struct PhaseConstraint {
  int phaseIndex = 1;  // 1-based
  Arm arm = Arm::Right;
  double zLo = 0.0;
  double zHi = 0.0;
  bool operator==(const PhaseConstraint&) const = default;
};

struct PhaseTrace {
  std::vector<long> boundaries;
  std::vector<BoundaryCause> causes;
  std::vector<int> nStopSeries;
  int phaseCount() const { return static_cast<int>(boundaries.size()) + 1; }
};

/// Streaming form of the transition condition: both-arm slow-motion counter
/// plus gripper-change events. Velocity is the backward difference of the
/// commanded tips; the first sample has no predecessor and does not count.
class PhaseDetector {
 public:
  explicit PhaseDetector(double velocityThreshold, int nThre);

  /// Feeds one sample; returns the cause when this sample closes a phase.
  std::optional<BoundaryCause> push(const TrajectoryStep& s);

  int phaseIndex() const { return phase_; }  // 1-based phase of the next sample
  int nStop() const { return nStop_; }
  long samples() const { return count_; }

 private:
  double threshold_;
  int nThre_;
  int nStop_ = 0;
  int phase_ = 1;
  long count_ = 0;
  std::optional<TrajectoryStep> prev_;
};

PhaseTrace detectPhases(const std::vector<TrajectoryStep>& demo, double velocityThreshold, int nThre);
inline PhaseTrace detectPhases(const std::vector<TrajectoryStep>& demo, const TransitionConfig& cfg) {
  return detectPhases(demo, cfg.velocityThreshold, cfg.nThreConstraintGen);
}

/// Per phase and arm, the z band spanned by the phase's start and end samples.
/// Output is ordered by phase, left before right.
std::vector<PhaseConstraint> extractConstraints(const std::vector<TrajectoryStep>& demo, const PhaseTrace& trace);

/// Proportional restoring force on the depth command; zero on the closed band.
double feedbackForce(double zRef, const PhaseConstraint& c, double kp);

/// Simulated operator yielding to the feedback: compliance 1 clamps onto the
/// band, 0 passes the command through.
double constrainedFilter(double zRef, const PhaseConstraint& c, double compliance);
std::vector<double> constrainedFilter(const std::vector<double>& zRef, const PhaseConstraint& c, double compliance);

/// Band for (phase, arm), falling back to the last phase once the live index
/// runs past the extracted set.
std::optional<PhaseConstraint> activeConstraint(const std::vector<PhaseConstraint>& set, int phaseIndex, Arm arm);

void writeConstraints(const std::filesystem::path& path, const std::vector<PhaseConstraint>& set);
std::vector<PhaseConstraint> readConstraints(const std::filesystem::path& path);

}  // namespace fls::phase
