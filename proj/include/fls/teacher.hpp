#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "fls/cell.hpp"
#include "fls/phase_constraints.hpp"
#include "fls/trajectory.hpp"

namespace fls::teacher {

struct TeacherStyle {
  double speedScale = 1.0;
  double lateralJitterStd = 0.0;  // mm, per waypoint
  double depthBiasStd = 0.0;      // mm, drawn once per demo
  int pauseJitter = 0;            // steps
  std::uint64_t seed = 0;
  void validate() const;
  bool operator==(const TeacherStyle&) const = default;
};

enum class Variant { Exemplary, Constrained, Normal };
const char* variantName(Variant v);
Variant parseVariant(const std::string& s);

struct DemoEvent {
  long t = 0;
  Arm arm = Arm::Right;
  bool closed = false;
  bool operator==(const DemoEvent&) const = default;
};

struct DemoRecord {
  std::vector<TrajectoryStep> steps;
  int sourcePeg = 0;
  Variant variant = Variant::Normal;
  TeacherStyle style;
  std::vector<DemoEvent> events;
  int regenerations = 0;  // failed attempts replaced with fresh seeds
};

/// Script timing and geometry of the simulated operator.
struct TeacherConfig {
  double nominalSpeed = 4.0;          // mm per step at speedScale 1
  double exemplarySpeedScale = 0.5;
  int dwellSteps = 14;                // collection dwell, between N_thre(10) and N_thre(20)
  int exemplaryDwellSteps = 25;
  int gripperPause = 3;
  int exemplaryGripperPause = 4;
  double hoverHeight = 45.0;          // tip z above the object before descending
  Vec3 handoffPoint{70.0, 0.0, 50.0};
  double handoffApproachHeight = 65.0;
  double carryHeight = 55.0;          // object z above the target peg
  double insertReleaseHeight = 35.0;  // object z when releasing onto the target peg
  double criticalLateralClip = 1.5;   // mm, per axis, grasp waypoints
  double criticalDepthClip = 5.0;
  double insertLateralClip = 2.0;
  double handoffDepthClip = 3.0;
  double compliance = 0.9;
  int maxRegenerations = 20;
  phase::TransitionConfig transition;
};

/// Slow, jitter-free reference demonstration from the given starting scene.
DemoRecord exemplaryDemo(const cell::CellConfig& cellConfig, int sourcePeg, const TeacherConfig& cfg = {});

/// One scripted demonstration. With constraints, depth commands pass through
/// the feedback filter using the live phase index; without, raw commands are
/// used. Returns nullopt when the attempt fails (IK or task failure).
std::optional<DemoRecord> attemptDemo(const cell::CellConfig& cellConfig, int sourcePeg, const TeacherStyle& style,
                                      const std::vector<phase::PhaseConstraint>* constraints, const TeacherConfig& cfg);

/// `count` demonstrations cycling over the three source pegs. A failed attempt
/// is retried with a seed derived from the original, so every returned demo
/// ends with the object inserted.
std::vector<DemoRecord> collectDemos(const cell::CellConfig& cellConfig,
                                     const std::vector<phase::PhaseConstraint>* constraints, int count,
                                     const std::vector<TeacherStyle>& styles, const TeacherConfig& cfg = {});

/// Seeded operator styles: speed in [0.8, 1.2], fixed jitter magnitudes.
std::vector<TeacherStyle> defaultStyles(int count, std::uint64_t seed, double lateralJitterStd = 1.0,
                                        double depthBiasStd = 6.0, int pauseJitter = 3);

/// Logged step for a commanded pose and the scene it produced.
TrajectoryStep stepFromScene(long t, const std::array<Vec3, 2>& xRef, const std::array<bool, 2>& grippers,
                             const scene::SceneState& s);

/// Scene state reconstructed from a logged step (used for re-rendering).
scene::SceneState sceneFromStep(const TrajectoryStep& s, const scene::SceneGeometry& g);

/// Fraction of steps whose commanded depth lies in the band active at that step.
double bandSatisfaction(const DemoRecord& demo, const std::vector<phase::PhaseConstraint>& constraints,
                        const phase::TransitionConfig& transition, Arm arm);

void writeDemoLog(const std::filesystem::path& path, const DemoRecord& demo);
DemoRecord readDemoLog(const std::filesystem::path& path);

}  // namespace fls::teacher
