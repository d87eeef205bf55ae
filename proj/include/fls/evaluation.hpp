#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

#include "fls/scene.hpp"
#include "fls/teacher.hpp"

namespace fls::evaluation {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct VarianceReport {
  double sigmaAve = 0.0;
  Arm arm = Arm::Right;
  int trials = 0;      // demos that entered the average
  int before = 0;      // aligned steps kept before the grasp
  int after = 0;       // aligned steps kept after the grasp
  int excluded = 0;    // demos without a right grasp
};

/// Aligns demos at their first right-arm grasp, truncates to the common
/// span, and averages the population variance of commanded z over steps.
VarianceReport sigmaAve(const std::vector<teacher::DemoRecord>& demos, Arm arm);

struct RunOutcome {
  std::string variant;
  int peg = 0;
  scene::SuccessFlags flags;
};

struct SuccessRow {
  std::string variant;
  int peg = -1;  // -1: all pegs
  int runs = 0, take = 0, pass = 0, insert = 0;
  bool operator==(const SuccessRow&) const = default;
};

/// Counts per (variant, peg) plus one all-peg row per variant, sorted.
std::vector<SuccessRow> successTable(const std::vector<RunOutcome>& runs);

struct PcaResult {
  Vec mean;
  Mat components;     // D x k, orthonormal columns
  Vec variance;       // k eigenvalues
  Vec explained;      // k ratios of total variance
  Mat projected;      // k x N
  int rank = 0;
};

/// Principal components of the columns of `data`. Each component is signed
/// so its largest-magnitude loading is positive. Components with eigenvalue
/// below 1e-12 of the largest are dropped (with a warning).
PcaResult pca(const Mat& data, int dims);
Mat backProject(const PcaResult& p, const Mat& projected);

enum class Stage { Take, Pass, Insert };
const char* stageName(Stage s);

/// Stage of every state: take until the right arm holds the object, pass
/// until the left arm holds it alone, insert afterwards. Monotone.
std::vector<Stage> stageAnnotations(const std::vector<scene::SceneState>& history);

struct LatentTrace {
  std::string runId;
  int peg = 0;
  Mat hidden;                 // H x T
  std::vector<Stage> stages;  // T
};

struct SeparationReport {
  double take = 0.0;
  double insert = 0.0;
  bool complete = false;  // every trace has both segments
};

/// Projects all traces with a common 2-D PCA; mean pairwise distance
/// between the take segments of different traces (each resampled to
/// `samples` points) versus that of the insert segments.
SeparationReport segmentSeparation(const std::vector<LatentTrace>& traces, int samples = 32);

void writeVarianceCsv(const std::filesystem::path& path, const std::vector<std::pair<std::string, VarianceReport>>& rows);
void writeSuccessCsv(const std::filesystem::path& path, const std::vector<SuccessRow>& rows);
void writeSuccessSvg(const std::filesystem::path& path, const std::vector<SuccessRow>& rows);
/// CSV (run, peg, step, stage, pc1, pc2) and SVG scatter colored by time
/// with markers at stage changes.
void writePcaCsv(const std::filesystem::path& path, const std::vector<LatentTrace>& traces, const PcaResult& p);
void writePcaSvg(const std::filesystem::path& path, const std::vector<LatentTrace>& traces, const PcaResult& p);

/// Stacks the hidden columns of all traces.
Mat stackTraces(const std::vector<LatentTrace>& traces);

}  // namespace fls::evaluation
