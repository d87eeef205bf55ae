#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fls/config.hpp"
#include "fls/evaluation.hpp"

namespace fls::harness {

enum class Stage { ExtractConstraints, Collect, TrainAe, TrainRnnpb, Execute, Evaluate };
inline constexpr std::array<Stage, 6> kStages{Stage::ExtractConstraints, Stage::Collect, Stage::TrainAe,
                                              Stage::TrainRnnpb,         Stage::Execute, Stage::Evaluate};
const char* stageName(Stage s);
Stage parseStage(const std::string& s);

/// Files (relative to the output directory) whose presence marks a stage done.
std::vector<std::filesystem::path> stageOutputs(Stage s, const RunConfig& cfg);

/// Runs one stage, reading its inputs from the output directory.
void runStage(Stage s, const RunConfig& cfg);

struct StageRecord {
  Stage stage = Stage::ExtractConstraints;
  std::string status;  // ran | resumed | failed | skipped | not-requested
  std::string message;
  double seconds = 0.0;
};

struct PipelineOptions {
  bool resume = false;              // keep stages whose outputs exist, until one reruns
  std::optional<Stage> only;        // run a single stage
};

struct PipelineReport {
  std::vector<StageRecord> stages;
  std::filesystem::path manifest;
  bool ok() const;
  std::vector<std::string> ran() const;
};

/// Runs the stages in order and writes manifest.txt. A failing stage is
/// recorded and every later stage is skipped.
PipelineReport runPipeline(const RunConfig& cfg, const PipelineOptions& opts = {});

/// Hidden-state traces written by the execute stage for one variant
/// ("constrained" or "normal"), ordered by peg then trial.
std::vector<evaluation::LatentTrace> readLatentTraces(const RunConfig& cfg, const std::string& variant);

/// Lowercase hex SHA-256 of a file.
std::string sha256File(const std::filesystem::path& path);

/// "<hash>  <relative path>" for every file under `out`, sorted by path,
/// excluding the manifest and the training metrics stream.
std::vector<std::string> artifactHashes(const std::filesystem::path& out);

/// The hash lines of a written manifest.
std::vector<std::string> manifestHashes(const std::filesystem::path& manifest);

inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kManifestFile = "manifest.txt";

}  // namespace fls::harness
