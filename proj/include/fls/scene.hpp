#pragma once

#include <array>
#include <filesystem>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <vector>

#include "fls/common.hpp"

namespace fls::scene {

inline constexpr int kTargetPeg = 3;
inline constexpr int kFrameWidth = 128;
inline constexpr int kFrameHeight = 96;

enum class Attachment { OnPeg, HeldBy, Falling, Inserted };
const char* attachmentName(Attachment a);
Attachment parseAttachment(const std::string& s);

/// Peg board layout and interaction radii, all in mm.
struct SceneGeometry {
  std::array<Vec3, 4> pegs{Vec3(40, -40, 0), Vec3(70, -40, 0), Vec3(100, -40, 0), Vec3(70, 40, 0)};
  double pegHeight = 20.0;
  double objectRestHeight = 25.0;  // handle height while seated on a peg
  double graspRadius = 6.0;
  double captureRadius = 5.0;  // horizontal
  double insertHeight = 45.0;
  double dropPerStep = 10.0;
  double boardRestHeight = 2.0;  // handle height of an object lying on the board
  Vec3 boardMin{0, -70, 0};
  Vec3 boardMax{140, 70, 0};
  std::array<Vec3, 2> ports{Vec3(40, 110, 140), Vec3(100, -110, 140)};  // left, right
  std::array<Vec3, 2> homeTips{Vec3(45, 50, 70), Vec3(95, -50, 70)};    // left, right
};

SceneGeometry geometryFromJson(const nlohmann::json& j);
nlohmann::json geometryToJson(const SceneGeometry& g);

struct ObjectState {
  Vec3 position = Vec3::Zero();
  Attachment tag = Attachment::OnPeg;
  int peg = 0;               // meaningful for OnPeg / Inserted
  Arm holder = Arm::Right;   // meaningful for HeldBy
  bool coHeld = false;       // the other arm also grips (handoff in progress)
  std::array<Vec3, 2> gripOffset{Vec3::Zero(), Vec3::Zero()};  // object - tip, per arm

  bool operator==(const ObjectState&) const = default;
};

struct SceneState {
  std::array<Vec3, 4> pegPositions;
  ObjectState object;
  std::array<Vec3, 2> forcepTips;
  std::array<bool, 2> grippersClosed{false, false};
  std::array<Vec3, 2> ports;
  long time = 0;

  bool operator==(const SceneState&) const = default;
  bool heldBy(Arm a) const { return object.tag == Attachment::HeldBy && object.holder == a; }
};

/// Object seated on `sourcePeg`, tips at their home positions, grippers open.
SceneState initialState(const SceneGeometry& g, int sourcePeg);

/// One 10 Hz world update. Tips jump to `tipTargets` (already resolved by IK);
/// grasps are edge-triggered on open->closed, releases on closed->open.
SceneState step(const SceneState& state, const SceneGeometry& g, const std::array<Vec3, 2>& tipTargets,
                 const std::array<bool, 2>& gripperCmds);

struct SuccessFlags {
  bool take = false;
  bool pass = false;
  bool insert = false;
  bool operator==(const SuccessFlags&) const = default;
};

SuccessFlags successFlags(const std::vector<SceneState>& history);

/// RGB frame, row-major, 3 interleaved channels, values in [0,1].
struct Frame {
  static constexpr int width = kFrameWidth;
  static constexpr int height = kFrameHeight;
  std::vector<double> pixels = std::vector<double>(static_cast<std::size_t>(width * height * 3), 0.0);

  double& at(int x, int y, int c) { return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
  double at(int x, int y, int c) const { return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
  bool operator==(const Frame&) const = default;
};

/// Pixel coordinates of a world point under the fixed oblique camera.
Eigen::Vector2d project(const Vec3& p);

/// Deterministic flat-shaded rendering; every channel is a multiple of 1/255.
Frame render(const SceneState& state, const SceneGeometry& g);

/// PNG bytes of the frame (8-bit RGB).
std::vector<unsigned char> encodePng(const Frame& f);
void writePng(const std::filesystem::path& path, const Frame& f);
Frame readPng(const std::filesystem::path& path);

}  // namespace fls::scene
