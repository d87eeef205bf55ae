#pragma once

#include <array>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fls/cell.hpp"
#include "fls/config.hpp"
#include "fls/phase_constraints.hpp"
#include "fls/teacher.hpp"

namespace fls::teleop {

inline constexpr int kSchemaVersion = 1;

// client -> server

struct TargetDelta {
  Arm arm = Arm::Right;
  Vec3 delta = Vec3::Zero();  // mm
  bool operator==(const TargetDelta&) const = default;
};
struct GripperCommand {
  Arm arm = Arm::Right;
  bool closed = false;
  bool operator==(const GripperCommand&) const = default;
};
struct StartDemo {
  teacher::Variant variant = teacher::Variant::Constrained;
  bool operator==(const StartDemo&) const = default;
};
struct EndDemo {
  bool operator==(const EndDemo&) const = default;
};
using ClientMessage = std::variant<TargetDelta, GripperCommand, StartDemo, EndDemo>;

// server -> client

struct StateUpdate {
  long tick = 0;
  long ack = 0;  // client messages applied so far in this session
  std::array<Vec3, 2> tips{Vec3::Zero(), Vec3::Zero()};
  std::array<Vec3, 2> target{Vec3::Zero(), Vec3::Zero()};
  std::string object;  // attachment tag of the object
  std::array<bool, 2> grippers{false, false};
  int phase = 1;
  std::array<Vec3, 2> force{Vec3::Zero(), Vec3::Zero()};  // N, per arm
  bool recording = false;
  std::optional<std::string> frame;  // base64 PNG
  bool operator==(const StateUpdate&) const = default;
};
struct DemoSaved {
  std::string path;
  int steps = 0;
  bool operator==(const DemoSaved&) const = default;
};
struct ErrorMessage {
  std::string message;
  bool operator==(const ErrorMessage&) const = default;
};
struct Busy {
  std::string message;
  bool operator==(const Busy&) const = default;
};
using ServerMessage = std::variant<StateUpdate, DemoSaved, ErrorMessage, Busy>;

/// One JSON object per message, keys sorted, no trailing newline. Throws
/// DomainError on a wrong version, unknown type, missing or extra keys, or
/// non-finite numbers.
ClientMessage parseClientMessage(const std::string& text);
std::string serialize(const ClientMessage& m);
ServerMessage parseServerMessage(const std::string& text);
std::string serialize(const ServerMessage& m);

std::string base64(const std::vector<unsigned char>& bytes);

/// The simulation side of one teleoperation service: a cell stepped exactly
/// once per tick, fed by queued client messages. Thread-safe submit; tick()
/// is called by the single loop owner.
class TeleopSim {
 public:
  TeleopSim(harness::RunConfig cfg, std::vector<phase::PhaseConstraint> constraints, std::filesystem::path demoDir);

  void submit(const ClientMessage& m);
  /// Operator left; an unfinished demo is discarded.
  void disconnect();

  /// Applies queued messages (target deltas coalesce latest-wins per arm),
  /// steps the cell once, and returns the messages for the operator.
  std::vector<ServerMessage> tick();

  long ticks() const { return tick_; }
  bool recording() const { return recording_.has_value(); }

 private:
  void resetEpisode();

  harness::RunConfig cfg_;
  std::vector<phase::PhaseConstraint> constraints_;
  std::filesystem::path demoDir_;
  cell::Cell cell_;
  phase::PhaseDetector detector_;
  std::array<Vec3, 2> target_;
  std::array<bool, 2> grippers_{false, false};
  teacher::Variant mode_ = teacher::Variant::Constrained;
  std::optional<teacher::DemoRecord> recording_;
  long tick_ = 0;
  long ack_ = 0;
  int saved_ = 0;

  std::mutex mu_;
  std::deque<std::optional<ClientMessage>> inbox_;  // nullopt marks a disconnect
};

/// Websocket front end for a TeleopSim: one network worker thread, one
/// simulation thread at the configured tick rate, one operator at a time.
class TeleopServer {
 public:
  TeleopServer(harness::RunConfig cfg, std::vector<phase::PhaseConstraint> constraints, std::filesystem::path demoDir);
  ~TeleopServer();
  TeleopServer(const TeleopServer&) = delete;
  TeleopServer& operator=(const TeleopServer&) = delete;

  /// Binds 127.0.0.1 (port 0 picks a free one) and starts both threads.
  unsigned short start(unsigned short port);
  void stop();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

/// Long-running service for the CLI: loads constraints.txt from the output
/// directory and serves until SIGINT/SIGTERM.
void serveTeleop(const harness::RunConfig& cfg, unsigned short port);

}  // namespace fls::teleop
