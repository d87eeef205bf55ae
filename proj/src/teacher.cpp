#include "fls/teacher.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <random>

namespace fls::teacher {

using phase::PhaseConstraint;

void TeacherStyle::validate() const {
  if (!(speedScale > 0.0)) throw DomainError("speedScale must be positive");
  if (lateralJitterStd < 0.0 || depthBiasStd < 0.0) throw DomainError("jitter magnitudes must be non-negative");
  if (pauseJitter < 0) throw DomainError("pauseJitter must be non-negative");
}

const char* variantName(Variant v) {
  switch (v) {
    case Variant::Exemplary: return "exemplary";
    case Variant::Constrained: return "constrained";
    case Variant::Normal: return "normal";
  }
  return "?";
}

Variant parseVariant(const std::string& s) {
  if (s == "exemplary") return Variant::Exemplary;
  if (s == "constrained") return Variant::Constrained;
  if (s == "normal") return Variant::Normal;
  throw DomainError("unknown variant '" + s + "'");
}

namespace {

enum class Waypoint { Free, Grasp, Handoff, Insert };

/// Drives the cell through a scripted peg transfer, one 10 Hz step at a time.
class ScriptRunner {
 public:
  ScriptRunner(const cell::CellConfig& cc, int sourcePeg, const TeacherStyle& style, double speedScale, int dwell,
               int pause, const std::vector<PhaseConstraint>* constraints, const TeacherConfig& cfg)
      : cell_(cc, sourcePeg),
        style_(style),
        rng_(style.seed),
        speed_(cfg.nominalSpeed * speedScale),
        dwell_(dwell),
        pause_(pause),
        constraints_(constraints),
        cfg_(cfg),
        live_(cfg.transition.velocityThreshold, cfg.transition.nThreCollection) {
    cmd_ = cc.geometry.homeTips;
    depthBias_ = std::normal_distribution<double>(0.0, 1.0)(rng_) * style.depthBiasStd;
  }

  const scene::SceneState& state() const { return cell_.state(); }
  Vec3 tip(Arm a) const { return cmd_[armIndex(a)]; }
  bool ok() const { return ok_; }

  int dwellLength() { return std::max(1, dwell_ + jitterSteps(style_.pauseJitter)); }
  int pauseLength() { return std::max(1, pause_ + (style_.pauseJitter > 0 ? jitterSteps(1) + 1 : 0)); }

  /// Perturbed copy of an intended waypoint. Lateral error is fresh per
  /// waypoint; depth error is the operator's misjudged depth, constant over the
  /// demo until force feedback reveals it.
  Vec3 perturb(const Vec3& p, Waypoint kind) {
    std::normal_distribution<double> n01(0.0, 1.0);
    double dx = n01(rng_) * style_.lateralJitterStd;
    double dy = n01(rng_) * style_.lateralJitterStd;
    double dz = corrected_ ? 0.0 : depthBias_;
    switch (kind) {
      case Waypoint::Free: break;
      case Waypoint::Grasp:
        dx = std::clamp(dx, -cfg_.criticalLateralClip, cfg_.criticalLateralClip);
        dy = std::clamp(dy, -cfg_.criticalLateralClip, cfg_.criticalLateralClip);
        dz = std::clamp(dz, -cfg_.criticalDepthClip, cfg_.criticalDepthClip);
        break;
      case Waypoint::Handoff:
        dz = std::clamp(dz, -cfg_.handoffDepthClip, cfg_.handoffDepthClip);
        break;
      case Waypoint::Insert:
        dx = std::clamp(dx, -cfg_.insertLateralClip, cfg_.insertLateralClip);
        dy = std::clamp(dy, -cfg_.insertLateralClip, cfg_.insertLateralClip);
        dz = std::clamp(dz, -cfg_.criticalDepthClip, cfg_.criticalDepthClip);
        break;
    }
    return p + Vec3(dx, dy, dz);
  }

  /// Straight-line move of one or both arms, finishing together.
  void move(const std::array<std::optional<Vec3>, 2>& goal) {
    const std::array<Vec3, 2> start = cmd_;
    double longest = 0.0;
    for (std::size_t a = 0; a < 2; ++a)
      if (goal[a]) longest = std::max(longest, (*goal[a] - start[a]).norm());
    if (longest < 1e-9) return;
    const int n = std::max(1, static_cast<int>(std::ceil(longest / speed_)));
    for (int k = 1; k <= n; ++k) {
      const double s = static_cast<double>(k) / n;
      for (std::size_t a = 0; a < 2; ++a)
        if (goal[a]) intent_[a] = start[a] + s * (*goal[a] - start[a]);
      emit();
    }
  }

  void hold(int steps) {
    for (int k = 0; k < steps; ++k) emit();
  }

  void grip(Arm a, bool closed) {
    grippers_[armIndex(a)] = closed;
    events_.push_back({static_cast<long>(steps_.size()), a, closed});
    emit();
  }

  DemoRecord finish(int sourcePeg, Variant variant) && {
    DemoRecord d;
    d.steps = std::move(steps_);
    d.sourcePeg = sourcePeg;
    d.variant = variant;
    d.style = style_;
    d.events = std::move(events_);
    return d;
  }

  void start() {
    intent_ = cmd_;
    emit();
  }

 private:
  int jitterSteps(int range) {
    std::uniform_int_distribution<int> u(-range, range);
    const int v = u(rng_);
    return range > 0 ? v : 0;
  }

  void emit() {
    std::array<Vec3, 2> out = intent_;
    if (constraints_) {
      const int ph = live_.phaseIndex();
      bool contact = false;
      for (Arm a : {Arm::Left, Arm::Right}) {
        const auto i = armIndex(a);
        const auto band = phase::activeConstraint(*constraints_, ph, a);
        if (!band) continue;
        // once the wall has been felt the operator stays off it for the rest of the demo
        if (corrected_) intent_[i].z() = std::clamp(intent_[i].z(), band->zLo, band->zHi);
        const double z = intent_[i].z();
        contact = contact || z < band->zLo || z > band->zHi;
        out[i].z() = phase::constrainedFilter(z, *band, cfg_.compliance);
      }
      corrected_ = corrected_ || contact;
    }
    cmd_ = out;
    const auto r = cell_.apply(cmd_, grippers_);
    ok_ = ok_ && r.ikOk;

    const auto& s = cell_.state();
    auto step = stepFromScene(static_cast<long>(steps_.size()), cmd_, grippers_, s);
    live_.push(step);
    steps_.push_back(std::move(step));
  }

  cell::Cell cell_;
  TeacherStyle style_;
  std::mt19937_64 rng_;
  double speed_;
  int dwell_;
  int pause_;
  const std::vector<PhaseConstraint>* constraints_;
  TeacherConfig cfg_;
  phase::PhaseDetector live_;
  std::array<Vec3, 2> cmd_;
  std::array<Vec3, 2> intent_;
  std::array<bool, 2> grippers_{false, false};
  double depthBias_ = 0.0;
  bool corrected_ = false;
  std::vector<TrajectoryStep> steps_;
  std::vector<DemoEvent> events_;
  bool ok_ = true;
};

std::optional<Vec3> none() { return std::nullopt; }

void runScript(ScriptRunner& r, const TeacherConfig& cfg, const scene::SceneGeometry& g) {
  using W = Waypoint;
  r.start();
  const Vec3 obj = r.state().object.position;

  // 1: approach above the object with the right forceps
  r.move({none(), r.perturb(Vec3(obj.x(), obj.y(), cfg.hoverHeight), W::Free)});
  r.hold(r.dwellLength());
  // 2: descend and grasp
  r.move({none(), r.perturb(obj, W::Grasp)});
  r.hold(r.pauseLength());
  r.grip(Arm::Right, true);
  // 3: lift, carry to the handoff point while the left forceps comes over it
  r.hold(r.pauseLength());
  const Vec3 lift = r.perturb(Vec3(0, 0, 0), W::Handoff);
  const Vec3 held = obj - r.tip(Arm::Right);
  const Vec3 handoff = cfg.handoffPoint + lift;
  r.move({none(), Vec3(r.tip(Arm::Right).x(), r.tip(Arm::Right).y(), handoff.z() - held.z())});
  r.move({r.perturb(Vec3(handoff.x(), handoff.y(), cfg.handoffApproachHeight), W::Free), handoff - held});
  r.hold(r.dwellLength());
  // 4: left descends onto the object and closes
  r.move({r.perturb(handoff, W::Grasp), none()});
  r.hold(r.pauseLength());
  r.grip(Arm::Left, true);
  // 5: right lets go
  r.hold(r.pauseLength());
  r.grip(Arm::Right, false);
  // 6: right retreats, left carries the object above the target peg
  r.hold(r.pauseLength());
  const Vec3 offL = handoff - r.tip(Arm::Left);
  const Vec3 peg = g.pegs[scene::kTargetPeg];
  r.move({r.perturb(Vec3(peg.x(), peg.y(), cfg.carryHeight), W::Free) - offL,
          r.perturb(g.homeTips[armIndex(Arm::Right)], W::Free)});
  r.hold(r.dwellLength());
  // 7: lower onto the peg and release
  r.move({r.perturb(Vec3(peg.x(), peg.y(), cfg.insertReleaseHeight), W::Insert) - offL, none()});
  r.hold(r.pauseLength());
  r.grip(Arm::Left, false);
  // 8: retreat
  r.hold(r.pauseLength());
  r.move({r.perturb(g.homeTips[armIndex(Arm::Left)], W::Free), none()});
}

std::uint64_t derivedSeed(std::uint64_t seed, int attempt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(attempt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

DemoRecord exemplaryDemo(const cell::CellConfig& cellConfig, int sourcePeg, const TeacherConfig& cfg) {
  TeacherStyle style;
  style.speedScale = cfg.exemplarySpeedScale;
  ScriptRunner r(cellConfig, sourcePeg, style, cfg.exemplarySpeedScale, cfg.exemplaryDwellSteps,
                 cfg.exemplaryGripperPause, nullptr, cfg);
  runScript(r, cfg, cellConfig.geometry);
  if (!r.ok()) throw DomainError("exemplary demonstration hit an IK failure");
  auto d = std::move(r).finish(sourcePeg, Variant::Exemplary);
  if (d.steps.back().objectTag != scene::Attachment::Inserted)
    throw DomainError("exemplary demonstration did not complete the transfer");
  return d;
}

std::optional<DemoRecord> attemptDemo(const cell::CellConfig& cellConfig, int sourcePeg, const TeacherStyle& style,
                                      const std::vector<PhaseConstraint>* constraints, const TeacherConfig& cfg) {
  style.validate();
  ScriptRunner r(cellConfig, sourcePeg, style, style.speedScale, cfg.dwellSteps, cfg.gripperPause, constraints, cfg);
  runScript(r, cfg, cellConfig.geometry);
  if (!r.ok()) return std::nullopt;
  auto d = std::move(r).finish(sourcePeg, constraints ? Variant::Constrained : Variant::Normal);
  if (d.steps.back().objectTag != scene::Attachment::Inserted) return std::nullopt;
  return d;
}

std::vector<DemoRecord> collectDemos(const cell::CellConfig& cellConfig, const std::vector<PhaseConstraint>* constraints,
                                     int count, const std::vector<TeacherStyle>& styles, const TeacherConfig& cfg) {
  if (static_cast<int>(styles.size()) != count) throw DomainError("need exactly one style per demonstration");
  std::vector<DemoRecord> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    TeacherStyle style = styles[static_cast<std::size_t>(k)];
    const int peg = k % 3;
    std::optional<DemoRecord> d;
    int attempt = 0;
    for (; attempt <= cfg.maxRegenerations; ++attempt) {
      d = attemptDemo(cellConfig, peg, style, constraints, cfg);
      if (d) break;
      spdlog::warn("demo {} (peg {}, seed {}) failed, regenerating", k, peg, style.seed);
      style.seed = derivedSeed(styles[static_cast<std::size_t>(k)].seed, attempt);
    }
    if (!d) throw DomainError("demo " + std::to_string(k) + " failed after all regenerations");
    d->regenerations = attempt;
    out.push_back(std::move(*d));
  }
  return out;
}

std::vector<TeacherStyle> defaultStyles(int count, std::uint64_t seed, double lateralJitterStd, double depthBiasStd,
                                        int pauseJitter) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> speed(0.8, 1.2);
  std::vector<TeacherStyle> out;
  for (int k = 0; k < count; ++k) {
    TeacherStyle s;
    s.speedScale = speed(rng);
    s.lateralJitterStd = lateralJitterStd;
    s.depthBiasStd = depthBiasStd;
    s.pauseJitter = pauseJitter;
    s.seed = rng();
    out.push_back(s);
  }
  return out;
}

TrajectoryStep stepFromScene(long t, const std::array<Vec3, 2>& xRef, const std::array<bool, 2>& grippers,
                             const scene::SceneState& s) {
  TrajectoryStep step;
  step.t = t;
  step.xRef = xRef;
  step.gripperClosed = grippers;
  step.tip = s.forcepTips;
  step.objectPosition = s.object.position;
  step.objectTag = s.object.tag;
  step.objectPeg = s.object.peg;
  step.objectHolder = s.object.holder;
  return step;
}

scene::SceneState sceneFromStep(const TrajectoryStep& s, const scene::SceneGeometry& g) {
  scene::SceneState st;
  st.pegPositions = g.pegs;
  st.ports = g.ports;
  st.forcepTips = s.tip;
  st.grippersClosed = s.gripperClosed;
  st.object.position = s.objectPosition;
  st.object.tag = s.objectTag;
  st.object.peg = s.objectPeg;
  st.object.holder = s.objectHolder;
  st.time = s.t + 1;
  return st;
}

double bandSatisfaction(const DemoRecord& demo, const std::vector<PhaseConstraint>& constraints,
                        const phase::TransitionConfig& transition, Arm arm) {
  phase::PhaseDetector det(transition.velocityThreshold, transition.nThreCollection);
  std::size_t inside = 0;
  for (const auto& s : demo.steps) {
    const auto band = phase::activeConstraint(constraints, det.phaseIndex(), arm);
    const double z = s.xRef[armIndex(arm)].z();
    if (!band || (z >= band->zLo && z <= band->zHi)) ++inside;
    det.push(s);
  }
  return demo.steps.empty() ? 1.0 : static_cast<double>(inside) / static_cast<double>(demo.steps.size());
}

}  // namespace fls::teacher
