#include "fls/scene.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

namespace fls::scene {

const char* attachmentName(Attachment a) {
  switch (a) {
    case Attachment::OnPeg: return "on_peg";
    case Attachment::HeldBy: return "held_by";
    case Attachment::Falling: return "falling";
    case Attachment::Inserted: return "inserted";
  }
  return "?";
}

Attachment parseAttachment(const std::string& s) {
  if (s == "on_peg") return Attachment::OnPeg;
  if (s == "held_by") return Attachment::HeldBy;
  if (s == "falling") return Attachment::Falling;
  if (s == "inserted") return Attachment::Inserted;
  throw DomainError("unknown attachment '" + s + "'");
}

namespace {

Vec3 v3(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
nlohmann::json j3(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

}  // namespace

SceneGeometry geometryFromJson(const nlohmann::json& j) {
  SceneGeometry g;
  if (j.contains("pegs")) {
    if (j["pegs"].size() != 4) throw DomainError("scene needs exactly 4 pegs");
    for (std::size_t i = 0; i < 4; ++i) g.pegs[i] = v3(j["pegs"][i]);
  }
  auto num = [&](const char* key, double& dst) {
    if (j.contains(key)) dst = j[key].get<double>();
  };
  num("peg_height", g.pegHeight);
  num("object_rest_height", g.objectRestHeight);
  num("grasp_radius", g.graspRadius);
  num("capture_radius", g.captureRadius);
  num("insert_height", g.insertHeight);
  num("drop_per_step", g.dropPerStep);
  num("board_rest_height", g.boardRestHeight);
  if (j.contains("ports")) {
    g.ports[0] = v3(j["ports"].at("left"));
    g.ports[1] = v3(j["ports"].at("right"));
  }
  if (j.contains("home_tips")) {
    g.homeTips[0] = v3(j["home_tips"].at("left"));
    g.homeTips[1] = v3(j["home_tips"].at("right"));
  }
  return g;
}

nlohmann::json geometryToJson(const SceneGeometry& g) {
  nlohmann::json j;
  j["pegs"] = nlohmann::json::array();
  for (const auto& p : g.pegs) j["pegs"].push_back(j3(p));
  j["peg_height"] = g.pegHeight;
  j["object_rest_height"] = g.objectRestHeight;
  j["grasp_radius"] = g.graspRadius;
  j["capture_radius"] = g.captureRadius;
  j["insert_height"] = g.insertHeight;
  j["drop_per_step"] = g.dropPerStep;
  j["board_rest_height"] = g.boardRestHeight;
  j["ports"] = {{"left", j3(g.ports[0])}, {"right", j3(g.ports[1])}};
  j["home_tips"] = {{"left", j3(g.homeTips[0])}, {"right", j3(g.homeTips[1])}};
  return j;
}

SceneState initialState(const SceneGeometry& g, int sourcePeg) {
  if (sourcePeg < 0 || sourcePeg > 2) throw DomainError("source peg must be 0, 1 or 2");
  SceneState s;
  s.pegPositions = g.pegs;
  s.object.tag = Attachment::OnPeg;
  s.object.peg = sourcePeg;
  s.object.position = g.pegs[static_cast<std::size_t>(sourcePeg)] + Vec3(0, 0, g.objectRestHeight);
  s.forcepTips = g.homeTips;
  s.ports = g.ports;
  return s;
}

namespace {

double horizontalDistance(const Vec3& a, const Vec3& b) { return (a.head<2>() - b.head<2>()).norm(); }

// Seat a released object on a peg when it is close enough, otherwise let it fall.
void settleReleased(ObjectState& obj, const SceneState& s, const SceneGeometry& g) {
  for (int i = 0; i < 4; ++i) {
    const Vec3& peg = s.pegPositions[static_cast<std::size_t>(i)];
    if (horizontalDistance(obj.position, peg) <= g.captureRadius && obj.position.z() <= g.insertHeight) {
      obj.peg = i;
      obj.tag = (i == kTargetPeg) ? Attachment::Inserted : Attachment::OnPeg;
      return;
    }
  }
  obj.tag = Attachment::Falling;
}

bool graspable(const ObjectState& obj, Arm a) {
  switch (obj.tag) {
    case Attachment::OnPeg: return true;
    case Attachment::HeldBy: return obj.holder != a && !obj.coHeld;
    default: return false;
  }
}

}  // namespace

SceneState step(const SceneState& state, const SceneGeometry& g, const std::array<Vec3, 2>& tipTargets,
                 const std::array<bool, 2>& gripperCmds) {
  SceneState next = state;
  next.time = state.time + 1;
  next.forcepTips = tipTargets;
  next.grippersClosed = gripperCmds;
  ObjectState& obj = next.object;

  if (obj.tag == Attachment::HeldBy) obj.position = tipTargets[armIndex(obj.holder)] + obj.gripOffset[armIndex(obj.holder)];

  // grasps before releases so a same-tick close/open pair completes a handoff
  for (Arm a : {Arm::Left, Arm::Right}) {
    const auto i = armIndex(a);
    const bool closing = !state.grippersClosed[i] && gripperCmds[i];
    if (!closing || !graspable(obj, a)) continue;
    if ((tipTargets[i] - obj.position).norm() > g.graspRadius) continue;
    obj.gripOffset[i] = obj.position - tipTargets[i];
    if (obj.tag == Attachment::HeldBy) {
      obj.coHeld = true;  // previous holder still grips
    } else {
      obj.coHeld = false;
    }
    obj.tag = Attachment::HeldBy;
    obj.holder = a;
  }

  for (Arm a : {Arm::Left, Arm::Right}) {
    const auto i = armIndex(a);
    const bool opening = state.grippersClosed[i] && !gripperCmds[i];
    if (!opening || obj.tag != Attachment::HeldBy) continue;
    if (obj.holder == a) {
      if (obj.coHeld) {
        // the other gripper keeps the object where it is
        obj.holder = otherArm(a);
        obj.coHeld = false;
        obj.gripOffset[armIndex(obj.holder)] = obj.position - tipTargets[armIndex(obj.holder)];
      } else {
        settleReleased(obj, next, g);
      }
    } else if (obj.coHeld) {
      obj.coHeld = false;
    }
  }

  if (obj.tag == Attachment::Falling) obj.position.z() = std::max(g.boardRestHeight, obj.position.z() - g.dropPerStep);
  if (obj.tag == Attachment::OnPeg || obj.tag == Attachment::Inserted) {
    // a released object slides down onto its peg at the drop rate
    const Vec3 seat = next.pegPositions[static_cast<std::size_t>(obj.peg)] + Vec3(0, 0, g.objectRestHeight);
    const Vec3 d = seat - obj.position;
    obj.position = d.norm() <= g.dropPerStep ? seat : Vec3(obj.position + d.normalized() * g.dropPerStep);
  }
  return next;
}

SuccessFlags successFlags(const std::vector<SceneState>& history) {
  if (history.empty()) throw DomainError("successFlags needs a non-empty history");
  SuccessFlags f;
  bool wasOnPeg = false;
  for (std::size_t k = 0; k < history.size(); ++k) {
    const auto& s = history[k];
    if (s.object.tag == Attachment::OnPeg && s.object.peg != kTargetPeg) wasOnPeg = true;
    if (wasOnPeg && s.heldBy(Arm::Right)) f.take = true;
    if (k > 0 && history[k - 1].heldBy(Arm::Right) && s.heldBy(Arm::Left)) f.pass = true;
  }
  f.insert = history.back().object.tag == Attachment::Inserted;
  return f;
}

}  // namespace fls::scene
