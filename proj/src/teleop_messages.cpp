#include <openssl/evp.h>

#include <cmath>
#include <nlohmann/json.hpp>
#include <set>

#include "fls/teleop.hpp"

namespace fls::teleop {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& why) { throw DomainError("teleop message: " + why); }

json parseObject(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    bad(std::string("not JSON: ") + e.what());
  }
  if (!j.is_object()) bad("not an object");
  if (!j.contains("v") || !j.at("v").is_number_integer() || j.at("v").get<int>() != kSchemaVersion)
    bad("missing or unsupported schema version");
  if (!j.contains("type") || !j.at("type").is_string()) bad("missing type");
  return j;
}

void expectKeys(const json& j, std::set<std::string> keys, std::set<std::string> optional = {}) {
  keys.insert({"v", "type"});
  for (const auto& k : keys)
    if (!j.contains(k)) bad("missing key '" + k + "'");
  for (const auto& [k, _] : j.items())
    if (!keys.count(k) && !optional.count(k)) bad("unexpected key '" + k + "'");
}

double number(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number()) bad(std::string("'") + key + "' is not a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) bad(std::string("'") + key + "' is not finite");
  return d;
}

std::string text(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_string()) bad(std::string("'") + key + "' is not a string");
  return v.get<std::string>();
}

Arm arm(const json& j) {
  const auto s = text(j, "arm");
  if (s == "left") return Arm::Left;
  if (s == "right") return Arm::Right;
  bad("unknown arm '" + s + "'");
}

bool gripperState(const std::string& s) {
  if (s == "open") return false;
  if (s == "closed") return true;
  bad("unknown gripper state '" + s + "'");
}

const char* gripperName(bool closed) { return closed ? "closed" : "open"; }

json vec(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec(const json& j) {
  if (!j.is_array() || j.size() != 3) bad("expected a 3-vector");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) bad("vector entry is not a number");
    v[i] = j[static_cast<std::size_t>(i)].get<double>();
  }
  if (!v.allFinite()) bad("vector entry is not finite");
  return v;
}

template <class T, class F>
std::array<T, 2> pair(const json& j, const char* key, F f) {
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 2) bad(std::string("'") + key + "' must have two entries");
  return {f(a[0]), f(a[1])};
}

json header(const char* type) { return json{{"v", kSchemaVersion}, {"type", type}}; }

}  // namespace

ClientMessage parseClientMessage(const std::string& s) {
  const json j = parseObject(s);
  const auto type = j.at("type").get<std::string>();
  if (type == "targetDelta") {
    expectKeys(j, {"arm", "dx", "dy", "dz"});
    return TargetDelta{arm(j), Vec3(number(j, "dx"), number(j, "dy"), number(j, "dz"))};
  }
  if (type == "gripper") {
    expectKeys(j, {"arm", "state"});
    return GripperCommand{arm(j), gripperState(text(j, "state"))};
  }
  if (type == "startDemo") {
    expectKeys(j, {"variant"});
    const auto v = text(j, "variant");
    if (v == "constrained") return StartDemo{teacher::Variant::Constrained};
    if (v == "normal") return StartDemo{teacher::Variant::Normal};
    bad("unknown variant '" + v + "'");
  }
  if (type == "endDemo") {
    expectKeys(j, {});
    return EndDemo{};
  }
  bad("unknown client message type '" + type + "'");
}

std::string serialize(const ClientMessage& m) {
  json j = std::visit(
      [](const auto& x) -> json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, TargetDelta>) {
          json o = header("targetDelta");
          o["arm"] = armName(x.arm);
          o["dx"] = x.delta.x();
          o["dy"] = x.delta.y();
          o["dz"] = x.delta.z();
          return o;
        } else if constexpr (std::is_same_v<T, GripperCommand>) {
          json o = header("gripper");
          o["arm"] = armName(x.arm);
          o["state"] = gripperName(x.closed);
          return o;
        } else if constexpr (std::is_same_v<T, StartDemo>) {
          json o = header("startDemo");
          o["variant"] = teacher::variantName(x.variant);
          return o;
        } else {
          return header("endDemo");
        }
      },
      m);
  return j.dump();
}

ServerMessage parseServerMessage(const std::string& s) {
  const json j = parseObject(s);
  const auto type = j.at("type").get<std::string>();
  try {
    if (type == "stateUpdate") {
      expectKeys(j, {"tick", "ack", "tips", "target", "object", "grippers", "phase", "force", "recording"}, {"frame"});
      StateUpdate u;
      u.tick = j.at("tick").get<long>();
      u.ack = j.at("ack").get<long>();
      u.tips = pair<Vec3>(j, "tips", [](const json& x) { return vec(x); });
      u.target = pair<Vec3>(j, "target", [](const json& x) { return vec(x); });
      u.object = text(j, "object");
      scene::parseAttachment(u.object);
      u.grippers = pair<bool>(j, "grippers", [](const json& x) {
        if (!x.is_string()) bad("gripper state is not a string");
        return gripperState(x.get<std::string>());
      });
      u.phase = j.at("phase").get<int>();
      u.force = pair<Vec3>(j, "force", [](const json& x) { return vec(x); });
      u.recording = j.at("recording").get<bool>();
      if (j.contains("frame")) u.frame = text(j, "frame");
      return u;
    }
    if (type == "demoSaved") {
      expectKeys(j, {"path", "steps"});
      return DemoSaved{text(j, "path"), j.at("steps").get<int>()};
    }
    if (type == "error") {
      expectKeys(j, {"message"});
      return ErrorMessage{text(j, "message")};
    }
    if (type == "busy") {
      expectKeys(j, {"message"});
      return Busy{text(j, "message")};
    }
  } catch (const json::exception& e) {
    bad(e.what());
  }
  bad("unknown server message type '" + type + "'");
}

std::string serialize(const ServerMessage& m) {
  json j = std::visit(
      [](const auto& x) -> json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, StateUpdate>) {
          json o = header("stateUpdate");
          o["tick"] = x.tick;
          o["ack"] = x.ack;
          o["tips"] = {vec(x.tips[0]), vec(x.tips[1])};
          o["target"] = {vec(x.target[0]), vec(x.target[1])};
          o["object"] = x.object;
          o["grippers"] = {gripperName(x.grippers[0]), gripperName(x.grippers[1])};
          o["phase"] = x.phase;
          o["force"] = {vec(x.force[0]), vec(x.force[1])};
          o["recording"] = x.recording;
          if (x.frame) o["frame"] = *x.frame;
          return o;
        } else if constexpr (std::is_same_v<T, DemoSaved>) {
          json o = header("demoSaved");
          o["path"] = x.path;
          o["steps"] = x.steps;
          return o;
        } else if constexpr (std::is_same_v<T, ErrorMessage>) {
          json o = header("error");
          o["message"] = x.message;
          return o;
        } else {
          json o = header("busy");
          o["message"] = x.message;
          return o;
        }
      },
      m);
  return j.dump();
}

std::string base64(const std::vector<unsigned char>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

}  // namespace fls::teleop
