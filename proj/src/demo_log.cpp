// Line-delimited JSON demo logs: a header line, then one line per 10 Hz step.
#include <fstream>
#include <nlohmann/json.hpp>

#include "fls/teacher.hpp"

namespace fls::teacher {

namespace {

using nlohmann::json;

json j3(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 v3(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

json stepToJson(const TrajectoryStep& s) {
  json j;
  j["t"] = s.t;
  j["x_ref_left"] = j3(s.xRef[0]);
  j["x_ref_right"] = j3(s.xRef[1]);
  j["h_left"] = s.gripperClosed[0] ? 1 : 0;
  j["h_right"] = s.gripperClosed[1] ? 1 : 0;
  j["tip_left"] = j3(s.tip[0]);
  j["tip_right"] = j3(s.tip[1]);
  j["object"] = j3(s.objectPosition);
  j["tag"] = scene::attachmentName(s.objectTag);
  j["peg"] = s.objectPeg;
  j["holder"] = armName(s.objectHolder);
  j["frame"] = s.frameRef;
  if (s.latent.size() > 0) j["xi"] = std::vector<double>(s.latent.data(), s.latent.data() + s.latent.size());
  return j;
}

TrajectoryStep stepFromJson(const json& j) {
  TrajectoryStep s;
  s.t = j.at("t").get<long>();
  s.xRef = {v3(j.at("x_ref_left")), v3(j.at("x_ref_right"))};
  s.gripperClosed = {j.at("h_left").get<int>() != 0, j.at("h_right").get<int>() != 0};
  s.tip = {v3(j.at("tip_left")), v3(j.at("tip_right"))};
  s.objectPosition = v3(j.at("object"));
  s.objectTag = scene::parseAttachment(j.at("tag").get<std::string>());
  s.objectPeg = j.at("peg").get<int>();
  s.objectHolder = parseArm(j.at("holder").get<std::string>());
  s.frameRef = j.value("frame", std::string());
  if (j.contains("xi")) {
    const auto v = j["xi"].get<std::vector<double>>();
    s.latent = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  return s;
}

}  // namespace

void writeDemoLog(const std::filesystem::path& path, const DemoRecord& demo) {
  std::ofstream out(path);
  if (!out) throw DomainError("cannot write " + path.string());
  json h;
  h["kind"] = "demo";
  h["version"] = 1;
  h["source_peg"] = demo.sourcePeg;
  h["variant"] = variantName(demo.variant);
  h["style"] = {{"speed_scale", demo.style.speedScale},
                {"lateral_jitter_std", demo.style.lateralJitterStd},
                {"depth_bias_std", demo.style.depthBiasStd},
                {"pause_jitter", demo.style.pauseJitter},
                {"seed", demo.style.seed}};
  h["events"] = json::array();
  for (const auto& e : demo.events) h["events"].push_back({{"t", e.t}, {"arm", armName(e.arm)}, {"closed", e.closed}});
  h["regenerations"] = demo.regenerations;
  out << h.dump() << '\n';
  for (const auto& s : demo.steps) out << stepToJson(s).dump() << '\n';
}

DemoRecord readDemoLog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DomainError(path.string() + " is empty");
  DemoRecord d;
  try {
    const json h = json::parse(line);
    if (h.value("kind", std::string()) != "demo") throw DomainError(path.string() + " is not a demo log");
    d.sourcePeg = h.at("source_peg").get<int>();
    d.variant = parseVariant(h.at("variant").get<std::string>());
    const auto& st = h.at("style");
    d.style.speedScale = st.at("speed_scale").get<double>();
    d.style.lateralJitterStd = st.at("lateral_jitter_std").get<double>();
    d.style.depthBiasStd = st.at("depth_bias_std").get<double>();
    d.style.pauseJitter = st.at("pause_jitter").get<int>();
    d.style.seed = st.at("seed").get<std::uint64_t>();
    for (const auto& e : h.at("events"))
      d.events.push_back({e.at("t").get<long>(), parseArm(e.at("arm").get<std::string>()), e.at("closed").get<bool>()});
    d.regenerations = h.value("regenerations", 0);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      d.steps.push_back(stepFromJson(json::parse(line)));
    }
  } catch (const json::exception& e) {
    throw DomainError(path.string() + ": " + e.what());
  }
  return d;
}

}  // namespace fls::teacher
