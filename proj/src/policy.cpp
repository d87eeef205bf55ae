#include "fls/policy.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "fls/common.hpp"

namespace fls::learning {

using nlohmann::json;

Normalizer fitNormalizer(const std::vector<Mat>& seqs, int rawTail) {
  if (seqs.empty()) throw DomainError("normalizer needs data");
  const Eigen::Index dim = seqs.front().rows();
  if (rawTail < 0 || rawTail > dim) throw DomainError("raw tail larger than the vector");
  Vec sum = Vec::Zero(dim), sq = Vec::Zero(dim);
  double n = 0.0;
  for (const auto& s : seqs) {
    if (s.rows() != dim) throw DomainError("normalizer sequences differ in dimension");
    sum += s.rowwise().sum();
    n += static_cast<double>(s.cols());
  }
  if (n < 1.0) throw DomainError("normalizer needs data");
  const Vec mean = sum / n;
  for (const auto& s : seqs) sq += (s.colwise() - mean).array().square().matrix().rowwise().sum();
  Normalizer out;
  out.mean = mean;
  out.scale = (sq / n).cwiseSqrt();
  for (Eigen::Index i = 0; i < dim; ++i) {
    if (i >= dim - rawTail) {
      out.mean[i] = 0.0;
      out.scale[i] = 1.0;
    } else if (out.scale[i] < 1e-6) {
      out.scale[i] = 1.0;
    }
  }
  return out;
}

std::pair<Vec, Vec> PolicyModel::forward(const Vec& s, const Vec& u, const Vec& p, RnnState& hidden) const {
  const auto& spec = rnn->spec();
  if (s.size() != spec.ns || u.size() != spec.nu || p.size() != spec.np) throw DomainError("policy input dimension mismatch");
  Vec io(spec.ioSize());
  io << s, u;
  Vec x(spec.inputSize());
  x << norm.apply(io), p;
  const Vec y = norm.invert(rnn->step(x, hidden).col(0));
  return {y.head(spec.ns), y.tail(spec.nu)};
}

Vec controlVector(const TrajectoryStep& s) {
  Vec u(8);
  u << s.xRef[0], s.xRef[1], s.gripperClosed[0] ? 1.0 : 0.0, s.gripperClosed[1] ? 1.0 : 0.0;
  return u;
}

Mat demoSequence(const teacher::DemoRecord& d) {
  if (d.steps.empty()) throw DomainError("empty demo");
  const Eigen::Index ns = d.steps.front().latent.size();
  if (ns == 0) throw DomainError("demo steps have not been encoded");
  Mat m(ns + 8, static_cast<Eigen::Index>(d.steps.size()));
  for (std::size_t t = 0; t < d.steps.size(); ++t) {
    const auto& st = d.steps[t];
    if (st.latent.size() != ns) throw DomainError("demo step " + std::to_string(t) + " has no latent");
    m.col(static_cast<Eigen::Index>(t)) << st.latent, controlVector(st);
  }
  return m;
}

scene::Frame renderStep(const TrajectoryStep& s, const scene::SceneGeometry& g) {
  return scene::render(teacher::sceneFromStep(s, g), g);
}

Mat demoFrames(const std::vector<teacher::DemoRecord>& demos, const scene::SceneGeometry& g, int stride) {
  if (stride < 1) throw DomainError("frame stride must be positive");
  std::vector<Vec> cols;
  for (const auto& d : demos)
    for (std::size_t t = 0; t < d.steps.size(); t += static_cast<std::size_t>(stride))
      cols.push_back(frameToInput(renderStep(d.steps[t], g)));
  Mat m(cols.empty() ? 0 : cols.front().size(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = cols[i];
  return m;
}

void encodeDemos(Autoencoder& ae, std::vector<teacher::DemoRecord>& demos, const scene::SceneGeometry& g) {
  for (auto& d : demos) {
    Mat x(ae.spec().inputSize(), static_cast<Eigen::Index>(d.steps.size()));
    for (std::size_t t = 0; t < d.steps.size(); ++t) x.col(static_cast<Eigen::Index>(t)) = frameToInput(renderStep(d.steps[t], g));
    const Mat z = ae.encode(x);
    for (std::size_t t = 0; t < d.steps.size(); ++t) d.steps[t].latent = z.col(static_cast<Eigen::Index>(t));
  }
}

PolicyModel trainPolicy(std::shared_ptr<Autoencoder> ae, const std::vector<teacher::DemoRecord>& demos,
                        const RnnpbSpec& spec, const RnnpbTrainSettings& settings, const RnnEpochCallback& onEpoch) {
  if (demos.empty()) throw DomainError("policy training needs demos");
  std::vector<Mat> seqs;
  for (const auto& d : demos) seqs.push_back(demoSequence(d));
  if (seqs.front().rows() != spec.ioSize()) throw DomainError("encoded demos do not match the RNNPB io size");
  PolicyModel m;
  m.ae = std::move(ae);
  m.norm = fitNormalizer(seqs, 2);
  for (auto& s : seqs)
    for (Eigen::Index t = 0; t < s.cols(); ++t) s.col(t) = m.norm.apply(s.col(t));
  m.rnn = std::make_shared<Rnnpb>(spec, settings.seed);
  const auto r = trainRnnpb(*m.rnn, seqs, settings, onEpoch);
  m.pbTable = r.pb;
  m.meta.rnnEpochs = settings.epochs;
  m.meta.rnnSeed = settings.seed;
  m.meta.learningRate = settings.adam.lr;
  m.meta.pbLearningRate = settings.pbAdam.lr;
  m.meta.noiseScale = settings.noiseScale;
  m.meta.rnnLoss = r.loss;
  return m;
}

ExecutionResult executePolicy(const PolicyModel& model, const cell::CellConfig& cellConfig, int sourcePeg, const Vec& p,
                              const ExecutionSettings& settings, const std::optional<std::array<Vec3, 2>>& startTips) {
  if (!model.ae || !model.rnn) throw DomainError("policy model is not trained");
  if (settings.maxSteps < 1) throw DomainError("maxSteps must be positive");
  const auto& spec = model.rnn->spec();
  if (p.size() != spec.np) throw DomainError("parametric bias has the wrong dimension");

  cell::Cell cell(cellConfig, sourcePeg);
  const auto& g = cell.geometry();
  ExecutionResult r;
  r.history.push_back(cell.state());

  std::array<Vec3, 2> cmd = startTips.value_or(g.homeTips);
  std::array<bool, 2> grippers{false, false};
  std::vector<Vec> latents;
  RnnState hidden = model.rnn->zeroState(1);
  const double hi = settings.gripThreshold + settings.gripHysteresis;
  const double lo = settings.gripThreshold - settings.gripHysteresis;

  const auto record = [&](const cell::StepResult& res) {
    const auto& s = cell.state();
    r.steps.push_back(teacher::stepFromScene(static_cast<long>(r.steps.size()), cmd, grippers, s));
    r.history.push_back(s);
    if (!res.ikOk) {
      r.ikFailure = true;
      r.termination = "ik-failure";
    }
  };

  record(cell.apply(cmd, grippers));
  while (!r.ikFailure && static_cast<int>(r.steps.size()) < settings.maxSteps) {
    const auto tag = cell.state().object.tag;
    if (tag == scene::Attachment::Inserted) {
      r.termination = "inserted";
      break;
    }
    if (tag == scene::Attachment::Falling) {
      r.termination = "fallen";
      break;
    }
    const Vec s = model.ae->encode(frameToInput(scene::render(cell.state(), g))).col(0);
    const auto [sNext, u] = model.forward(s, controlVector(r.steps.back()), p, hidden);
    (void)sNext;
    latents.push_back(hidden.latent().col(0));
    for (std::size_t a = 0; a < 2; ++a) {
      cmd[a] = u.segment<3>(static_cast<Eigen::Index>(3 * a));
      const double h = u[static_cast<Eigen::Index>(6 + a)];
      if (!grippers[a] && h > hi) grippers[a] = true;
      if (grippers[a] && h < lo) grippers[a] = false;
    }
    if (!allFinite(cmd[0]) || !allFinite(cmd[1])) {
      r.ikFailure = true;
      r.termination = "ik-failure";
      break;
    }
    record(cell.apply(cmd, grippers));
  }
  if (r.termination.empty()) {
    const auto tag = cell.state().object.tag;
    r.termination = tag == scene::Attachment::Inserted ? "inserted" : tag == scene::Attachment::Falling ? "fallen" : "max-steps";
  }
  r.latents.resize(spec.hiddenSize(), static_cast<Eigen::Index>(latents.size()));
  for (std::size_t i = 0; i < latents.size(); ++i) r.latents.col(static_cast<Eigen::Index>(i)) = latents[i];
  r.flags = scene::successFlags(r.history);
  return r;
}

// ---- checkpoint

namespace {

constexpr const char* kMagic = "fls-checkpoint";
constexpr int kVersion = 1;

json aeSpecToJson(const AutoencoderSpec& s) {
  return {{"height", s.height}, {"width", s.width}, {"in_channels", s.inChannels},
          {"channels", s.channels}, {"hidden", s.hidden}, {"latent", s.latent}};
}

AutoencoderSpec aeSpecFromJson(const json& j) {
  AutoencoderSpec s;
  s.height = j.at("height");
  s.width = j.at("width");
  s.inChannels = j.at("in_channels");
  s.channels = j.at("channels").get<std::vector<int>>();
  s.hidden = j.at("hidden");
  s.latent = j.at("latent");
  return s;
}

json metaToJson(const TrainingMeta& m) {
  return {{"ae_epochs", m.aeEpochs},   {"rnn_epochs", m.rnnEpochs},     {"ae_seed", m.aeSeed},
          {"rnn_seed", m.rnnSeed},     {"learning_rate", m.learningRate}, {"pb_learning_rate", m.pbLearningRate},
          {"noise_scale", m.noiseScale}, {"ae_loss", m.aeLoss},           {"rnn_loss", m.rnnLoss}};
}

TrainingMeta metaFromJson(const json& j) {
  TrainingMeta m;
  m.aeEpochs = j.at("ae_epochs");
  m.rnnEpochs = j.at("rnn_epochs");
  m.aeSeed = j.at("ae_seed");
  m.rnnSeed = j.at("rnn_seed");
  m.learningRate = j.at("learning_rate");
  m.pbLearningRate = j.at("pb_learning_rate");
  m.noiseScale = j.at("noise_scale");
  m.aeLoss = j.at("ae_loss").get<std::vector<double>>();
  m.rnnLoss = j.at("rnn_loss").get<std::vector<double>>();
  return m;
}

void writeTensor(std::ostream& os, const std::string& name, const Mat& m) {
  os << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  char buf[32];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const auto res = std::to_chars(buf, buf + sizeof buf, m(i, j));
      if (j) os << ' ';
      os.write(buf, res.ptr - buf);
    }
    os << '\n';
  }
}

std::map<std::string, Mat> readTensors(std::istream& is, const std::filesystem::path& path) {
  std::map<std::string, Mat> out;
  std::string word;
  while (is >> word) {
    if (word != "tensor") throw DomainError(path.string() + ": expected a tensor header, got '" + word + "'");
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    if (!(is >> name >> rows >> cols) || rows < 0 || cols < 0) throw DomainError(path.string() + ": bad tensor header");
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        std::string v;
        if (!(is >> v)) throw DomainError(path.string() + ": truncated tensor " + name);
        double d = 0.0;
        const auto res = std::from_chars(v.data(), v.data() + v.size(), d);
        if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw DomainError(path.string() + ": bad value in " + name);
        m(i, j) = d;
      }
    out.emplace(name, std::move(m));
  }
  return out;
}

void assign(std::map<std::string, Mat>& tensors, const std::string& name, Mat& dst, const std::filesystem::path& path) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw DomainError(path.string() + ": missing tensor " + name);
  if (it->second.rows() != dst.rows() || it->second.cols() != dst.cols())
    throw DomainError(path.string() + ": shape mismatch for " + name);
  dst = it->second;
  tensors.erase(it);
}

}  // namespace

void saveCheckpoint(const std::filesystem::path& path, const PolicyModel& model) {
  if (!model.ae) throw DomainError("cannot save a model without an autoencoder");
  std::ofstream os(path);
  if (!os) throw DomainError("cannot write " + path.string());
  json header{{"format", kMagic},
              {"version", kVersion},
              {"autoencoder", aeSpecToJson(model.ae->spec())},
              {"rnnpb", nullptr},
              {"meta", metaToJson(model.meta)}};
  if (model.rnn) {
    const auto& rs = model.rnn->spec();
    header["rnnpb"] = {{"units", rs.units}, {"ns", rs.ns}, {"nu", rs.nu}, {"np", rs.np}};
  }
  os << header.dump() << '\n';
  for (auto* p : model.ae->params()) writeTensor(os, p->name, p->value);
  const auto bufs = model.ae->buffers();
  for (std::size_t i = 0; i < bufs.size(); ++i) writeTensor(os, "ae.buffer" + std::to_string(i), *bufs[i]);
  if (!model.rnn) {
    if (!os) throw DomainError("failed writing " + path.string());
    return;
  }
  for (auto* p : model.rnn->params()) writeTensor(os, p->name, p->value);
  writeTensor(os, "pb", model.pbTable);
  writeTensor(os, "norm.mean", model.norm.mean);
  writeTensor(os, "norm.scale", model.norm.scale);
  if (!os) throw DomainError("failed writing " + path.string());
}

PolicyModel loadCheckpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DomainError("cannot open checkpoint " + path.string());
  std::string line;
  std::getline(is, line);
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw DomainError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (header.value("format", "") != kMagic) throw DomainError(path.string() + ": not a checkpoint");
  if (header.value("version", 0) != kVersion) throw DomainError(path.string() + ": unsupported checkpoint version");

  PolicyModel m;
  try {
    m.ae = std::make_shared<Autoencoder>(aeSpecFromJson(header.at("autoencoder")), 0);
    m.meta = metaFromJson(header.at("meta"));
    if (!header.at("rnnpb").is_null()) {
      RnnpbSpec rs;
      rs.units = header.at("rnnpb").at("units").get<std::array<int, 10>>();
      rs.ns = header.at("rnnpb").at("ns");
      rs.nu = header.at("rnnpb").at("nu");
      rs.np = header.at("rnnpb").at("np");
      m.rnn = std::make_shared<Rnnpb>(rs, 0);
    }
  } catch (const json::exception& e) {
    throw DomainError(path.string() + ": bad checkpoint header: " + e.what());
  }
  auto tensors = readTensors(is, path);
  for (auto* p : m.ae->params()) assign(tensors, p->name, p->value, path);
  const auto bufs = m.ae->buffers();
  for (std::size_t i = 0; i < bufs.size(); ++i) assign(tensors, "ae.buffer" + std::to_string(i), *bufs[i], path);
  if (!m.rnn) {
    if (!tensors.empty()) throw DomainError(path.string() + ": unexpected tensor " + tensors.begin()->first);
    return m;
  }
  for (auto* p : m.rnn->params()) assign(tensors, p->name, p->value, path);
  const auto take = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DomainError(path.string() + ": missing tensor " + name);
    Mat v = it->second;
    tensors.erase(it);
    return v;
  };
  m.pbTable = take("pb");
  if (m.pbTable.cols() != m.rnn->spec().np) throw DomainError(path.string() + ": pb table width differs from np");
  m.norm.mean = take("norm.mean");
  m.norm.scale = take("norm.scale");
  if (m.norm.mean.size() != m.rnn->spec().ioSize() || m.norm.scale.size() != m.norm.mean.size())
    throw DomainError(path.string() + ": normalizer size mismatch");
  if (!tensors.empty()) throw DomainError(path.string() + ": unexpected tensor " + tensors.begin()->first);
  return m;
}

}  // namespace fls::learning
