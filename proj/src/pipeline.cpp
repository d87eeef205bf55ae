#include "fls/pipeline.hpp"

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <future>
#include <mutex>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "fls/common.hpp"
#include "fls/evaluation.hpp"
#include "fls/phase_constraints.hpp"
#include "fls/policy.hpp"
#include "fls/teacher.hpp"

namespace fls::harness {

namespace fs = std::filesystem;
using nlohmann::json;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

const char* stageName(Stage s) {
  switch (s) {
    case Stage::ExtractConstraints: return "extract-constraints";
    case Stage::Collect: return "collect";
    case Stage::TrainAe: return "train-ae";
    case Stage::TrainRnnpb: return "train-rnnpb";
    case Stage::Execute: return "execute";
    case Stage::Evaluate: return "evaluate";
  }
  return "?";
}

Stage parseStage(const std::string& s) {
  for (auto st : kStages)
    if (s == stageName(st)) return st;
  throw DomainError("unknown stage '" + s + "'");
}

namespace {

constexpr const char* kVariants[2] = {"constrained", "normal"};

std::string demoName(const char* variant, int k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%02d", variant, k);
  return buf;
}

std::string runName(const char* variant, int peg, int trial) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s_peg%d_trial%d", variant, peg, trial);
  return buf;
}

fs::path modelFile(int variant) { return variant == 0 ? "model.ckpt" : "model_normal.ckpt"; }

/// Appends one JSON object per line; shared by concurrent trainers.
class Metrics {
 public:
  explicit Metrics(const fs::path& path) : os_(path, std::ios::app) {}
  void write(const json& j) {
    std::lock_guard lock(mu_);
    os_ << j.dump() << '\n';
    os_.flush();
  }

 private:
  std::mutex mu_;
  std::ofstream os_;
};

void resetDir(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
}

std::vector<teacher::DemoRecord> readVariantDemos(const RunConfig& cfg, int variant) {
  std::vector<teacher::DemoRecord> demos;
  for (int k = 0; k < cfg.demoCount; ++k)
    demos.push_back(teacher::readDemoLog(cfg.out / "demos" / (demoName(kVariants[variant], k) + ".log")));
  return demos;
}

void extractStage(const RunConfig& cfg) {
  const auto ex = teacher::exemplaryDemo(cfg.cell, cfg.exemplaryPeg, cfg.teacher);
  const auto trace = phase::detectPhases(ex.steps, cfg.transition.velocityThreshold, cfg.transition.nThreConstraintGen);
  const auto constraints = phase::extractConstraints(ex.steps, trace);
  fs::create_directories(cfg.out / "demos");
  teacher::writeDemoLog(cfg.out / "demos" / "exemplary.log", ex);
  phase::writeConstraints(cfg.out / "constraints.txt", constraints);
  spdlog::info("exemplary demo: {} steps, {} phases", ex.steps.size(), trace.phaseCount());
}

void collectStage(const RunConfig& cfg) {
  const auto constraints = phase::readConstraints(cfg.out / "constraints.txt");
  const auto styles =
      teacher::defaultStyles(cfg.demoCount, cfg.seeds.teacher, cfg.lateralJitterStd, cfg.depthBiasStd, cfg.pauseJitter);
  fs::create_directories(cfg.out / "demos");
  for (const auto* v : kVariants)
    for (int k = 0;; ++k) {
      const auto p = cfg.out / "demos" / (demoName(v, k) + ".log");
      if (!fs::exists(p)) break;
      fs::remove(p);
    }
  resetDir(cfg.out / "frames");
  for (int v = 0; v < 2; ++v) {
    auto demos = teacher::collectDemos(cfg.cell, v == 0 ? &constraints : nullptr, cfg.demoCount, styles, cfg.teacher);
    for (int k = 0; k < cfg.demoCount; ++k) {
      auto& d = demos[static_cast<std::size_t>(k)];
      const auto name = demoName(kVariants[v], k);
      for (std::size_t t = 0; t < d.steps.size(); t += static_cast<std::size_t>(cfg.learning.aeFrameStride)) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "_%04zu.png", t);
        d.steps[t].frameRef = "frames/" + name + buf;
        scene::writePng(cfg.out / d.steps[t].frameRef, learning::renderStep(d.steps[t], cfg.cell.geometry));
      }
      teacher::writeDemoLog(cfg.out / "demos" / (name + ".log"), d);
    }
    spdlog::info("collected {} {} demos", demos.size(), kVariants[v]);
  }
}

void trainAeStage(const RunConfig& cfg, Metrics& metrics) {
  std::vector<Vec> cols;
  for (int v = 0; v < 2; ++v)
    for (const auto& d : readVariantDemos(cfg, v))
      for (const auto& s : d.steps)
        if (!s.frameRef.empty()) cols.push_back(learning::frameToInput(scene::readPng(cfg.out / s.frameRef)));
  if (cols.empty()) throw DomainError("no frames referenced by the demo logs");
  Mat frames(cols.front().size(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) frames.col(static_cast<Eigen::Index>(i)) = cols[i];

  auto ae = std::make_shared<learning::Autoencoder>(cfg.learning.ae, cfg.seeds.aeInit);
  learning::AeTrainSettings s;
  s.epochs = cfg.learning.aeEpochs;
  s.batchSize = cfg.learning.aeBatch;
  s.adam.lr = cfg.learning.learningRate;
  s.seed = cfg.seeds.aeTrain;
  const auto report = learning::trainAutoencoder(*ae, frames, s, [&](int e, double loss, double secs) {
    metrics.write({{"stage", "train-ae"}, {"epoch", e}, {"loss", loss}, {"seconds", secs}});
    spdlog::debug("ae epoch {} loss {:.5f}", e, loss);
  });
  learning::PolicyModel m;
  m.ae = ae;
  m.meta.aeEpochs = s.epochs;
  m.meta.aeSeed = s.seed;
  m.meta.aeLoss = report.heldOutLoss;
  learning::saveCheckpoint(cfg.out / "ae.ckpt", m);
  spdlog::info("autoencoder: {} frames, held-out loss {:.5f} -> {:.5f}", frames.cols(), report.heldOutLoss.front(),
               report.heldOutLoss.back());
}

void trainRnnpbStage(const RunConfig& cfg, Metrics& metrics) {
  const auto base = learning::loadCheckpoint(cfg.out / "ae.ckpt");
  std::array<std::vector<teacher::DemoRecord>, 2> demos;
  for (int v = 0; v < 2; ++v) {
    demos[static_cast<std::size_t>(v)] = readVariantDemos(cfg, v);
    learning::encodeDemos(*base.ae, demos[static_cast<std::size_t>(v)], cfg.cell.geometry);
  }
  learning::RnnpbTrainSettings s;
  s.epochs = cfg.learning.rnnEpochs;
  s.noiseScale = cfg.learning.noiseScale;
  s.adam.lr = cfg.learning.learningRate;
  s.pbAdam.lr = cfg.learning.pbLearningRate;
  s.seed = cfg.seeds.rnn;

  // the two variants share nothing mutable, so they train concurrently
  const auto train = [&](int v) {
    auto m = learning::trainPolicy(base.ae, demos[static_cast<std::size_t>(v)], cfg.learning.rnn, s,
                                   [&](int e, double loss, double secs) {
                                     if (e % 50 == 0 || e + 1 == s.epochs)
                                       metrics.write({{"stage", "train-rnnpb"},
                                                      {"variant", kVariants[v]},
                                                      {"epoch", e},
                                                      {"loss", loss},
                                                      {"seconds", secs}});
                                   });
    m.meta.aeEpochs = base.meta.aeEpochs;
    m.meta.aeSeed = base.meta.aeSeed;
    m.meta.aeLoss = base.meta.aeLoss;
    learning::saveCheckpoint(cfg.out / modelFile(v), m);
    spdlog::info("{} policy: loss {:.5f} -> {:.5f}", kVariants[v], m.meta.rnnLoss.front(), m.meta.rnnLoss.back());
  };
  auto normal = std::async(std::launch::async, train, 1);
  train(0);
  normal.get();
}

std::array<Vec3, 2> trialStart(const RunConfig& cfg, int peg, int trial) {
  std::mt19937_64 rng(cfg.seeds.eval + static_cast<std::uint64_t>(peg * 10 + trial));
  std::normal_distribution<double> n(0.0, cfg.eval.startJitter);
  auto tips = cfg.cell.geometry.homeTips;
  for (auto& x : tips) x += Vec3(n(rng), n(rng), n(rng));
  return tips;
}

void writeHiddenCsv(const fs::path& path, const learning::ExecutionResult& r) {
  const auto stages = evaluation::stageAnnotations(r.history);
  std::ofstream os(path);
  os << "step,stage";
  for (Eigen::Index i = 0; i < r.latents.rows(); ++i) os << ",h" << i;
  os << '\n';
  for (Eigen::Index t = 0; t < r.latents.cols(); ++t) {
    os << t << ',' << evaluation::stageName(stages[static_cast<std::size_t>(t)]);
    for (Eigen::Index i = 0; i < r.latents.rows(); ++i) os << ',' << formatDouble(r.latents(i, t));
    os << '\n';
  }
  if (!os) throw DomainError("failed writing " + path.string());
}

evaluation::LatentTrace readHiddenCsv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DomainError("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  const auto width = std::count(line.begin(), line.end(), ',') - 1;
  std::vector<std::vector<double>> cols;
  evaluation::LatentTrace tr;
  while (std::getline(is, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    std::getline(ss, cell, ',');
    tr.stages.push_back(cell == "take" ? evaluation::Stage::Take
                        : cell == "pass" ? evaluation::Stage::Pass
                                         : evaluation::Stage::Insert);
    std::vector<double> c;
    while (std::getline(ss, cell, ',')) c.push_back(std::stod(cell));
    if (static_cast<long>(c.size()) != width) throw DomainError(path.string() + ": ragged hidden-state row");
    cols.push_back(std::move(c));
  }
  tr.hidden.resize(width, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t t = 0; t < cols.size(); ++t)
    for (long i = 0; i < width; ++i) tr.hidden(i, static_cast<Eigen::Index>(t)) = cols[t][static_cast<std::size_t>(i)];
  return tr;
}

void executeStage(const RunConfig& cfg) {
  resetDir(cfg.out / "runs");
  fs::create_directories(cfg.out / "eval");
  learning::ExecutionSettings es;
  es.maxSteps = cfg.eval.maxSteps;
  std::ostringstream csv;
  csv << "variant,peg,trial,take,pass,insert,termination,steps\n";
  for (int v = 0; v < 2; ++v) {
    const auto model = learning::loadCheckpoint(cfg.out / modelFile(v));
    if (!model.rnn) throw DomainError(modelFile(v).string() + " has no recurrent model");
    const Vec p = Vec::Zero(model.rnn->spec().np);
    for (int peg = 0; peg < 3; ++peg)
      for (int trial = 0; trial < cfg.eval.trialsPerPeg; ++trial) {
        const auto r = learning::executePolicy(model, cfg.cell, peg, p, es, trialStart(cfg, peg, trial));
        const auto name = runName(kVariants[v], peg, trial);
        teacher::DemoRecord log;
        log.steps = r.steps;
        log.sourcePeg = peg;
        log.variant = v == 0 ? teacher::Variant::Constrained : teacher::Variant::Normal;
        teacher::writeDemoLog(cfg.out / "runs" / (name + ".log"), log);
        writeHiddenCsv(cfg.out / "runs" / (name + ".hidden.csv"), r);
        csv << kVariants[v] << ',' << peg << ',' << trial << ',' << r.flags.take << ',' << r.flags.pass << ','
            << r.flags.insert << ',' << r.termination << ',' << r.steps.size() << '\n';
        spdlog::info("{}: take {:d} pass {:d} insert {:d}, {} after {} steps", name, r.flags.take, r.flags.pass,
                     r.flags.insert, r.termination, r.steps.size());
      }
  }
  std::ofstream os(cfg.out / "eval" / "runs.csv");
  os << csv.str();
  if (!os) throw DomainError("failed writing runs.csv");
}

void evaluateStage(const RunConfig& cfg) {
  const auto eval = cfg.out / "eval";
  fs::create_directories(eval);

  std::vector<std::pair<std::string, evaluation::VarianceReport>> variance;
  for (int v = 0; v < 2; ++v) {
    const auto demos = readVariantDemos(cfg, v);
    for (auto arm : {Arm::Left, Arm::Right})
      variance.emplace_back(kVariants[v], evaluation::sigmaAve(demos, arm));
  }
  evaluation::writeVarianceCsv(eval / "variance.csv", variance);

  std::vector<evaluation::RunOutcome> runs;
  std::ifstream is(eval / "runs.csv");
  if (!is) throw DomainError("missing eval/runs.csv");
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    std::stringstream ss(line);
    std::string f[6];
    for (auto& x : f) std::getline(ss, x, ',');
    runs.push_back({f[0], std::stoi(f[1]), {f[3] == "1", f[4] == "1", f[5] == "1"}});
  }
  const auto table = evaluation::successTable(runs);
  evaluation::writeSuccessCsv(eval / "success.csv", table);
  evaluation::writeSuccessSvg(eval / "success.svg", table);

  const auto traces = readLatentTraces(cfg, kVariants[0]);
  const auto p = evaluation::pca(evaluation::stackTraces(traces), 2);
  evaluation::writePcaCsv(eval / "pca.csv", traces, p);
  evaluation::writePcaSvg(eval / "pca.svg", traces, p);
  const auto sep = evaluation::segmentSeparation(traces);
  std::ofstream os(eval / "separation.csv");
  os << "take,insert,complete\n" << formatDouble(sep.take) << ',' << formatDouble(sep.insert) << ',' << sep.complete << '\n';
  if (!os) throw DomainError("failed writing separation.csv");
  spdlog::info("latent separation: take {:.4f} insert {:.4f}", sep.take, sep.insert);
}

}  // namespace

std::vector<evaluation::LatentTrace> readLatentTraces(const RunConfig& cfg, const std::string& variant) {
  std::vector<evaluation::LatentTrace> traces;
  for (int peg = 0; peg < 3; ++peg)
    for (int trial = 0; trial < cfg.eval.trialsPerPeg; ++trial) {
      const auto name = runName(variant.c_str(), peg, trial);
      auto tr = readHiddenCsv(cfg.out / "runs" / (name + ".hidden.csv"));
      tr.runId = name;
      tr.peg = peg;
      traces.push_back(std::move(tr));
    }
  return traces;
}

std::vector<fs::path> stageOutputs(Stage s, const RunConfig& cfg) {
  switch (s) {
    case Stage::ExtractConstraints: return {"constraints.txt", "demos/exemplary.log"};
    case Stage::Collect: {
      std::vector<fs::path> out;
      for (const auto* v : kVariants)
        for (int k = 0; k < cfg.demoCount; ++k) out.push_back(fs::path("demos") / (demoName(v, k) + ".log"));
      return out;
    }
    case Stage::TrainAe: return {"ae.ckpt"};
    case Stage::TrainRnnpb: return {modelFile(0), modelFile(1)};
    case Stage::Execute: return {"eval/runs.csv"};
    case Stage::Evaluate:
      return {"eval/variance.csv", "eval/success.csv", "eval/success.svg",
              "eval/pca.csv",      "eval/pca.svg",     "eval/separation.csv"};
  }
  return {};
}

void runStage(Stage s, const RunConfig& cfg) {
  fs::create_directories(cfg.out);
  Metrics metrics(cfg.out / kMetricsFile);
  switch (s) {
    case Stage::ExtractConstraints: extractStage(cfg); break;
    case Stage::Collect: collectStage(cfg); break;
    case Stage::TrainAe: trainAeStage(cfg, metrics); break;
    case Stage::TrainRnnpb: trainRnnpbStage(cfg, metrics); break;
    case Stage::Execute: executeStage(cfg); break;
    case Stage::Evaluate: evaluateStage(cfg); break;
  }
}

bool PipelineReport::ok() const {
  return std::none_of(stages.begin(), stages.end(), [](const auto& r) { return r.status == "failed"; });
}

std::vector<std::string> PipelineReport::ran() const {
  std::vector<std::string> out;
  for (const auto& r : stages)
    if (r.status == "ran") out.emplace_back(stageName(r.stage));
  return out;
}

std::string sha256File(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DomainError("cannot hash " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(is.gcount()));
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::vector<std::string> artifactHashes(const fs::path& out) {
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& e : fs::recursive_directory_iterator(out)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), out).generic_string();
    if (rel == kManifestFile || rel == kMetricsFile) continue;
    files.emplace_back(rel, sha256File(e.path()));
  }
  std::sort(files.begin(), files.end());
  std::vector<std::string> lines;
  for (const auto& [rel, h] : files) lines.push_back(h + "  " + rel);
  return lines;
}

std::vector<std::string> manifestHashes(const fs::path& manifest) {
  std::ifstream is(manifest);
  if (!is) throw DomainError("cannot open " + manifest.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line))
    if (line.rfind("file ", 0) == 0) out.push_back(line.substr(5));
  return out;
}

PipelineReport runPipeline(const RunConfig& cfg, const PipelineOptions& opts) {
  cfg.validate();
  fs::create_directories(cfg.out);
  PipelineReport report;
  bool failed = false, upstreamRan = false;
  for (auto s : kStages) {
    StageRecord rec;
    rec.stage = s;
    if (opts.only && *opts.only != s) {
      rec.status = "not-requested";
    } else if (failed) {
      rec.status = "skipped";
    } else {
      const auto outputs = stageOutputs(s, cfg);
      const bool present =
          std::all_of(outputs.begin(), outputs.end(), [&](const fs::path& p) { return fs::exists(cfg.out / p); });
      if (opts.resume && present && !upstreamRan) {
        rec.status = "resumed";
        spdlog::info("stage {}: outputs present, kept", stageName(s));
      } else {
        const auto t0 = std::chrono::steady_clock::now();
        spdlog::info("stage {}: running", stageName(s));
        try {
          runStage(s, cfg);
          rec.status = "ran";
          upstreamRan = true;
        } catch (const std::exception& e) {
          rec.status = "failed";
          rec.message = e.what();
          failed = true;
          spdlog::error("stage {} failed: {}", stageName(s), e.what());
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        Metrics(cfg.out / kMetricsFile)
            .write({{"stage", stageName(s)}, {"status", rec.status}, {"seconds", rec.seconds}});
      }
    }
    report.stages.push_back(rec);
  }

  report.manifest = cfg.out / kManifestFile;
  std::ostringstream os;
  os << "fls-manifest 1\n";
  os << "profile " << profileName(cfg.profile) << '\n';
  os << "seed teacher " << cfg.seeds.teacher << '\n';
  os << "seed ae_init " << cfg.seeds.aeInit << '\n';
  os << "seed ae_train " << cfg.seeds.aeTrain << '\n';
  os << "seed rnn " << cfg.seeds.rnn << '\n';
  os << "seed eval " << cfg.seeds.eval << '\n';
  for (const auto& r : report.stages) {
    os << "stage " << stageName(r.stage) << ' ' << r.status;
    if (!r.message.empty()) os << ' ' << json(r.message).dump();
    os << '\n';
  }
  for (const auto& h : artifactHashes(cfg.out)) os << "file " << h << '\n';
  std::ofstream ms(report.manifest);
  ms << os.str();
  if (!ms) throw DomainError("failed writing " + report.manifest.string());
  return report;
}

}  // namespace fls::harness
