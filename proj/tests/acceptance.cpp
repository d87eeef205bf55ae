// One pass/fail line per acceptance criterion. Runs the full desk pipeline
// twice (determinism), so expect tens of minutes on a small machine.

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "fls/autoencoder.hpp"
#include "fls/cell.hpp"
#include "fls/constrained_ik.hpp"
#include "fls/evaluation.hpp"
#include "fls/phase_constraints.hpp"
#include "fls/pipeline.hpp"
#include "fls/rnnpb.hpp"
#include "fls/teacher.hpp"

using namespace fls;
namespace fs = std::filesystem;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

double seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(const char* name, const std::function<Verdict()>& f) {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = f();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  if (!v.pass) ++failures;
  std::printf("%s %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", name, v.detail.c_str(), seconds(t0));
  std::fflush(stdout);
}

std::string describe(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------- kinematics

kinematics::JointState interiorState(const kinematics::ChainModel& c, std::mt19937_64& rng) {
  kinematics::JointState q;
  q.theta.resize(static_cast<Eigen::Index>(c.dof()));
  for (std::size_t i = 0; i < c.dof(); ++i) {
    const double pad = 0.1 * (c.joints[i].hi - c.joints[i].lo);
    q.theta[static_cast<Eigen::Index>(i)] =
        std::uniform_real_distribution<double>(c.joints[i].lo + pad, c.joints[i].hi - pad)(rng);
  }
  q.thetaVirtual = std::uniform_real_distribution<double>(0.2 * c.forcepLength, 0.8 * c.forcepLength)(rng);
  return q;
}

Verdict ikProperties() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto c = kinematics::syntheticPandaLikeChain();
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n(0.0, 0.1);
  int converged = 0;
  double worstTip = 0.0, worstPort = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const auto target = interiorState(c, rng);
    const auto fk = kinematics::forwardKinematics(c, target);
    auto seed = target;
    for (Eigen::Index i = 0; i < seed.theta.size(); ++i) seed.theta[i] += n(rng);
    seed.thetaVirtual += 100.0 * n(rng);
    const auto sol = ik::solveIk(c, {fk.forcepTip, fk.virtualTip, kinematics::clampToLimits(c, seed), {}});
    converged += sol.converged;
    worstTip = std::max(worstTip, sol.residualTip);
    worstPort = std::max(worstPort, sol.residualPort);
  }

  // 500-step tracked sweep through the right port: a slow circle with a depth ramp
  const auto cc = cell::defaultCellConfig();
  const auto home = cell::homeJoints(cc);
  const Vec3 centre(80, -35, 45);
  std::vector<Vec3> path;
  for (int k = 0; k < 500; ++k) {
    const double s = k / 499.0, a = 2.0 * M_PI * s;
    path.push_back(centre + Vec3(25.0 * std::cos(a), 25.0 * std::sin(a), 20.0 * std::sin(0.5 * a)));
  }
  const auto sols = ik::trackTrajectory(cc.chains[1], path, cc.geometry.ports[1], home[1]);
  double sweepPort = 0.0, sweepTip = 0.0;
  for (std::size_t k = 0; k < sols.size(); ++k) {
    const auto fk = kinematics::forwardKinematics(cc.chains[1], sols[k].q);
    sweepPort = std::max(sweepPort, (fk.virtualTip - cc.geometry.ports[1]).norm());
    sweepTip = std::max(sweepTip, (fk.forcepTip - path[k]).norm());
  }
  const double t = seconds(t0);
  return {converged == 1000 && worstTip < 1e-3 && worstPort < 1e-3 && sols.size() == 500 && sweepPort < 1e-3 &&
              sweepTip < 1e-3 && t < 10.0,
          describe("converged %d/1000, max residual tip %.2e port %.2e mm; sweep max port %.2e tip %.2e mm; %.2f s",
              converged, worstTip, worstPort, sweepPort, sweepTip, t)};
}

Verdict jacobianCheck() {
  const auto c = kinematics::syntheticPandaLikeChain();
  std::mt19937_64 rng(11);
  const double h = 1e-6;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto q = interiorState(c, rng);
    const auto J = kinematics::jacobians(c, q);
    const Vec x = q.packed();
    Mat Jf(3, x.size()), Jv(3, x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      Vec xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      const auto fp = kinematics::forwardKinematics(c, kinematics::JointState::unpack(xp));
      const auto fm = kinematics::forwardKinematics(c, kinematics::JointState::unpack(xm));
      Jf.col(k) = (fp.forcepTip - fm.forcepTip) / (2 * h);
      Jv.col(k) = (fp.virtualTip - fm.virtualTip) / (2 * h);
    }
    worst = std::max(worst, (Mat(J.forcep) - Jf).norm() / Jf.norm());
    worst = std::max(worst, (Mat(J.virtualTip) - Jv).norm() / Jv.norm());
  }
  return {worst < 1e-5, describe("max relative error %.2e over 100 configurations", worst)};
}

// ---------------------------------------------------------------- constraints

Verdict phaseDetection() {
  const auto cc = cell::defaultCellConfig();
  const auto ex = teacher::exemplaryDemo(cc, 1);
  const auto tr = phase::detectPhases(ex.steps, 1.0, 20);
  const auto bands = phase::extractConstraints(ex.steps, tr);
  // brute force: every phase i spans boundary samples [b_{i-1}, b_i]
  std::vector<long> cuts{0};
  cuts.insert(cuts.end(), tr.boundaries.begin(), tr.boundaries.end());
  cuts.push_back(static_cast<long>(ex.steps.size()) - 1);
  int mismatches = 0;
  for (int i = 1; i < static_cast<int>(cuts.size()); ++i)
    for (Arm a : {Arm::Left, Arm::Right}) {
      const double z0 = ex.steps[static_cast<std::size_t>(cuts[static_cast<std::size_t>(i - 1)])].xRef[armIndex(a)].z();
      const double z1 = ex.steps[static_cast<std::size_t>(cuts[static_cast<std::size_t>(i)])].xRef[armIndex(a)].z();
      const auto b = phase::activeConstraint(bands, i, a);
      if (!b || b->zLo != std::min(z0, z1) || b->zHi != std::max(z0, z1)) ++mismatches;
    }
  return {tr.phaseCount() == 8 && mismatches == 0 && bands.size() == 16,
          describe("N_C = %d, %zu bands, %d band mismatches", tr.phaseCount(), bands.size(), mismatches)};
}

Verdict forceLaw() {
  const phase::PhaseConstraint c{1, Arm::Right, 20.0, 40.0};
  const double kp = 0.7, h = 1e-3;
  double maxJump = 0.0, worstSlope = 0.0, insideMax = 0.0;
  double prev = phase::feedbackForce(0.0, c, kp);
  for (int k = 1; k <= 60000; ++k) {
    const double z = k * h, f = phase::feedbackForce(z, c, kp);
    if (z >= c.zLo && z <= c.zHi) insideMax = std::max(insideMax, std::abs(f));
    const bool outside = z <= c.zLo || z - h >= c.zHi;
    const bool inside = z - h >= c.zLo && z <= c.zHi;
    if (outside) worstSlope = std::max(worstSlope, std::abs((f - prev) / h + kp));
    if (inside) worstSlope = std::max(worstSlope, std::abs((f - prev) / h));
    maxJump = std::max(maxJump, std::abs(f - prev) - kp * h);
    prev = f;
  }
  double boundaryJump = 0.0;
  for (double b : {c.zLo, c.zHi})
    for (double dir : {-1e9, 1e9})
      boundaryJump =
          std::max(boundaryJump, std::abs(phase::feedbackForce(std::nextafter(b, dir), c, kp) - phase::feedbackForce(b, c, kp)));
  const bool below = phase::feedbackForce(c.zLo - 2.0, c, kp) == kp * 2.0;
  const bool above = phase::feedbackForce(c.zHi + 2.0, c, kp) == -kp * 2.0;
  return {insideMax == 0.0 && worstSlope < 1e-6 && maxJump < 1e-12 && boundaryJump < 1e-12 && below && above,
          describe("inside max |F| %.1e, slope error %.1e, max jump %.1e, boundary jump %.1e", insideMax, worstSlope,
              std::max(0.0, maxJump), boundaryJump)};
}

Verdict varianceDirection(const harness::RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ex = teacher::exemplaryDemo(cfg.cell, cfg.exemplaryPeg, cfg.teacher);
  const auto bands = phase::extractConstraints(
      ex.steps, phase::detectPhases(ex.steps, cfg.transition.velocityThreshold, cfg.transition.nThreConstraintGen));
  const auto styles =
      teacher::defaultStyles(cfg.demoCount, cfg.seeds.teacher, cfg.lateralJitterStd, cfg.depthBiasStd, cfg.pauseJitter);
  const auto con = teacher::collectDemos(cfg.cell, &bands, cfg.demoCount, styles, cfg.teacher);
  const auto nor = teacher::collectDemos(cfg.cell, nullptr, cfg.demoCount, styles, cfg.teacher);
  const auto cl = evaluation::sigmaAve(con, Arm::Left).sigmaAve, cr = evaluation::sigmaAve(con, Arm::Right).sigmaAve;
  const auto nl = evaluation::sigmaAve(nor, Arm::Left).sigmaAve, nr = evaluation::sigmaAve(nor, Arm::Right).sigmaAve;
  const double t = seconds(t0);
  return {cl < nl && cr < nr && t < 300.0,
          describe("sigma_ave left %.3f < %.3f, right %.3f < %.3f (constrained < normal), %zu demos in %.1f s", cl, nl, cr,
              nr, con.size() + nor.size(), t)};
}

// ---------------------------------------------------------------- learning

Mat uniform(int rows, int cols, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
  return m;
}

double worstGradient(const std::vector<nn::Param*>& params, const std::function<double()>& loss, int& tensors) {
  double worst = 0.0;
  for (auto* p : params) {
    const Mat analytic = p->grad;
    Mat numeric(analytic.rows(), analytic.cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double keep = p->value(i);
      p->value(i) = keep + 1e-5;
      const double up = loss();
      p->value(i) = keep - 1e-5;
      const double down = loss();
      p->value(i) = keep;
      numeric(i) = (up - down) / 2e-5;
    }
    worst = std::max(worst, nn::relativeError(analytic, numeric));
    ++tensors;
  }
  return worst;
}

Verdict gradientChecks() {
  const auto t0 = std::chrono::steady_clock::now();
  learning::AutoencoderSpec as;
  as.height = 12;
  as.width = 16;
  as.channels = {2, 3};
  as.hidden = 5;
  as.latent = 3;
  learning::Autoencoder ae(as, 11), probe(as, 11);
  std::mt19937_64 rng(3);
  const Mat x = uniform(as.inputSize(), 3, rng, 0.0, 1.0);
  ae.zeroGrad();
  ae.lossAndGrad(x, true);
  int tensors = 0;
  const double aeWorst = worstGradient(ae.params(), [&] {
    const auto src = ae.params();
    const auto dst = probe.params();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
    return probe.lossAndGrad(x, true);
  }, tensors);

  const auto rs = learning::RnnpbSpec::reduced(2);
  learning::Rnnpb net(rs, 21);
  std::vector<Mat> in, tg;
  for (int len : {6, 4, 5}) {
    in.push_back(uniform(rs.ioSize(), len, rng, -1, 1));
    tg.push_back(uniform(rs.ioSize(), len, rng, -1, 1));
  }
  const auto batch = learning::makeBatch(in, tg, uniform(3, rs.np, rng, -0.5, 0.5));
  net.zeroGrad();
  net.lossAndGrad(batch, nullptr);
  const double rnnWorst = worstGradient(net.params(), [&] { return net.loss(batch); }, tensors);
  const double t = seconds(t0);
  return {aeWorst < 1e-4 && rnnWorst < 1e-4 && t < 120.0,
          describe("%d tensors, max relative error autoencoder %.2e, RNNPB %.2e, %.1f s", tensors, aeWorst, rnnWorst, t)};
}

Verdict noiseAugmentation() {
  std::mt19937_64 rng(15);
  std::vector<Mat> seqs;
  for (int k = 0; k < 4; ++k) {
    Mat s(20, 60);
    Vec x = uniform(20, 1, rng, -1, 1).col(0);
    for (int t = 0; t < 60; ++t) {
      x += uniform(20, 1, rng, -0.2, 0.2).col(0);
      x.head(3) += 0.5 * uniform(3, 1, rng, -0.2, 0.2).col(0);
      s.col(t) = x;
    }
    seqs.push_back(s);
  }
  const auto m = learning::NoiseModel::fromSequences(seqs, 0.3);
  const auto unit = learning::NoiseModel::fromSequences(seqs, 1.0);
  std::mt19937_64 r(16);
  const Mat e = m.sample(100000, r);
  const Vec mean = e.rowwise().mean();
  const Mat c = (e.colwise() - mean) * (e.colwise() - mean).transpose() / (e.cols() - 1.0);
  const Mat target = 0.09 * unit.covariance();
  const double rel = (c - target).norm() / target.norm();
  return {rel < 0.05, describe("Frobenius relative error %.4f against 0.3^2 Sigma over 1e5 samples", rel)};
}

// ---------------------------------------------------------------- pipeline

struct Counts {
  int runs = 0, take = 0, pass = 0, insert = 0;
};

std::map<std::string, Counts> readRuns(const fs::path& csv) {
  std::ifstream is(csv);
  if (!is) throw DomainError("missing " + csv.string());
  std::map<std::string, Counts> out;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    std::stringstream ss(line);
    std::string f[6];
    for (auto& x : f) std::getline(ss, x, ',');
    auto& c = out[f[0]];
    ++c.runs;
    c.take += f[3] == "1";
    c.pass += f[4] == "1";
    c.insert += f[5] == "1";
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "fls_acceptance";
  fs::remove_all(work);
  auto cfg = harness::defaultRunConfig(harness::Profile::Desk);

  report("ik-properties", ikProperties);
  report("jacobian-finite-differences", jacobianCheck);
  report("phase-detection", phaseDetection);
  report("force-law", forceLaw);
  report("variance-direction", [&] { return varianceDirection(cfg); });
  report("gradient-checks", gradientChecks);
  report("noise-augmentation", noiseAugmentation);

  cfg.out = work / "a";
  const auto t0 = std::chrono::steady_clock::now();
  const auto first = harness::runPipeline(cfg);
  const double pipelineSeconds = seconds(t0);

  report("closed-loop", [&]() -> Verdict {
    if (!first.ok()) return {false, "pipeline failed"};
    auto counts = readRuns(cfg.out / "eval" / "runs.csv");
    const auto& c = counts["constrained"];
    const auto& n = counts["normal"];
    const bool take = c.runs > 0 && 5 * c.take >= 4 * c.runs;
    const bool order = c.take >= n.take && c.pass >= n.pass && c.insert >= n.insert;
    return {take && order && c.runs == 15 && pipelineSeconds < 1800.0,
            describe("constrained take/pass/insert %d/%d/%d of %d, normal %d/%d/%d of %d; pipeline %.0f s", c.take, c.pass,
                c.insert, c.runs, n.take, n.pass, n.insert, n.runs, pipelineSeconds)};
  });

  report("pca-separation", [&]() -> Verdict {
    if (!first.ok()) return {false, "pipeline failed"};
    const auto traces = harness::readLatentTraces(cfg, "constrained");
    const auto sep = evaluation::segmentSeparation(traces);
    const Mat data = evaluation::stackTraces(traces);
    const auto full = evaluation::pca(data, static_cast<int>(data.rows()));
    const double recon = (evaluation::backProject(full, full.projected) - data).cwiseAbs().maxCoeff();
    const bool fullRank = full.rank == data.rows();
    return {sep.take > sep.insert && recon < 1e-8,
            describe("take separation %.4f vs insert %.4f (%s), reconstruction error %.2e with %d%s components", sep.take,
                sep.insert, sep.complete ? "all traces reach insert" : "some traces lack a segment", recon, full.rank,
                fullRank ? "" : " (rank-limited)")};
  });

  report("determinism", [&]() -> Verdict {
    auto again = cfg;
    again.out = work / "b";
    const auto second = harness::runPipeline(again);
    const auto a = harness::manifestHashes(first.manifest);
    const auto b = harness::manifestHashes(second.manifest);
    std::size_t differing = a.size() > b.size() ? a.size() - b.size() : b.size() - a.size();
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) differing += a[i] != b[i];
    return {first.ok() && second.ok() && a == b && !a.empty(),
            describe("%zu hashed files, %zu differ between reruns", a.size(), differing)};
  });

  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
