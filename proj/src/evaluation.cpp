#include "fls/evaluation.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "fls/common.hpp"

namespace fls::evaluation {

VarianceReport sigmaAve(const std::vector<teacher::DemoRecord>& demos, Arm arm) {
  std::vector<std::pair<const teacher::DemoRecord*, long>> aligned;
  VarianceReport r;
  r.arm = arm;
  for (const auto& d : demos) {
    const auto it = std::find_if(d.events.begin(), d.events.end(),
                                 [](const teacher::DemoEvent& e) { return e.arm == Arm::Right && e.closed; });
    if (it == d.events.end() || it->t < 0 || it->t >= static_cast<long>(d.steps.size())) {
      spdlog::warn("sigmaAve: demo without a right grasp excluded");
      ++r.excluded;
      continue;
    }
    aligned.emplace_back(&d, it->t);
  }
  if (aligned.size() < 2) throw DomainError("sigmaAve needs at least two demos with a right grasp");
  long before = std::numeric_limits<long>::max(), after = std::numeric_limits<long>::max();
  for (const auto& [d, g] : aligned) {
    before = std::min(before, g);
    after = std::min(after, static_cast<long>(d->steps.size()) - 1 - g);
  }
  const auto a = armIndex(arm);
  const double n = static_cast<double>(aligned.size());
  double total = 0.0;
  for (long o = -before; o <= after; ++o) {
    // deviations from the first demo keep identical inputs exactly at zero
    const auto z = [&](const auto& e) { return e.first->steps[static_cast<std::size_t>(e.second + o)].xRef[a].z(); };
    const double ref = z(aligned.front());
    double mean = 0.0;
    for (const auto& e : aligned) mean += z(e) - ref;
    mean /= n;
    double var = 0.0;
    for (const auto& e : aligned) {
      const double dev = z(e) - ref - mean;
      var += dev * dev;
    }
    total += var / n;
  }
  r.sigmaAve = total / static_cast<double>(before + after + 1);
  r.trials = static_cast<int>(aligned.size());
  r.before = static_cast<int>(before);
  r.after = static_cast<int>(after);
  return r;
}

std::vector<SuccessRow> successTable(const std::vector<RunOutcome>& runs) {
  std::map<std::pair<std::string, int>, SuccessRow> rows;
  for (const auto& run : runs) {
    for (int peg : {run.peg, -1}) {
      auto& row = rows[{run.variant, peg}];
      row.variant = run.variant;
      row.peg = peg;
      ++row.runs;
      row.take += run.flags.take;
      row.pass += run.flags.pass;
      row.insert += run.flags.insert;
    }
  }
  std::vector<SuccessRow> out;
  for (auto& [k, v] : rows) out.push_back(v);
  return out;
}

PcaResult pca(const Mat& data, int dims) {
  if (dims < 1) throw DomainError("PCA needs at least one component");
  if (data.cols() <= dims) throw DomainError("PCA needs more samples than components");
  if (!data.allFinite()) throw DomainError("PCA input contains non-finite values");
  PcaResult p;
  p.mean = data.rowwise().mean();
  const Mat centered = data.colwise() - p.mean;
  const Mat cov = centered * centered.transpose() / static_cast<double>(data.cols() - 1);
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  const Vec ev = es.eigenvalues().reverse();
  const Mat vecs = es.eigenvectors().rowwise().reverse();
  const double top = std::max(ev[0], 0.0);
  int rank = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (top > 0.0 && ev[i] > 1e-12 * top) ++rank;
  p.rank = rank;
  const int k = std::min(dims, rank);
  if (k < dims) spdlog::warn("PCA: covariance rank {} below the {} requested components", rank, dims);
  p.components = vecs.leftCols(k);
  for (int j = 0; j < k; ++j) {
    Eigen::Index at = 0;
    p.components.col(j).cwiseAbs().maxCoeff(&at);
    if (p.components(at, j) < 0.0) p.components.col(j) *= -1.0;
  }
  p.variance = ev.head(k);
  const double total = ev.cwiseMax(0.0).sum();
  p.explained = total > 0.0 ? Vec(p.variance / total) : Vec::Zero(k);
  p.projected = p.components.transpose() * centered;
  return p;
}

Mat backProject(const PcaResult& p, const Mat& projected) {
  return (p.components * projected).colwise() + p.mean;
}

const char* stageName(Stage s) {
  switch (s) {
    case Stage::Take: return "take";
    case Stage::Pass: return "pass";
    case Stage::Insert: return "insert";
  }
  return "?";
}

std::vector<Stage> stageAnnotations(const std::vector<scene::SceneState>& history) {
  std::vector<Stage> out;
  Stage s = Stage::Take;
  for (const auto& h : history) {
    const bool held = h.object.tag == scene::Attachment::HeldBy;
    if (s == Stage::Take && held) s = Stage::Pass;
    if (s == Stage::Pass && held && h.object.holder == Arm::Left && !h.object.coHeld) s = Stage::Insert;
    out.push_back(s);
  }
  return out;
}

namespace {

/// Linear resampling of a polyline (2 x n) to `m` points over its index.
Mat resample(const Mat& seg, int m) {
  Mat out(seg.rows(), m);
  const double n = static_cast<double>(seg.cols());
  for (int j = 0; j < m; ++j) {
    const double x = m == 1 ? 0.0 : j * (n - 1.0) / (m - 1.0);
    const auto i = static_cast<Eigen::Index>(std::floor(x));
    const Eigen::Index i1 = std::min<Eigen::Index>(i + 1, seg.cols() - 1);
    const double f = x - static_cast<double>(i);
    out.col(j) = (1.0 - f) * seg.col(i) + f * seg.col(i1);
  }
  return out;
}

double meanPairwise(const std::vector<Mat>& segs) {
  double sum = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < segs.size(); ++i)
    for (std::size_t j = i + 1; j < segs.size(); ++j, ++pairs)
      sum += (segs[i] - segs[j]).colwise().norm().mean();
  return pairs ? sum / pairs : 0.0;
}

}  // namespace

Mat stackTraces(const std::vector<LatentTrace>& traces) {
  Eigen::Index n = 0, h = -1;
  for (const auto& t : traces) {
    if (h >= 0 && t.hidden.rows() != h) throw DomainError("latent traces differ in dimension");
    h = t.hidden.rows();
    if (static_cast<std::size_t>(t.hidden.cols()) != t.stages.size()) throw DomainError("trace stage count differs from its length");
    n += t.hidden.cols();
  }
  Mat all(std::max<Eigen::Index>(h, 0), n);
  Eigen::Index c = 0;
  for (const auto& t : traces) {
    all.middleCols(c, t.hidden.cols()) = t.hidden;
    c += t.hidden.cols();
  }
  return all;
}

SeparationReport segmentSeparation(const std::vector<LatentTrace>& traces, int samples) {
  if (traces.size() < 2) throw DomainError("segment separation needs at least two traces");
  const PcaResult p = pca(stackTraces(traces), 2);
  std::vector<Mat> take, insert;
  SeparationReport r;
  r.complete = true;
  Eigen::Index c = 0;
  for (const auto& t : traces) {
    const Mat proj = p.projected.middleCols(c, t.hidden.cols());
    c += t.hidden.cols();
    for (Stage s : {Stage::Take, Stage::Insert}) {
      std::vector<Eigen::Index> idx;
      for (std::size_t i = 0; i < t.stages.size(); ++i)
        if (t.stages[i] == s) idx.push_back(static_cast<Eigen::Index>(i));
      if (idx.size() < 2) {
        r.complete = false;
        continue;
      }
      Mat seg(proj.rows(), static_cast<Eigen::Index>(idx.size()));
      for (std::size_t i = 0; i < idx.size(); ++i) seg.col(static_cast<Eigen::Index>(i)) = proj.col(idx[i]);
      (s == Stage::Take ? take : insert).push_back(resample(seg, samples));
    }
  }
  r.take = meanPairwise(take);
  r.insert = meanPairwise(insert);
  return r;
}

// ---- output

namespace {

std::ofstream openOut(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DomainError("cannot write " + path.string());
  os.precision(10);
  return os;
}

std::string hueColor(double f) {
  // blue (early) to red (late)
  const double t = std::clamp(f, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(40 + 200 * t));
  const int b = static_cast<int>(std::lround(220 - 190 * t));
  const int g = static_cast<int>(std::lround(80 + 60 * (1.0 - std::abs(2.0 * t - 1.0))));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace

void writeVarianceCsv(const std::filesystem::path& path, const std::vector<std::pair<std::string, VarianceReport>>& rows) {
  auto os = openOut(path);
  os << "variant,arm,sigma_ave,trials,before,after,excluded\n";
  for (const auto& [v, r] : rows)
    os << v << ',' << armName(r.arm) << ',' << r.sigmaAve << ',' << r.trials << ',' << r.before << ',' << r.after << ','
       << r.excluded << '\n';
}

void writeSuccessCsv(const std::filesystem::path& path, const std::vector<SuccessRow>& rows) {
  auto os = openOut(path);
  os << "variant,peg,runs,take,pass,insert\n";
  for (const auto& r : rows)
    os << r.variant << ',' << (r.peg < 0 ? std::string("all") : std::to_string(r.peg)) << ',' << r.runs << ',' << r.take
       << ',' << r.pass << ',' << r.insert << '\n';
}

void writeSuccessSvg(const std::filesystem::path& path, const std::vector<SuccessRow>& rows) {
  std::vector<SuccessRow> totals;
  for (const auto& r : rows)
    if (r.peg < 0) totals.push_back(r);
  auto os = openOut(path);
  const int w = 120 + 200 * static_cast<int>(totals.size()), h = 260;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"60\" y1=\"220\" x2=\"" << w - 20 << "\" y2=\"220\" stroke=\"black\"/>\n";
  const char* colors[3] = {"#4e79a7", "#f28e2b", "#59a14f"};
  const char* names[3] = {"take", "pass", "insert"};
  for (std::size_t v = 0; v < totals.size(); ++v) {
    const auto& r = totals[v];
    const int counts[3] = {r.take, r.pass, r.insert};
    const double x0 = 80.0 + 200.0 * static_cast<double>(v);
    for (int k = 0; k < 3; ++k) {
      const double frac = r.runs ? static_cast<double>(counts[k]) / r.runs : 0.0;
      const double bh = 180.0 * frac;
      os << "<rect x=\"" << x0 + 50.0 * k << "\" y=\"" << 220.0 - bh << "\" width=\"40\" height=\"" << bh << "\" fill=\""
         << colors[k] << "\"/>\n";
      os << "<text x=\"" << x0 + 50.0 * k + 20 << "\" y=\"" << 214.0 - bh << "\" font-size=\"11\" text-anchor=\"middle\">"
         << counts[k] << "/" << r.runs << "</text>\n";
    }
    os << "<text x=\"" << x0 + 70 << "\" y=\"240\" font-size=\"13\" text-anchor=\"middle\">" << r.variant << "</text>\n";
  }
  for (int k = 0; k < 3; ++k)
    os << "<text x=\"" << 10 << "\" y=\"" << 30 + 16 * k << "\" font-size=\"11\" fill=\"" << colors[k] << "\">" << names[k]
       << "</text>\n";
  os << "</svg>\n";
}

void writePcaCsv(const std::filesystem::path& path, const std::vector<LatentTrace>& traces, const PcaResult& p) {
  auto os = openOut(path);
  os << "run,peg,step,stage,pc1,pc2\n";
  Eigen::Index c = 0;
  for (const auto& t : traces) {
    for (Eigen::Index i = 0; i < t.hidden.cols(); ++i, ++c) {
      os << t.runId << ',' << t.peg << ',' << i << ',' << stageName(t.stages[static_cast<std::size_t>(i)]) << ','
         << p.projected(0, c) << ',' << (p.projected.rows() > 1 ? p.projected(1, c) : 0.0) << '\n';
    }
  }
}

void writePcaSvg(const std::filesystem::path& path, const std::vector<LatentTrace>& traces, const PcaResult& p) {
  auto os = openOut(path);
  const int w = 640, h = 520, m = 50;
  const Mat& q = p.projected;
  const double x0 = q.row(0).minCoeff(), x1 = q.row(0).maxCoeff();
  const bool two = q.rows() > 1;
  const double y0 = two ? q.row(1).minCoeff() : -1.0, y1 = two ? q.row(1).maxCoeff() : 1.0;
  const auto sx = [&](double v) { return m + (w - 2 * m) * (x1 > x0 ? (v - x0) / (x1 - x0) : 0.5); };
  const auto sy = [&](double v) { return h - m - (h - 2 * m) * (y1 > y0 ? (v - y0) / (y1 - y0) : 0.5); };
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"" << h - 12 << "\" font-size=\"13\" text-anchor=\"middle\">PC1 ("
     << 100.0 * p.explained[0] << "%)</text>\n";
  if (two)
    os << "<text x=\"14\" y=\"" << h / 2 << "\" font-size=\"13\" transform=\"rotate(-90 14 " << h / 2 << ")\">PC2 ("
       << 100.0 * p.explained[1] << "%)</text>\n";
  Eigen::Index c = 0;
  for (const auto& t : traces) {
    const Eigen::Index n = t.hidden.cols();
    os << "<polyline fill=\"none\" stroke=\"#bbbbbb\" stroke-width=\"0.8\" points=\"";
    for (Eigen::Index i = 0; i < n; ++i) os << sx(q(0, c + i)) << ',' << sy(two ? q(1, c + i) : 0.0) << ' ';
    os << "\"/>\n";
    for (Eigen::Index i = 0; i < n; ++i) {
      const double px = sx(q(0, c + i)), py = sy(two ? q(1, c + i) : 0.0);
      os << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"2\" fill=\""
         << hueColor(n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0) << "\"/>\n";
      const auto st = t.stages[static_cast<std::size_t>(i)];
      if (i > 0 && st != t.stages[static_cast<std::size_t>(i - 1)])
        os << "<rect x=\"" << px - 4 << "\" y=\"" << py - 4 << "\" width=\"8\" height=\"8\" fill=\"none\" stroke=\"black\"/>\n"
           << "<text x=\"" << px + 6 << "\" y=\"" << py - 6 << "\" font-size=\"10\">" << stageName(st) << "</text>\n";
    }
    if (n > 0)
      os << "<text x=\"" << sx(q(0, c)) + 4 << "\" y=\"" << sy(two ? q(1, c) : 0.0) + 12 << "\" font-size=\"10\">peg "
         << t.peg << "</text>\n";
    c += n;
  }
  os << "</svg>\n";
}

}  // namespace fls::evaluation
