#include "fls/rnnpb.hpp"

#include <Eigen/Eigenvalues>
#include <chrono>
#include <cmath>

#include "fls/common.hpp"

namespace fls::learning {

RnnpbSpec RnnpbSpec::paper(int np) {
  RnnpbSpec s;
  s.np = np;
  s.units = {s.ns + s.nu + np, 500, 300, 100, 100, 100, 100, 300, 500, s.ns + s.nu};
  return s;
}

RnnpbSpec RnnpbSpec::desk(int np) {
  RnnpbSpec s;
  s.np = np;
  s.units = {s.ns + s.nu + np, 128, 64, 32, 16, 16, 32, 64, 128, s.ns + s.nu};
  return s;
}

RnnpbSpec RnnpbSpec::reduced(int np) {
  RnnpbSpec s;
  s.np = np;
  s.units = {s.ns + s.nu + np, 8, 8, 8, 8, 8, 8, 8, 8, s.ns + s.nu};
  return s;
}

void RnnpbSpec::validate() const {
  if (ns <= 0 || nu <= 0 || np < 0) throw DomainError("RNNPB io sizes must be positive");
  if (units[0] != ns + nu + np) throw DomainError("RNNPB input units must equal ns + nu + np");
  if (units[9] != ns + nu) throw DomainError("RNNPB output units must equal ns + nu");
  for (int u : units)
    if (u <= 0) throw DomainError("RNNPB unit counts must be positive");
}

Mat RnnState::latent() const {
  Mat z(h1.rows() + h2.rows(), h1.cols());
  z << h1, h2;
  return z;
}

namespace {

Mat gaussian(int rows, int cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, std);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = n(rng);
  return m;
}

Mat sigmoidOf(const Mat& z) { return z.unaryExpr([](double v) { return nn::sigmoid(v); }); }

// index of the transform feeding group k+1 in fc_ (LSTM transforms excluded)
constexpr std::array<int, 7> kFcGroup{0, 1, 2, 5, 6, 7, 8};

}  // namespace

Rnnpb::Rnnpb(const RnnpbSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < fc_.size(); ++k) {
    const int g = kFcGroup[k];
    const int in = spec_.units[static_cast<std::size_t>(g)];
    const int out = spec_.units[static_cast<std::size_t>(g + 1)];
    const std::string n = "rnn.fc" + std::to_string(g + 1);
    fc_[k].w = nn::Param(n + ".w", gaussian(out, in, 1.0 / std::sqrt(in), rng));
    fc_[k].b = nn::Param(n + ".b", Mat::Zero(out, 1));
  }
  for (std::size_t k = 0; k < 2; ++k) {
    const int in = spec_.units[3 + k];
    const int h = spec_.units[4 + k];
    const std::string n = "rnn.lstm" + std::to_string(k + 1);
    lstm_[k].wx = nn::Param(n + ".wx", gaussian(4 * h, in, 1.0 / std::sqrt(in), rng));
    lstm_[k].wh = nn::Param(n + ".wh", gaussian(4 * h, h, 1.0 / std::sqrt(h), rng));
    Mat b = Mat::Zero(4 * h, 1);
    b.middleRows(h, h).setOnes();  // forget gate bias
    lstm_[k].b = nn::Param(n + ".b", b);
  }
}

RnnState Rnnpb::zeroState(int batch) const {
  RnnState s;
  s.h1 = Mat::Zero(spec_.units[4], batch);
  s.c1 = Mat::Zero(spec_.units[4], batch);
  s.h2 = Mat::Zero(spec_.units[5], batch);
  s.c2 = Mat::Zero(spec_.units[5], batch);
  return s;
}

Mat Rnnpb::step(const Mat& x, RnnState& st) const {
  if (x.rows() != spec_.inputSize()) throw DomainError("RNNPB input dimension mismatch");
  if (st.h1.cols() != x.cols() || st.h1.rows() != spec_.units[4] || st.h2.rows() != spec_.units[5])
    throw DomainError("RNNPB state does not match the batch");
  const auto dense = [&](std::size_t k, const Mat& a) {
    Mat z = fc_[k].w.value * a;
    z.colwise() += fc_[k].b.value.col(0);
    return z;
  };
  Mat a = dense(0, x).array().tanh();
  a = dense(1, a).array().tanh();
  a = dense(2, a).array().tanh();
  Mat* hs[2] = {&st.h1, &st.h2};
  Mat* cs[2] = {&st.c1, &st.c2};
  for (std::size_t k = 0; k < 2; ++k) {
    const Eigen::Index h = hs[k]->rows();
    Mat z = lstm_[k].wx.value * a + lstm_[k].wh.value * *hs[k];
    z.colwise() += lstm_[k].b.value.col(0);
    const Mat i = sigmoidOf(z.topRows(h));
    const Mat f = sigmoidOf(z.middleRows(h, h));
    const Mat g = z.middleRows(2 * h, h).array().tanh();
    const Mat o = sigmoidOf(z.bottomRows(h));
    *cs[k] = f.cwiseProduct(*cs[k]) + i.cwiseProduct(g);
    *hs[k] = o.array() * cs[k]->array().tanh();
    a = *hs[k];
  }
  a = dense(3, a).array().tanh();
  a = dense(4, a).array().tanh();
  a = dense(5, a).array().tanh();
  return dense(6, a);
}

void Rnnpb::lstmForward(const Lstm& l, const Mat& x, int T, int B, LstmCache& c) {
  const Eigen::Index h = l.wh.value.cols();
  const Eigen::Index n = static_cast<Eigen::Index>(T) * B;
  Mat zx = l.wx.value * x;
  zx.colwise() += l.b.value.col(0);
  c.i.resize(h, n);
  c.f.resize(h, n);
  c.g.resize(h, n);
  c.o.resize(h, n);
  c.c.resize(h, n);
  c.tc.resize(h, n);
  c.h.resize(h, n);
  Mat hPrev = Mat::Zero(h, B), cPrev = Mat::Zero(h, B);
  for (int t = 0; t < T; ++t) {
    const Eigen::Index o = static_cast<Eigen::Index>(t) * B;
    const Mat z = zx.middleCols(o, B) + l.wh.value * hPrev;
    c.i.middleCols(o, B) = sigmoidOf(z.topRows(h));
    c.f.middleCols(o, B) = sigmoidOf(z.middleRows(h, h));
    c.g.middleCols(o, B) = z.middleRows(2 * h, h).array().tanh();
    c.o.middleCols(o, B) = sigmoidOf(z.bottomRows(h));
    c.c.middleCols(o, B) = c.f.middleCols(o, B).cwiseProduct(cPrev) + c.i.middleCols(o, B).cwiseProduct(c.g.middleCols(o, B));
    c.tc.middleCols(o, B) = c.c.middleCols(o, B).array().tanh();
    c.h.middleCols(o, B) = c.o.middleCols(o, B).cwiseProduct(c.tc.middleCols(o, B));
    hPrev = c.h.middleCols(o, B);
    cPrev = c.c.middleCols(o, B);
  }
}

Mat Rnnpb::lstmBackward(Lstm& l, const Mat& x, const Mat& dH, int T, int B, const LstmCache& c) {
  const Eigen::Index h = l.wh.value.cols();
  Mat dZ(4 * h, dH.cols());
  Mat dhNext = Mat::Zero(h, B), dcNext = Mat::Zero(h, B);
  for (int t = T - 1; t >= 0; --t) {
    const Eigen::Index o = static_cast<Eigen::Index>(t) * B;
    const Mat dh = dH.middleCols(o, B) + dhNext;
    const auto i = c.i.middleCols(o, B).array();
    const auto f = c.f.middleCols(o, B).array();
    const auto g = c.g.middleCols(o, B).array();
    const auto og = c.o.middleCols(o, B).array();
    const auto tc = c.tc.middleCols(o, B).array();
    const Mat dc = (dh.array() * og * (1.0 - tc.square())).matrix() + dcNext;
    const Mat cPrev = t > 0 ? Mat(c.c.middleCols(o - B, B)) : Mat::Zero(h, B);
    const Mat hPrev = t > 0 ? Mat(c.h.middleCols(o - B, B)) : Mat::Zero(h, B);
    auto dz = dZ.middleCols(o, B);
    dz.topRows(h) = dc.array() * g * i * (1.0 - i);
    dz.middleRows(h, h) = dc.array() * cPrev.array() * f * (1.0 - f);
    dz.middleRows(2 * h, h) = dc.array() * i * (1.0 - g.square());
    dz.bottomRows(h) = dh.array() * tc * og * (1.0 - og);
    dcNext = dc.array() * f;
    dhNext.noalias() = l.wh.value.transpose() * dz;
    l.wh.grad.noalias() += dz * hPrev.transpose();
  }
  l.wx.grad.noalias() += dZ * x.transpose();
  l.b.grad.col(0) += dZ.rowwise().sum();
  return l.wx.value.transpose() * dZ;
}

Mat Rnnpb::forwardAll(const Mat& x, int T, int B, std::array<Mat, 8>* acts, std::array<LstmCache, 2>* caches) const {
  // acts: a1, a2, a3, h1, h2, a6, a7, a8 (all H x T*B)
  std::array<Mat, 8> local;
  std::array<LstmCache, 2> lc;
  auto& A = acts ? *acts : local;
  auto& C = caches ? *caches : lc;
  const auto dense = [&](std::size_t k, const Mat& a) {
    Mat z = fc_[k].w.value * a;
    z.colwise() += fc_[k].b.value.col(0);
    return z;
  };
  A[0] = dense(0, x).array().tanh();
  A[1] = dense(1, A[0]).array().tanh();
  A[2] = dense(2, A[1]).array().tanh();
  lstmForward(lstm_[0], A[2], T, B, C[0]);
  A[3] = C[0].h;
  lstmForward(lstm_[1], A[3], T, B, C[1]);
  A[4] = C[1].h;
  A[5] = dense(3, A[4]).array().tanh();
  A[6] = dense(4, A[5]).array().tanh();
  A[7] = dense(5, A[6]).array().tanh();
  return dense(6, A[7]);
}

namespace {

struct Packed {
  Mat x, y, mask;  // columns t*B + b
  int T, B;
};

Packed pack(const Rnnpb::Batch& batch, int inSize, int outSize) {
  Packed p;
  p.T = static_cast<int>(batch.inputs.size());
  if (p.T == 0) throw DomainError("empty RNNPB batch");
  p.B = static_cast<int>(batch.inputs.front().cols());
  if (batch.targets.size() != batch.inputs.size()) throw DomainError("RNNPB batch inputs and targets differ in length");
  if (batch.mask.rows() != p.T || batch.mask.cols() != p.B) throw DomainError("RNNPB mask shape mismatch");
  const Eigen::Index n = static_cast<Eigen::Index>(p.T) * p.B;
  p.x.resize(inSize, n);
  p.y.resize(outSize, n);
  p.mask.resize(1, n);
  for (int t = 0; t < p.T; ++t) {
    const auto& in = batch.inputs[static_cast<std::size_t>(t)];
    const auto& tg = batch.targets[static_cast<std::size_t>(t)];
    if (in.rows() != inSize || in.cols() != p.B) throw DomainError("RNNPB input dimension mismatch");
    if (tg.rows() != outSize || tg.cols() != p.B) throw DomainError("RNNPB target dimension mismatch");
    p.x.middleCols(static_cast<Eigen::Index>(t) * p.B, p.B) = in;
    p.y.middleCols(static_cast<Eigen::Index>(t) * p.B, p.B) = tg;
    p.mask.middleCols(static_cast<Eigen::Index>(t) * p.B, p.B) = batch.mask.row(t);
  }
  return p;
}

}  // namespace

double Rnnpb::loss(const Batch& batch) const {
  const Packed p = pack(batch, spec_.inputSize(), spec_.outputSize());
  const Mat y = forwardAll(p.x, p.T, p.B, nullptr, nullptr);
  const double count = p.mask.sum() * spec_.outputSize();
  if (count <= 0.0) throw DomainError("RNNPB batch has no valid steps");
  return ((y - p.y).array().rowwise() * p.mask.row(0).array()).square().sum() / count;
}

double Rnnpb::lossAndGrad(const Batch& batch, std::vector<Mat>* dInputs) {
  const Packed p = pack(batch, spec_.inputSize(), spec_.outputSize());
  std::array<Mat, 8> A;
  std::array<LstmCache, 2> C;
  const Mat y = forwardAll(p.x, p.T, p.B, &A, &C);
  const double count = p.mask.sum() * spec_.outputSize();
  if (count <= 0.0) throw DomainError("RNNPB batch has no valid steps");
  const Mat diff = (y - p.y).array().rowwise() * p.mask.row(0).array();
  const double l = diff.squaredNorm() / count;

  const auto denseBack = [&](std::size_t k, const Mat& dz, const Mat& in) {
    fc_[k].w.grad.noalias() += dz * in.transpose();
    fc_[k].b.grad.col(0) += dz.rowwise().sum();
    return Mat(fc_[k].w.value.transpose() * dz);
  };
  const auto tanhBack = [](const Mat& d, const Mat& a) { return Mat(d.array() * (1.0 - a.array().square())); };

  Mat d = (2.0 / count) * diff;
  d = denseBack(6, d, A[7]);
  d = denseBack(5, tanhBack(d, A[7]), A[6]);
  d = denseBack(4, tanhBack(d, A[6]), A[5]);
  d = denseBack(3, tanhBack(d, A[5]), A[4]);
  d = lstmBackward(lstm_[1], A[3], d, p.T, p.B, C[1]);
  d = lstmBackward(lstm_[0], A[2], d, p.T, p.B, C[0]);
  d = denseBack(2, tanhBack(d, A[2]), A[1]);
  d = denseBack(1, tanhBack(d, A[1]), A[0]);
  d = denseBack(0, tanhBack(d, A[0]), p.x);
  if (dInputs) {
    dInputs->resize(static_cast<std::size_t>(p.T));
    for (int t = 0; t < p.T; ++t) (*dInputs)[static_cast<std::size_t>(t)] = d.middleCols(static_cast<Eigen::Index>(t) * p.B, p.B);
  }
  return l;
}

std::vector<nn::Param*> Rnnpb::params() {
  std::vector<nn::Param*> out;
  for (std::size_t k = 0; k < 3; ++k) out.insert(out.end(), {&fc_[k].w, &fc_[k].b});
  for (auto& l : lstm_) out.insert(out.end(), {&l.wx, &l.wh, &l.b});
  for (std::size_t k = 3; k < fc_.size(); ++k) out.insert(out.end(), {&fc_[k].w, &fc_[k].b});
  return out;
}

void Rnnpb::zeroGrad() {
  for (auto* p : params()) p->zeroGrad();
}

void Rnnpb::foldInputOffset(int col, const Vec& offset) {
  if (col < 0 || col + offset.size() > spec_.inputSize()) throw DomainError("input offset outside the input range");
  fc_[0].b.value.col(0) += fc_[0].w.value.middleCols(col, offset.size()) * offset;
}

// ---- noise

NoiseModel NoiseModel::fromSequences(const std::vector<Mat>& seqs, double scale) {
  if (scale < 0.0 || !std::isfinite(scale)) throw DomainError("noise scale must be finite and non-negative");
  Eigen::Index dim = -1, count = 0;
  for (const auto& s : seqs) {
    if (dim < 0) dim = s.rows();
    if (s.rows() != dim) throw DomainError("noise corpus sequences differ in dimension");
    count += std::max<Eigen::Index>(s.cols() - 1, 0);
  }
  if (count < 1) throw DomainError("noise covariance needs at least two steps in one sequence");
  Vec mean = Vec::Zero(dim);
  for (const auto& s : seqs)
    for (Eigen::Index t = 1; t < s.cols(); ++t) mean += s.col(t) - s.col(t - 1);
  mean /= static_cast<double>(count);
  Mat cov = Mat::Zero(dim, dim);
  for (const auto& s : seqs)
    for (Eigen::Index t = 1; t < s.cols(); ++t) {
      const Vec d = s.col(t) - s.col(t - 1) - mean;
      cov.noalias() += d * d.transpose();
    }
  cov /= static_cast<double>(std::max<Eigen::Index>(count - 1, 1));

  NoiseModel m;
  m.sigma_ = cov;
  m.scale_ = scale;
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  Vec root = es.eigenvalues();
  for (Eigen::Index i = 0; i < root.size(); ++i) root[i] = root[i] < kEigenFloor ? 0.0 : std::sqrt(root[i]);
  m.factor_ = scale * es.eigenvectors() * root.asDiagonal();
  return m;
}

Mat NoiseModel::sample(int n, std::mt19937_64& rng) const {
  std::normal_distribution<double> z(0.0, 1.0);
  Mat e(factor_.cols(), n);
  for (Eigen::Index j = 0; j < e.cols(); ++j)
    for (Eigen::Index i = 0; i < e.rows(); ++i) e(i, j) = z(rng);
  return factor_ * e;
}

std::vector<Mat> augmentNoise(const std::vector<Mat>& seqs, double scale, std::uint64_t seed) {
  const NoiseModel m = NoiseModel::fromSequences(seqs, scale);
  if (scale == 0.0) return seqs;
  std::mt19937_64 rng(seed);
  std::vector<Mat> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(s + m.sample(static_cast<int>(s.cols()), rng));
  return out;
}

// ---- training

Rnnpb::Batch makeBatch(const std::vector<Mat>& inputs, const std::vector<Mat>& targets, const Mat& pb) {
  if (inputs.empty() || inputs.size() != targets.size()) throw DomainError("inputs and targets must pair up");
  if (pb.rows() != static_cast<Eigen::Index>(inputs.size())) throw DomainError("one parametric bias row per sequence");
  const int B = static_cast<int>(inputs.size());
  const Eigen::Index io = inputs.front().rows();
  const Eigen::Index np = pb.cols();
  Eigen::Index T = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (inputs[k].cols() != targets[k].cols() || inputs[k].rows() != io) throw DomainError("sequence shapes disagree");
    T = std::max(T, inputs[k].cols());
  }
  Rnnpb::Batch b;
  b.mask = Mat::Zero(T, B);
  b.inputs.assign(static_cast<std::size_t>(T), Mat::Zero(io + np, B));
  b.targets.assign(static_cast<std::size_t>(T), Mat::Zero(targets.front().rows(), B));
  for (int k = 0; k < B; ++k) {
    const auto& in = inputs[static_cast<std::size_t>(k)];
    for (Eigen::Index t = 0; t < in.cols(); ++t) {
      auto& x = b.inputs[static_cast<std::size_t>(t)];
      x.col(k).head(io) = in.col(t);
      x.col(k).tail(np) = pb.row(k).transpose();
      b.targets[static_cast<std::size_t>(t)].col(k) = targets[static_cast<std::size_t>(k)].col(t);
      b.mask(t, k) = 1.0;
    }
  }
  return b;
}

RnnpbTrainResult trainRnnpb(Rnnpb& net, const std::vector<Mat>& seqs, const RnnpbTrainSettings& settings,
                            const RnnEpochCallback& onEpoch) {
  const auto& spec = net.spec();
  if (seqs.empty()) throw DomainError("RNNPB training needs at least one sequence");
  if (settings.epochs < 0) throw DomainError("epoch count must be non-negative");
  std::vector<Mat> clean, targets;
  for (const auto& s : seqs) {
    if (s.rows() != spec.ioSize()) throw DomainError("training sequence dimension must be ns + nu");
    if (s.cols() < 2) throw DomainError("training sequences need at least two steps");
    if (!s.allFinite()) throw DomainError("training sequence contains non-finite values");
    clean.push_back(s.leftCols(s.cols() - 1));
    targets.push_back(s.rightCols(s.cols() - 1));
  }
  const NoiseModel noise = NoiseModel::fromSequences(seqs, settings.noiseScale);
  std::mt19937_64 rng(settings.seed);

  const int K = static_cast<int>(seqs.size());
  RnnpbTrainResult r;
  nn::Param pb("pb", Mat::Zero(K, spec.np));
  nn::Adam adam(settings.adam), pbAdam(settings.pbAdam);
  const auto params = net.params();
  r.cleanLossInitial = net.loss(makeBatch(clean, targets, pb.value));

  std::vector<Mat> noisy(clean.size());
  std::vector<Mat> dIn;
  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t k = 0; k < clean.size(); ++k) {
      noisy[k] = clean[k];
      if (settings.noiseScale > 0.0) noisy[k] += noise.sample(static_cast<int>(clean[k].cols()), rng);
    }
    net.zeroGrad();
    pb.zeroGrad();
    const double l = net.lossAndGrad(makeBatch(noisy, targets, pb.value), spec.np > 0 ? &dIn : nullptr);
    if (!std::isfinite(l)) throw NumericalError("non-finite RNNPB loss at epoch " + std::to_string(epoch));
    if (spec.np > 0)
      for (const auto& d : dIn) pb.grad += d.bottomRows(spec.np).transpose();
    adam.step(params);
    if (spec.np > 0) {
      pbAdam.step({&pb});
      const Vec mean = pb.value.colwise().mean().transpose();
      pb.value.rowwise() -= mean.transpose();
      net.foldInputOffset(spec.ioSize(), mean);
    }
    r.loss.push_back(l);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (onEpoch) onEpoch(epoch, l, secs);
  }
  r.pb = pb.value;
  r.cleanLossFinal = net.loss(makeBatch(clean, targets, pb.value));
  return r;
}

}  // namespace fls::learning
