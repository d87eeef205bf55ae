#include <doctest.h>

#include <filesystem>
#include <random>

#include "fls/cell.hpp"
#include "fls/policy.hpp"
#include "fls/rnnpb.hpp"

using namespace fls;
using namespace fls::learning;

namespace {

Mat uniform(int rows, int cols, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
  return m;
}

AutoencoderSpec reducedAe() {
  AutoencoderSpec s;
  s.height = 12;
  s.width = 16;
  s.channels = {2, 3};
  s.hidden = 5;
  s.latent = 3;
  return s;
}

/// Central differences of `loss` against the analytic gradient of every
/// entry of every parameter tensor.
template <class LossFn>
void checkGradients(const std::vector<nn::Param*>& params, LossFn loss, double h = 1e-5) {
  for (auto* p : params) {
    CAPTURE(p->name);
    const Mat analytic = p->grad;
    Mat numeric(analytic.rows(), analytic.cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double keep = p->value(i);
      p->value(i) = keep + h;
      const double up = loss();
      p->value(i) = keep - h;
      const double down = loss();
      p->value(i) = keep;
      numeric(i) = (up - down) / (2.0 * h);
    }
    CHECK(nn::relativeError(analytic, numeric) < 1e-4);
  }
}

Rnnpb::Batch randomBatch(const RnnpbSpec& spec, const std::vector<int>& lengths, std::mt19937_64& rng) {
  std::vector<Mat> in, tg;
  for (int len : lengths) {
    in.push_back(uniform(spec.ioSize(), len, rng, -1.0, 1.0));
    tg.push_back(uniform(spec.ioSize(), len, rng, -1.0, 1.0));
  }
  return makeBatch(in, tg, uniform(static_cast<int>(lengths.size()), spec.np, rng, -0.5, 0.5));
}

}  // namespace

TEST_CASE("autoencoder shape chain") {
  const AutoencoderSpec spec;
  const auto g = spec.grids();
  REQUIRE(g.size() == 6);
  const std::vector<std::pair<int, int>> expected{{96, 128}, {48, 64}, {24, 32}, {12, 16}, {6, 8}, {3, 4}};
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(g[i].h == expected[i].first);
    CHECK(g[i].w == expected[i].second);
  }
  Autoencoder ae(spec, 1);
  std::mt19937_64 rng(2);
  const Mat x = uniform(spec.inputSize(), 2, rng);
  const Mat z = ae.encode(x);
  CHECK(z.rows() == 12);
  CHECK(z.cols() == 2);
  const Mat y = ae.decode(z);
  CHECK(y.rows() == spec.inputSize());
  CHECK(y.minCoeff() >= 0.0);
  CHECK(y.maxCoeff() <= 1.0);
  CHECK_THROWS_AS(ae.encode(Mat::Zero(10, 1)), DomainError);
}

TEST_CASE("frame columns round trip") {
  scene::SceneGeometry g;
  const auto f = scene::render(scene::initialState(g, 1), g);
  CHECK(inputToFrame(frameToInput(f)) == f);
}

TEST_CASE("im2col and col2im are adjoint") {
  std::mt19937_64 rng(5);
  const nn::Stride2Grid g{7, 10};
  const Mat x = uniform(3 * 7 * 10, 1, rng, -1, 1);
  const Mat p = uniform(g.hs() * g.ws(), 27, rng, -1, 1);
  const Mat px = nn::im2col(x.data(), 3, g);
  Mat back = Mat::Zero(x.rows(), 1);
  nn::col2im(p, 3, g, back.data());
  CHECK(std::abs((px.array() * p.array()).sum() - x.col(0).dot(back.col(0))) < 1e-12);
}

TEST_CASE("autoencoder gradients match finite differences") {
  Autoencoder ae(reducedAe(), 11);
  std::mt19937_64 rng(3);
  const Mat x = uniform(ae.spec().inputSize(), 3, rng);
  ae.zeroGrad();
  ae.lossAndGrad(x, true);
  Autoencoder probe(reducedAe(), 11);
  const auto params = ae.params();
  checkGradients(params, [&] {
    // training-mode loss without touching the accumulated gradients
    const auto src = ae.params();
    const auto dst = probe.params();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
    return probe.lossAndGrad(x, true);
  });
}

TEST_CASE("RNNPB gradients match finite differences") {
  const RnnpbSpec spec = RnnpbSpec::reduced(2);
  CHECK(spec.units == std::array<int, 10>{22, 8, 8, 8, 8, 8, 8, 8, 8, 20});
  Rnnpb net(spec, 21);
  std::mt19937_64 rng(4);
  const auto batch = randomBatch(spec, {6, 4, 5}, rng);
  net.zeroGrad();
  std::vector<Mat> dIn;
  net.lossAndGrad(batch, &dIn);
  checkGradients(net.params(), [&] { return net.loss(batch); });

  SUBCASE("input gradient, which carries the parametric-bias gradient") {
    Rnnpb::Batch b = batch;
    Mat numeric(spec.inputSize(), 3), analytic(spec.inputSize(), 3);
    for (Eigen::Index k = 0; k < 3; ++k)
      for (Eigen::Index i = 0; i < spec.inputSize(); ++i) {
        const double keep = b.inputs[2](i, k);
        b.inputs[2](i, k) = keep + 1e-5;
        const double up = net.loss(b);
        b.inputs[2](i, k) = keep - 1e-5;
        const double down = net.loss(b);
        b.inputs[2](i, k) = keep;
        numeric(i, k) = (up - down) / 2e-5;
        analytic(i, k) = dIn[2](i, k);
      }
    CHECK(nn::relativeError(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("zero network maps to the output bias") {
  const RnnpbSpec spec = RnnpbSpec::desk(2);
  Rnnpb net(spec, 1);
  for (auto* p : net.params()) p->value.setZero();
  auto params = net.params();
  Vec bias = Vec::LinSpaced(spec.outputSize(), -1.0, 1.0);
  params.back()->value.col(0) = bias;
  auto st = net.zeroState();
  const Mat y = net.step(Mat::Zero(spec.inputSize(), 1), st);
  CHECK((y.col(0) - bias).norm() == 0.0);
  CHECK(st.h1.norm() == 0.0);
  CHECK(st.h2.norm() == 0.0);
}

TEST_CASE("RNNPB spec validation and dimensions") {
  const auto paper = RnnpbSpec::paper(2);
  CHECK(paper.units == std::array<int, 10>{22, 500, 300, 100, 100, 100, 100, 300, 500, 20});
  CHECK(paper.hiddenSize() == 200);
  RnnpbSpec bad = RnnpbSpec::desk(2);
  bad.units[0] = 21;
  CHECK_THROWS_AS(Rnnpb(bad, 0), DomainError);
  Rnnpb net(RnnpbSpec::desk(2), 0);
  auto st = net.zeroState();
  CHECK_THROWS_AS(net.step(Mat::Zero(20, 1), st), DomainError);
  auto st2 = net.zeroState(2);
  CHECK_THROWS_AS(net.step(Mat::Zero(22, 1), st2), DomainError);
}

TEST_CASE("interleaved streams keep separate recurrent state") {
  const RnnpbSpec spec = RnnpbSpec::desk(2);
  Rnnpb net(spec, 8);
  std::mt19937_64 rng(9);
  const Mat a = uniform(spec.inputSize(), 20, rng, -1, 1);
  const Mat b = uniform(spec.inputSize(), 20, rng, -1, 1);
  std::vector<Mat> ya, yb;
  auto sa = net.zeroState(), sb = net.zeroState();
  for (int t = 0; t < 20; ++t) ya.push_back(net.step(a.col(t), sa));
  for (int t = 0; t < 20; ++t) yb.push_back(net.step(b.col(t), sb));
  auto ia = net.zeroState(), ib = net.zeroState();
  for (int t = 0; t < 20; ++t) {
    CHECK(net.step(a.col(t), ia) == ya[static_cast<std::size_t>(t)]);
    CHECK(net.step(b.col(t), ib) == yb[static_cast<std::size_t>(t)]);
  }
}

TEST_CASE("batched training forward agrees with stepping") {
  const RnnpbSpec spec = RnnpbSpec::reduced(2);
  Rnnpb net(spec, 12);
  std::mt19937_64 rng(13);
  const auto batch = randomBatch(spec, {7}, rng);
  auto st = net.zeroState();
  double sum = 0.0;
  for (std::size_t t = 0; t < batch.inputs.size(); ++t)
    sum += (net.step(batch.inputs[t], st) - batch.targets[t]).squaredNorm();
  CHECK(net.loss(batch) == doctest::Approx(sum / (7.0 * spec.outputSize())).epsilon(1e-12));
}

TEST_CASE("folding an input offset keeps the function") {
  const RnnpbSpec spec = RnnpbSpec::reduced(2);
  Rnnpb net(spec, 2);
  std::mt19937_64 rng(14);
  Mat x = uniform(spec.inputSize(), 1, rng, -1, 1);
  auto s1 = net.zeroState();
  const Mat before = net.step(x, s1);
  const Vec offset = Vec::Constant(2, 0.3);
  net.foldInputOffset(spec.ioSize(), offset);
  x.bottomRows(2).col(0) -= offset;
  auto s2 = net.zeroState();
  CHECK((net.step(x, s2) - before).norm() < 1e-12);
}

TEST_CASE("noise augmentation") {
  std::mt19937_64 rng(15);
  std::vector<Mat> seqs;
  for (int k = 0; k < 4; ++k) {
    Mat s(20, 60);
    Vec x = uniform(20, 1, rng, -1, 1).col(0);
    for (int t = 0; t < 60; ++t) {
      x += uniform(20, 1, rng, -0.2, 0.2).col(0);
      x.head(3) += 0.5 * uniform(3, 1, rng, -0.2, 0.2).col(0);  // correlated block
      s.col(t) = x;
    }
    seqs.push_back(s);
  }
  SUBCASE("scale 0 leaves the batch unchanged") {
    const auto out = augmentNoise(seqs, 0.0, 3);
    for (std::size_t k = 0; k < seqs.size(); ++k) CHECK(out[k] == seqs[k]);
  }
  SUBCASE("empirical covariance matches 0.3^2 Sigma") {
    const NoiseModel m = NoiseModel::fromSequences(seqs, 0.3);
    std::mt19937_64 r(16);
    const Mat e = m.sample(100000, r);
    const Vec mean = e.rowwise().mean();
    const Mat c = (e.colwise() - mean) * (e.colwise() - mean).transpose() / (e.cols() - 1.0);
    CHECK(nn::relativeError(c, m.covariance()) < 0.05);
    CHECK((c - m.covariance()).norm() / m.covariance().norm() < 0.05);
  }
  SUBCASE("constant corpus gives zero noise") {
    std::vector<Mat> flat{Mat::Constant(20, 10, 0.7), Mat::Constant(20, 5, -0.2)};
    const NoiseModel m = NoiseModel::fromSequences({flat[0]}, 0.3);
    CHECK(m.sigma().norm() == 0.0);
    std::mt19937_64 r(1);
    CHECK(m.sample(10, r).norm() == 0.0);
    const auto out = augmentNoise({flat[0]}, 0.3, 4);
    CHECK(out[0] == flat[0]);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(NoiseModel::fromSequences({Mat::Zero(20, 1)}, 0.3), DomainError);
    CHECK_THROWS_AS(NoiseModel::fromSequences(seqs, -1.0), DomainError);
  }
}

TEST_CASE("parametric bias training") {
  const RnnpbSpec spec = RnnpbSpec::reduced(2);
  std::mt19937_64 rng(17);
  std::vector<Mat> seqs;
  for (int k = 0; k < 4; ++k) seqs.push_back(uniform(spec.ioSize(), 12, rng, -1, 1));
  RnnpbTrainSettings ts;
  ts.epochs = 40;
  ts.seed = 5;

  SUBCASE("table stays mean-free and training is reproducible") {
    Rnnpb a(spec, 1), b(spec, 1);
    const auto ra = trainRnnpb(a, seqs, ts);
    const auto rb = trainRnnpb(b, seqs, ts);
    CHECK(ra.pb.rows() == 4);
    CHECK(ra.pb.colwise().sum().norm() < 1e-12);
    CHECK(ra.pb.norm() > 0.0);
    CHECK(ra.pb == rb.pb);
    CHECK(ra.loss == rb.loss);
    const auto pa = a.params(), pb = b.params();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
  }
  SUBCASE("a single demo keeps p at zero") {
    Rnnpb a(spec, 1);
    const auto r = trainRnnpb(a, {seqs[0]}, ts);
    CHECK(r.pb.norm() < 0.1);
  }
  SUBCASE("errors") {
    Rnnpb a(spec, 1);
    CHECK_THROWS_AS(trainRnnpb(a, {}, ts), DomainError);
    CHECK_THROWS_AS(trainRnnpb(a, {Mat::Zero(19, 5)}, ts), DomainError);
    CHECK_THROWS_AS(trainRnnpb(a, {Mat::Zero(20, 1)}, ts), DomainError);
  }
}

TEST_CASE("checkpoint round trip") {
  PolicyModel m;
  m.ae = std::make_shared<Autoencoder>(reducedAe(), 3);
  RnnpbSpec rs = RnnpbSpec::reduced(2);
  rs.ns = 3;
  rs.units[0] = rs.ns + rs.nu + rs.np;
  rs.units[9] = rs.ns + rs.nu;
  m.rnn = std::make_shared<Rnnpb>(rs, 4);
  std::mt19937_64 rng(18);
  m.pbTable = uniform(5, 2, rng, -1, 1);
  m.norm.mean = uniform(11, 1, rng).col(0);
  m.norm.scale = uniform(11, 1, rng, 0.5, 2).col(0);
  m.meta.rnnLoss = {1.0 / 3.0, 0.1};
  m.meta.rnnSeed = 99;
  // perturb batch-norm statistics so they are not defaults
  m.ae->lossAndGrad(uniform(m.ae->spec().inputSize(), 4, rng), true);

  const auto path = std::filesystem::temp_directory_path() / "fls_ckpt_roundtrip.ckpt";
  saveCheckpoint(path, m);
  const PolicyModel back = loadCheckpoint(path);
  CHECK(back.pbTable == m.pbTable);
  CHECK(back.norm == m.norm);
  CHECK(back.meta == m.meta);
  CHECK(back.ae->spec() == m.ae->spec());
  CHECK(back.rnn->spec() == m.rnn->spec());
  const auto pa = m.ae->params(), pb = back.ae->params();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
  const auto ba = m.ae->buffers(), bb = back.ae->buffers();
  for (std::size_t i = 0; i < ba.size(); ++i) CHECK(*ba[i] == *bb[i]);
  const auto ra = m.rnn->params(), rb = back.rnn->params();
  for (std::size_t i = 0; i < ra.size(); ++i) CHECK(ra[i]->value == rb[i]->value);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(loadCheckpoint(path), DomainError);
}

TEST_CASE("untrained policy runs to the step limit without success") {
  PolicyModel m;
  m.ae = std::make_shared<Autoencoder>(AutoencoderSpec{}, 1);
  m.rnn = std::make_shared<Rnnpb>(RnnpbSpec::desk(2), 2);
  m.pbTable = Mat::Zero(1, 2);
  m.norm.mean = Vec::Zero(20);
  m.norm.scale = Vec::Ones(20);
  const auto cc = cell::defaultCellConfig();
  // untrained outputs are near zero, so commanded tips sit near the origin
  m.norm.mean.segment<3>(12) = cc.geometry.homeTips[0];
  m.norm.mean.segment<3>(15) = cc.geometry.homeTips[1];
  ExecutionSettings es;
  es.maxSteps = 40;
  const auto r = executePolicy(m, cc, 0, Vec::Zero(2), es);
  CHECK(r.flags == scene::SuccessFlags{false, false, false});
  CHECK(r.termination == "max-steps");
  CHECK(r.steps.size() == 40);
  CHECK(r.latents.cols() == 39);
  CHECK(r.latents.rows() == 32);
  CHECK_THROWS_AS(executePolicy(m, cc, 0, Vec::Zero(3), es), DomainError);
}
