#include "fls/autoencoder.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "fls/common.hpp"

namespace fls::learning {

void AutoencoderSpec::validate() const {
  if (height <= 0 || width <= 0 || inChannels <= 0) throw DomainError("autoencoder input shape must be positive");
  if (channels.empty()) throw DomainError("autoencoder needs at least one conv stage");
  for (int c : channels)
    if (c <= 0) throw DomainError("autoencoder channel counts must be positive");
  if (hidden <= 0 || latent <= 0) throw DomainError("autoencoder hidden and latent sizes must be positive");
}

std::vector<nn::Stride2Grid> AutoencoderSpec::grids() const {
  std::vector<nn::Stride2Grid> g{{height, width}};
  for (std::size_t i = 0; i < channels.size(); ++i) g.push_back({g.back().hs(), g.back().ws()});
  return g;
}

int AutoencoderSpec::flatSize() const {
  const auto g = grids().back();
  return channels.back() * g.h * g.w;
}

Vec frameToInput(const scene::Frame& f) {
  constexpr int plane = scene::Frame::width * scene::Frame::height;
  Vec x(3 * plane);
  for (int y = 0; y < scene::Frame::height; ++y)
    for (int u = 0; u < scene::Frame::width; ++u)
      for (int c = 0; c < 3; ++c) x[c * plane + y * scene::Frame::width + u] = f.at(u, y, c);
  return x;
}

scene::Frame inputToFrame(const Vec& x) {
  constexpr int plane = scene::Frame::width * scene::Frame::height;
  if (x.size() != 3 * plane) throw DomainError("input column does not match the frame size");
  scene::Frame f;
  for (int y = 0; y < scene::Frame::height; ++y)
    for (int u = 0; u < scene::Frame::width; ++u)
      for (int c = 0; c < 3; ++c) f.at(u, y, c) = std::clamp(x[c * plane + y * scene::Frame::width + u], 0.0, 1.0);
  return f;
}

Autoencoder::Autoencoder(const AutoencoderSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  std::mt19937_64 rng(seed);
  const auto g = spec_.grids();
  const int stages = static_cast<int>(spec_.channels.size());
  const auto spatial = [&](int i) { return g[static_cast<std::size_t>(i)].h * g[static_cast<std::size_t>(i)].w; };
  const auto ch = [&](int i) { return i < 0 ? spec_.inChannels : spec_.channels[static_cast<std::size_t>(i)]; };

  for (int i = 0; i < stages; ++i) {
    const std::string n = "enc.conv" + std::to_string(i);
    encoder_.add(std::make_unique<nn::Conv>(ch(i - 1), ch(i), g[static_cast<std::size_t>(i)], false, rng, n));
    encoder_.add(std::make_unique<nn::BatchNorm>(ch(i), spatial(i + 1), n + ".bn"));
    encoder_.add(std::make_unique<nn::Relu>());
  }
  const int flat = spec_.flatSize();
  encoder_.add(std::make_unique<nn::Dense>(flat, spec_.hidden, false, std::sqrt(2.0 / flat), rng, "enc.fc0"));
  encoder_.add(std::make_unique<nn::BatchNorm>(spec_.hidden, 1, "enc.fc0.bn"));
  encoder_.add(std::make_unique<nn::Relu>());
  encoder_.add(std::make_unique<nn::Dense>(spec_.hidden, spec_.latent, false, std::sqrt(1.0 / spec_.hidden), rng, "enc.fc1"));
  encoder_.add(std::make_unique<nn::BatchNorm>(spec_.latent, 1, "enc.fc1.bn"));
  encoder_.add(std::make_unique<nn::Sigmoid>());

  decoder_.add(std::make_unique<nn::Dense>(spec_.latent, spec_.hidden, false, std::sqrt(2.0 / spec_.latent), rng, "dec.fc0"));
  decoder_.add(std::make_unique<nn::BatchNorm>(spec_.hidden, 1, "dec.fc0.bn"));
  decoder_.add(std::make_unique<nn::Relu>());
  decoder_.add(std::make_unique<nn::Dense>(spec_.hidden, flat, false, std::sqrt(2.0 / spec_.hidden), rng, "dec.fc1"));
  decoder_.add(std::make_unique<nn::BatchNorm>(ch(stages - 1), spatial(stages), "dec.fc1.bn"));
  decoder_.add(std::make_unique<nn::Relu>());
  for (int i = stages - 1; i >= 0; --i) {
    const std::string n = "dec.deconv" + std::to_string(i);
    const bool last = i == 0;
    decoder_.add(std::make_unique<nn::Deconv>(ch(i), ch(i - 1), g[static_cast<std::size_t>(i)], last, rng, n));
    if (last) {
      decoder_.add(std::make_unique<nn::Sigmoid>());
    } else {
      decoder_.add(std::make_unique<nn::BatchNorm>(ch(i - 1), spatial(i), n + ".bn"));
      decoder_.add(std::make_unique<nn::Relu>());
    }
  }
}

Mat Autoencoder::encode(const Mat& x) {
  if (x.rows() != spec_.inputSize()) throw DomainError("encoder input has the wrong size");
  return encoder_.forward(x, false);
}

Mat Autoencoder::decode(const Mat& z) {
  if (z.rows() != spec_.latent) throw DomainError("decoder input has the wrong size");
  return decoder_.forward(z, false);
}

double Autoencoder::lossAndGrad(const Mat& x, bool training) {
  if (x.rows() != spec_.inputSize()) throw DomainError("autoencoder input has the wrong size");
  const Mat y = decoder_.forward(encoder_.forward(x, training), training);
  const Mat diff = y - x;
  const double n = static_cast<double>(diff.size());
  const double l = diff.squaredNorm() / n;
  if (training) encoder_.backward(decoder_.backward((2.0 / n) * diff));
  return l;
}

double Autoencoder::loss(const Mat& x) { return (reconstruct(x) - x).squaredNorm() / static_cast<double>(x.size()); }

std::vector<nn::Param*> Autoencoder::params() {
  auto p = encoder_.params();
  for (auto* q : decoder_.params()) p.push_back(q);
  return p;
}

std::vector<Mat*> Autoencoder::buffers() {
  auto b = encoder_.buffers();
  for (auto* q : decoder_.buffers()) b.push_back(q);
  return b;
}

void Autoencoder::zeroGrad() {
  for (auto* p : params()) p->zeroGrad();
}

namespace {

std::string firstNonFinite(Autoencoder& ae) {
  for (auto* p : ae.params()) {
    if (!p->value.allFinite()) return p->name + " (value)";
    if (!p->grad.allFinite()) return p->name + " (grad)";
  }
  return "output";
}

Mat gatherColumns(const Mat& m, const std::vector<std::size_t>& idx, std::size_t from, std::size_t to) {
  Mat out(m.rows(), static_cast<Eigen::Index>(to - from));
  for (std::size_t i = from; i < to; ++i) out.col(static_cast<Eigen::Index>(i - from)) = m.col(static_cast<Eigen::Index>(idx[i]));
  return out;
}

}  // namespace

AeTrainReport trainAutoencoder(Autoencoder& ae, const Mat& frames, const AeTrainSettings& settings,
                               const EpochCallback& onEpoch) {
  if (frames.cols() < 2) throw DomainError("autoencoder training needs at least two frames");
  if (settings.epochs < 0 || settings.batchSize < 2) throw DomainError("invalid autoencoder training settings");
  if (settings.heldOutFraction < 0.0 || settings.heldOutFraction >= 1.0) throw DomainError("held-out fraction must be in [0,1)");

  std::mt19937_64 rng(settings.seed);
  std::vector<std::size_t> order(static_cast<std::size_t>(frames.cols()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto nHeld = static_cast<std::size_t>(std::floor(settings.heldOutFraction * static_cast<double>(order.size())));
  const Mat held = gatherColumns(frames, order, 0, nHeld);
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(nHeld), order.end());
  std::sort(train.begin(), train.end());

  AeTrainReport report;
  if (nHeld > 0) report.heldOutLoss.push_back(ae.loss(held));
  nn::Adam adam(settings.adam);
  const auto params = ae.params();
  const auto bs = static_cast<std::size_t>(settings.batchSize);
  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(train.begin(), train.end(), rng);
    double sum = 0.0;
    std::size_t seen = 0;
    int batch = 0;
    for (std::size_t b = 0; b < train.size(); b += bs, ++batch) {
      const std::size_t e = std::min(train.size(), b + bs);
      if (e - b < 2) break;  // batch norm needs two samples
      const Mat x = gatherColumns(frames, train, b, e);
      ae.zeroGrad();
      const double l = ae.lossAndGrad(x, true);
      if (!std::isfinite(l))
        throw NumericalError("non-finite autoencoder loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch) + ", first bad tensor " + firstNonFinite(ae));
      adam.step(params);
      sum += l * static_cast<double>(e - b);
      seen += e - b;
    }
    report.trainLoss.push_back(sum / static_cast<double>(std::max<std::size_t>(seen, 1)));
    if (nHeld > 0) report.heldOutLoss.push_back(ae.loss(held));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (onEpoch) onEpoch(epoch, report.trainLoss.back(), secs);
  }
  return report;
}

}  // namespace fls::learning
