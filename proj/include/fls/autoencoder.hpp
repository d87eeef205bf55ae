#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <vector>

#include "fls/nn.hpp"
#include "fls/scene.hpp"

namespace fls::learning {

using nn::Mat;
using nn::Vec;

/// Convolutional autoencoder shape. The defaults are the desk profile; the
/// paper profile only widens `channels`.
struct AutoencoderSpec {
  int height = scene::kFrameHeight;
  int width = scene::kFrameWidth;
  int inChannels = 3;
  std::vector<int> channels{4, 8, 8, 16, 16};  // one per stride-2 stage
  int hidden = 1024;
  int latent = 12;

  void validate() const;
  /// Spatial grid after each stage, starting with the input grid.
  std::vector<nn::Stride2Grid> grids() const;
  int inputSize() const { return inChannels * height * width; }
  int flatSize() const;
  bool operator==(const AutoencoderSpec&) const = default;
};

/// Channel-major input column for a rendered frame.
Vec frameToInput(const scene::Frame& f);
scene::Frame inputToFrame(const Vec& x);

class Autoencoder {
 public:
  Autoencoder(const AutoencoderSpec& spec, std::uint64_t seed);

  const AutoencoderSpec& spec() const { return spec_; }

  /// Latents (latent x N) with batch-norm running statistics.
  Mat encode(const Mat& x);
  Mat decode(const Mat& z);
  Mat reconstruct(const Mat& x) { return decode(encode(x)); }

  /// Mean squared reconstruction error of a batch; when `training`, batch
  /// statistics are used and gradients are accumulated into params().
  double lossAndGrad(const Mat& x, bool training);
  double loss(const Mat& x);

  std::vector<nn::Param*> params();
  std::vector<Mat*> buffers();
  void zeroGrad();

 private:
  AutoencoderSpec spec_;
  nn::Sequential encoder_, decoder_;
};

struct AeTrainSettings {
  int epochs = 12;
  int batchSize = 32;
  double heldOutFraction = 0.1;
  nn::AdamSettings adam;
  std::uint64_t seed = 0;
};

struct AeTrainReport {
  std::vector<double> trainLoss;    // per epoch
  std::vector<double> heldOutLoss;  // index 0 = before training, then per epoch
};

using EpochCallback = std::function<void(int epoch, double loss, double seconds)>;

/// Trains on frames (inputSize x N). Throws NumericalError naming the layer
/// and batch on a non-finite loss.
AeTrainReport trainAutoencoder(Autoencoder& ae, const Mat& frames, const AeTrainSettings& settings,
                               const EpochCallback& onEpoch = {});

/// Raised when training produces a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fls::learning
