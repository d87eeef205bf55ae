#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "fls/autoencoder.hpp"
#include "fls/nn.hpp"

namespace fls::learning {

/// Unit counts of the ten groups: three tanh layers, two LSTM layers
/// (groups 5 and 6), three tanh layers, linear output.
struct RnnpbSpec {
  std::array<int, 10> units{22, 64, 32, 16, 16, 16, 16, 32, 64, 20};
  int ns = 12;  // image latent
  int nu = 8;   // tips (2x3) + grippers (2)
  int np = 2;   // parametric bias

  static RnnpbSpec paper(int np = 2);
  static RnnpbSpec desk(int np = 2);
  /// The small net used by the gradient checks.
  static RnnpbSpec reduced(int np = 2);

  void validate() const;
  int inputSize() const { return units[0]; }
  int outputSize() const { return units[9]; }
  int ioSize() const { return ns + nu; }
  int hiddenSize() const { return units[4] + units[5]; }
  bool operator==(const RnnpbSpec&) const = default;
};

/// Recurrent state for a batch of independent streams (one column each).
struct RnnState {
  Mat h1, c1, h2, c2;
  /// Concatenated hidden outputs of both recurrent layers.
  Mat latent() const;
};

class Rnnpb {
 public:
  Rnnpb(const RnnpbSpec& spec, std::uint64_t seed);

  const RnnpbSpec& spec() const { return spec_; }
  RnnState zeroState(int batch = 1) const;

  /// One step for every column of x (input x batch); advances `state`.
  Mat step(const Mat& x, RnnState& state) const;

  /// Padded batch of sequences. inputs[t] is (input x B); mask(t, b) = 1
  /// where step t of stream b counts toward the loss. Valid steps of each
  /// stream must be a prefix.
  struct Batch {
    std::vector<Mat> inputs;
    std::vector<Mat> targets;
    Mat mask;  // T x B
  };

  /// Mean squared error over valid steps and outputs. Accumulates gradients
  /// into params() and, if requested, returns dL/d input per step.
  double lossAndGrad(const Batch& batch, std::vector<Mat>* dInputs = nullptr);
  double loss(const Batch& batch) const;

  std::vector<nn::Param*> params();
  void zeroGrad();

  /// b1 += W1[:, col..col+n) * offset: the function of inputs shifted by
  /// -offset in those columns is unchanged.
  void foldInputOffset(int col, const Vec& offset);

 private:
  struct Dense {
    nn::Param w, b;
  };
  struct Lstm {
    nn::Param wx, wh, b;
  };
  struct LstmCache {
    Mat i, f, g, o, c, tc, h;  // H x (T*B)
  };

  Mat forwardAll(const Mat& x, int T, int B, std::array<Mat, 8>* acts, std::array<LstmCache, 2>* caches) const;
  static void lstmForward(const Lstm& l, const Mat& x, int T, int B, LstmCache& cache);
  static Mat lstmBackward(Lstm& l, const Mat& x, const Mat& dH, int T, int B, const LstmCache& cache);

  RnnpbSpec spec_;
  std::array<Dense, 7> fc_;  // transforms 1,2,3,6,7,8,9
  std::array<Lstm, 2> lstm_;
};

/// Per-step noise with covariance scale^2 * Sigma, Sigma the covariance of
/// consecutive-step differences over a corpus of (s;u) sequences.
class NoiseModel {
 public:
  static constexpr double kEigenFloor = 1e-12;

  NoiseModel() = default;
  /// Each sequence is (dim x T); needs at least one sequence with T >= 2.
  static NoiseModel fromSequences(const std::vector<Mat>& seqs, double scale);

  const Mat& sigma() const { return sigma_; }
  double scale() const { return scale_; }
  Mat covariance() const { return scale_ * scale_ * sigma_; }
  int dim() const { return static_cast<int>(sigma_.rows()); }
  /// (dim x n) independent draws.
  Mat sample(int n, std::mt19937_64& rng) const;

 private:
  Mat sigma_;
  Mat factor_;  // scale * V * sqrt(max(lambda, 0)), eigenvalues below the floor dropped
  double scale_ = 0.0;
};

/// Adds independent draws of 0.3-scaled difference noise to every step of
/// every sequence; scale 0 returns the batch unchanged.
std::vector<Mat> augmentNoise(const std::vector<Mat>& seqs, double scale, std::uint64_t seed);

struct RnnpbTrainSettings {
  int epochs = 3000;
  double noiseScale = 0.3;
  nn::AdamSettings adam;
  nn::AdamSettings pbAdam;
  std::uint64_t seed = 0;
};

struct RnnpbTrainResult {
  Mat pb;  // K x np
  std::vector<double> loss;  // per epoch, on the noisy inputs
  double cleanLossInitial = 0.0;
  double cleanLossFinal = 0.0;
};

using RnnEpochCallback = std::function<void(int epoch, double loss, double seconds)>;

/// Full-sequence BPTT with Adam on weights and the parametric-bias table.
/// Sequences are (ns+nu x T_k), already normalized. The table starts at 0
/// and is kept mean-free across demos; the mean is folded into the first
/// layer bias so the network function is unchanged.
RnnpbTrainResult trainRnnpb(Rnnpb& net, const std::vector<Mat>& seqs, const RnnpbTrainSettings& settings,
                            const RnnEpochCallback& onEpoch = {});

/// Teacher-forced batch: inputs [x_t; p_k], targets x_{t+1}.
Rnnpb::Batch makeBatch(const std::vector<Mat>& inputs, const std::vector<Mat>& targets, const Mat& pb);

}  // namespace fls::learning
