#pragma once

#include <Eigen/Core>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace fls::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// A named parameter tensor and its accumulated gradient.
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}
  void zeroGrad() { grad.setZero(value.rows(), value.cols()); }
};

struct AdamSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed, ordered parameter list.
class Adam {
 public:
  explicit Adam(AdamSettings s = {}) : s_(s) {}
  void step(const std::vector<Param*>& params);
  long steps() const { return t_; }
  const AdamSettings& settings() const { return s_; }

 private:
  AdamSettings s_;
  long t_ = 0;
  std::vector<Mat> m_, v_;
};

/// Batched layer: activations are (features x batch), one column per sample.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Mat forward(const Mat& x, bool training) = 0;
  /// Consumes dL/dy of the last forward call, accumulates parameter
  /// gradients, returns dL/dx.
  virtual Mat backward(const Mat& dy) = 0;
  virtual std::vector<Param*> params() { return {}; }
  /// Non-trained state (batch-norm running statistics).
  virtual std::vector<Mat*> buffers() { return {}; }
};

class Dense : public Layer {
 public:
  Dense(int in, int out, bool bias, double initStd, std::mt19937_64& rng, const std::string& name);
  Mat forward(const Mat& x, bool training) override;
  Mat backward(const Mat& dy) override;
  std::vector<Param*> params() override;

 private:
  Param w_, b_;
  bool bias_;
  Mat x_;
};

/// Geometry of a 3x3, stride 2, padding 1 convolution between a fine grid
/// (h x w) and its coarse grid (ceil(h/2) x ceil(w/2)).
struct Stride2Grid {
  int h, w;
  int hs() const { return (h + 1) / 2; }
  int ws() const { return (w + 1) / 2; }
};

/// Patch matrix (coarse positions x channels*9) of one fine-grid sample laid
/// out channel-major.
Mat im2col(const double* fine, int channels, const Stride2Grid& g);
/// Adjoint of im2col: scatters patch rows back onto the fine grid.
void col2im(const Mat& patches, int channels, const Stride2Grid& g, double* fine);

/// Stride-2 3x3 convolution, fine grid in, coarse grid out.
class Conv : public Layer {
 public:
  Conv(int cin, int cout, Stride2Grid g, bool bias, std::mt19937_64& rng, const std::string& name);
  Mat forward(const Mat& x, bool training) override;
  Mat backward(const Mat& dy) override;
  std::vector<Param*> params() override;

 private:
  int cin_, cout_;
  Stride2Grid g_;
  Param w_, b_;
  bool bias_;
  std::vector<Mat> patches_;
};

/// Transposed stride-2 3x3 convolution, coarse grid in, fine grid out.
class Deconv : public Layer {
 public:
  Deconv(int cin, int cout, Stride2Grid g, bool bias, std::mt19937_64& rng, const std::string& name);
  Mat forward(const Mat& x, bool training) override;
  Mat backward(const Mat& dy) override;
  std::vector<Param*> params() override;

 private:
  int cin_, cout_;
  Stride2Grid g_;
  Param w_, b_;
  bool bias_;
  Mat x_;
};

/// Batch normalization over `channels` groups of `spatial` contiguous features.
class BatchNorm : public Layer {
 public:
  BatchNorm(int channels, int spatial, const std::string& name, double momentum = 0.1, double eps = 1e-5);
  Mat forward(const Mat& x, bool training) override;
  Mat backward(const Mat& dy) override;
  std::vector<Param*> params() override;
  std::vector<Mat*> buffers() override;

 private:
  int c_, s_;
  double momentum_, eps_;
  Param gamma_, beta_;
  Mat runMean_, runVar_;  // channels x 1
  Mat xhat_;
  Vec invStd_;
};

class Relu : public Layer {
 public:
  Mat forward(const Mat& x, bool training) override;
  Mat backward(const Mat& dy) override;

 private:
  Mat mask_;
};

class Sigmoid : public Layer {
 public:
  Mat forward(const Mat& x, bool training) override;
  Mat backward(const Mat& dy) override;

 private:
  Mat y_;
};

/// Ordered stack of layers.
class Sequential {
 public:
  void add(std::unique_ptr<Layer> l) { layers_.push_back(std::move(l)); }
  Mat forward(const Mat& x, bool training);
  Mat backward(const Mat& dy);
  std::vector<Param*> params();
  std::vector<Mat*> buffers();

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

double sigmoid(double x);

/// Relative error of two gradient tensors, |a - b| / max(|a|, |b|, floor).
double relativeError(const Mat& a, const Mat& b, double floor = 1e-12);

}  // namespace fls::nn
