#include "fls/nn.hpp"

#include <cmath>

#include "fls/common.hpp"

namespace fls::nn {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double relativeError(const Mat& a, const Mat& b, double floor) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

namespace {

Mat randn(int rows, int cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, std);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = n(rng);
  return m;
}

}  // namespace

void Adam::step(const std::vector<Param*>& params) {
  if (m_.empty()) {
    for (auto* p : params) {
      m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size()) throw DomainError("Adam parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    m_[i] = s_.beta1 * m_[i] + (1.0 - s_.beta1) * p.grad;
    v_[i] = s_.beta2 * v_[i] + (1.0 - s_.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= s_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + s_.eps);
  }
}

// ---- Dense

Dense::Dense(int in, int out, bool bias, double initStd, std::mt19937_64& rng, const std::string& name)
    : w_(name + ".w", randn(out, in, initStd, rng)), b_(name + ".b", Mat::Zero(out, 1)), bias_(bias) {}

Mat Dense::forward(const Mat& x, bool) {
  x_ = x;
  Mat y = w_.value * x;
  if (bias_) y.colwise() += b_.value.col(0);
  return y;
}

Mat Dense::backward(const Mat& dy) {
  w_.grad.noalias() += dy * x_.transpose();
  if (bias_) b_.grad.col(0) += dy.rowwise().sum();
  return w_.value.transpose() * dy;
}

std::vector<Param*> Dense::params() {
  if (bias_) return {&w_, &b_};
  return {&w_};
}

// ---- im2col geometry

Mat im2col(const double* fine, int channels, const Stride2Grid& g) {
  const int hs = g.hs(), ws = g.ws();
  Mat p = Mat::Zero(hs * ws, channels * 9);
  for (int c = 0; c < channels; ++c) {
    const double* plane = fine + static_cast<std::ptrdiff_t>(c) * g.h * g.w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int col = c * 9 + ky * 3 + kx;
        for (int ys = 0; ys < hs; ++ys) {
          const int y = 2 * ys - 1 + ky;
          if (y < 0 || y >= g.h) continue;
          for (int xs = 0; xs < ws; ++xs) {
            const int x = 2 * xs - 1 + kx;
            if (x < 0 || x >= g.w) continue;
            p(ys * ws + xs, col) = plane[y * g.w + x];
          }
        }
      }
    }
  }
  return p;
}

void col2im(const Mat& patches, int channels, const Stride2Grid& g, double* fine) {
  const int hs = g.hs(), ws = g.ws();
  for (int c = 0; c < channels; ++c) {
    double* plane = fine + static_cast<std::ptrdiff_t>(c) * g.h * g.w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int col = c * 9 + ky * 3 + kx;
        for (int ys = 0; ys < hs; ++ys) {
          const int y = 2 * ys - 1 + ky;
          if (y < 0 || y >= g.h) continue;
          for (int xs = 0; xs < ws; ++xs) {
            const int x = 2 * xs - 1 + kx;
            if (x < 0 || x >= g.w) continue;
            plane[y * g.w + x] += patches(ys * ws + xs, col);
          }
        }
      }
    }
  }
}

// ---- Conv

Conv::Conv(int cin, int cout, Stride2Grid g, bool bias, std::mt19937_64& rng, const std::string& name)
    : cin_(cin),
      cout_(cout),
      g_(g),
      w_(name + ".w", randn(cout, cin * 9, std::sqrt(2.0 / (cin * 9)), rng)),
      b_(name + ".b", Mat::Zero(cout, 1)),
      bias_(bias) {}

Mat Conv::forward(const Mat& x, bool) {
  const int n = static_cast<int>(x.cols());
  const int outPos = g_.hs() * g_.ws();
  if (x.rows() != static_cast<Eigen::Index>(cin_) * g_.h * g_.w) throw DomainError("conv input size mismatch");
  patches_.resize(static_cast<std::size_t>(n));
  Mat y(static_cast<Eigen::Index>(outPos) * cout_, n);
  for (int i = 0; i < n; ++i) {
    patches_[static_cast<std::size_t>(i)] = im2col(x.col(i).data(), cin_, g_);
    // (positions x cout), column-major = channel-major feature layout
    Eigen::Map<Mat> out(y.col(i).data(), outPos, cout_);
    out.noalias() = patches_[static_cast<std::size_t>(i)] * w_.value.transpose();
    if (bias_) out.rowwise() += b_.value.col(0).transpose();
  }
  return y;
}

Mat Conv::backward(const Mat& dy) {
  const int n = static_cast<int>(dy.cols());
  const int outPos = g_.hs() * g_.ws();
  Mat dx = Mat::Zero(static_cast<Eigen::Index>(cin_) * g_.h * g_.w, n);
  for (int i = 0; i < n; ++i) {
    Eigen::Map<const Mat> d(dy.col(i).data(), outPos, cout_);
    const Mat& p = patches_[static_cast<std::size_t>(i)];
    w_.grad.noalias() += d.transpose() * p;
    if (bias_) b_.grad.col(0) += d.colwise().sum().transpose();
    const Mat dp = d * w_.value;
    col2im(dp, cin_, g_, dx.col(i).data());
  }
  return dx;
}

std::vector<Param*> Conv::params() {
  if (bias_) return {&w_, &b_};
  return {&w_};
}

// ---- Deconv

Deconv::Deconv(int cin, int cout, Stride2Grid g, bool bias, std::mt19937_64& rng, const std::string& name)
    : cin_(cin),
      cout_(cout),
      g_(g),
      w_(name + ".w", randn(cin, cout * 9, std::sqrt(2.0 / (cin * 9.0 / 4.0)), rng)),
      b_(name + ".b", Mat::Zero(cout, 1)),
      bias_(bias) {}

Mat Deconv::forward(const Mat& x, bool) {
  const int n = static_cast<int>(x.cols());
  const int inPos = g_.hs() * g_.ws();
  const int outPos = g_.h * g_.w;
  if (x.rows() != static_cast<Eigen::Index>(cin_) * inPos) throw DomainError("deconv input size mismatch");
  x_ = x;
  Mat y = Mat::Zero(static_cast<Eigen::Index>(cout_) * outPos, n);
  for (int i = 0; i < n; ++i) {
    Eigen::Map<const Mat> xi(x.col(i).data(), inPos, cin_);
    const Mat p = xi * w_.value;
    col2im(p, cout_, g_, y.col(i).data());
    if (bias_) {
      Eigen::Map<Mat> out(y.col(i).data(), outPos, cout_);
      out.rowwise() += b_.value.col(0).transpose();
    }
  }
  return y;
}

Mat Deconv::backward(const Mat& dy) {
  const int n = static_cast<int>(dy.cols());
  const int inPos = g_.hs() * g_.ws();
  const int outPos = g_.h * g_.w;
  Mat dx(static_cast<Eigen::Index>(cin_) * inPos, n);
  for (int i = 0; i < n; ++i) {
    const Mat dp = im2col(dy.col(i).data(), cout_, g_);
    Eigen::Map<const Mat> xi(x_.col(i).data(), inPos, cin_);
    w_.grad.noalias() += xi.transpose() * dp;
    if (bias_) {
      Eigen::Map<const Mat> d(dy.col(i).data(), outPos, cout_);
      b_.grad.col(0) += d.colwise().sum().transpose();
    }
    Eigen::Map<Mat> dxi(dx.col(i).data(), inPos, cin_);
    dxi.noalias() = dp * w_.value.transpose();
  }
  return dx;
}

std::vector<Param*> Deconv::params() {
  if (bias_) return {&w_, &b_};
  return {&w_};
}

// ---- BatchNorm

BatchNorm::BatchNorm(int channels, int spatial, const std::string& name, double momentum, double eps)
    : c_(channels),
      s_(spatial),
      momentum_(momentum),
      eps_(eps),
      gamma_(name + ".gamma", Mat::Ones(channels, 1)),
      beta_(name + ".beta", Mat::Zero(channels, 1)),
      runMean_(Mat::Zero(channels, 1)),
      runVar_(Mat::Ones(channels, 1)) {}

Mat BatchNorm::forward(const Mat& x, bool training) {
  const Eigen::Index n = x.cols();
  if (x.rows() != static_cast<Eigen::Index>(c_) * s_) throw DomainError("batch norm input size mismatch");
  Mat y(x.rows(), n);
  if (!training) {
    for (int c = 0; c < c_; ++c) {
      const double inv = 1.0 / std::sqrt(runVar_(c, 0) + eps_);
      const double a = gamma_.value(c, 0) * inv;
      const double b = beta_.value(c, 0) - a * runMean_(c, 0);
      y.middleRows(static_cast<Eigen::Index>(c) * s_, s_) = (a * x.middleRows(static_cast<Eigen::Index>(c) * s_, s_)).array() + b;
    }
    return y;
  }
  const double m = static_cast<double>(s_) * static_cast<double>(n);
  xhat_.resize(x.rows(), n);
  invStd_.resize(c_);
  for (int c = 0; c < c_; ++c) {
    const auto block = x.middleRows(static_cast<Eigen::Index>(c) * s_, s_);
    const double mean = block.sum() / m;
    const double var = (block.array() - mean).square().sum() / m;
    const double inv = 1.0 / std::sqrt(var + eps_);
    invStd_[c] = inv;
    xhat_.middleRows(static_cast<Eigen::Index>(c) * s_, s_) = (block.array() - mean) * inv;
    y.middleRows(static_cast<Eigen::Index>(c) * s_, s_) =
        gamma_.value(c, 0) * xhat_.middleRows(static_cast<Eigen::Index>(c) * s_, s_).array() + beta_.value(c, 0);
    const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
    runMean_(c, 0) = (1.0 - momentum_) * runMean_(c, 0) + momentum_ * mean;
    runVar_(c, 0) = (1.0 - momentum_) * runVar_(c, 0) + momentum_ * unbiased;
  }
  return y;
}

Mat BatchNorm::backward(const Mat& dy) {
  const double m = static_cast<double>(s_) * static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (int c = 0; c < c_; ++c) {
    const auto d = dy.middleRows(static_cast<Eigen::Index>(c) * s_, s_);
    const auto xh = xhat_.middleRows(static_cast<Eigen::Index>(c) * s_, s_);
    const double sumD = d.sum();
    const double sumDX = (d.array() * xh.array()).sum();
    gamma_.grad(c, 0) += sumDX;
    beta_.grad(c, 0) += sumD;
    const double g = gamma_.value(c, 0);
    dx.middleRows(static_cast<Eigen::Index>(c) * s_, s_) =
        (g * invStd_[c] / m) * (m * d.array() - sumD - xh.array() * sumDX);
  }
  return dx;
}

std::vector<Param*> BatchNorm::params() { return {&gamma_, &beta_}; }
std::vector<Mat*> BatchNorm::buffers() { return {&runMean_, &runVar_}; }

// ---- activations

Mat Relu::forward(const Mat& x, bool) {
  mask_ = (x.array() > 0.0).cast<double>();
  return x.cwiseMax(0.0);
}

Mat Relu::backward(const Mat& dy) { return dy.cwiseProduct(mask_); }

Mat Sigmoid::forward(const Mat& x, bool) {
  y_ = x.unaryExpr([](double v) { return sigmoid(v); });
  return y_;
}

Mat Sigmoid::backward(const Mat& dy) { return dy.array() * y_.array() * (1.0 - y_.array()); }

// ---- Sequential

Mat Sequential::forward(const Mat& x, bool training) {
  Mat h = x;
  for (auto& l : layers_) h = l->forward(h, training);
  return h;
}

Mat Sequential::backward(const Mat& dy) {
  Mat d = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) d = (*it)->backward(d);
  return d;
}

std::vector<Param*> Sequential::params() {
  std::vector<Param*> out;
  for (auto& l : layers_)
    for (auto* p : l->params()) out.push_back(p);
  return out;
}

std::vector<Mat*> Sequential::buffers() {
  std::vector<Mat*> out;
  for (auto& l : layers_)
    for (auto* b : l->buffers()) out.push_back(b);
  return out;
}

}  // namespace fls::nn
