#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace apd {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using Vector = Eigen::VectorXd;

/// Multichannel spatial map stored channel-major: data is C x (H*W),
/// pixel (u,v) lives in column u*W + v.
template <class Scalar>
struct FeatureMapT {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  int height = 0;
  int width = 0;
  Mat data;  // channels x (height*width)

  FeatureMapT() = default;
  FeatureMapT(int channels, int h, int w)
      : height(h), width(w), data(Mat::Zero(channels, h * w)) {
    if (h < 1 || w < 1 || channels < 1)
      throw std::invalid_argument("FeatureMap: degenerate shape");
  }
  FeatureMapT(Mat d, int h, int w) : height(h), width(w), data(std::move(d)) {
    if (h < 1 || w < 1 || data.cols() != static_cast<long>(h) * w)
      throw std::invalid_argument("FeatureMap: data/shape mismatch");
  }

  int channels() const { return static_cast<int>(data.rows()); }
  int pixels() const { return height * width; }
  int index(int u, int v) const { return u * width + v; }

  Scalar& at(int c, int u, int v) { return data(c, index(u, v)); }
  Scalar at(int c, int u, int v) const { return data(c, index(u, v)); }

  bool same_shape(const FeatureMapT& o) const {
    return height == o.height && width == o.width &&
           data.rows() == o.data.rows();
  }
};

using FeatureMap = FeatureMapT<double>;

/// Single-channel label map with values in {0,1}; stored as 1 x (H*W).
struct LabelMap {
  int height = 0;
  int width = 0;
  RowVector data;

  LabelMap() = default;
  LabelMap(int h, int w) : height(h), width(w), data(RowVector::Zero(h * w)) {}

  int pixels() const { return height * width; }
  int index(int u, int v) const { return u * width + v; }
  double& at(int u, int v) { return data(index(u, v)); }
  double at(int u, int v) const { return data(index(u, v)); }
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace apd
