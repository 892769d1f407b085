#pragma once

#include <vector>

#include "radinv/core.hpp"

namespace radinv {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a list of tensors with a per-tensor learning rate (0 freezes).
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  [[nodiscard]] const AdamConfig& config() const { return cfg_; }
  [[nodiscard]] int steps() const { return t_; }

  void step(std::vector<Mat>& params, const std::vector<Mat>& grads, const std::vector<double>& lrs) {
    if (params.size() != grads.size() || params.size() != lrs.size())
      throw StructuralError("adam: parameter, gradient and learning-rate lists differ in length");
    if (m_.empty()) {
      for (const Mat& p : params) {
        m_.push_back(Mat::Zero(p.rows(), p.cols()));
        v_.push_back(Mat::Zero(p.rows(), p.cols()));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (lrs[i] == 0.0 || grads[i].size() == 0) continue;
      if (grads[i].rows() != params[i].rows() || grads[i].cols() != params[i].cols())
        throw StructuralError("adam: gradient shape mismatch");
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grads[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grads[i].cwiseAbs2();
      params[i].array() -= lrs[i] * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
    }
  }

  /// Uniform learning rate over all tensors.
  void step(std::vector<Mat>& params, const std::vector<Mat>& grads) {
    step(params, grads, std::vector<double>(params.size(), cfg_.lr));
  }

  [[nodiscard]] const std::vector<Mat>& first_moments() const { return m_; }
  [[nodiscard]] const std::vector<Mat>& second_moments() const { return v_; }

 private:
  AdamConfig cfg_;
  std::vector<Mat> m_, v_;
  int t_ = 0;
};

}  // namespace radinv
