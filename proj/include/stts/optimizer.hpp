#pragma once

#include <cmath>
#include <vector>

#include "stts/model.hpp"

namespace stts {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
};

class Adam {
 public:
  Adam() = default;
  Adam(const ParamStore& params, AdamConfig config)
      : config_(config), m_(params.zeros_like()), v_(params.zeros_like()) {
    require(config.lr > 0.0, ErrorKind::config, "learning rate must be positive");
  }

  // Applies one update; `grads` is indexed by parameter slot.
  void step(ParamStore& params, std::vector<Matrix>& grads) {
    require(grads.size() == params.size() && m_.size() == params.size(), ErrorKind::dimension,
            "optimizer: gradient count does not match the parameter store");
    if (config_.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& g : grads) sq += g.squaredNorm();
      const double norm = std::sqrt(sq);
      if (norm > config_.clip_norm) {
        for (auto& g : grads) g *= config_.clip_norm / norm;
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t s = 0; s < grads.size(); ++s) {
      const Matrix& g = grads[s];
      require(g.allFinite(), ErrorKind::divergence, "non-finite gradient for '" + params.name(static_cast<int>(s)) + "'");
      m_[s] = config_.beta1 * m_[s] + (1.0 - config_.beta1) * g;
      v_[s] = config_.beta2 * v_[s] + (1.0 - config_.beta2) * g.cwiseAbs2();
      params[static_cast<int>(s)].array() -=
          config_.lr * (m_[s].array() / c1) / ((v_[s].array() / c2).sqrt() + config_.eps);
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

}  // namespace stts
