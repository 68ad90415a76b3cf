#pragma once

#include <iosfwd>
#include <vector>

#include "scnas/types.hpp"

namespace scnas {

// Adam over a fixed parameter list. Moments are kept per parameter tensor in
// the order the list was given; learning rate is mutable for plateau drops.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, Real lr, Real beta1, Real beta2, Real eps = 1e-8);

  // One update from the gradients currently stored on the parameters.
  void step();
  void zero_grad();

  Real lr() const { return lr_; }
  void set_lr(Real lr) { lr_ = lr; }
  long step_count() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }

  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  std::vector<Tensor> params_;
  std::vector<Tensor::Storage> m_, v_;
  Real lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

// Plateau rule: the best-so-far loss must improve by at least `threshold`
// (absolute); after `patience` consecutive epochs without improvement the
// learning rate is divided by `factor`.
class PlateauTracker {
 public:
  PlateauTracker() = default;
  PlateauTracker(int patience, Real factor, Real threshold = 1e-4)
      : patience_(patience), factor_(factor), threshold_(threshold) {}

  // Feeds one epoch loss; returns true when the rate should drop now.
  bool update(Real loss);

  Real factor() const { return factor_; }
  Real best() const { return best_; }
  int epochs_since_improvement() const { return since_; }

  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  int patience_ = 20;
  Real factor_ = 10.0;
  Real threshold_ = 1e-4;
  Real best_ = std::numeric_limits<Real>::infinity();
  int since_ = 0;
};

}  // namespace scnas
