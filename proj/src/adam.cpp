#include "scnas/adam.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "scnas/search_io.hpp"

namespace scnas {

Adam::Adam(std::vector<Tensor> params, Real lr, Real beta1, Real beta2, Real eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr >= 0.0)) throw std::invalid_argument("adam: learning rate must not be negative");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(Tensor::Storage::Zero(p.size()));
    v_.push_back(Tensor::Storage::Zero(p.size()));
  }
}

void Adam::step() {
  ++t_;
  const Real bc1 = 1.0 - std::pow(beta1_, static_cast<Real>(t_));
  const Real bc2 = 1.0 - std::pow(beta2_, static_cast<Real>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    const Tensor::Storage g = p.grad();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.square();
    p.values() -= lr_ * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + eps_);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::save(std::ostream& os) const {
  io::write_i64(os, t_);
  io::write_real(os, lr_);
  io::write_i64(os, static_cast<std::int64_t>(params_.size()));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    io::write_array(os, m_[i]);
    io::write_array(os, v_[i]);
  }
}

void Adam::load(std::istream& is) {
  t_ = io::read_i64(is);
  lr_ = io::read_real(is);
  const std::int64_t n = io::read_i64(is);
  if (n != static_cast<std::int64_t>(params_.size()))
    throw std::runtime_error("adam state: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    io::read_array(is, m_[i]);
    io::read_array(is, v_[i]);
  }
}

bool PlateauTracker::update(Real loss) {
  if (loss < best_ - threshold_) {
    best_ = loss;
    since_ = 0;
    return false;
  }
  if (++since_ >= patience_) {
    since_ = 0;
    return true;
  }
  return false;
}

void PlateauTracker::save(std::ostream& os) const {
  io::write_real(os, best_);
  io::write_i64(os, since_);
}

void PlateauTracker::load(std::istream& is) {
  best_ = io::read_real(is);
  since_ = static_cast<int>(io::read_i64(is));
}

}  // namespace scnas
