#pragma once

#include <algorithm>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "scnas/tensor.hpp"

// Differentiable primitives over TensorT. Free functions; each builds one
// graph node with an eager forward value and a backprop closure.
namespace scnas {

template <typename Scalar>
TensorT<Scalar> add(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("add: shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  auto out = detail::make_result<Scalar>(a.shape(), {a.node(), b.node()});
  out.values() = a.values() + b.values();
  if (out.requires_grad())
    out.node()->backprop = [](auto& n) {
      for (int i = 0; i < 2; ++i)
        if (n.parents[i]->requires_grad) n.parents[i]->ensure_grad() += n.grad;
    };
  return out;
}

template <typename Scalar>
TensorT<Scalar> sub(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("sub: shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  auto out = detail::make_result<Scalar>(a.shape(), {a.node(), b.node()});
  out.values() = a.values() - b.values();
  if (out.requires_grad())
    out.node()->backprop = [](auto& n) {
      if (n.parents[0]->requires_grad) n.parents[0]->ensure_grad() += n.grad;
      if (n.parents[1]->requires_grad) n.parents[1]->ensure_grad() -= n.grad;
    };
  return out;
}

template <typename Scalar>
TensorT<Scalar> mul(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("mul: shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  auto out = detail::make_result<Scalar>(a.shape(), {a.node(), b.node()});
  out.values() = a.values() * b.values();
  if (out.requires_grad())
    out.node()->backprop = [](auto& n) {
      if (n.parents[0]->requires_grad)
        n.parents[0]->ensure_grad() += n.grad * n.parents[1]->value;
      if (n.parents[1]->requires_grad)
        n.parents[1]->ensure_grad() += n.grad * n.parents[0]->value;
    };
  return out;
}

template <typename Scalar>
TensorT<Scalar> scale(const TensorT<Scalar>& x, Scalar c) {
  auto out = detail::make_result<Scalar>(x.shape(), {x.node()});
  out.values() = x.values() * c;
  if (out.requires_grad())
    out.node()->backprop = [c](auto& n) {
      if (n.parents[0]->requires_grad) n.parents[0]->ensure_grad() += n.grad * c;
    };
  return out;
}

// x * s with s a one-element tensor, broadcast over x.
template <typename Scalar>
TensorT<Scalar> mul_scalar(const TensorT<Scalar>& x, const TensorT<Scalar>& s) {
  if (s.size() != 1) throw std::invalid_argument("mul_scalar: weight must be a scalar tensor");
  auto out = detail::make_result<Scalar>(x.shape(), {x.node(), s.node()});
  out.values() = x.values() * s.values()[0];
  if (out.requires_grad())
    out.node()->backprop = [](auto& n) {
      const Scalar sv = n.parents[1]->value[0];
      if (n.parents[0]->requires_grad) n.parents[0]->ensure_grad() += n.grad * sv;
      if (n.parents[1]->requires_grad)
        n.parents[1]->ensure_grad()[0] += (n.grad * n.parents[0]->value).sum();
    };
  return out;
}

// Scalar-tensor division a / b, both one-element.
template <typename Scalar>
TensorT<Scalar> div_scalar(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  if (a.size() != 1 || b.size() != 1)
    throw std::invalid_argument("div_scalar: both operands must be scalar tensors");
  auto out = detail::make_result<Scalar>(Shape{1}, {a.node(), b.node()});
  out.values()[0] = a.values()[0] / b.values()[0];
  if (out.requires_grad())
    out.node()->backprop = [](auto& n) {
      const Scalar av = n.parents[0]->value[0];
      const Scalar bv = n.parents[1]->value[0];
      if (n.parents[0]->requires_grad) n.parents[0]->ensure_grad()[0] += n.grad[0] / bv;
      if (n.parents[1]->requires_grad)
        n.parents[1]->ensure_grad()[0] -= n.grad[0] * av / (bv * bv);
    };
  return out;
}

// Selects one entry as a scalar tensor (flat index).
template <typename Scalar>
TensorT<Scalar> gather_scalar(const TensorT<Scalar>& x, std::int64_t index) {
  if (index < 0 || index >= x.size())
    throw std::invalid_argument("gather_scalar: index " + std::to_string(index) +
                                " out of range for " + std::to_string(x.size()) + " entries");
  auto out = detail::make_result<Scalar>(Shape{1}, {x.node()});
  out.values()[0] = x.values()[index];
  if (out.requires_grad())
    out.node()->backprop = [index](auto& n) {
      if (n.parents[0]->requires_grad) n.parents[0]->ensure_grad()[index] += n.grad[0];
    };
  return out;
}

template <typename Scalar>
TensorT<Scalar> sum_all(const TensorT<Scalar>& x) {
  auto out = detail::make_result<Scalar>(Shape{1}, {x.node()});
  out.values()[0] = x.values().sum();
  if (out.requires_grad())
    out.node()->backprop = [](auto& n) {
      if (n.parents[0]->requires_grad) n.parents[0]->ensure_grad() += n.grad[0];
    };
  return out;
}

template <typename Scalar>
TensorT<Scalar> add_scalar_constant(const TensorT<Scalar>& x, Scalar c) {
  auto out = detail::make_result<Scalar>(x.shape(), {x.node()});
  out.values() = x.values() + c;
  if (out.requires_grad())
    out.node()->backprop = [](auto& n) {
      if (n.parents[0]->requires_grad) n.parents[0]->ensure_grad() += n.grad;
    };
  return out;
}

template <typename Scalar>
TensorT<Scalar> leaky_relu(const TensorT<Scalar>& x, Scalar slope) {
  if (!(slope > Scalar(0) && slope < Scalar(1)))
    throw std::invalid_argument("leaky_relu: slope must lie in (0, 1)");
  auto out = detail::make_result<Scalar>(x.shape(), {x.node()});
  out.values() = (x.values() >= Scalar(0)).select(x.values(), x.values() * slope);
  if (out.requires_grad())
    out.node()->backprop = [slope](auto& n) {
      if (!n.parents[0]->requires_grad) return;
      auto& g = n.parents[0]->ensure_grad();
      const auto& xv = n.parents[0]->value;
      g += (xv >= Scalar(0)).select(n.grad, n.grad * slope);
    };
  return out;
}

// Softmax along one axis; numerically stabilized per slice.
template <typename Scalar>
TensorT<Scalar> softmax(const TensorT<Scalar>& x, int axis) {
  if (axis < 0 || axis >= x.ndim())
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of range");
  const Shape& sh = x.shape();
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sh[i];
  for (int i = axis + 1; i < x.ndim(); ++i) inner *= sh[i];
  const std::int64_t len = sh[axis];

  auto out = detail::make_result<Scalar>(sh, {x.node()});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * len * inner + i;
      Scalar mx = xv[base];
      for (std::int64_t j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      Scalar denom = Scalar(0);
      for (std::int64_t j = 0; j < len; ++j) {
        const Scalar e = std::exp(xv[base + j * inner] - mx);
        ov[base + j * inner] = e;
        denom += e;
      }
      for (std::int64_t j = 0; j < len; ++j) ov[base + j * inner] /= denom;
    }
  if (out.requires_grad())
    out.node()->backprop = [outer, inner, len](auto& n) {
      if (!n.parents[0]->requires_grad) return;
      auto& gx = n.parents[0]->ensure_grad();
      const auto& p = n.value;
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t base = o * len * inner + i;
          Scalar dot = Scalar(0);
          for (std::int64_t j = 0; j < len; ++j)
            dot += n.grad[base + j * inner] * p[base + j * inner];
          for (std::int64_t j = 0; j < len; ++j) {
            const std::int64_t k = base + j * inner;
            gx[k] += p[k] * (n.grad[k] - dot);
          }
        }
    };
  return out;
}

// Channel-wise concatenation; batch and spatial extents must agree.
template <typename Scalar>
TensorT<Scalar> concat_channels(const std::vector<TensorT<Scalar>>& inputs) {
  if (inputs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  if (inputs.size() == 1) return inputs[0];
  const Shape& first = inputs[0].shape();
  int channels = 0;
  for (const auto& t : inputs) {
    if (t.ndim() != static_cast<int>(first.size()))
      throw std::invalid_argument("concat_channels: rank mismatch");
    for (int d = 0; d < t.ndim(); ++d)
      if (d != 1 && t.dim(d) != first[d])
        throw std::invalid_argument("concat_channels: shape mismatch " +
                                    shape_string(t.shape()) + " vs " + shape_string(first));
    channels += t.dim(1);
  }
  Shape out_shape = first;
  out_shape[1] = channels;

  std::vector<std::shared_ptr<detail::TensorNode<Scalar>>> parents;
  for (const auto& t : inputs) parents.push_back(t.node());
  auto out = detail::make_result<Scalar>(out_shape, std::move(parents));

  const std::int64_t batch = first[0];
  const std::int64_t sp = numel(first) / (first[0] * first[1]);
  std::int64_t coff = 0;
  for (const auto& t : inputs) {
    const std::int64_t tc = t.dim(1);
    for (std::int64_t b = 0; b < batch; ++b)
      out.values().segment((b * channels + coff) * sp, tc * sp) =
          t.values().segment(b * tc * sp, tc * sp);
    coff += tc;
  }
  if (out.requires_grad())
    out.node()->backprop = [batch, sp, channels](auto& n) {
      std::int64_t off = 0;
      for (auto& p : n.parents) {
        const std::int64_t tc = p->shape[1];
        if (p->requires_grad) {
          auto& g = p->ensure_grad();
          for (std::int64_t b = 0; b < batch; ++b)
            g.segment(b * tc * sp, tc * sp) += n.grad.segment((b * channels + off) * sp, tc * sp);
        }
        off += tc;
      }
    };
  return out;
}

namespace detail {

inline Shape conv_out_shape(const Shape& x, const Shape& w, int stride, int dilation,
                            int groups) {
  if (x.size() < 3 || w.size() != x.size())
    throw std::invalid_argument("conv: input " + shape_string(x) + " and weights " +
                                shape_string(w) + " must both be batch x channels x spatial");
  if (stride < 1 || dilation < 1 || groups < 1)
    throw std::invalid_argument("conv: stride, dilation and groups must be positive");
  const int ci = x[1], co = w[0];
  if (ci % groups != 0 || co % groups != 0 || w[1] != ci / groups)
    throw std::invalid_argument("conv: input channels " + std::to_string(ci) +
                                " incompatible with weight layout " + shape_string(w) +
                                " at groups=" + std::to_string(groups));
  Shape out{x[0], co};
  for (std::size_t d = 2; d < x.size(); ++d) {
    const int k = w[d];
    if (k % 2 == 0) throw std::invalid_argument("conv: kernel extents must be odd");
    const int pad = dilation * (k - 1) / 2;
    out.push_back((x[d] + 2 * pad - dilation * (k - 1) - 1) / stride + 1);
  }
  return out;
}

}  // namespace detail

// N-d convolution, bias-free, symmetric zero padding of width dilation*(k-1)/2
// so that stride-1 output matches the input spatial extents.
template <typename Scalar>
TensorT<Scalar> conv(const TensorT<Scalar>& x, const TensorT<Scalar>& w, int stride = 1,
                     int dilation = 1, int groups = 1) {
  const Shape out_shape = detail::conv_out_shape(x.shape(), w.shape(), stride, dilation, groups);
  auto out = detail::make_result<Scalar>(out_shape, {x.node(), w.node()});

  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const int nsp = static_cast<int>(xs.size()) - 2;
  const int ci = xs[1], co = ws[0], cig = ws[1];
  const int co_per_group = co / groups;
  const Shape xsp(xs.begin() + 2, xs.end());
  const Shape ksp(ws.begin() + 2, ws.end());
  const Shape osp(out_shape.begin() + 2, out_shape.end());
  std::vector<int> pad(nsp);
  for (int d = 0; d < nsp; ++d) pad[d] = dilation * (ksp[d] - 1) / 2;

  const auto xstr = row_major_strides(xs);
  const auto wstr = row_major_strides(ws);
  const auto ostr = row_major_strides(out_shape);

  const auto& xv = x.values();
  const auto& wv = w.values();
  auto& ov = out.values();

  std::vector<int> p(nsp, 0), kk(nsp, 0), q(nsp, 0);
  for (int b = 0; b < xs[0]; ++b)
    for (int oc = 0; oc < co; ++oc) {
      const int ci0 = (oc / co_per_group) * cig;
      std::fill(p.begin(), p.end(), 0);
      do {
        std::int64_t obase = b * ostr[0] + oc * ostr[1];
        for (int d = 0; d < nsp; ++d) obase += p[d] * ostr[d + 2];
        Scalar acc = Scalar(0);
        for (int cil = 0; cil < cig; ++cil) {
          std::fill(kk.begin(), kk.end(), 0);
          do {
            bool ok = true;
            for (int d = 0; d < nsp; ++d) {
              q[d] = p[d] * stride + dilation * kk[d] - pad[d];
              if (q[d] < 0 || q[d] >= xsp[d]) {
                ok = false;
                break;
              }
            }
            if (ok) {
              std::int64_t xi = b * xstr[0] + (ci0 + cil) * xstr[1];
              std::int64_t wi = oc * wstr[0] + cil * wstr[1];
              for (int d = 0; d < nsp; ++d) {
                xi += q[d] * xstr[d + 2];
                wi += kk[d] * wstr[d + 2];
              }
              acc += wv[wi] * xv[xi];
            }
          } while (advance_index(kk, ksp));
        }
        ov[obase] = acc;
      } while (advance_index(p, osp));
    }

  if (out.requires_grad())
    out.node()->backprop = [stride, dilation, groups](auto& n) {
      auto& xn = *n.parents[0];
      auto& wn = *n.parents[1];
      const Shape& xs2 = xn.shape;
      const Shape& ws2 = wn.shape;
      const int nsp2 = static_cast<int>(xs2.size()) - 2;
      const int co2 = ws2[0], cig2 = ws2[1];
      const int co_per_group2 = co2 / groups;
      const Shape xsp2(xs2.begin() + 2, xs2.end());
      const Shape ksp2(ws2.begin() + 2, ws2.end());
      const Shape osp2(n.shape.begin() + 2, n.shape.end());
      std::vector<int> pad2(nsp2);
      for (int d = 0; d < nsp2; ++d) pad2[d] = dilation * (ksp2[d] - 1) / 2;
      const auto xstr2 = row_major_strides(xs2);
      const auto wstr2 = row_major_strides(ws2);
      const auto ostr2 = row_major_strides(n.shape);

      const bool need_x = xn.requires_grad;
      const bool need_w = wn.requires_grad;
      if (need_x) xn.ensure_grad();
      if (need_w) wn.ensure_grad();

      std::vector<int> p(nsp2, 0), kk(nsp2, 0), q(nsp2, 0);
      for (int b = 0; b < xs2[0]; ++b)
        for (int oc = 0; oc < co2; ++oc) {
          const int ci0 = (oc / co_per_group2) * cig2;
          std::fill(p.begin(), p.end(), 0);
          do {
            std::int64_t obase = b * ostr2[0] + oc * ostr2[1];
            for (int d = 0; d < nsp2; ++d) obase += p[d] * ostr2[d + 2];
            const Scalar g = n.grad[obase];
            if (g == Scalar(0)) {
              continue;
            }
            for (int cil = 0; cil < cig2; ++cil) {
              std::fill(kk.begin(), kk.end(), 0);
              do {
                bool ok = true;
                for (int d = 0; d < nsp2; ++d) {
                  q[d] = p[d] * stride + dilation * kk[d] - pad2[d];
                  if (q[d] < 0 || q[d] >= xsp2[d]) {
                    ok = false;
                    break;
                  }
                }
                if (ok) {
                  std::int64_t xi = b * xstr2[0] + (ci0 + cil) * xstr2[1];
                  std::int64_t wi = oc * wstr2[0] + cil * wstr2[1];
                  for (int d = 0; d < nsp2; ++d) {
                    xi += q[d] * xstr2[d + 2];
                    wi += kk[d] * wstr2[d + 2];
                  }
                  if (need_x) xn.grad[xi] += wn.value[wi] * g;
                  if (need_w) wn.grad[wi] += xn.value[xi] * g;
                }
              } while (advance_index(kk, ksp2));
            }
          } while (advance_index(p, osp2));
        }
    };
  return out;
}

enum class PoolKind { Max, Avg };

// Window-3 pooling with symmetric padding of 1; padded positions are excluded
// from both the max and the average, so constant fields map to themselves.
template <typename Scalar>
TensorT<Scalar> pool(const TensorT<Scalar>& x, PoolKind kind, int stride) {
  if (stride < 1) throw std::invalid_argument("pool: stride must be positive");
  const Shape& xs = x.shape();
  if (xs.size() < 3) throw std::invalid_argument("pool: expected batch x channels x spatial");
  const int nsp = static_cast<int>(xs.size()) - 2;
  const Shape xsp(xs.begin() + 2, xs.end());
  Shape out_shape{xs[0], xs[1]};
  for (int d = 0; d < nsp; ++d) out_shape.push_back((xsp[d] - 1) / stride + 1);
  const Shape osp(out_shape.begin() + 2, out_shape.end());

  auto out = detail::make_result<Scalar>(out_shape, {x.node()});
  const auto xstr = row_major_strides(xs);
  const auto ostr = row_major_strides(out_shape);
  const auto& xv = x.values();
  auto& ov = out.values();

  // For max pooling remember the winning input position per output element.
  auto argmax = std::make_shared<std::vector<std::int64_t>>();
  if (kind == PoolKind::Max) argmax->resize(out.size());

  Shape win(nsp, 3);
  std::vector<int> p(nsp, 0), kk(nsp, 0), q(nsp, 0);
  for (int b = 0; b < xs[0]; ++b)
    for (int c = 0; c < xs[1]; ++c) {
      std::fill(p.begin(), p.end(), 0);
      do {
        std::int64_t obase = b * ostr[0] + c * ostr[1];
        for (int d = 0; d < nsp; ++d) obase += p[d] * ostr[d + 2];
        Scalar best = -std::numeric_limits<Scalar>::infinity();
        std::int64_t best_idx = -1;
        Scalar acc = Scalar(0);
        int valid = 0;
        std::fill(kk.begin(), kk.end(), 0);
        do {
          bool ok = true;
          for (int d = 0; d < nsp; ++d) {
            q[d] = p[d] * stride + kk[d] - 1;
            if (q[d] < 0 || q[d] >= xsp[d]) {
              ok = false;
              break;
            }
          }
          if (ok) {
            std::int64_t xi = b * xstr[0] + c * xstr[1];
            for (int d = 0; d < nsp; ++d) xi += q[d] * xstr[d + 2];
            const Scalar v = xv[xi];
            acc += v;
            ++valid;
            if (v > best) {
              best = v;
              best_idx = xi;
            }
          }
        } while (advance_index(kk, win));
        if (kind == PoolKind::Max) {
          ov[obase] = best;
          (*argmax)[obase] = best_idx;
        } else {
          ov[obase] = acc / static_cast<Scalar>(valid);
        }
      } while (advance_index(p, osp));
    }

  if (out.requires_grad()) {
    if (kind == PoolKind::Max) {
      out.node()->backprop = [argmax](auto& n) {
        if (!n.parents[0]->requires_grad) return;
        auto& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.size(); ++i) g[(*argmax)[i]] += n.grad[i];
      };
    } else {
      out.node()->backprop = [stride](auto& n) {
        if (!n.parents[0]->requires_grad) return;
        auto& xn = *n.parents[0];
        auto& g = xn.ensure_grad();
        const Shape& xs2 = xn.shape;
        const int nsp2 = static_cast<int>(xs2.size()) - 2;
        const Shape xsp2(xs2.begin() + 2, xs2.end());
        const Shape osp2(n.shape.begin() + 2, n.shape.end());
        const auto xstr2 = row_major_strides(xs2);
        const auto ostr2 = row_major_strides(n.shape);
        Shape win2(nsp2, 3);
        std::vector<int> p(nsp2, 0), kk(nsp2, 0), q(nsp2, 0);
        for (int b = 0; b < xs2[0]; ++b)
          for (int c = 0; c < xs2[1]; ++c) {
            std::fill(p.begin(), p.end(), 0);
            do {
              std::int64_t obase = b * ostr2[0] + c * ostr2[1];
              for (int d = 0; d < nsp2; ++d) obase += p[d] * ostr2[d + 2];
              // Count valid taps, then spread the gradient uniformly.
              int valid = 0;
              std::fill(kk.begin(), kk.end(), 0);
              do {
                bool ok = true;
                for (int d = 0; d < nsp2; ++d) {
                  q[d] = p[d] * stride + kk[d] - 1;
                  if (q[d] < 0 || q[d] >= xsp2[d]) {
                    ok = false;
                    break;
                  }
                }
                if (ok) ++valid;
              } while (advance_index(kk, win2));
              const Scalar share = n.grad[obase] / static_cast<Scalar>(valid);
              std::fill(kk.begin(), kk.end(), 0);
              do {
                bool ok = true;
                for (int d = 0; d < nsp2; ++d) {
                  q[d] = p[d] * stride + kk[d] - 1;
                  if (q[d] < 0 || q[d] >= xsp2[d]) {
                    ok = false;
                    break;
                  }
                }
                if (ok) {
                  std::int64_t xi = b * xstr2[0] + c * xstr2[1];
                  for (int d = 0; d < nsp2; ++d) xi += q[d] * xstr2[d + 2];
                  g[xi] += share;
                }
              } while (advance_index(kk, win2));
            } while (advance_index(p, osp2));
          }
      };
    }
  }
  return out;
}

// Nearest-neighbor upsampling by 2: each voxel replicated into a 2^N block.
template <typename Scalar>
TensorT<Scalar> upsample_nearest2(const TensorT<Scalar>& x) {
  const Shape& xs = x.shape();
  if (xs.size() < 3)
    throw std::invalid_argument("upsample_nearest2: expected batch x channels x spatial");
  const int nsp = static_cast<int>(xs.size()) - 2;
  Shape out_shape = xs;
  for (int d = 0; d < nsp; ++d) out_shape[d + 2] *= 2;
  auto out = detail::make_result<Scalar>(out_shape, {x.node()});

  const auto xstr = row_major_strides(xs);
  const auto ostr = row_major_strides(out_shape);
  const Shape osp(out_shape.begin() + 2, out_shape.end());
  std::vector<int> p(nsp, 0);
  for (int b = 0; b < xs[0]; ++b)
    for (int c = 0; c < xs[1]; ++c) {
      std::fill(p.begin(), p.end(), 0);
      do {
        std::int64_t oi = b * ostr[0] + c * ostr[1];
        std::int64_t xi = b * xstr[0] + c * xstr[1];
        for (int d = 0; d < nsp; ++d) {
          oi += p[d] * ostr[d + 2];
          xi += (p[d] / 2) * xstr[d + 2];
        }
        out.values()[oi] = x.values()[xi];
      } while (advance_index(p, osp));
    }
  if (out.requires_grad())
    out.node()->backprop = [](auto& n) {
      if (!n.parents[0]->requires_grad) return;
      auto& xn = *n.parents[0];
      auto& g = xn.ensure_grad();
      const Shape& xs2 = xn.shape;
      const int nsp2 = static_cast<int>(xs2.size()) - 2;
      const auto xstr2 = row_major_strides(xs2);
      const auto ostr2 = row_major_strides(n.shape);
      const Shape osp2(n.shape.begin() + 2, n.shape.end());
      std::vector<int> p(nsp2, 0);
      for (int b = 0; b < xs2[0]; ++b)
        for (int c = 0; c < xs2[1]; ++c) {
          std::fill(p.begin(), p.end(), 0);
          do {
            std::int64_t oi = b * ostr2[0] + c * ostr2[1];
            std::int64_t xi = b * xstr2[0] + c * xstr2[1];
            for (int d = 0; d < nsp2; ++d) {
              oi += p[d] * ostr2[d + 2];
              xi += (p[d] / 2) * xstr2[d + 2];
            }
            g[xi] += n.grad[oi];
          } while (advance_index(p, osp2));
        }
    };
  return out;
}

// Stride-2 subsampling: keeps every other voxel starting at index 0.
// Parameter-free resolution halving, the stride-2 analogue of identity.
template <typename Scalar>
TensorT<Scalar> subsample2(const TensorT<Scalar>& x) {
  const Shape& xs = x.shape();
  if (xs.size() < 3)
    throw std::invalid_argument("subsample2: expected batch x channels x spatial");
  const int nsp = static_cast<int>(xs.size()) - 2;
  Shape out_shape = xs;
  for (int d = 0; d < nsp; ++d) out_shape[d + 2] = (xs[d + 2] - 1) / 2 + 1;
  auto out = detail::make_result<Scalar>(out_shape, {x.node()});

  const auto xstr = row_major_strides(xs);
  const auto ostr = row_major_strides(out_shape);
  const Shape osp(out_shape.begin() + 2, out_shape.end());
  std::vector<int> p(nsp, 0);
  for (int b = 0; b < xs[0]; ++b)
    for (int c = 0; c < xs[1]; ++c) {
      std::fill(p.begin(), p.end(), 0);
      do {
        std::int64_t oi = b * ostr[0] + c * ostr[1];
        std::int64_t xi = b * xstr[0] + c * xstr[1];
        for (int d = 0; d < nsp; ++d) {
          oi += p[d] * ostr[d + 2];
          xi += (2 * p[d]) * xstr[d + 2];
        }
        out.values()[oi] = x.values()[xi];
      } while (advance_index(p, osp));
    }
  if (out.requires_grad())
    out.node()->backprop = [](auto& n) {
      if (!n.parents[0]->requires_grad) return;
      auto& xn = *n.parents[0];
      auto& g = xn.ensure_grad();
      const int nsp2 = static_cast<int>(xn.shape.size()) - 2;
      const auto xstr2 = row_major_strides(xn.shape);
      const auto ostr2 = row_major_strides(n.shape);
      const Shape osp2(n.shape.begin() + 2, n.shape.end());
      std::vector<int> p(nsp2, 0);
      for (int b = 0; b < xn.shape[0]; ++b)
        for (int c = 0; c < xn.shape[1]; ++c) {
          std::fill(p.begin(), p.end(), 0);
          do {
            std::int64_t oi = b * ostr2[0] + c * ostr2[1];
            std::int64_t xi = b * xstr2[0] + c * xstr2[1];
            for (int d = 0; d < nsp2; ++d) {
              oi += p[d] * ostr2[d + 2];
              xi += (2 * p[d]) * xstr2[d + 2];
            }
            g[xi] += n.grad[oi];
          } while (advance_index(p, osp2));
        }
    };
  return out;
}

// Per-(sample, channel) normalization over the spatial volume, with learnable
// per-channel scale and shift. Variance is the biased (population) estimate.
template <typename Scalar>
TensorT<Scalar> instance_norm(const TensorT<Scalar>& x, const TensorT<Scalar>& gamma,
                              const TensorT<Scalar>& beta, Scalar eps = Scalar(1e-5)) {
  const Shape& xs = x.shape();
  if (xs.size() < 3)
    throw std::invalid_argument("instance_norm: expected batch x channels x spatial");
  const std::int64_t sp = spatial_numel(xs);
  if (sp < 2)
    throw std::invalid_argument("instance_norm: spatial volume must be at least 2, got shape " +
                                shape_string(xs));
  const int channels = xs[1];
  if (gamma.size() != channels || beta.size() != channels)
    throw std::invalid_argument("instance_norm: affine parameters must have one entry per channel");

  auto out = detail::make_result<Scalar>(xs, {x.node(), gamma.node(), beta.node()});
  const std::int64_t groups = xs[0] * static_cast<std::int64_t>(channels);

  // Cache the normalized values and inverse stddev for the backward pass.
  auto xhat = std::make_shared<typename TensorT<Scalar>::Storage>(x.size());
  auto inv_std = std::make_shared<std::vector<Scalar>>(groups);

  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::int64_t gidx = 0; gidx < groups; ++gidx) {
    const std::int64_t base = gidx * sp;
    const Scalar mean = xv.segment(base, sp).mean();
    const Scalar var = (xv.segment(base, sp) - mean).square().sum() / static_cast<Scalar>(sp);
    const Scalar is = Scalar(1) / std::sqrt(var + eps);
    (*inv_std)[gidx] = is;
    const int c = static_cast<int>(gidx % channels);
    xhat->segment(base, sp) = (xv.segment(base, sp) - mean) * is;
    ov.segment(base, sp) = xhat->segment(base, sp) * gamma.values()[c] + beta.values()[c];
  }

  if (out.requires_grad())
    out.node()->backprop = [xhat, inv_std, sp, channels](auto& n) {
      auto& xn = *n.parents[0];
      auto& gn = *n.parents[1];
      auto& bn = *n.parents[2];
      const std::int64_t groups2 = static_cast<std::int64_t>((*inv_std).size());
      for (std::int64_t gidx = 0; gidx < groups2; ++gidx) {
        const std::int64_t base = gidx * sp;
        const int c = static_cast<int>(gidx % channels);
        const auto g = n.grad.segment(base, sp);
        const auto xh = xhat->segment(base, sp);
        if (bn.requires_grad) bn.ensure_grad()[c] += g.sum();
        if (gn.requires_grad) gn.ensure_grad()[c] += (g * xh).sum();
        if (xn.requires_grad) {
          const Scalar gam = gn.value[c];
          const Scalar gmean = g.mean();
          const Scalar gxmean = (g * xh).mean();
          xn.ensure_grad().segment(base, sp) +=
              gam * (*inv_std)[gidx] * (g - gmean - xh * gxmean);
        }
      }
    };
  return out;
}

}  // namespace scnas
