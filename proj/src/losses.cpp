#include "scnas/losses.hpp"

namespace scnas {

Tensor jaccard_loss(const Tensor& logits, const LabelMap& labels, Real smoothing) {
  if (logits.ndim() < 3)
    throw std::invalid_argument("jaccard_loss: logits must be batch x classes x spatial");
  const int classes = logits.dim(1);
  const std::int64_t batch = logits.dim(0);
  const std::int64_t sp = spatial_numel(logits.shape());
  if (static_cast<std::int64_t>(labels.size()) != batch * sp)
    throw std::invalid_argument("jaccard_loss: label count does not match logits");
  for (std::uint8_t l : labels)
    if (l >= classes)
      throw std::invalid_argument("jaccard_loss: label index " + std::to_string(int(l)) +
                                  " out of range for " + std::to_string(classes) + " classes");
  if (classes < 2) throw std::invalid_argument("jaccard_loss: need at least two classes");

  Tensor p = softmax(logits, 1);

  // One indicator mask per foreground class; intersection and probability mass
  // come out of plain elementwise products and full sums.
  Tensor loss_sum;
  for (int c = 1; c < classes; ++c) {
    Tensor mask = Tensor::zeros(logits.shape());
    Real g_sum = 0.0;
    Real* mv = mask.values().data();
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t v = 0; v < sp; ++v)
        if (labels[static_cast<std::size_t>(b * sp + v)] == c) {
          mv[(b * classes + c) * sp + v] = 1.0;
          g_sum += 1.0;
        }
    Tensor class_sel = Tensor::zeros(logits.shape());
    Real* sv = class_sel.values().data();
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t v = 0; v < sp; ++v) sv[(b * classes + c) * sp + v] = 1.0;

    Tensor intersection = sum_all(mul(p, mask));          // sum p*g
    Tensor p_sum = sum_all(mul(p, class_sel));            // sum p over class c
    Tensor union_term =
        sub(add_scalar_constant(p_sum, g_sum + smoothing), intersection);  // p + g - pg + s
    Tensor ratio = div_scalar(add_scalar_constant(intersection, smoothing), union_term);
    Tensor one_minus = add_scalar_constant(scale(ratio, -1.0), 1.0);
    loss_sum = loss_sum.valid() ? add(loss_sum, one_minus) : one_minus;
  }
  return scale(loss_sum, 1.0 / static_cast<Real>(classes - 1));
}

Real dice_metric(const LabelMap& prediction, const LabelMap& truth, int cls) {
  if (prediction.size() != truth.size())
    throw std::invalid_argument("dice_metric: size mismatch");
  std::int64_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const bool in_p = prediction[i] == cls;
    const bool in_g = truth[i] == cls;
    p += in_p;
    g += in_g;
    both += in_p && in_g;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<Real>(both) / static_cast<Real>(p + g);
}

}  // namespace scnas
