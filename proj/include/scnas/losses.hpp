#pragma once

#include <cstdint>
#include <vector>

#include "scnas/types.hpp"

namespace scnas {

// Voxelwise class indices paired with logits of shape batch x classes x spatial.
// Labels are flat row-major over batch x spatial.
using LabelMap = std::vector<std::uint8_t>;

// Soft Jaccard distance, averaged over the foreground classes (background is
// class 0): 1 - (sum p*g + s) / (sum p + sum g - sum p*g + s), with p the
// softmax class probability and g the one-hot label. Differentiable.
Tensor jaccard_loss(const Tensor& logits, const LabelMap& labels, Real smoothing = 1e-5);

// Hard overlap 2|P and G| / (|P| + |G|) for one class; 1 when both are empty.
Real dice_metric(const LabelMap& prediction, const LabelMap& truth, int cls);

}  // namespace scnas
