#include "scnas/catalog.hpp"

#include <cmath>
#include <sstream>

namespace scnas {

namespace {

const char* kOpNames[kNumOperationKinds] = {
    "Conv3",    "SepDilConv3Rate2", "SepDilConv3Rate3", "SepDilConv3Rate4",
    "MaxPool3", "AvgPool3",         "Identity",         "Zero",
};

Shape kernel_shape(int c_out, int c_in_per_group, int spatial_dims, int extent) {
  Shape s{c_out, c_in_per_group};
  for (int d = 0; d < spatial_dims; ++d) s.push_back(extent);
  return s;
}

Tensor kaiming_init(const Shape& kernel, Rng& rng) {
  std::int64_t fan_in = kernel[1];
  for (std::size_t d = 2; d < kernel.size(); ++d) fan_in *= kernel[d];
  const Real stddev = std::sqrt(2.0 / static_cast<Real>(fan_in));
  return Tensor::randn(kernel, rng, stddev, /*requires_grad=*/true);
}

}  // namespace

const char* op_name(OperationKind kind) { return kOpNames[static_cast<int>(kind)]; }

std::optional<OperationKind> op_from_name(const std::string& name) {
  for (int i = 0; i < kNumOperationKinds; ++i)
    if (name == kOpNames[i]) return static_cast<OperationKind>(i);
  return std::nullopt;
}

Catalog Catalog::full() {
  Catalog c;
  for (int i = 0; i < kNumOperationKinds; ++i) c.kinds.push_back(static_cast<OperationKind>(i));
  return c;
}

Catalog Catalog::from_names(const std::string& comma_separated) {
  Catalog c;
  std::stringstream ss(comma_separated);
  std::string item;
  while (std::getline(ss, item, ',')) {
    // Trim surrounding whitespace.
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    item = item.substr(b, e - b + 1);
    auto kind = op_from_name(item);
    if (!kind) throw std::invalid_argument("unknown operation kind: " + item);
    for (auto existing : c.kinds)
      if (existing == *kind) throw std::invalid_argument("duplicate operation kind: " + item);
    c.kinds.push_back(*kind);
  }
  if (c.kinds.empty()) throw std::invalid_argument("catalog must name at least one operation");
  return c;
}

int Catalog::index_of(OperationKind k) const {
  for (int i = 0; i < size(); ++i)
    if (kinds[static_cast<std::size_t>(i)] == k) return i;
  return -1;
}

std::string Catalog::version() const {
  std::string v;
  for (int i = 0; i < size(); ++i) {
    if (i) v += ',';
    v += op_name(kinds[static_cast<std::size_t>(i)]);
  }
  return v;
}

std::vector<Tensor> OperationInstance::params() const {
  std::vector<Tensor> out;
  for (const Tensor* t : {&conv_w, &point_w, &norm_gamma, &norm_beta})
    if (t->valid()) out.push_back(*t);
  return out;
}

OperationInstance instantiate(OperationKind kind, int channels, int spatial_dims, int stride,
                              Rng& rng) {
  if (channels < 1) throw std::invalid_argument("instantiate: channels must be positive");
  if (stride != 1 && stride != 2) throw std::invalid_argument("instantiate: stride must be 1 or 2");
  if (spatial_dims != 2 && spatial_dims != 3)
    throw std::invalid_argument("instantiate: spatial_dims must be 2 or 3");

  OperationInstance op;
  op.kind = kind;
  op.channels = channels;
  op.spatial_dims = spatial_dims;
  op.stride = stride;

  auto make_norm = [&] {
    op.norm_gamma = Tensor::constant(Shape{channels}, 1.0);
    op.norm_gamma.set_requires_grad(true);
    op.norm_beta = Tensor::zeros(Shape{channels}, /*requires_grad=*/true);
  };

  switch (kind) {
    case OperationKind::Conv3:
      op.conv_w = kaiming_init(kernel_shape(channels, channels, spatial_dims, 3), rng);
      make_norm();
      break;
    case OperationKind::SepDilConv3Rate2:
    case OperationKind::SepDilConv3Rate3:
    case OperationKind::SepDilConv3Rate4:
      op.dilation = 2 + (static_cast<int>(kind) - static_cast<int>(OperationKind::SepDilConv3Rate2));
      op.conv_w = kaiming_init(kernel_shape(channels, 1, spatial_dims, 3), rng);
      op.point_w = kaiming_init(kernel_shape(channels, channels, spatial_dims, 1), rng);
      make_norm();
      break;
    case OperationKind::MaxPool3:
    case OperationKind::AvgPool3:
    case OperationKind::Identity:
    case OperationKind::Zero:
      break;
    default:
      throw std::invalid_argument("instantiate: unknown operation kind");
  }
  return op;
}

Shape op_out_spatial(const Shape& in_spatial, int stride) {
  Shape out = in_spatial;
  if (stride == 2)
    for (int& d : out) d = (d - 1) / 2 + 1;
  return out;
}

Tensor apply(const OperationInstance& op, const Tensor& x, const std::string& where) {
  if (x.ndim() != op.spatial_dims + 2 || x.dim(1) != op.channels) {
    std::string at = where.empty() ? "" : (" at " + where);
    throw std::invalid_argument(std::string("apply: input ") + shape_string(x.shape()) +
                                " does not match " + op_name(op.kind) + " with " +
                                std::to_string(op.channels) + " channels" + at);
  }
  switch (op.kind) {
    case OperationKind::Conv3: {
      Tensor y = leaky_relu(x, kLeakyReluSlope);
      y = conv(y, op.conv_w, op.stride, 1, 1);
      return instance_norm(y, op.norm_gamma, op.norm_beta, kNormEps);
    }
    case OperationKind::SepDilConv3Rate2:
    case OperationKind::SepDilConv3Rate3:
    case OperationKind::SepDilConv3Rate4: {
      // Depthwise stage carries the dilation and stride; pointwise is stride 1.
      Tensor y = leaky_relu(x, kLeakyReluSlope);
      y = conv(y, op.conv_w, op.stride, op.dilation, op.channels);
      y = conv(y, op.point_w, 1, 1, 1);
      return instance_norm(y, op.norm_gamma, op.norm_beta, kNormEps);
    }
    case OperationKind::MaxPool3:
      return pool(x, PoolKind::Max, op.stride);
    case OperationKind::AvgPool3:
      return pool(x, PoolKind::Avg, op.stride);
    case OperationKind::Identity:
      return op.stride == 1 ? x : subsample2(x);
    case OperationKind::Zero: {
      Shape out_shape{x.dim(0), x.dim(1)};
      const Shape sp = op_out_spatial(spatial_of(x.shape()), op.stride);
      out_shape.insert(out_shape.end(), sp.begin(), sp.end());
      return Tensor::zeros(out_shape);
    }
    default:
      throw std::invalid_argument("apply: unknown operation kind");
  }
}

std::int64_t conv_flops(int c_in, int c_out, int groups, int kernel, const Shape& out_spatial) {
  std::int64_t voxels = 1;
  for (int d : out_spatial) voxels *= d;
  std::int64_t taps = 1;
  for (std::size_t i = 0; i < out_spatial.size(); ++i) taps *= kernel;
  return 2 * voxels * c_out * (c_in / groups) * taps;
}

std::int64_t op_flops(const OperationInstance& op, const Shape& in_spatial) {
  const Shape out_sp = op_out_spatial(in_spatial, op.stride);
  std::int64_t voxels = 1;
  for (int d : out_sp) voxels *= d;
  switch (op.kind) {
    case OperationKind::Conv3:
      return conv_flops(op.channels, op.channels, 1, 3, out_sp);
    case OperationKind::SepDilConv3Rate2:
    case OperationKind::SepDilConv3Rate3:
    case OperationKind::SepDilConv3Rate4:
      return conv_flops(op.channels, op.channels, op.channels, 3, out_sp) +
             conv_flops(op.channels, op.channels, 1, 1, out_sp);
    case OperationKind::MaxPool3:
    case OperationKind::AvgPool3: {
      // One combine per window tap per output voxel.
      std::int64_t taps = 1;
      for (std::size_t i = 0; i < out_sp.size(); ++i) taps *= 3;
      return voxels * op.channels * taps;
    }
    case OperationKind::Identity:
    case OperationKind::Zero:
      return 0;
    default:
      return 0;
  }
}

}  // namespace scnas
