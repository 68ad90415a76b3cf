#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scnas/rng.hpp"
#include "scnas/types.hpp"

namespace scnas {

// The candidate operation set O. Order is fixed and stable; genotype files and
// architecture logits index into it by this order.
enum class OperationKind : int {
  Conv3 = 0,
  SepDilConv3Rate2,
  SepDilConv3Rate3,
  SepDilConv3Rate4,
  MaxPool3,
  AvgPool3,
  Identity,
  Zero,
};

inline constexpr int kNumOperationKinds = 8;
inline constexpr Real kLeakyReluSlope = 0.01;
inline constexpr Real kNormEps = 1e-5;

const char* op_name(OperationKind kind);
std::optional<OperationKind> op_from_name(const std::string& name);

// Ordered subset of the eight kinds. The full catalog is the default; reduced
// catalogs (e.g. {Identity, Zero}) are used by small studies and tests.
struct Catalog {
  std::vector<OperationKind> kinds;

  static Catalog full();
  static Catalog from_names(const std::string& comma_separated);

  int size() const { return static_cast<int>(kinds.size()); }
  OperationKind kind(int index) const { return kinds[static_cast<std::size_t>(index)]; }
  int index_of(OperationKind k) const;
  // Version string recorded in genotype files: comma-joined kind names.
  std::string version() const;
};

// One operation bound to an edge: its kind plus the parameters it owns.
// Parameterized kinds are never shared between edges.
struct OperationInstance {
  OperationKind kind = OperationKind::Zero;
  int channels = 0;
  int spatial_dims = 0;
  int stride = 1;
  int dilation = 1;

  Tensor conv_w;   // Conv3: full C->C kernel; SepDil: depthwise kernel
  Tensor point_w;  // SepDil: pointwise 1^N kernel
  Tensor norm_gamma, norm_beta;

  std::vector<Tensor> params() const;
};

// Builds an operation with freshly initialized parameters. Convolution weights
// use fan-in scaled Gaussian init; norm scale starts at 1, shift at 0.
OperationInstance instantiate(OperationKind kind, int channels, int spatial_dims, int stride,
                              Rng& rng);

// Applies the operation; `where` names the edge in error messages.
Tensor apply(const OperationInstance& op, const Tensor& x, const std::string& where = "");

// Output spatial extents for any catalog op: depends only on stride.
Shape op_out_spatial(const Shape& in_spatial, int stride);

// FLOP count on the given input spatial extents: two times the
// multiply-accumulates of the convolution stages; window reductions for the
// pooling kinds; zero for Identity and Zero.
std::int64_t op_flops(const OperationInstance& op, const Shape& in_spatial);

// FLOPs of a bare convolution (used for stem/preprocessing/output blocks).
std::int64_t conv_flops(int c_in, int c_out, int groups, int kernel, const Shape& out_spatial);

}  // namespace scnas
