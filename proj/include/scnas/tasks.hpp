#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scnas/losses.hpp"
#include "scnas/rng.hpp"
#include "scnas/types.hpp"

namespace scnas {

// One volume: image channels x spatial, labels over the spatial grid.
struct SegmentationSample {
  std::string id;
  Tensor image;    // shape: channels x spatial dims
  LabelMap label;  // flat row-major over spatial dims

  Shape spatial() const { return Shape(image.shape().begin() + 1, image.shape().end()); }
  int channels() const { return image.dim(0); }
};

enum class GeneratorKind : int { Blobs = 0, NestedShells, MultiClassBodies };

const char* generator_name(GeneratorKind k);
GeneratorKind generator_from_name(const std::string& name);

// Desk-scale synthetic volumetric segmentation task.
struct TaskSpec {
  GeneratorKind kind = GeneratorKind::Blobs;
  Shape size{16, 16};  // spatial extents
  int channels = 1;
  int num_foreground = 1;
  Real noise = 0.1;
  int count_train = 16;
  int count_val = 4;
  int count_test = 4;
  std::uint64_t seed = 0;

  int num_classes() const { return num_foreground + 1; }
  std::string task_id() const;
};

struct TaskData {
  std::string id;
  int channels = 1;
  int num_classes = 2;
  Shape size;
  std::vector<SegmentationSample> train, val, test;
};

// Deterministic generation: a given (spec.seed, split, index) always produces
// the same sample. Geometry is redrawn until the foreground fraction lands in
// a sane band, so degenerate draws cannot leak into a task.
TaskData generate(const TaskSpec& spec);

// Per-channel z-normalization to mean 0, variance 1. Constant channels are
// zeroed with a warning instead of dividing by (near-)zero.
SegmentationSample z_normalize(const SegmentationSample& sample);

// Uniform crop among windows intersecting the bounding box of nonzero image
// values; image and label are cropped with the same offsets.
SegmentationSample crop_patch(const SegmentationSample& sample, const Shape& patch, Rng& rng);

// Stacks crops of the chosen samples into one training batch.
struct Batch {
  Tensor image;  // batch x channels x patch
  LabelMap labels;
};
Batch make_batch(const std::vector<SegmentationSample>& samples,
                 const std::vector<int>& indices, const Shape& patch, Rng& rng);

// Window starts covering [0, extent) with 50% overlap; the final window is
// clamped to the boundary.
std::vector<int> window_starts(int extent, int patch);

// Patch-based inference: logits averaged over covering windows in double
// precision, then voxelwise argmax (lowest class index wins ties). When given,
// coverage_out receives the per-voxel window count.
using ForwardFn = std::function<Tensor(const Tensor&)>;
LabelMap sliding_window_infer(const ForwardFn& forward, const SegmentationSample& sample,
                              const Shape& patch, int num_classes,
                              std::vector<int>* coverage_out = nullptr);

// Flat binary volume format (magic SCNVOL1, 64-bit LE dims, f32 image, u8
// labels); bit-exact round trip.
void save_volume(const SegmentationSample& sample, const std::string& path);
SegmentationSample load_volume(const std::string& path);

// Manifest + one volume file per sample.
void save_task(const TaskData& task, const std::string& dir);
TaskData load_task(const std::string& dir);

}  // namespace scnas
