#include "scnas/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "scnas/search_io.hpp"

namespace scnas {

namespace {

constexpr char kVolumeMagic[] = "SCNVOL1";

struct Ellipsoid {
  std::vector<Real> center;
  std::vector<Real> radii;

  bool contains(const std::vector<int>& p) const {
    Real rho = 0.0;
    for (std::size_t d = 0; d < center.size(); ++d) {
      const Real t = (static_cast<Real>(p[d]) - center[d]) / radii[d];
      rho += t * t;
    }
    return rho <= 1.0;
  }
};

// Unit-ball volume constant per dimensionality (length, area, volume).
Real ball_constant(std::size_t dims) {
  switch (dims) {
    case 1:
      return 2.0;
    case 2:
      return M_PI;
    default:
      return 4.0 * M_PI / 3.0;
  }
}

// Ellipsoid sized to occupy roughly `target_fraction` of the volume, with
// per-axis jitter. Self-adapts to 2D and 3D.
Ellipsoid random_ellipsoid(const Shape& size, Rng& rng, Real target_fraction) {
  const Real base =
      std::pow(target_fraction / ball_constant(size.size()), 1.0 / static_cast<Real>(size.size()));
  Ellipsoid e;
  for (int n : size) {
    e.center.push_back(rng.uniform(0.3 * n, 0.7 * n));
    e.radii.push_back(base * n * rng.uniform(0.85, 1.2));
  }
  return e;
}

// Paints the label volume for one geometry draw; returns foreground fraction.
Real paint_labels(GeneratorKind kind, const Shape& size, int num_foreground, Rng& rng,
                  LabelMap& label) {
  const std::int64_t voxels = numel(size);
  label.assign(static_cast<std::size_t>(voxels), 0);

  if (kind == GeneratorKind::NestedShells) {
    Ellipsoid outer = random_ellipsoid(size, rng, rng.uniform(0.15, 0.32));
    std::vector<int> p(size.size(), 0);
    std::int64_t flat = 0, fg = 0;
    do {
      Real rho = 0.0;
      for (std::size_t d = 0; d < size.size(); ++d) {
        const Real t = (static_cast<Real>(p[d]) - outer.center[d]) / outer.radii[d];
        rho += t * t;
      }
      rho = std::sqrt(rho);
      if (rho <= 1.0) {
        const int band = std::min(num_foreground - 1, static_cast<int>(rho * num_foreground));
        label[static_cast<std::size_t>(flat)] = static_cast<std::uint8_t>(band + 1);
        ++fg;
      }
      ++flat;
    } while (advance_index(p, size));
    return static_cast<Real>(fg) / static_cast<Real>(voxels);
  }

  // Blobs and multi-class bodies: one ellipsoid per foreground class, sized
  // so the total foreground stays in band; later classes overwrite overlaps.
  const bool bodies = kind == GeneratorKind::MultiClassBodies;
  const Real total_target = bodies ? rng.uniform(0.10, 0.25) : rng.uniform(0.10, 0.30);
  std::vector<Ellipsoid> shapes;
  for (int k = 0; k < num_foreground; ++k)
    shapes.push_back(
        random_ellipsoid(size, rng, total_target / static_cast<Real>(num_foreground)));
  std::vector<int> p(size.size(), 0);
  std::int64_t flat = 0, fg = 0;
  do {
    std::uint8_t cls = 0;
    for (int k = 0; k < num_foreground; ++k)
      if (shapes[static_cast<std::size_t>(k)].contains(p)) cls = static_cast<std::uint8_t>(k + 1);
    if (cls) ++fg;
    label[static_cast<std::size_t>(flat)] = cls;
    ++flat;
  } while (advance_index(p, size));
  return static_cast<Real>(fg) / static_cast<Real>(voxels);
}

SegmentationSample make_sample(const TaskSpec& spec, const std::string& id, Rng& rng) {
  SegmentationSample s;
  s.id = id;

  LabelMap label;
  Real fraction = 0.0;
  int tries = 0;
  do {
    if (++tries > 200)
      throw std::runtime_error("task generation: cannot place foreground within the volume");
    fraction = paint_labels(spec.kind, spec.size, spec.num_foreground, rng, label);
  } while (fraction <= 0.06 || fraction >= 0.45);
  s.label = std::move(label);

  Shape image_shape{spec.channels};
  image_shape.insert(image_shape.end(), spec.size.begin(), spec.size.end());
  s.image = Tensor::zeros(image_shape);
  const std::int64_t voxels = numel(spec.size);
  for (int c = 0; c < spec.channels; ++c) {
    const Real gain = rng.uniform(0.8, 1.2);
    const Real offset = rng.uniform(-0.2, 0.2);
    for (std::int64_t v = 0; v < voxels; ++v) {
      const int cls = s.label[static_cast<std::size_t>(v)];
      const Real base = cls == 0 ? 0.0 : 1.0 + 0.5 * (cls - 1);
      s.image.values()[c * voxels + v] =
          gain * base + offset + spec.noise * rng.gaussian();
    }
  }
  return s;
}

}  // namespace

const char* generator_name(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::Blobs:
      return "blobs";
    case GeneratorKind::NestedShells:
      return "nested-shells";
    case GeneratorKind::MultiClassBodies:
      return "multi-class-bodies";
  }
  return "?";
}

GeneratorKind generator_from_name(const std::string& name) {
  for (GeneratorKind k :
       {GeneratorKind::Blobs, GeneratorKind::NestedShells, GeneratorKind::MultiClassBodies})
    if (name == generator_name(k)) return k;
  throw std::invalid_argument("unknown task generator: " + name);
}

std::string TaskSpec::task_id() const {
  std::ostringstream os;
  os << generator_name(kind) << "-s" << seed;
  return os.str();
}

TaskData generate(const TaskSpec& spec) {
  if (spec.size.empty() || spec.size.size() > 3)
    throw std::invalid_argument("task spec: size must have 1..3 extents");
  for (int n : spec.size)
    if (n < 8)
      throw std::invalid_argument(
          "task spec: extents below 8 cannot hold the foreground geometry");
  if (spec.channels < 1 || spec.num_foreground < 1)
    throw std::invalid_argument("task spec: channels and foreground classes must be positive");
  if (spec.num_foreground > 4)
    throw std::invalid_argument("task spec: more than 4 foreground classes will not fit");

  TaskData task;
  task.id = spec.task_id();
  task.channels = spec.channels;
  task.num_classes = spec.num_classes();
  task.size = spec.size;

  const struct {
    const char* name;
    int count;
    std::vector<SegmentationSample>* out;
  } splits[] = {
      {"train", spec.count_train, &task.train},
      {"val", spec.count_val, &task.val},
      {"test", spec.count_test, &task.test},
  };
  for (std::size_t sp = 0; sp < 3; ++sp) {
    for (int i = 0; i < splits[sp].count; ++i) {
      Rng rng(combine_seed(spec.seed, sp * 1000003ULL + static_cast<std::uint64_t>(i)));
      std::ostringstream id;
      id << task.id << '-' << splits[sp].name << '-' << i;
      splits[sp].out->push_back(make_sample(spec, id.str(), rng));
    }
  }
  return task;
}

SegmentationSample z_normalize(const SegmentationSample& sample) {
  const std::int64_t voxels = numel(sample.spatial());
  if (voxels < 2) throw std::invalid_argument("z_normalize: channel needs more than one voxel");
  SegmentationSample out;
  out.id = sample.id;
  out.label = sample.label;
  out.image = Tensor::zeros(sample.image.shape());
  for (int c = 0; c < sample.channels(); ++c) {
    auto src = sample.image.values().segment(c * voxels, voxels);
    const Real mean = src.mean();
    const Real var = (src - mean).square().sum() / static_cast<Real>(voxels);
    if (var < 1e-12) {
      std::cerr << "warning: constant channel " << c << " in sample " << sample.id
                << " set to zeros\n";
      out.image.values().segment(c * voxels, voxels).setZero();
    } else {
      out.image.values().segment(c * voxels, voxels) = (src - mean) / std::sqrt(var);
    }
  }
  return out;
}

SegmentationSample crop_patch(const SegmentationSample& sample, const Shape& patch, Rng& rng) {
  const Shape size = sample.spatial();
  if (patch.size() != size.size())
    throw std::invalid_argument("crop_patch: patch rank mismatch");
  for (std::size_t d = 0; d < size.size(); ++d)
    if (patch[d] > size[d] || patch[d] < 1)
      throw std::invalid_argument("crop_patch: patch " + shape_string(patch) +
                                  " does not fit in " + shape_string(size));

  // Bounding box of nonzero image values across all channels.
  const std::int64_t voxels = numel(size);
  Shape bb_min = size, bb_max(size.size(), -1);
  std::vector<int> p(size.size(), 0);
  std::int64_t flat = 0;
  do {
    bool nonzero = false;
    for (int c = 0; c < sample.channels() && !nonzero; ++c)
      nonzero = sample.image.values()[c * voxels + flat] != 0.0;
    if (nonzero)
      for (std::size_t d = 0; d < size.size(); ++d) {
        bb_min[d] = std::min(bb_min[d], p[d]);
        bb_max[d] = std::max(bb_max[d], p[d]);
      }
    ++flat;
  } while (advance_index(p, size));

  std::vector<int> start(size.size(), 0);
  if (bb_max[0] < 0) {
    std::cerr << "warning: all-zero image in sample " << sample.id
              << "; falling back to a uniform crop\n";
    for (std::size_t d = 0; d < size.size(); ++d)
      start[d] = static_cast<int>(rng.uniform_int(size[d] - patch[d] + 1));
  } else {
    // Uniform among window starts whose window intersects the bounding box.
    for (std::size_t d = 0; d < size.size(); ++d) {
      const int lo = std::max(0, bb_min[d] - (patch[d] - 1));
      const int hi = std::min(size[d] - patch[d], bb_max[d]);
      start[d] = lo + static_cast<int>(rng.uniform_int(hi - lo + 1));
    }
  }

  SegmentationSample out;
  out.id = sample.id;
  Shape out_shape{sample.channels()};
  out_shape.insert(out_shape.end(), patch.begin(), patch.end());
  out.image = Tensor::zeros(out_shape);
  out.label.assign(static_cast<std::size_t>(numel(patch)), 0);

  const auto src_strides = row_major_strides(size);
  std::vector<int> q(patch.size(), 0);
  std::int64_t dst = 0;
  const std::int64_t patch_voxels = numel(patch);
  do {
    std::int64_t src = 0;
    for (std::size_t d = 0; d < patch.size(); ++d) src += (start[d] + q[d]) * src_strides[d];
    for (int c = 0; c < sample.channels(); ++c)
      out.image.values()[c * patch_voxels + dst] = sample.image.values()[c * voxels + src];
    out.label[static_cast<std::size_t>(dst)] = sample.label[static_cast<std::size_t>(src)];
    ++dst;
  } while (advance_index(q, patch));
  return out;
}

Batch make_batch(const std::vector<SegmentationSample>& samples, const std::vector<int>& indices,
                 const Shape& patch, Rng& rng) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  const int channels = samples.at(0).channels();
  Shape shape{static_cast<int>(indices.size()), channels};
  shape.insert(shape.end(), patch.begin(), patch.end());

  Batch batch;
  batch.image = Tensor::zeros(shape);
  const std::int64_t per_image = static_cast<std::int64_t>(channels) * numel(patch);
  const std::int64_t per_label = numel(patch);
  batch.labels.assign(static_cast<std::size_t>(per_label * indices.size()), 0);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    SegmentationSample crop =
        crop_patch(samples.at(static_cast<std::size_t>(indices[b])), patch, rng);
    batch.image.values().segment(static_cast<std::int64_t>(b) * per_image, per_image) =
        crop.image.values();
    std::copy(crop.label.begin(), crop.label.end(),
              batch.labels.begin() + static_cast<std::ptrdiff_t>(b * per_label));
  }
  return batch;
}

std::vector<int> window_starts(int extent, int patch) {
  if (patch % 2 != 0) throw std::invalid_argument("window_starts: patch extent must be even");
  if (extent < patch)
    throw std::invalid_argument("window_starts: image extent below patch extent");
  std::vector<int> starts;
  const int stride = patch / 2;
  for (int s = 0; s < extent - patch; s += stride) starts.push_back(s);
  starts.push_back(extent - patch);  // clamp the final window to the boundary
  return starts;
}

LabelMap sliding_window_infer(const ForwardFn& forward, const SegmentationSample& sample,
                              const Shape& patch, int num_classes,
                              std::vector<int>* coverage_out) {
  const Shape size = sample.spatial();
  if (patch.size() != size.size())
    throw std::invalid_argument("sliding_window_infer: patch rank mismatch");
  std::vector<std::vector<int>> starts;
  for (std::size_t d = 0; d < size.size(); ++d)
    starts.push_back(window_starts(size[d], patch[d]));

  const std::int64_t voxels = numel(size);
  const std::int64_t patch_voxels = numel(patch);
  std::vector<Real> logit_sum(static_cast<std::size_t>(voxels * num_classes), 0.0);
  std::vector<int> coverage(static_cast<std::size_t>(voxels), 0);

  const auto size_strides = row_major_strides(size);
  Shape counts;
  for (const auto& s : starts) counts.push_back(static_cast<int>(s.size()));
  std::vector<int> widx(starts.size(), 0);
  do {
    std::vector<int> origin(starts.size());
    for (std::size_t d = 0; d < starts.size(); ++d) origin[d] = starts[d][widx[d]];

    // Slice the window into a batch-of-one input.
    Shape in_shape{1, sample.channels()};
    in_shape.insert(in_shape.end(), patch.begin(), patch.end());
    Tensor input = Tensor::zeros(in_shape);
    std::vector<int> q(patch.size(), 0);
    std::int64_t dst = 0;
    do {
      std::int64_t src = 0;
      for (std::size_t d = 0; d < patch.size(); ++d)
        src += (origin[d] + q[d]) * size_strides[d];
      for (int c = 0; c < sample.channels(); ++c)
        input.values()[c * patch_voxels + dst] = sample.image.values()[c * voxels + src];
      ++dst;
    } while (advance_index(q, patch));

    Tensor logits = forward(input);
    if (logits.ndim() != static_cast<int>(patch.size()) + 2 || logits.dim(0) != 1 ||
        logits.dim(1) != num_classes)
      throw std::invalid_argument("sliding_window_infer: network returned shape " +
                                  shape_string(logits.shape()));

    std::fill(q.begin(), q.end(), 0);
    dst = 0;
    do {
      std::int64_t vox = 0;
      for (std::size_t d = 0; d < patch.size(); ++d)
        vox += (origin[d] + q[d]) * size_strides[d];
      for (int k = 0; k < num_classes; ++k)
        logit_sum[static_cast<std::size_t>(vox * num_classes + k)] +=
            logits.values()[k * patch_voxels + dst];
      ++coverage[static_cast<std::size_t>(vox)];
      ++dst;
    } while (advance_index(q, patch));
  } while (advance_index(widx, counts));

  if (coverage_out) *coverage_out = coverage;
  LabelMap out(static_cast<std::size_t>(voxels), 0);
  for (std::int64_t v = 0; v < voxels; ++v) {
    int best = 0;
    Real best_val = logit_sum[static_cast<std::size_t>(v * num_classes)] /
                    static_cast<Real>(coverage[static_cast<std::size_t>(v)]);
    for (int k = 1; k < num_classes; ++k) {
      const Real val = logit_sum[static_cast<std::size_t>(v * num_classes + k)] /
                       static_cast<Real>(coverage[static_cast<std::size_t>(v)]);
      if (val > best_val) {
        best = k;
        best_val = val;
      }
    }
    out[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

void save_volume(const SegmentationSample& sample, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(kVolumeMagic, 7);
  const Shape& shape = sample.image.shape();
  io::write_u64(f, shape.size());
  for (int d : shape) io::write_u64(f, static_cast<std::uint64_t>(d));
  for (std::int64_t i = 0; i < sample.image.size(); ++i)
    io::write_f32(f, static_cast<float>(sample.image.values()[i]));
  f.write(reinterpret_cast<const char*>(sample.label.data()),
          static_cast<std::streamsize>(sample.label.size()));
}

SegmentationSample load_volume(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open volume file " + path);
  io::expect_magic(f, kVolumeMagic, "volume " + path);
  const std::uint64_t ndims = io::read_u64(f);
  if (ndims < 2 || ndims > 4) throw std::runtime_error("volume " + path + ": bad rank");
  Shape shape;
  for (std::uint64_t i = 0; i < ndims; ++i)
    shape.push_back(static_cast<int>(io::read_u64(f)));

  SegmentationSample s;
  s.image = Tensor::zeros(shape);
  for (std::int64_t i = 0; i < s.image.size(); ++i)
    s.image.values()[i] = static_cast<Real>(io::read_f32(f));
  const std::int64_t voxels = numel(s.spatial());
  s.label.resize(static_cast<std::size_t>(voxels));
  io::read_bytes(f, s.label.data(), s.label.size());
  std::filesystem::path p(path);
  s.id = p.stem().string();
  return s;
}

void save_task(const TaskData& task, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(std::filesystem::path(dir) / "manifest.txt", std::ios::binary);
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
  manifest << "scnas-task v1\n";
  manifest << "task " << task.id << " classes " << task.num_classes << " channels "
           << task.channels << " size " << shape_string(task.size) << "\n";
  const struct {
    const char* name;
    const std::vector<SegmentationSample>* samples;
  } splits[] = {{"train", &task.train}, {"val", &task.val}, {"test", &task.test}};
  for (const auto& split : splits)
    for (const auto& s : *split.samples) {
      const std::string file = s.id + ".vol";
      save_volume(s, (std::filesystem::path(dir) / file).string());
      manifest << "sample " << s.id << " split " << split.name << " dims "
               << shape_string(s.image.shape()) << " file " << file << "\n";
    }
}

TaskData load_task(const std::string& dir) {
  std::ifstream manifest(std::filesystem::path(dir) / "manifest.txt", std::ios::binary);
  if (!manifest) throw std::runtime_error("cannot read manifest in " + dir);
  std::string line;
  if (!std::getline(manifest, line) || line != "scnas-task v1")
    throw std::runtime_error("manifest in " + dir + ": bad header");

  TaskData task;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "task") {
      std::string key, sz;
      ls >> task.id >> key >> task.num_classes >> key >> task.channels >> key >> sz;
      task.size.clear();
      std::stringstream dims(sz);
      std::string part;
      while (std::getline(dims, part, 'x')) task.size.push_back(std::stoi(part));
    } else if (tag == "sample") {
      std::string id, kw1, split, kw2, dims, kw3, file;
      ls >> id >> kw1 >> split >> kw2 >> dims >> kw3 >> file;
      SegmentationSample s = load_volume((std::filesystem::path(dir) / file).string());
      s.id = id;
      if (split == "train")
        task.train.push_back(std::move(s));
      else if (split == "val")
        task.val.push_back(std::move(s));
      else if (split == "test")
        task.test.push_back(std::move(s));
      else
        throw std::runtime_error("manifest in " + dir + ": unknown split " + split);
    } else {
      throw std::runtime_error("manifest in " + dir + ": unknown line tag " + tag);
    }
  }
  return task;
}

}  // namespace scnas
