#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sranet/volprep.hpp"
#include "sranet/volume.hpp"

// Synthetic femoral-head phantoms: a trabecular sphere with a cortical shell
// inside a soft-tissue body, with ground-truth bone and lesion maps. Positive
// samples carry dark cystic blobs, a flattened (collapsed) cap with a dark
// subchondral band, or both.
namespace sranet::synth {

struct Intensities {
  double background = 20.0;
  double soft_tissue = 70.0;
  double lesion = 100.0;
  double trabecular = 160.0;
  double cortical = 230.0;
};

enum class LesionKind { kBlobs, kCollapse, kBoth };

struct PhantomSpec {
  Dims dims{64, 64, 64};
  double center_z = 31.5, center_y = 31.5, center_x = 31.5;
  double radius = 19.0;
  double shell = 3.0;
  // Body cylinder along z, centred in-plane; air (background) outside it.
  // 0 means the body fills the field of view.
  double body_radius = 0.0;
  std::size_t lesion_count_min = 1, lesion_count_max = 3;
  double lesion_radius_min = 5.0, lesion_radius_max = 7.0;
  LesionKind lesion_kind = LesionKind::kBlobs;
  // Depth of the removed cap and thickness of the dark band under it.
  double collapse_depth = 5.0;
  double collapse_band = 3.0;
  Intensities levels;
  double noise_sigma = 8.0;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument when the head leaves the volume or the
  /// intensity levels are out of order.
  void validate() const;
};

struct LabeledSample {
  Volume volume;
  MaskVolume bone_truth;
  MaskVolume lesion_truth;
  int label = 0;
};

/// Deterministic in (spec, positive). Throws std::invalid_argument when a
/// lesion cannot be placed inside the head.
LabeledSample gen_phantom(const PhantomSpec& spec, bool positive);

/// Per-sample variation of `base`: centre and radius jitter, lesion kind and
/// size, all drawn from `seed`. The result carries `seed` for the noise.
PhantomSpec randomize_spec(const PhantomSpec& base, std::uint64_t seed);

/// Independent seed for sample `index` of a dataset (splitmix64 mixing).
std::uint64_t child_seed(std::uint64_t master, std::uint64_t index);

struct ManifestEntry {
  std::string id;
  std::filesystem::path volume_path;
  std::filesystem::path mask_path;
  std::filesystem::path lesion_path;
  std::filesystem::path bone_path;
  int label = 0;
  std::string split;  // "train", "val" or "test"

  bool operator==(const ManifestEntry&) const = default;
};

using Manifest = std::vector<ManifestEntry>;

struct DatasetOptions {
  PhantomSpec base;
  volprep::MaskConfig mask;
};

/// Writes <id>.npy, <id>.mask.npy, <id>.lesion.npy and <id>.bone.npy for
/// every sample plus manifest.jsonl into `out_dir`. Paths in the manifest
/// file are relative to it; the returned entries carry the same relative
/// paths. Classes are split 80/10/10 independently.
Manifest gen_dataset(std::size_t n, double pos_ratio, std::uint64_t seed, const std::filesystem::path& out_dir,
                     const DatasetOptions& options = {});

/// Per-class (train, val, test) sizes for a class of `count` samples.
struct SplitSizes {
  std::size_t train, val, test;
};
SplitSizes split_sizes(std::size_t count);

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Relative paths are resolved against the manifest's directory.
Manifest read_manifest(const std::filesystem::path& path);

/// Entries of `manifest` whose split equals `split`, in manifest order.
Manifest select_split(const Manifest& manifest, const std::string& split);

}  // namespace sranet::synth
