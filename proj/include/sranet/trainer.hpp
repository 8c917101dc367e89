#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sranet/adamw.hpp"
#include "sranet/loss_metrics.hpp"
#include "sranet/model.hpp"
#include "sranet/synth.hpp"

namespace sranet::trainer {

struct TrainConfig {
  std::size_t epochs = 200;
  double base_lr = 1e-4;
  std::size_t lr_decay_every = 50;
  double lr_decay_factor = 10.0;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double alpha = 0.5;
  Dims input{128, 128, 128};
  std::size_t per_axis = 4;
  std::size_t feature_dim = 256;
  std::size_t attention_dim = 128;
  std::size_t conv1_channels = 16;
  std::size_t conv2_channels = 32;
  double indicator_min_fraction = 0.0;
  std::uint64_t seed = 0;
  std::size_t batch_size = 1;
  bool structure_regularized = true;
  bool augment = true;

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
  model::ModelConfig model_config() const;
  AdamWHyper hyper(std::size_t epoch) const;
};

/// Every field, keyed by its name; input is [d, h, w].
nlohmann::json to_json(const TrainConfig& cfg);

/// Missing keys keep their defaults; unknown keys and wrong types throw
/// std::invalid_argument.
TrainConfig config_from_json(const nlohmann::json& j);

/// FNV-1a over the compact JSON form, as 16 hex digits.
std::string config_hash(const TrainConfig& cfg);

/// base_lr / decay_factor^floor(epoch / decay_every).
double lr_schedule(std::size_t epoch, const TrainConfig& cfg);

// Paired augmentation: optional flips of each axis, then `quarter_turns`
// rotations by 90 degrees in the plane orthogonal to `axis` (0 = z, 1 = y,
// 2 = x).
struct AugmentDraw {
  bool flip[3] = {false, false, false};
  int axis = 0;
  int quarter_turns = 0;

  bool identity() const { return !flip[0] && !flip[1] && !flip[2] && quarter_turns % 4 == 0; }
};

AugmentDraw draw_augment(std::uint64_t seed);

template <typename V>
Grid<V> apply_augment(const Grid<V>& grid, const AugmentDraw& draw);

/// Same draw on volume, bone and lesion maps; label unchanged. Odd turns of
/// a volume that is not square in the rotation plane swap those extents.
synth::LabeledSample augment(const synth::LabeledSample& sample, std::uint64_t seed);

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::size_t epoch = 0;
  TrainConfig config;
  model::ModelParams<float> params;
  AdamWState<float> optimizer;
  std::optional<metrics::EvalReport> validation;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "SRANETCK", u32 format version, u64 header length, JSON header, then the
/// NPY-encoded parameter and moment blobs at the offsets listed in the header.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Volume and mask ready for the model: resampled to `input`, the volume
/// normalized.
struct Prepared {
  Volume volume;
  MaskVolume mask;
};
Prepared prepare(const Volume& volume, const MaskVolume& mask, const Dims& input);

struct SampleResult {
  std::string id;
  int label = 0;
  double p = 0.0;
  model::AttentionMap attention;
  // Per-patch lesion indicator from the lesion file, when it exists.
  std::vector<std::uint8_t> lesion;
};

struct EvalResult {
  metrics::EvalReport report;
  std::vector<SampleResult> samples;
};

/// Deterministic pass over `entries` without augmentation.
EvalResult evaluate(const model::ModelParams<float>& params, const synth::Manifest& entries);

/// Mean weight over patches flagged in `lesion` exceeds the mean over the
/// rest. False when either group is empty.
bool lesion_attention_dominates(const model::AttentionMap& attention, const std::vector<std::uint8_t>& lesion);

/// Sum of a_i over patches with f_i = 0.
double non_bone_mass(const model::AttentionMap& attention);

/// Loss of one prepared sample. Without structure regularization the total
/// is l_c alone; l_s is still reported.
loss::LossBreakdown sample_loss(const model::ModelParams<float>& params, const Prepared& sample, int label,
                                const TrainConfig& cfg);

/// patch_index,gz,gy,gx,raw_score_g,weight_a,mask_indicator_f
void write_attention_csv(const std::filesystem::path& path, const model::AttentionMap& attention);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss_lc = 0.0;
  double train_loss_ls = 0.0;
  double train_loss = 0.0;
  metrics::EvalReport val;
};

nlohmann::json to_json(const EpochLog& log);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;
  Checkpoint best;
  Checkpoint last;
};

struct TrainOptions {
  // When set, metrics.jsonl, best.ckpt and last.ckpt are written here.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const EpochLog&)> on_epoch;
  // Stop after this many optimizer steps (smoke runs); 0 = no limit.
  std::size_t max_steps = 0;
  std::function<void(std::size_t step, const loss::LossBreakdown&)> on_step;
};

/// Trains on the "train" split and validates on "val" after every epoch.
/// The checkpoint with the best validation AUC is kept; ties go to the higher
/// accuracy, then to the earlier epoch. Accuracy alone ranks epochs whose
/// AUC is undefined.
TrainResult train(const TrainConfig& cfg, const synth::Manifest& manifest, const TrainOptions& options = {});

}  // namespace sranet::trainer
