// sranet: data generation, masks, training, evaluation and attention export.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sranet/cli_config.hpp"
#include "sranet/export.hpp"
#include "sranet/npy.hpp"
#include "sranet/trainer.hpp"

namespace fs = std::filesystem;
using namespace sranet;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

cli::CliConfig load_or_default(const std::string& path) {
  return path.empty() ? cli::CliConfig{} : cli::load_config(path);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

struct GenerateArgs {
  std::size_t n = 0;
  double pos_ratio = 0.5;
  std::uint64_t seed = 0;
  std::string out, config;
};

int run_generate(const GenerateArgs& a) {
  const cli::CliConfig cfg = load_or_default(a.config);
  synth::DatasetOptions options;
  options.base = cfg.phantom;
  options.mask = cfg.mask;
  const synth::Manifest manifest = synth::gen_dataset(a.n, a.pos_ratio, a.seed, a.out, options);
  std::printf("wrote %zu samples and %s\n", manifest.size(), (fs::path(a.out) / "manifest.jsonl").c_str());
  return 0;
}

struct MaskArgs {
  std::string manifest, config;
  std::optional<std::size_t> block, radius;
  std::optional<double> c;
};

int run_make_masks(const MaskArgs& a) {
  volprep::MaskConfig mask = load_or_default(a.config).mask;
  if (a.block) mask.block = *a.block;
  if (a.c) mask.offset = *a.c;
  if (a.radius) mask.radius = *a.radius;
  if (mask.block < 3 || mask.block % 2 == 0) throw std::invalid_argument("--block must be odd and >= 3");

  const synth::Manifest manifest = synth::read_manifest(a.manifest);
  std::vector<std::string> missing;
  for (const auto& e : manifest) {
    if (!fs::exists(e.volume_path)) {
      missing.push_back(e.volume_path.string());
      continue;
    }
    npy::write_npy(e.mask_path, volprep::make_mask(npy::read_volume(e.volume_path), mask));
  }
  std::printf("wrote %zu masks\n", manifest.size() - missing.size());
  for (const auto& m : missing) std::fprintf(stderr, "missing volume: %s\n", m.c_str());
  return missing.empty() ? 0 : kRuntimeFailure;
}

struct TrainArgs {
  std::string config, manifest, out;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<bool> augment, structure_regularized;
};

int run_train(const TrainArgs& a) {
  trainer::TrainConfig cfg = load_or_default(a.config).train;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.lr) cfg.base_lr = *a.lr;
  if (a.seed) cfg.seed = *a.seed;
  if (a.augment) cfg.augment = *a.augment;
  if (a.structure_regularized) cfg.structure_regularized = *a.structure_regularized;
  cfg.validate();

  const synth::Manifest manifest = synth::read_manifest(a.manifest);
  trainer::TrainOptions options;
  options.out_dir = fs::path(a.out);
  options.on_epoch = [](const trainer::EpochLog& log) {
    std::fprintf(stderr, "epoch %zu lr %.3g loss %.4f (l_c %.4f, l_s %.4f) val acc %.3f\n", log.epoch, log.lr,
                 log.train_loss, log.train_loss_lc, log.train_loss_ls, log.val.accuracy);
  };
  const trainer::TrainResult result = trainer::train(cfg, manifest, options);
  write_json(fs::path(a.out) / "config.json", trainer::to_json(cfg));
  std::printf("best epoch %zu, checkpoints in %s\n", result.best_epoch, a.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string checkpoint, manifest, split = "test", out;
};

int run_eval(const EvalArgs& a) {
  const trainer::Checkpoint ckpt = trainer::load_checkpoint(a.checkpoint);
  const synth::Manifest entries = synth::select_split(synth::read_manifest(a.manifest), a.split);
  if (entries.empty()) throw std::invalid_argument("split '" + a.split + "' has no samples");
  const trainer::EvalResult result = trainer::evaluate(ckpt.params, entries);
  const nlohmann::json report = metrics::to_json(result.report);
  if (!a.out.empty()) write_json(a.out, report);
  std::printf("%s\n", report.dump().c_str());
  return 0;
}

struct VolumeArgs {
  std::string checkpoint, volume, mask, out;
};

model::ForwardResult<float> run_model(const trainer::Checkpoint& ckpt, const Volume& volume,
                                      const MaskVolume& mask) {
  const trainer::Prepared prepared = trainer::prepare(volume, mask, ckpt.config.input);
  Tape<float> tape;
  tape.set_recording(false);
  return model::forward(tape, prepared.volume, prepared.mask, ckpt.params);
}

int run_infer(const VolumeArgs& a) {
  const trainer::Checkpoint ckpt = trainer::load_checkpoint(a.checkpoint);
  const auto result = run_model(ckpt, npy::read_volume(a.volume), npy::read_mask(a.mask));
  const double p = double(result.p.item());
  std::printf("%s\n", nlohmann::json{{"p", p}, {"label_at_0.5", p >= 0.5 ? 1 : 0}}.dump().c_str());
  return 0;
}

int run_export(const VolumeArgs& a) {
  const trainer::Checkpoint ckpt = trainer::load_checkpoint(a.checkpoint);
  const Volume volume = npy::read_volume(a.volume);
  const std::size_t per_axis = ckpt.config.per_axis;
  const Dims& d = volume.dims();
  if (d.d % per_axis || d.h % per_axis || d.w % per_axis) {
    throw std::invalid_argument("volume " + to_string(d) + " is not divisible into " + std::to_string(per_axis) +
                                " patches per axis");
  }
  const MaskVolume mask = npy::read_mask(a.mask);
  const trainer::Prepared prepared = trainer::prepare(volume, mask, ckpt.config.input);
  Tape<float> tape;
  tape.set_recording(false);
  const auto result = model::forward(tape, prepared.volume, prepared.mask, ckpt.params);

  const fs::path out(a.out);
  fs::create_directories(out);
  trainer::write_attention_csv(out / "attention.csv", result.attention);
  exporter::write_pgm(out / "volume.pgm", exporter::volume_montage(prepared.volume, per_axis));
  exporter::write_pgm(out / "attention.pgm",
                      exporter::attention_montage(prepared.volume.dims(), result.attention, per_axis));
  std::printf("%s\n", nlohmann::json{{"p", double(result.p.item())}}.dump().c_str());
  return 0;
}

std::string defaults_footer() {
  return "\nConfig file (--config): JSON with optional sections \"train\", \"phantom\" and \"mask\";\n"
         "unknown keys are rejected and flags override config keys. Defaults:\n" +
         cli::to_json(cli::CliConfig{}).dump(2) +
         "\n\nExit codes: 0 success, 1 runtime failure, 2 usage or validation error.\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SRANet: patch-attention 3D classifier on femoral-head phantoms"};
  app.footer(defaults_footer());
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate-data", "Generate labelled phantoms, masks and a manifest");
  generate->add_option("--n", gen.n, "Number of samples")->required()->check(CLI::PositiveNumber);
  generate->add_option("--pos-ratio", gen.pos_ratio, "Fraction of positives")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  generate->add_option("--seed", gen.seed, "Master seed")->capture_default_str();
  generate->add_option("--out", gen.out, "Output directory")->required();
  generate->add_option("--config", gen.config, "JSON config (phantom and mask sections)")->check(CLI::ExistingFile);

  MaskArgs masks;
  auto* make_masks = app.add_subcommand("make-masks", "Recompute the coarse bone mask of every manifest volume");
  make_masks->add_option("--manifest", masks.manifest, "manifest.jsonl")->required()->check(CLI::ExistingFile);
  make_masks->add_option("--block", masks.block, "Adaptive threshold block (odd voxels)");
  make_masks->add_option("--c", masks.c, "Threshold offset on the 0..255 scale");
  make_masks->add_option("--radius", masks.radius, "Opening radius in voxels");
  make_masks->add_option("--config", masks.config, "JSON config (mask section)")->check(CLI::ExistingFile);

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train on the train split, validate on val");
  train->add_option("--config", tr.config, "JSON config (train section)")->check(CLI::ExistingFile);
  train->add_option("--manifest", tr.manifest, "manifest.jsonl")->required()->check(CLI::ExistingFile);
  train->add_option("--out", tr.out, "Output directory for metrics.jsonl and checkpoints")->required();
  train->add_option("--epochs", tr.epochs, "Override train.epochs");
  train->add_option("--lr", tr.lr, "Override train.base_lr");
  train->add_option("--seed", tr.seed, "Override train.seed");
  train->add_option("--augment", tr.augment, "Override train.augment (true/false)");
  train->add_option("--structure-regularized", tr.structure_regularized,
                    "Override train.structure_regularized (true/false)");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one manifest split");
  eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", ev.manifest, "manifest.jsonl")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", ev.split, "train, val or test")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--out", ev.out, "Also write the report JSON here");

  VolumeArgs inf;
  auto* infer = app.add_subcommand("infer", "Classify one volume; prints {\"p\", \"label_at_0.5\"}");
  infer->add_option("--checkpoint", inf.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  infer->add_option("--volume", inf.volume, "Volume NPY")->required()->check(CLI::ExistingFile);
  infer->add_option("--mask", inf.mask, "Mask NPY")->required()->check(CLI::ExistingFile);

  VolumeArgs exp;
  auto* export_attention =
      app.add_subcommand("export-attention", "Write attention.csv, volume.pgm and attention.pgm");
  export_attention->add_option("--checkpoint", exp.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  export_attention->add_option("--volume", exp.volume, "Volume NPY")->required()->check(CLI::ExistingFile);
  export_attention->add_option("--mask", exp.mask, "Mask NPY")->required()->check(CLI::ExistingFile);
  export_attention->add_option("--out", exp.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*generate) return run_generate(gen);
    if (*make_masks) return run_make_masks(masks);
    if (*train) return run_train(tr);
    if (*eval) return run_eval(ev);
    if (*infer) return run_infer(inf);
    if (*export_attention) return run_export(exp);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeFailure;
  }
  return kUsageError;
}
