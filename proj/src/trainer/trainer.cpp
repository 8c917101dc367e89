#include "sranet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "sranet/npy.hpp"

namespace sranet::trainer {
namespace {

struct TrainSample {
  std::string id;
  Volume volume;
  MaskVolume mask;
  int label = 0;
};

// Ranks validation reports: AUC first, then accuracy.
bool better(const metrics::EvalReport& a, const metrics::EvalReport& b) {
  if (a.auc && b.auc && *a.auc != *b.auc) return *a.auc > *b.auc;
  if (a.auc.has_value() != b.auc.has_value()) return a.auc.has_value();
  return a.accuracy > b.accuracy;
}

loss::LossBreakdown step_loss(Tape<float>& tape, const model::ForwardResult<float>& fr, int label,
                              const TrainConfig& cfg, Tensor<float>& total) {
  loss::LossBreakdown lb;
  lb.alpha = cfg.alpha;
  auto lc = loss::cross_entropy(tape, fr.p, label);
  lb.l_c = double(lc.item());
  if (cfg.structure_regularized) {
    auto ls = loss::structure_loss(tape, fr.scores, fr.indicators);
    lb.l_s = double(ls.item());
    total = loss::total_loss(tape, lc, ls, cfg.alpha);
  } else {
    // reported only (rounded like the tensor path); the objective is l_c
    std::vector<double> g(fr.scores.data().begin(), fr.scores.data().end());
    lb.l_s = double(float(loss::structure_loss(g, fr.indicators)));
    total = lc;
  }
  lb.total = double(total.item());
  return lb;
}

}  // namespace

Prepared prepare(const Volume& volume, const MaskVolume& mask, const Dims& input) {
  if (volume.dims() != mask.dims()) {
    throw std::invalid_argument("volume " + to_string(volume.dims()) + " and mask " + to_string(mask.dims()) +
                                " differ in size");
  }
  if (volume.dims() == input) return {volprep::normalize_volume(volume), mask};
  return {volprep::normalize_volume(volprep::resize_pad(volume, input)), volprep::resize_pad(mask, input)};
}

loss::LossBreakdown sample_loss(const model::ModelParams<float>& params, const Prepared& sample, int label,
                                const TrainConfig& cfg) {
  Tape<float> tape;
  tape.set_recording(false);
  const auto fr = model::forward(tape, sample.volume, sample.mask, params);
  Tensor<float> total;
  return step_loss(tape, fr, label, cfg, total);
}

EvalResult evaluate(const model::ModelParams<float>& params, const synth::Manifest& entries) {
  if (entries.empty()) throw std::invalid_argument("evaluate: no samples to evaluate");
  const auto& mc = params.config;
  EvalResult result;
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& e : entries) {
    const Prepared prep = prepare(npy::read_volume(e.volume_path), npy::read_mask(e.mask_path), mc.input);
    Tape<float> tape;
    tape.set_recording(false);
    auto fr = model::forward(tape, prep.volume, prep.mask, params);
    SampleResult s{e.id, e.label, fr.probability(), std::move(fr.attention), {}};
    if (!e.lesion_path.empty() && std::filesystem::exists(e.lesion_path)) {
      auto lesion = npy::read_mask(e.lesion_path);
      if (lesion.dims() != mc.input) lesion = volprep::resize_pad(lesion, mc.input);
      s.lesion = volprep::structure_vector(lesion, mc.per_axis, 0.0);
    }
    scores.push_back(s.p);
    labels.push_back(s.label);
    result.samples.push_back(std::move(s));
  }
  result.report = metrics::evaluate_scores(scores, labels);
  return result;
}

bool lesion_attention_dominates(const model::AttentionMap& attention, const std::vector<std::uint8_t>& lesion) {
  if (lesion.size() != attention.size()) throw std::invalid_argument("lesion indicator length does not match the map");
  double in = 0.0, out = 0.0;
  std::size_t n_in = 0, n_out = 0;
  for (std::size_t i = 0; i < lesion.size(); ++i) {
    if (lesion[i]) {
      in += attention.a[i];
      ++n_in;
    } else {
      out += attention.a[i];
      ++n_out;
    }
  }
  if (n_in == 0 || n_out == 0) return false;
  return in / double(n_in) > out / double(n_out);
}

double non_bone_mass(const model::AttentionMap& attention) {
  double mass = 0.0;
  for (std::size_t i = 0; i < attention.size(); ++i)
    if (!attention.f[i]) mass += attention.a[i];
  return mass;
}

void write_attention_csv(const std::filesystem::path& path, const model::AttentionMap& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "patch_index,gz,gy,gx,raw_score_g,weight_a,mask_indicator_f\n";
  char buf[160];
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& c = m.coords[i];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%zu,%.9g,%.9g,%d\n", i, c.gz, c.gy, c.gx, m.g[i], m.a[i], int(m.f[i]));
    out << buf;
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

nlohmann::json to_json(const EpochLog& log) {
  return {{"epoch", log.epoch},
          {"lr", log.lr},
          {"train_loss_lc", log.train_loss_lc},
          {"train_loss_ls", log.train_loss_ls},
          {"train_loss", log.train_loss},
          {"val", metrics::to_json(log.val)}};
}

TrainResult train(const TrainConfig& cfg, const synth::Manifest& manifest, const TrainOptions& options) {
  cfg.validate();
  const auto train_entries = synth::select_split(manifest, "train");
  const auto val_entries = synth::select_split(manifest, "val");
  if (train_entries.empty() || val_entries.empty()) {
    throw std::invalid_argument("train: manifest needs non-empty train and val splits");
  }
  const model::ModelConfig mc = cfg.model_config();

  std::vector<TrainSample> samples;
  samples.reserve(train_entries.size());
  for (const auto& e : train_entries) {
    samples.push_back({e.id, npy::read_volume(e.volume_path), npy::read_mask(e.mask_path), e.label});
    if (samples.back().volume.dims() != samples.back().mask.dims()) {
      throw std::invalid_argument("train: volume and mask of " + e.id + " differ in size");
    }
  }

  std::ofstream log_file;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    log_file.open(*options.out_dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
    if (!log_file) throw std::runtime_error("cannot write " + (*options.out_dir / "metrics.jsonl").string());
  }

  auto params = model::ModelParams<float>::init(mc, cfg.seed);
  auto named = params.named();
  AdamWState<float> opt;
  std::vector<std::vector<float>> accum;
  std::size_t in_batch = 0;

  TrainResult result;
  std::mt19937_64 order_rng(synth::child_seed(cfg.seed, 0x5EED));
  const std::uint64_t augment_base = synth::child_seed(cfg.seed, 0xA06);
  std::size_t steps = 0;
  bool stop = false;
  std::optional<metrics::EvalReport> best_val;

  for (std::size_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    const AdamWHyper hyper = cfg.hyper(epoch);
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), order_rng);

    double sum_lc = 0.0, sum_ls = 0.0, sum_total = 0.0;
    std::size_t seen = 0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      const TrainSample& s = samples[order[pos]];
      Volume vol = s.volume;
      MaskVolume mask = s.mask;
      if (cfg.augment) {
        const auto draw = draw_augment(synth::child_seed(augment_base, epoch * samples.size() + pos));
        if (!draw.identity()) {
          vol = apply_augment(vol, draw);
          mask = apply_augment(mask, draw);
        }
      }
      const Prepared prep = prepare(vol, mask, mc.input);

      Tape<float> tape;
      const auto fr = model::forward(tape, prep.volume, prep.mask, params);
      Tensor<float> total;
      const auto lb = step_loss(tape, fr, s.label, cfg, total);
      if (!std::isfinite(lb.total)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", sample " + s.id);
      }
      tape.backward(total);

      try {
        if (cfg.batch_size == 1) {
          adamw_step<float>(named, opt, hyper);
          params.zero_grad();
        } else {
          if (accum.empty())
            for (const auto& p : named) accum.emplace_back(p.tensor.size(), 0.0f);
          for (std::size_t i = 0; i < named.size(); ++i) {
            const auto g = named[i].tensor.grad();
            for (std::size_t j = 0; j < g.size(); ++j) accum[i][j] += g[j];
          }
          params.zero_grad();
          if (++in_batch == cfg.batch_size || pos + 1 == order.size()) {
            for (std::size_t i = 0; i < named.size(); ++i) {
              auto g = named[i].tensor.grad_buffer();
              for (std::size_t j = 0; j < g.size(); ++j) g[j] = accum[i][j] / float(in_batch);
              std::fill(accum[i].begin(), accum[i].end(), 0.0f);
            }
            adamw_step<float>(named, opt, hyper);
            params.zero_grad();
            in_batch = 0;
          }
        }
      } catch (const NonFiniteGradient& e) {
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", sample " + s.id);
      }

      sum_lc += lb.l_c;
      sum_ls += lb.l_s;
      sum_total += lb.total;
      ++seen;
      ++steps;
      if (options.on_step) options.on_step(steps, lb);
      if (options.max_steps && steps >= options.max_steps) {
        stop = true;
        break;
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = hyper.lr;
    log.train_loss_lc = sum_lc / double(seen);
    log.train_loss_ls = sum_ls / double(seen);
    log.train_loss = sum_total / double(seen);
    log.val = evaluate(params, val_entries).report;

    Checkpoint ckpt{epoch, cfg, params.cast<float>(), opt, log.val};
    if (!best_val || better(log.val, *best_val)) {
      best_val = log.val;
      result.best_epoch = epoch;
      result.best = ckpt;
      if (options.out_dir) save_checkpoint(*options.out_dir / "best.ckpt", ckpt);
    }
    result.last = std::move(ckpt);
    if (options.out_dir) {
      save_checkpoint(*options.out_dir / "last.ckpt", result.last);
      log_file << to_json(log).dump() << '\n' << std::flush;
    }
    if (options.on_epoch) options.on_epoch(log);
    result.history.push_back(std::move(log));
  }
  return result;
}

}  // namespace sranet::trainer
