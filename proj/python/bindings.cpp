// Python bindings: numpy arrays in and out, configs as JSON text (the
// package wrapper converts dicts).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <string>
#include <vector>

#include "sranet/cli_config.hpp"
#include "sranet/loss_metrics.hpp"
#include "sranet/model.hpp"
#include "sranet/synth.hpp"
#include "sranet/trainer.hpp"
#include "sranet/volprep.hpp"

namespace py = pybind11;
using namespace sranet;
using Json = nlohmann::json;

namespace {

template <typename V>
Grid<V> to_grid(const py::array_t<V, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3) throw std::invalid_argument("expected a 3-D array, got " + std::to_string(a.ndim()) + "-D");
  const Dims dims{std::size_t(a.shape(0)), std::size_t(a.shape(1)), std::size_t(a.shape(2))};
  return Grid<V>(dims, std::vector<V>(a.data(), a.data() + a.size()));
}

template <typename V>
py::array_t<V> to_array(const Grid<V>& g) {
  const Dims& d = g.dims();
  py::array_t<V> out({d.d, d.h, d.w});
  std::copy(g.voxels().begin(), g.voxels().end(), out.mutable_data());
  return out;
}

cli::CliConfig parse_config(const std::string& text) { return cli::config_from_json(Json::parse(text)); }

py::dict attention_dict(const model::AttentionMap& m) {
  std::vector<std::array<std::size_t, 3>> coords;
  for (const auto& c : m.coords) coords.push_back({c.gz, c.gy, c.gx});
  py::dict d;
  d["g"] = m.g;
  d["a"] = m.a;
  d["f"] = std::vector<int>(m.f.begin(), m.f.end());
  d["coords"] = coords;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "SRANet core: phantoms, masks, training and inference";

  py::register_exception<trainer::CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<trainer::TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  m.def("default_config", [] { return cli::to_json(cli::CliConfig{}).dump(); });

  m.def("normalize_volume", [](const py::array_t<float, py::array::c_style | py::array::forcecast>& v) {
    return to_array(volprep::normalize_volume(to_grid<float>(v)));
  });

  m.def(
      "make_mask",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& v, const std::string& config) {
        return to_array(volprep::make_mask(to_grid<float>(v), parse_config(config).mask));
      },
      py::arg("volume"), py::arg("config") = "{}");

  m.def(
      "gen_phantom",
      [](bool positive, std::uint64_t seed, const std::string& config, bool randomize) {
        synth::PhantomSpec spec = parse_config(config).phantom;
        spec = randomize ? synth::randomize_spec(spec, seed) : spec;
        if (!randomize) spec.seed = seed;
        const synth::LabeledSample s = synth::gen_phantom(spec, positive);
        py::dict d;
        d["volume"] = to_array(s.volume);
        d["bone"] = to_array(s.bone_truth);
        d["lesion"] = to_array(s.lesion_truth);
        d["label"] = s.label;
        return d;
      },
      py::arg("positive"), py::arg("seed"), py::arg("config") = "{}", py::arg("randomize") = true);

  m.def(
      "gen_dataset",
      [](std::size_t n, double pos_ratio, std::uint64_t seed, const std::string& out_dir, const std::string& config) {
        const cli::CliConfig cfg = parse_config(config);
        synth::DatasetOptions options{cfg.phantom, cfg.mask};
        return synth::gen_dataset(n, pos_ratio, seed, out_dir, options).size();
      },
      py::arg("n"), py::arg("pos_ratio"), py::arg("seed"), py::arg("out_dir"), py::arg("config") = "{}");

  m.def("normalize_scores", [](const std::vector<double>& scores) {
    Tape<double> tape;
    tape.set_recording(false);
    const auto a = model::normalize_scores(tape, Tensor<double>(Shape{scores.size()}, scores));
    return a.values();
  });

  m.def(
      "evaluate_scores",
      [](const std::vector<double>& scores, const std::vector<int>& labels, double threshold) {
        return metrics::to_json(metrics::evaluate_scores(scores, labels, threshold)).dump();
      },
      py::arg("scores"), py::arg("labels"), py::arg("threshold") = 0.5);

  m.def(
      "train",
      [](const std::string& config, const std::string& manifest, const std::string& out_dir) {
        const trainer::TrainConfig cfg = parse_config(config).train;
        cfg.validate();
        trainer::TrainOptions options;
        options.out_dir = out_dir;
        trainer::TrainResult result;
        {
          py::gil_scoped_release release;
          result = trainer::train(cfg, synth::read_manifest(manifest), options);
        }
        std::vector<std::string> history;
        for (const auto& log : result.history) history.push_back(trainer::to_json(log).dump());
        return history;
      },
      py::arg("config"), py::arg("manifest"), py::arg("out_dir"));

  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& manifest, const std::string& split) {
        const trainer::Checkpoint ckpt = trainer::load_checkpoint(checkpoint);
        const auto entries = synth::select_split(synth::read_manifest(manifest), split);
        return metrics::to_json(trainer::evaluate(ckpt.params, entries).report).dump();
      },
      py::arg("checkpoint"), py::arg("manifest"), py::arg("split") = "test");

  m.def(
      "infer",
      [](const std::string& checkpoint, const py::array_t<float, py::array::c_style | py::array::forcecast>& volume,
         const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& mask) {
        const trainer::Checkpoint ckpt = trainer::load_checkpoint(checkpoint);
        const auto prepared = trainer::prepare(to_grid<float>(volume), to_grid<std::uint8_t>(mask), ckpt.config.input);
        Tape<float> tape;
        tape.set_recording(false);
        const auto r = model::forward(tape, prepared.volume, prepared.mask, ckpt.params);
        py::dict d;
        d["p"] = double(r.p.item());
        d["attention"] = attention_dict(r.attention);
        return d;
      },
      py::arg("checkpoint"), py::arg("volume"), py::arg("mask"));
}
