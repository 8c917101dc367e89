#include "sranet/cli_config.hpp"

#include <fstream>
#include <stdexcept>

#include "../common/json_fields.hpp"

namespace sranet::cli {
using Json = nlohmann::json;
using detail::bind_field;
using detail::get_as;

namespace {

const char* kind_name(synth::LesionKind kind) {
  switch (kind) {
    case synth::LesionKind::kBlobs: return "blobs";
    case synth::LesionKind::kCollapse: return "collapse";
    case synth::LesionKind::kBoth: return "both";
  }
  return "blobs";
}

synth::LesionKind kind_from(const std::string& name) {
  if (name == "blobs") return synth::LesionKind::kBlobs;
  if (name == "collapse") return synth::LesionKind::kCollapse;
  if (name == "both") return synth::LesionKind::kBoth;
  throw std::invalid_argument("config key 'lesion_kind': expected blobs, collapse or both, got '" + name + "'");
}

}  // namespace

Json to_json(const synth::PhantomSpec& s) {
  Json j = Json::object();
  j["dims"] = {s.dims.d, s.dims.h, s.dims.w};
  j["center"] = {s.center_z, s.center_y, s.center_x};
  j["radius"] = s.radius;
  j["shell"] = s.shell;
  j["body_radius"] = s.body_radius;
  j["lesion_count_min"] = s.lesion_count_min;
  j["lesion_count_max"] = s.lesion_count_max;
  j["lesion_radius_min"] = s.lesion_radius_min;
  j["lesion_radius_max"] = s.lesion_radius_max;
  j["lesion_kind"] = kind_name(s.lesion_kind);
  j["collapse_depth"] = s.collapse_depth;
  j["collapse_band"] = s.collapse_band;
  j["levels"] = {{"background", s.levels.background},
                 {"soft_tissue", s.levels.soft_tissue},
                 {"lesion", s.levels.lesion},
                 {"trabecular", s.levels.trabecular},
                 {"cortical", s.levels.cortical}};
  j["noise_sigma"] = s.noise_sigma;
  j["seed"] = s.seed;
  return j;
}

Json to_json(const volprep::MaskConfig& m) {
  return {{"block", m.block}, {"offset", m.offset}, {"radius", m.radius}, {"min_fraction", m.min_fraction}};
}

Json to_json(const CliConfig& cfg) {
  return {{"train", trainer::to_json(cfg.train)}, {"phantom", to_json(cfg.phantom)}, {"mask", to_json(cfg.mask)}};
}

synth::PhantomSpec phantom_from_json(const Json& j) {
  synth::PhantomSpec s;
  detail::FieldSetters f;
  f["dims"] = [&](const Json& v, const std::string& k) {
    if (!v.is_array() || v.size() != 3) throw std::invalid_argument("config key 'dims': expected [d, h, w]");
    s.dims = {get_as<std::size_t>(v[0], k), get_as<std::size_t>(v[1], k), get_as<std::size_t>(v[2], k)};
  };
  f["center"] = [&](const Json& v, const std::string& k) {
    if (!v.is_array() || v.size() != 3) throw std::invalid_argument("config key 'center': expected [z, y, x]");
    s.center_z = get_as<double>(v[0], k);
    s.center_y = get_as<double>(v[1], k);
    s.center_x = get_as<double>(v[2], k);
  };
  bind_field(f, "radius", s.radius);
  bind_field(f, "shell", s.shell);
  bind_field(f, "body_radius", s.body_radius);
  bind_field(f, "lesion_count_min", s.lesion_count_min);
  bind_field(f, "lesion_count_max", s.lesion_count_max);
  bind_field(f, "lesion_radius_min", s.lesion_radius_min);
  bind_field(f, "lesion_radius_max", s.lesion_radius_max);
  f["lesion_kind"] = [&](const Json& v, const std::string& k) { s.lesion_kind = kind_from(get_as<std::string>(v, k)); };
  bind_field(f, "collapse_depth", s.collapse_depth);
  bind_field(f, "collapse_band", s.collapse_band);
  f["levels"] = [&](const Json& v, const std::string&) {
    detail::FieldSetters lf;
    bind_field(lf, "background", s.levels.background);
    bind_field(lf, "soft_tissue", s.levels.soft_tissue);
    bind_field(lf, "lesion", s.levels.lesion);
    bind_field(lf, "trabecular", s.levels.trabecular);
    bind_field(lf, "cortical", s.levels.cortical);
    detail::apply_fields(v, lf, "levels");
  };
  bind_field(f, "noise_sigma", s.noise_sigma);
  bind_field(f, "seed", s.seed);
  detail::apply_fields(j, f, "phantom config");
  s.validate();
  return s;
}

volprep::MaskConfig mask_from_json(const Json& j) {
  volprep::MaskConfig m;
  detail::FieldSetters f;
  bind_field(f, "block", m.block);
  bind_field(f, "offset", m.offset);
  bind_field(f, "radius", m.radius);
  bind_field(f, "min_fraction", m.min_fraction);
  detail::apply_fields(j, f, "mask config");
  if (m.block < 3 || m.block % 2 == 0) throw std::invalid_argument("mask config: block must be odd and >= 3");
  if (!(m.min_fraction >= 0.0 && m.min_fraction <= 1.0)) {
    throw std::invalid_argument("mask config: min_fraction must lie in [0, 1]");
  }
  return m;
}

CliConfig config_from_json(const Json& j) {
  CliConfig cfg;
  detail::FieldSetters f;
  f["train"] = [&](const Json& v, const std::string&) {
    cfg.train = trainer::config_from_json(v);
    cfg.train.validate();
  };
  f["phantom"] = [&](const Json& v, const std::string&) { cfg.phantom = phantom_from_json(v); };
  f["mask"] = [&](const Json& v, const std::string&) { cfg.mask = mask_from_json(v); };
  detail::apply_fields(j, f, "config");
  return cfg;
}

CliConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace sranet::cli
