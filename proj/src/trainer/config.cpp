#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "../common/json_fields.hpp"
#include "sranet/trainer.hpp"

namespace sranet::trainer {
using Json = nlohmann::json;
using detail::bind_field;
using detail::get_as;

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (epochs == 0) fail("epochs must be positive");
  if (!(base_lr > 0.0)) fail("base_lr must be positive");
  if (lr_decay_every == 0) fail("lr_decay_every must be positive");
  if (!(lr_decay_factor >= 1.0)) fail("lr_decay_factor must be at least 1");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(eps > 0.0)) fail("eps must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must lie strictly between 0 and 1");
  if (batch_size == 0) fail("batch_size must be positive");
  model_config().validate();
}

model::ModelConfig TrainConfig::model_config() const {
  model::ModelConfig m;
  m.input = input;
  m.per_axis = per_axis;
  m.feature_dim = feature_dim;
  m.attention_dim = attention_dim;
  m.conv1_channels = conv1_channels;
  m.conv2_channels = conv2_channels;
  m.indicator_min_fraction = indicator_min_fraction;
  return m;
}

AdamWHyper TrainConfig::hyper(std::size_t epoch) const {
  return AdamWHyper{lr_schedule(epoch, *this), beta1, beta2, eps, weight_decay};
}

Json to_json(const TrainConfig& c) {
  return Json{{"epochs", c.epochs},
              {"base_lr", c.base_lr},
              {"lr_decay_every", c.lr_decay_every},
              {"lr_decay_factor", c.lr_decay_factor},
              {"weight_decay", c.weight_decay},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"eps", c.eps},
              {"alpha", c.alpha},
              {"input", {c.input.d, c.input.h, c.input.w}},
              {"per_axis", c.per_axis},
              {"feature_dim", c.feature_dim},
              {"attention_dim", c.attention_dim},
              {"conv1_channels", c.conv1_channels},
              {"conv2_channels", c.conv2_channels},
              {"indicator_min_fraction", c.indicator_min_fraction},
              {"seed", c.seed},
              {"batch_size", c.batch_size},
              {"structure_regularized", c.structure_regularized},
              {"augment", c.augment}};
}

TrainConfig config_from_json(const Json& j) {
  TrainConfig c;
  detail::FieldSetters f;
  bind_field(f, "epochs", c.epochs);
  bind_field(f, "base_lr", c.base_lr);
  bind_field(f, "lr_decay_every", c.lr_decay_every);
  bind_field(f, "lr_decay_factor", c.lr_decay_factor);
  bind_field(f, "weight_decay", c.weight_decay);
  bind_field(f, "beta1", c.beta1);
  bind_field(f, "beta2", c.beta2);
  bind_field(f, "eps", c.eps);
  bind_field(f, "alpha", c.alpha);
  f["input"] = [&](const Json& v, const std::string& k) {
    if (!v.is_array() || v.size() != 3) throw std::invalid_argument("config key 'input': expected [d, h, w]");
    c.input = {get_as<std::size_t>(v[0], k), get_as<std::size_t>(v[1], k), get_as<std::size_t>(v[2], k)};
  };
  bind_field(f, "per_axis", c.per_axis);
  bind_field(f, "feature_dim", c.feature_dim);
  bind_field(f, "attention_dim", c.attention_dim);
  bind_field(f, "conv1_channels", c.conv1_channels);
  bind_field(f, "conv2_channels", c.conv2_channels);
  bind_field(f, "indicator_min_fraction", c.indicator_min_fraction);
  bind_field(f, "seed", c.seed);
  bind_field(f, "batch_size", c.batch_size);
  bind_field(f, "structure_regularized", c.structure_regularized);
  bind_field(f, "augment", c.augment);
  detail::apply_fields(j, f, "train config");
  return c;
}

std::string config_hash(const TrainConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : to_json(cfg).dump()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.base_lr / std::pow(cfg.lr_decay_factor, double(epoch / cfg.lr_decay_every));
}

}  // namespace sranet::trainer
