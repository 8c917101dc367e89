#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "sranet/npy.hpp"
#include "sranet/trainer.hpp"

namespace sranet::trainer {
namespace {

constexpr char kMagic[8] = {'S', 'R', 'A', 'N', 'E', 'T', 'C', 'K'};

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const std::string& in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t(static_cast<unsigned char>(in[at + std::size_t(i)])) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string blobs;
  nlohmann::json index = nlohmann::json::array();
  auto add = [&](const std::string& name, std::span<const float> values, const Shape& shape) {
    const std::string bytes = npy::encode(npy::from_values(values, shape));
    index.push_back({{"name", name}, {"offset", blobs.size()}, {"length", bytes.size()}});
    blobs += bytes;
  };
  const auto named = ckpt.params.named();
  for (const auto& p : named) add("param:" + p.name, p.tensor.data(), p.tensor.shape());
  const auto& opt = ckpt.optimizer;
  if (!opt.first_moment.empty()) {
    if (opt.first_moment.size() != named.size() || opt.second_moment.size() != named.size()) {
      throw CheckpointError("optimizer state does not match the parameter list");
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
      add("adam.m:" + named[i].name, opt.first_moment[i], named[i].tensor.shape());
      add("adam.v:" + named[i].name, opt.second_moment[i], named[i].tensor.shape());
    }
  }

  nlohmann::json header{{"format_version", Checkpoint::kFormatVersion},
                        {"epoch", ckpt.epoch},
                        {"config", to_json(ckpt.config)},
                        {"config_hash", config_hash(ckpt.config)},
                        {"validation", ckpt.validation ? metrics::to_json(*ckpt.validation) : nlohmann::json(nullptr)},
                        {"optimizer_step", opt.step},
                        {"blobs", index}};
  const std::string text = header.dump();
  std::string out(kMagic, sizeof kMagic);
  put_le(out, Checkpoint::kFormatVersion, 4);
  put_le(out, text.size(), 8);
  out += text;
  out += blobs;

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot write checkpoint " + path.string());
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(where + "not a checkpoint (bad magic)");
  }
  const auto version = get_le(bytes, 8, 4);
  if (version != Checkpoint::kFormatVersion) {
    throw CheckpointError(where + "unsupported checkpoint format version " + std::to_string(version));
  }
  const auto header_len = get_le(bytes, 12, 8);
  if (header_len > bytes.size() - 20) throw CheckpointError(where + "truncated header");
  const std::size_t blob_base = 20 + std::size_t(header_len);

  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(20, std::size_t(header_len)));
    ckpt.config = config_from_json(header.at("config"));
    if (header.at("config_hash").get<std::string>() != config_hash(ckpt.config)) {
      throw CheckpointError("config hash does not match the embedded config");
    }
    ckpt.config.validate();
    ckpt.epoch = header.at("epoch").get<std::size_t>();
    if (!header.at("validation").is_null()) ckpt.validation = metrics::report_from_json(header.at("validation"));
    ckpt.optimizer.step = header.at("optimizer_step").get<std::int64_t>();

    std::map<std::string, npy::Array> blobs;
    for (const auto& b : header.at("blobs")) {
      const auto offset = b.at("offset").get<std::size_t>(), length = b.at("length").get<std::size_t>();
      if (offset > bytes.size() - blob_base || length > bytes.size() - blob_base - offset) {
        throw CheckpointError("blob '" + b.at("name").get<std::string>() + "' runs past the end of the file");
      }
      blobs[b.at("name").get<std::string>()] = npy::decode(std::string_view(bytes).substr(blob_base + offset, length));
    }
    auto take = [&](const std::string& name, const Shape& shape) {
      const auto it = blobs.find(name);
      if (it == blobs.end()) throw CheckpointError("missing blob '" + name + "'");
      if (it->second.shape != shape) {
        throw CheckpointError("blob '" + name + "' has shape " + to_string(it->second.shape) + ", expected " +
                              to_string(shape));
      }
      return npy::to_values<float>(it->second);
    };

    ckpt.params = model::ModelParams<float>::init(ckpt.config.model_config(), 0);
    auto named = ckpt.params.named();
    const bool has_moments = blobs.count("adam.m:" + named.front().name) > 0;
    for (auto& p : named) {
      const auto values = take("param:" + p.name, p.tensor.shape());
      std::copy(values.begin(), values.end(), p.tensor.data().begin());
      if (has_moments) {
        ckpt.optimizer.first_moment.push_back(take("adam.m:" + p.name, p.tensor.shape()));
        ckpt.optimizer.second_moment.push_back(take("adam.v:" + p.name, p.tensor.shape()));
      }
    }
  } catch (const CheckpointError& e) {
    throw CheckpointError(where + e.what());
  } catch (const std::exception& e) {
    throw CheckpointError(where + "malformed checkpoint: " + e.what());
  }
  return ckpt;
}

}  // namespace sranet::trainer
