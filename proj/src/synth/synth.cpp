#include "sranet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "json.hpp"
#include "sranet/npy.hpp"

namespace sranet::synth {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

struct Point {
  double z, y, x;
};

double dist(const Point& a, double z, double y, double x) {
  return std::sqrt((z - a.z) * (z - a.z) + (y - a.y) * (y - a.y) + (x - a.x) * (x - a.x));
}

// Voxel classes before intensities are assigned.
enum Tissue : std::uint8_t { kAir, kSoft, kTrabecular, kCortical, kLesion };

std::string split_name(std::size_t pos, const SplitSizes& s) {
  if (pos < s.train) return "train";
  if (pos < s.train + s.val) return "val";
  return "test";
}

}  // namespace

void PhantomSpec::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("phantom spec: " + what); };
  if (dims.count() == 0) fail("dims must be positive");
  if (!(radius > 0.0)) fail("radius must be positive");
  if (!(shell > 0.0 && shell < radius)) fail("shell thickness must lie in (0, radius)");
  const double c[3] = {center_z, center_y, center_x};
  const std::size_t n[3] = {dims.d, dims.h, dims.w};
  for (int a = 0; a < 3; ++a) {
    if (c[a] - radius < 0.0 || c[a] + radius > double(n[a] - 1)) fail("head sphere does not fit inside " + to_string(dims));
  }
  if (body_radius < 0.0) fail("body radius must be non-negative");
  if (lesion_count_min == 0 || lesion_count_min > lesion_count_max) fail("lesion count range is empty");
  if (!(lesion_radius_min > 0.0 && lesion_radius_min <= lesion_radius_max)) fail("lesion radius range is empty");
  if (!(collapse_depth > 0.0 && collapse_depth < radius)) fail("collapse depth must lie in (0, radius)");
  if (!(collapse_band > 0.0)) fail("collapse band must be positive");
  if (!(noise_sigma >= 0.0)) fail("noise sigma must be non-negative");
  const Intensities& l = levels;
  if (!(l.background < l.soft_tissue && l.soft_tissue < l.lesion && l.lesion < l.trabecular &&
        l.trabecular < l.cortical)) {
    fail("intensities must satisfy background < soft tissue < lesion < trabecular < cortical");
  }
}

LabeledSample gen_phantom(const PhantomSpec& spec, bool positive) {
  spec.validate();
  const Dims dims = spec.dims;
  const Point head{spec.center_z, spec.center_y, spec.center_x};
  const double inner = spec.radius - spec.shell;
  std::mt19937_64 rng(spec.seed);

  const bool blobs = positive && spec.lesion_kind != LesionKind::kCollapse;
  const bool collapse = positive && spec.lesion_kind != LesionKind::kBlobs;
  // the cap above this z plane is gone; the new surface is cortical
  const double plane = collapse ? head.z - spec.radius + spec.collapse_depth : -1e300;

  std::vector<Point> blob_centers;
  std::vector<double> blob_radii;
  if (blobs) {
    const auto count = std::uniform_int_distribution<std::size_t>(spec.lesion_count_min, spec.lesion_count_max)(rng);
    for (std::size_t i = 0; i < count; ++i) {
      const double r = uniform(rng, spec.lesion_radius_min, spec.lesion_radius_max);
      // centre far enough inside that the blob stays in trabecular bone,
      // and below the collapsed surface
      const double reach = inner - r - 1.0;
      const double floor_z = collapse ? plane + spec.shell + r + 1.0 : -1e300;
      if (reach <= 0.0 || floor_z > head.z + reach) {
        throw std::invalid_argument("lesion of radius " + std::to_string(r) + " cannot be placed inside a head of radius " +
                                    std::to_string(spec.radius));
      }
      Point c{};
      for (;;) {
        c = {head.z + uniform(rng, -reach, reach), head.y + uniform(rng, -reach, reach),
             head.x + uniform(rng, -reach, reach)};
        if (dist(head, c.z, c.y, c.x) <= reach && c.z >= floor_z) break;
      }
      blob_centers.push_back(c);
      blob_radii.push_back(r);
    }
  }

  Grid<std::uint8_t> tissue(dims, std::uint8_t(kSoft));
  const double cy = 0.5 * double(dims.h - 1), cx = 0.5 * double(dims.w - 1);
  for (std::size_t z = 0; z < dims.d; ++z)
    for (std::size_t y = 0; y < dims.h; ++y)
      for (std::size_t x = 0; x < dims.w; ++x) {
        const double fz = double(z), fy = double(y), fx = double(x);
        auto& t = tissue.at(z, y, x);
        if (spec.body_radius > 0.0 && std::hypot(fy - cy, fx - cx) > spec.body_radius) t = kAir;
        const double d = dist(head, fz, fy, fx);
        if (d > spec.radius || fz < plane) continue;
        t = (d > inner || fz < plane + spec.shell) ? kCortical : kTrabecular;
        if (t != kTrabecular) continue;
        if (collapse && fz < plane + spec.shell + spec.collapse_band) t = kLesion;
        for (std::size_t b = 0; b < blob_centers.size(); ++b) {
          if (dist(blob_centers[b], fz, fy, fx) <= blob_radii[b]) t = kLesion;
        }
      }

  LabeledSample s;
  s.volume = Volume(dims);
  s.bone_truth = MaskVolume(dims);
  s.lesion_truth = MaskVolume(dims);
  const Intensities& l = spec.levels;
  const double level[] = {l.background, l.soft_tissue, l.trabecular, l.cortical, l.lesion};
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  bool any_lesion = false;
  for (std::size_t i = 0; i < tissue.size(); ++i) {
    const auto t = tissue.voxels()[i];
    double v = level[t];
    if (spec.noise_sigma > 0.0) v += noise(rng);
    s.volume.voxels()[i] = float(v);
    if (t >= kTrabecular) s.bone_truth.voxels()[i] = kMaskOn;
    if (t == kLesion) {
      s.lesion_truth.voxels()[i] = kMaskOn;
      any_lesion = true;
    }
  }
  if (positive && !any_lesion) throw std::invalid_argument("lesion cannot be placed inside head: empty lesion");
  s.label = any_lesion ? 1 : 0;
  return s;
}

PhantomSpec randomize_spec(const PhantomSpec& base, std::uint64_t seed) {
  PhantomSpec spec = base;
  std::mt19937_64 rng(seed);
  spec.radius = base.radius + uniform(rng, -2.0, 2.0);
  const double c[3] = {base.center_z, base.center_y, base.center_x};
  const std::size_t n[3] = {base.dims.d, base.dims.h, base.dims.w};
  double out[3];
  for (int a = 0; a < 3; ++a) {
    // jitter, then pull back inside so the head still fits
    const double lo = spec.radius, hi = double(n[a] - 1) - spec.radius;
    out[a] = std::clamp(c[a] + uniform(rng, -3.0, 3.0), lo, std::max(lo, hi));
  }
  spec.center_z = out[0];
  spec.center_y = out[1];
  spec.center_x = out[2];
  const double k = uniform(rng, 0.0, 1.0);
  spec.lesion_kind = k < 0.5 ? LesionKind::kBlobs : (k < 0.75 ? LesionKind::kCollapse : LesionKind::kBoth);
  spec.collapse_depth = spec.radius * uniform(rng, 0.2, 0.35);
  spec.seed = rng();
  return spec;
}

std::uint64_t child_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ (index * 0xD1B54A32D192ED03ull));
}

SplitSizes split_sizes(std::size_t count) {
  const auto tenth = std::size_t(std::llround(double(count) * 0.1));
  const std::size_t val = std::min(tenth, count), test = std::min(tenth, count - val);
  return {count - val - test, val, test};
}

Manifest gen_dataset(std::size_t n, double pos_ratio, std::uint64_t seed, const std::filesystem::path& out_dir,
                     const DatasetOptions& options) {
  if (n < 10) throw std::invalid_argument("gen_dataset: need at least 10 samples, got " + std::to_string(n));
  if (!(pos_ratio > 0.0 && pos_ratio < 1.0)) {
    throw std::invalid_argument("gen_dataset: pos_ratio must lie strictly between 0 and 1");
  }
  options.base.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw std::runtime_error("gen_dataset: cannot create output directory " + out_dir.string());
  }

  const std::size_t positives = std::clamp<std::size_t>(std::size_t(std::llround(double(n) * pos_ratio)), 1, n - 1);
  std::vector<int> labels(n, 0);
  std::fill(labels.begin(), labels.begin() + std::ptrdiff_t(positives), 1);
  std::mt19937_64 rng(seed);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<std::string> splits(n);
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i)
      if (labels[i] == cls) members.push_back(i);
    std::shuffle(members.begin(), members.end(), rng);
    const SplitSizes sizes = split_sizes(members.size());
    for (std::size_t k = 0; k < members.size(); ++k) splits[members[k]] = split_name(k, sizes);
  }

  const std::size_t width = std::max<std::size_t>(4, std::to_string(n - 1).size());
  Manifest manifest;
  manifest.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string digits = std::to_string(i);
    const std::string id = "sample_" + std::string(width - digits.size(), '0') + digits;
    const LabeledSample sample = gen_phantom(randomize_spec(options.base, child_seed(seed, i)), labels[i] == 1);
    ManifestEntry e{id, id + ".npy", id + ".mask.npy", id + ".lesion.npy", id + ".bone.npy", sample.label, splits[i]};
    npy::write_npy(out_dir / e.volume_path, sample.volume);
    npy::write_npy(out_dir / e.mask_path, volprep::make_mask(sample.volume, options.mask));
    npy::write_npy(out_dir / e.lesion_path, sample.lesion_truth);
    npy::write_npy(out_dir / e.bone_path, sample.bone_truth);
    manifest.push_back(std::move(e));
  }
  write_manifest(out_dir / "manifest.jsonl", manifest);
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  for (const auto& e : manifest) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["volume_path"] = e.volume_path.generic_string();
    j["mask_path"] = e.mask_path.generic_string();
    j["lesion_path"] = e.lesion_path.generic_string();
    j["bone_path"] = e.bone_path.generic_string();
    j["label"] = e.label;
    j["split"] = e.split;
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("failed writing manifest " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  const auto dir = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path q(p);
    return q.is_absolute() ? q : dir / q;
  };
  Manifest manifest;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.volume_path = resolve(j.at("volume_path").get<std::string>());
      e.mask_path = resolve(j.at("mask_path").get<std::string>());
      e.lesion_path = resolve(j.at("lesion_path").get<std::string>());
      if (j.contains("bone_path")) e.bone_path = resolve(j.at("bone_path").get<std::string>());
      e.label = j.at("label").get<int>();
      e.split = j.at("split").get<std::string>();
      if (e.label != 0 && e.label != 1) throw std::invalid_argument("label must be 0 or 1");
      if (e.split != "train" && e.split != "val" && e.split != "test") {
        throw std::invalid_argument("unknown split '" + e.split + "'");
      }
      manifest.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return manifest;
}

Manifest select_split(const Manifest& manifest, const std::string& split) {
  Manifest out;
  std::copy_if(manifest.begin(), manifest.end(), std::back_inserter(out),
               [&](const ManifestEntry& e) { return e.split == split; });
  return out;
}

}  // namespace sranet::synth
