#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "sranet/npy.hpp"
#include "sranet/synth.hpp"

namespace synth = sranet::synth;
namespace vp = sranet::volprep;
using sranet::kMaskOn;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("sranet_synth_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool subset(const sranet::MaskVolume& a, const sranet::MaskVolume& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.voxels()[i] && !b.voxels()[i]) return false;
  return true;
}

bool any_on(const sranet::MaskVolume& m) {
  return std::any_of(m.voxels().begin(), m.voxels().end(), [](std::uint8_t v) { return v != 0; });
}

struct Overlap {
  double hit, false_hit;
};

Overlap overlap(const sranet::MaskVolume& mask, const sranet::MaskVolume& truth) {
  std::size_t hit = 0, bone = 0, fa = 0, bg = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const bool on = mask.voxels()[i] != 0;
    if (truth.voxels()[i]) {
      ++bone;
      hit += on;
    } else {
      ++bg;
      fa += on;
    }
  }
  return {double(hit) / double(bone), double(fa) / double(bg)};
}

}  // namespace

TEST_CASE("phantom spec validation") {
  synth::PhantomSpec spec;
  CHECK_NOTHROW(spec.validate());
  auto bad = spec;
  bad.center_x = 10.0;  // radius 19 sticks out
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = spec;
  bad.levels.lesion = 200.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = spec;
  bad.shell = 25.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = spec;
  bad.lesion_count_min = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("gen_phantom") {
  synth::PhantomSpec spec;
  spec.seed = 17;
  SUBCASE("deterministic") {
    for (auto kind : {synth::LesionKind::kBlobs, synth::LesionKind::kCollapse, synth::LesionKind::kBoth}) {
      spec.lesion_kind = kind;
      const auto a = synth::gen_phantom(spec, true);
      const auto b = synth::gen_phantom(spec, true);
      CHECK(a.volume == b.volume);
      CHECK(a.lesion_truth == b.lesion_truth);
      CHECK(a.bone_truth == b.bone_truth);
    }
  }
  SUBCASE("negatives have no lesion") {
    const auto s = synth::gen_phantom(spec, false);
    CHECK(s.label == 0);
    CHECK_FALSE(any_on(s.lesion_truth));
    CHECK(any_on(s.bone_truth));
  }
  SUBCASE("noise-free intensities follow the tissue classes") {
    spec.noise_sigma = 0.0;
    spec.lesion_kind = synth::LesionKind::kBoth;
    const auto s = synth::gen_phantom(spec, true);
    CHECK(s.label == 1);
    std::map<float, std::size_t> levels;
    for (std::size_t i = 0; i < s.volume.size(); ++i) {
      const float v = s.volume.voxels()[i];
      ++levels[v];
      if (s.lesion_truth.voxels()[i]) CHECK(v == 100.0f);
      else if (s.bone_truth.voxels()[i]) CHECK((v == 160.0f || v == 230.0f));
      else CHECK(v == 70.0f);
    }
    CHECK(levels.size() == 4);
    // the head centre is trabecular, the corner soft tissue
    CHECK(s.volume.at(0, 0, 0) == 70.0f);
  }
  SUBCASE("collapse removes the cap of the head") {
    spec.noise_sigma = 0.0;
    const auto intact = synth::gen_phantom(spec, false);
    spec.lesion_kind = synth::LesionKind::kCollapse;
    const auto collapsed = synth::gen_phantom(spec, true);
    CHECK(subset(collapsed.bone_truth, intact.bone_truth));
    const auto top = std::size_t(std::ceil(spec.center_z - spec.radius));
    CHECK(intact.bone_truth.at(top, 32, 32) == kMaskOn);
    CHECK(collapsed.bone_truth.at(top, 32, 32) == 0);
  }
  SUBCASE("lesion that cannot fit is rejected") {
    spec.lesion_radius_min = 15.0;
    spec.lesion_radius_max = 16.0;
    CHECK_THROWS_AS(synth::gen_phantom(spec, true), std::invalid_argument);
    CHECK_NOTHROW(synth::gen_phantom(spec, false));
  }
  SUBCASE("lesion inside bone and label consistency over random specs") {
    for (std::uint64_t i = 0; i < 12; ++i) {
      const auto s = synth::gen_phantom(synth::randomize_spec(synth::PhantomSpec{}, synth::child_seed(9, i)), i % 2);
      CHECK(s.label == int(i % 2));
      CHECK(subset(s.lesion_truth, s.bone_truth));
      CHECK(any_on(s.lesion_truth) == (s.label == 1));
    }
  }
}

TEST_CASE("make_mask recovers the bone of noise-free phantoms") {
  for (std::uint64_t i = 0; i < 6; ++i) {
    synth::PhantomSpec base;
    base.noise_sigma = 0.0;
    const auto s = synth::gen_phantom(synth::randomize_spec(base, synth::child_seed(4, i)), false);
    const auto o = overlap(vp::make_mask(s.volume, {}), s.bone_truth);
    CHECK(o.hit >= 0.95);
    CHECK(o.false_hit <= 0.02);
  }
  // dark lesions drop out of the coarse mask, the rest of the bone is kept
  for (std::uint64_t i = 0; i < 6; ++i) {
    synth::PhantomSpec base;
    base.noise_sigma = 0.0;
    const auto s = synth::gen_phantom(synth::randomize_spec(base, synth::child_seed(5, i)), true);
    auto healthy = s.bone_truth;
    for (std::size_t k = 0; k < healthy.size(); ++k)
      if (s.lesion_truth.voxels()[k]) healthy.voxels()[k] = 0;
    const auto mask = vp::make_mask(s.volume, {});
    CHECK(overlap(mask, healthy).hit >= 0.95);
    CHECK(overlap(mask, s.bone_truth).false_hit <= 0.02);
  }
}

TEST_CASE("randomize_spec") {
  const synth::PhantomSpec base;
  CHECK(synth::randomize_spec(base, 3).radius == synth::randomize_spec(base, 3).radius);
  std::map<int, int> kinds;
  for (std::uint64_t i = 0; i < 200; ++i) {
    const auto s = synth::randomize_spec(base, synth::child_seed(1, i));
    CHECK_NOTHROW(s.validate());
    CHECK(std::abs(s.radius - base.radius) <= 2.0);
    ++kinds[int(s.lesion_kind)];
  }
  CHECK(kinds.size() == 3);
  CHECK(synth::child_seed(1, 0) != synth::child_seed(1, 1));
  CHECK(synth::child_seed(1, 0) != synth::child_seed(2, 0));
}

TEST_CASE("split sizes") {
  CHECK(synth::split_sizes(50).train == 40);
  CHECK(synth::split_sizes(50).val == 5);
  CHECK(synth::split_sizes(50).test == 5);
  for (std::size_t n = 1; n < 200; ++n) {
    const auto s = synth::split_sizes(n);
    CHECK(s.train + s.val + s.test == n);
    CHECK(std::abs(double(s.val) - 0.1 * double(n)) <= 0.5);
  }
}

TEST_CASE("gen_dataset") {
  synth::DatasetOptions opts;
  opts.base.dims = {32, 32, 32};
  opts.base.center_z = opts.base.center_y = opts.base.center_x = 15.5;
  opts.base.radius = 10.0;
  opts.base.shell = 2.0;
  opts.base.lesion_radius_min = 1.5;
  opts.base.lesion_radius_max = 2.5;
  opts.mask.block = 21;

  SUBCASE("n = 100, pos_ratio = 0.5 stratifies 40/5/5 per class") {
    const auto dir = scratch("strat");
    const auto m = synth::gen_dataset(100, 0.5, 11, dir, opts);
    REQUIRE(m.size() == 100);
    std::map<std::pair<int, std::string>, int> counts;
    for (const auto& e : m) ++counts[{e.label, e.split}];
    for (int cls : {0, 1}) {
      CHECK(counts[{cls, "train"}] == 40);
      CHECK(counts[{cls, "val"}] == 5);
      CHECK(counts[{cls, "test"}] == 5);
    }
    // labels agree with the lesion files on disk
    const auto back = synth::read_manifest(dir / "manifest.jsonl");
    REQUIRE(back.size() == m.size());
    for (const auto& e : back) {
      const auto lesion = sranet::npy::read_mask(e.lesion_path);
      CHECK(any_on(lesion) == (e.label == 1));
      const auto mask = sranet::npy::read_mask(e.mask_path);
      CHECK(mask.dims() == sranet::npy::read_volume(e.volume_path).dims());
      CHECK(subset(lesion, sranet::npy::read_mask(e.bone_path)));
    }
    CHECK(synth::select_split(back, "val").size() == 10);
    std::filesystem::remove_all(dir);
  }
  SUBCASE("same seed gives identical bytes") {
    const auto a = scratch("det_a"), b = scratch("det_b");
    synth::gen_dataset(12, 0.5, 5, a, opts);
    synth::gen_dataset(12, 0.5, 5, b, opts);
    std::size_t files = 0;
    for (const auto& f : std::filesystem::directory_iterator(a)) {
      CHECK(slurp(f.path()) == slurp(b / f.path().filename()));
      ++files;
    }
    CHECK(files == 12 * 4 + 1);
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
  }
  SUBCASE("class balance per split for an uneven ratio") {
    const auto dir = scratch("uneven");
    const auto m = synth::gen_dataset(30, 0.3, 2, dir, opts);
    for (const char* split : {"train", "val", "test"}) {
      const auto part = synth::select_split(m, split);
      const auto pos = std::count_if(part.begin(), part.end(), [](const auto& e) { return e.label == 1; });
      CHECK(std::abs(double(pos) - 0.3 * double(part.size())) <= 1.0);
    }
    std::filesystem::remove_all(dir);
  }
  SUBCASE("invalid arguments") {
    CHECK_THROWS_AS(synth::gen_dataset(9, 0.5, 1, scratch("x"), opts), std::invalid_argument);
    CHECK_THROWS_AS(synth::gen_dataset(20, 1.0, 1, scratch("x"), opts), std::invalid_argument);
    CHECK_THROWS_AS(synth::gen_dataset(20, 0.0, 1, scratch("x"), opts), std::invalid_argument);
    CHECK_THROWS_AS(synth::gen_dataset(20, 0.5, 1, "/proc/sranet_cannot_write", opts), std::runtime_error);
  }
}

TEST_CASE("manifest parsing errors") {
  const auto dir = scratch("manifest");
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "bad.jsonl") << R"({"id":"a","volume_path":"a.npy","mask_path":"a.mask.npy","lesion_path":"l","label":3,"split":"train"})"
                                     << "\n";
  }
  CHECK_THROWS_AS(synth::read_manifest(dir / "bad.jsonl"), std::runtime_error);
  CHECK_THROWS_AS(synth::read_manifest(dir / "missing.jsonl"), std::runtime_error);
  synth::Manifest m{{"a", "a.npy", "a.mask.npy", "a.lesion.npy", "a.bone.npy", 1, "test"}};
  synth::write_manifest(dir / "ok.jsonl", m);
  const auto back = synth::read_manifest(dir / "ok.jsonl");
  REQUIRE(back.size() == 1);
  CHECK(back[0].volume_path == dir / "a.npy");
  CHECK(back[0].label == 1);
  CHECK(back[0].split == "test");
  std::filesystem::remove_all(dir);
}
