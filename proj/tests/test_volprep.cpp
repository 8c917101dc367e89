#include <cmath>
#include <cstring>
#include <limits>
#include <variant>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "sranet/npy.hpp"
#include "sranet/volprep.hpp"

using sranet::Dims;
using sranet::kMaskOn;
using sranet::MaskVolume;
using sranet::Volume;
namespace vp = sranet::volprep;
namespace npy = sranet::npy;

namespace {

Volume random_volume(Dims dims, std::mt19937_64& rng, float lo = -5.0f, float hi = 5.0f) {
  std::uniform_real_distribution<float> dist(lo, hi);
  Volume v(dims);
  for (auto& x : v.voxels()) x = dist(rng);
  return v;
}

MaskVolume random_mask(Dims dims, std::mt19937_64& rng, double p_on) {
  std::bernoulli_distribution on(p_on);
  MaskVolume m(dims);
  for (auto& x : m.voxels()) x = on(rng) ? kMaskOn : 0;
  return m;
}

bool subset(const MaskVolume& a, const MaskVolume& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.voxels()[i] && !b.voxels()[i]) return false;
  }
  return true;
}

// Local mean with replicated borders, by direct enumeration.
double local_mean_oracle(const Volume& v, long z, long y, long x, long r) {
  const Dims& d = v.dims();
  double acc = 0.0;
  for (long dz = -r; dz <= r; ++dz)
    for (long dy = -r; dy <= r; ++dy)
      for (long dx = -r; dx <= r; ++dx) {
        const long zz = std::clamp(z + dz, 0L, long(d.d) - 1);
        const long yy = std::clamp(y + dy, 0L, long(d.h) - 1);
        const long xx = std::clamp(x + dx, 0L, long(d.w) - 1);
        acc += v.at(std::size_t(zz), std::size_t(yy), std::size_t(xx));
      }
  const double n = double(2 * r + 1);
  return acc / (n * n * n);
}

MaskVolume erode_oracle(const MaskVolume& m, long r) {
  const Dims& d = m.dims();
  MaskVolume out(d);
  for (long z = 0; z < long(d.d); ++z)
    for (long y = 0; y < long(d.h); ++y)
      for (long x = 0; x < long(d.w); ++x) {
        bool all = true;
        for (long dz = -r; dz <= r && all; ++dz)
          for (long dy = -r; dy <= r && all; ++dy)
            for (long dx = -r; dx <= r && all; ++dx) {
              const long zz = z + dz, yy = y + dy, xx = x + dx;
              all = zz >= 0 && yy >= 0 && xx >= 0 && zz < long(d.d) && yy < long(d.h) && xx < long(d.w) &&
                    m.at(std::size_t(zz), std::size_t(yy), std::size_t(xx)) == kMaskOn;
            }
        out.at(std::size_t(z), std::size_t(y), std::size_t(x)) = all ? kMaskOn : 0;
      }
  return out;
}

std::pair<double, double> mean_std(const Volume& v) {
  double mu = 0.0;
  for (float x : v.voxels()) mu += x;
  mu /= double(v.size());
  double sq = 0.0;
  for (float x : v.voxels()) sq += (x - mu) * (x - mu);
  return {mu, std::sqrt(sq / double(v.size()))};
}

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "sranet_test_volprep";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("normalize_volume") {
  std::mt19937_64 rng(11);
  SUBCASE("constant volume falls back to zeros") {
    Volume v(Dims{4, 5, 6}, 42.0f);
    const auto out = vp::normalize_volume(v);
    for (float x : out.voxels()) CHECK(x == 0.0f);
  }
  SUBCASE("zero mean and unit std") {
    auto v = random_volume(Dims{8, 9, 10}, rng, 10.0f, 200.0f);
    auto [mu, sd] = mean_std(vp::normalize_volume(v));
    CHECK(std::abs(mu) < 1e-6);
    CHECK(std::abs(sd - 1.0) < 1e-6);
  }
  SUBCASE("positive affine transforms normalize identically") {
    auto v = random_volume(Dims{6, 6, 6}, rng);
    Volume w(v.dims());
    for (std::size_t i = 0; i < v.size(); ++i) w.voxels()[i] = 3.5f * v.voxels()[i] + 17.0f;
    auto a = vp::normalize_volume(v), b = vp::normalize_volume(w);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.voxels()[i] - b.voxels()[i]) <= 1e-5);
  }
}

TEST_CASE("resize_pad") {
  SUBCASE("already at target") {
    std::mt19937_64 rng(12);
    auto v = random_volume(Dims{5, 6, 7}, rng);
    CHECK(vp::resize_pad(v, Dims{5, 6, 7}) == v);
  }
  SUBCASE("4^3 constant padded to 6^3") {
    Volume v(Dims{4, 4, 4}, 2.5f);
    auto out = vp::resize_pad(v, Dims{6, 6, 6});
    for (std::size_t z = 0; z < 6; ++z)
      for (std::size_t y = 0; y < 6; ++y)
        for (std::size_t x = 0; x < 6; ++x) {
          const bool inside = z >= 1 && z <= 4 && y >= 1 && y <= 4 && x >= 1 && x <= 4;
          CHECK(out.at(z, y, x) == (inside ? 2.5f : 0.0f));
        }
  }
  SUBCASE("odd remainder goes to the high side") {
    Volume v(Dims{1, 1, 4}, 1.0f);
    auto out = vp::resize_pad(v, Dims{1, 1, 7});
    CHECK(out.voxels() == std::vector<float>{0, 1, 1, 1, 1, 0, 0});
  }
  SUBCASE("8^3 ramp downsampled to 4^3 matches trilinear interpolation") {
    Volume v(Dims{8, 8, 8});
    for (std::size_t z = 0; z < 8; ++z)
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) v.at(z, y, x) = float(3 * z + 2 * y + x) + 0.1f * float(z * x);
    auto out = vp::resize_pad(v, Dims{4, 4, 4});
    auto trilinear = [&](double cz, double cy, double cx) {
      const std::size_t z0 = std::size_t(cz), y0 = std::size_t(cy), x0 = std::size_t(cx);
      const double tz = cz - double(z0), ty = cy - double(y0), tx = cx - double(x0);
      double acc = 0.0;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          for (int c = 0; c < 2; ++c) {
            const double wgt = (a ? tz : 1 - tz) * (b ? ty : 1 - ty) * (c ? tx : 1 - tx);
            acc += wgt * v.at(std::min<std::size_t>(z0 + a, 7), std::min<std::size_t>(y0 + b, 7),
                              std::min<std::size_t>(x0 + c, 7));
          }
      return acc;
    };
    for (std::size_t z = 0; z < 4; ++z)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) {
          // half-voxel centred: source = (i + 0.5) * 8 / 4 - 0.5
          const double expected = trilinear(2.0 * z + 0.5, 2.0 * y + 0.5, 2.0 * x + 0.5);
          CHECK(std::abs(out.at(z, y, x) - expected) <= 1e-5 * std::max(1.0, std::abs(expected)));
        }
  }
  SUBCASE("masks stay binary") {
    std::mt19937_64 rng(13);
    auto m = random_mask(Dims{9, 4, 6}, rng, 0.4);
    auto out = vp::resize_pad(m, Dims{5, 6, 6});
    CHECK(out.dims() == Dims{5, 6, 6});
    CHECK_NOTHROW(sranet::validate_mask(out));
  }
}

TEST_CASE("adaptive_threshold") {
  SUBCASE("constant volume with zero offset is empty") {
    Volume v(Dims{6, 6, 6}, 9.0f);
    const auto out = vp::adaptive_threshold(v, 3, 0.0);
    for (auto x : out.voxels()) CHECK(x == 0);
  }
  SUBCASE("bright sphere on dark background") {
    Volume v(Dims{21, 21, 21}, 0.0f);
    for (std::size_t z = 0; z < 21; ++z)
      for (std::size_t y = 0; y < 21; ++y)
        for (std::size_t x = 0; x < 21; ++x) {
          const double r2 = std::pow(double(z) - 10, 2) + std::pow(double(y) - 10, 2) + std::pow(double(x) - 10, 2);
          if (r2 <= 16.0) v.at(z, y, x) = 255.0f;
        }
    auto m = vp::adaptive_threshold(v, 7, 10.0);
    for (long z = 0; z < 21; ++z)
      for (long y = 0; y < 21; ++y)
        for (long x = 0; x < 21; ++x) {
          const bool expected =
              v.at(std::size_t(z), std::size_t(y), std::size_t(x)) > local_mean_oracle(v, z, y, x, 3) + 10.0;
          CHECK((m.at(std::size_t(z), std::size_t(y), std::size_t(x)) == kMaskOn) == expected);
        }
    CHECK(m.at(10, 10, 10) == kMaskOn);
    CHECK(m.at(10, 10, 12) == kMaskOn);
    CHECK(m.at(0, 0, 0) == 0);
    CHECK(m.at(10, 10, 19) == 0);
  }
  SUBCASE("random volumes match the local-mean oracle, edge-clamped") {
    std::mt19937_64 rng(14);
    auto v = random_volume(Dims{7, 9, 8}, rng, 0.0f, 255.0f);
    auto m = vp::adaptive_threshold(v, 5, 3.0);
    for (long z = 0; z < 7; ++z)
      for (long y = 0; y < 9; ++y)
        for (long x = 0; x < 8; ++x) {
          const bool expected = v.at(std::size_t(z), std::size_t(y), std::size_t(x)) > local_mean_oracle(v, z, y, x, 2) + 3.0;
          CHECK((m.at(std::size_t(z), std::size_t(y), std::size_t(x)) == kMaskOn) == expected);
        }
    CHECK_NOTHROW(sranet::validate_mask(m));
  }
  SUBCASE("even or tiny blocks are rejected") {
    Volume v(Dims{4, 4, 4});
    CHECK_THROWS_AS(vp::adaptive_threshold(v, 6, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(vp::adaptive_threshold(v, 1, 0.0), std::invalid_argument);
  }
}

TEST_CASE("erode and dilate") {
  SUBCASE("single voxel") {
    MaskVolume m(Dims{5, 5, 5});
    m.at(2, 2, 2) = kMaskOn;
    const auto out = vp::erode(m, 1);
    for (auto x : out.voxels()) CHECK(x == 0);
    auto d = vp::dilate(m, 1);
    for (std::size_t z = 0; z < 5; ++z)
      for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 0; x < 5; ++x) {
          const bool inside = z >= 1 && z <= 3 && y >= 1 && y <= 3 && x >= 1 && x <= 3;
          CHECK(d.at(z, y, x) == (inside ? kMaskOn : 0));
        }
  }
  SUBCASE("border counts as background") {
    MaskVolume full(Dims{4, 4, 4}, kMaskOn);
    auto e = vp::erode(full, 1);
    CHECK(e.at(0, 1, 1) == 0);
    CHECK(e.at(1, 1, 1) == kMaskOn);
  }
  SUBCASE("properties on random masks") {
    std::mt19937_64 rng(15);
    for (int trial = 0; trial < 20; ++trial) {
      const Dims dims{std::size_t(4 + trial % 5), 7, std::size_t(5 + trial % 3)};
      auto m = random_mask(dims, rng, 0.7);
      auto bigger = m;
      for (auto& v : bigger.voxels()) if (rng() % 4 == 0) v = kMaskOn;
      const std::size_t r = 1 + trial % 2;
      auto e = vp::erode(m, r), d = vp::dilate(m, r);
      CHECK(e == erode_oracle(m, long(r)));
      CHECK(subset(e, m));
      CHECK(subset(m, d));
      CHECK(subset(vp::dilate(e, r), m));  // opening is anti-extensive
      CHECK(subset(e, vp::erode(bigger, r)));
      CHECK(subset(d, vp::dilate(bigger, r)));
    }
  }
}

TEST_CASE("make_mask") {
  vp::MaskConfig cfg;
  SUBCASE("all-zero volume") {
    Volume v(Dims{16, 16, 16});
    const auto out = vp::make_mask(v, cfg);
    for (auto x : out.voxels()) CHECK(x == 0);
  }
  SUBCASE("isolated speckle is removed by the opening") {
    Volume v(Dims{16, 16, 16}, 70.0f);
    v.at(3, 4, 5) = 250.0f;
    v.at(12, 12, 2) = 240.0f;
    const auto out = vp::make_mask(v, cfg);
    for (auto x : out.voxels()) CHECK(x == 0);
  }
  SUBCASE("bright head with a cortical shell on soft tissue") {
    const Dims dims{48, 48, 48};
    Volume v(dims, 70.0f);
    MaskVolume truth(dims);
    std::mt19937_64 rng(16);
    std::normal_distribution<float> noise(0.0f, 8.0f);
    for (std::size_t z = 0; z < dims.d; ++z)
      for (std::size_t y = 0; y < dims.h; ++y)
        for (std::size_t x = 0; x < dims.w; ++x) {
          const double r = std::sqrt(std::pow(double(z) - 23.5, 2) + std::pow(double(y) - 24.0, 2) +
                                     std::pow(double(x) - 22.5, 2));
          if (r <= 14.0) {
            v.at(z, y, x) = r > 11.0 ? 230.0f : 160.0f;
            truth.at(z, y, x) = kMaskOn;
          }
          v.at(z, y, x) += noise(rng);
        }
    cfg.block = 31;
    auto m = vp::make_mask(v, cfg);
    std::size_t bone = 0, hit = 0, background = 0, false_hit = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (truth.voxels()[i]) {
        ++bone;
        hit += m.voxels()[i] == kMaskOn;
      } else {
        ++background;
        false_hit += m.voxels()[i] == kMaskOn;
      }
    }
    CHECK(double(hit) / double(bone) >= 0.90);
    CHECK(double(false_hit) / double(background) <= 0.05);
  }
}

TEST_CASE("split_patches and patch indicators") {
  SUBCASE("128^3 with P = 4 gives 64 patches of 32^3") {
    Volume v(Dims{128, 128, 128});
    auto patches = vp::split_patches(v, 4);
    CHECK(patches.size() == 64);
    for (const auto& p : patches) CHECK(p.dims() == Dims{32, 32, 32});
  }
  SUBCASE("P = 1 returns the input") {
    std::mt19937_64 rng(17);
    auto v = random_volume(Dims{4, 6, 8}, rng);
    auto patches = vp::split_patches(v, 1);
    REQUIRE(patches.size() == 1);
    CHECK(patches[0] == v);
  }
  SUBCASE("canonical ordering is (z, y, x) lexicographic") {
    Volume v(Dims{4, 4, 4});
    for (std::size_t z = 0; z < 4; ++z)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) v.at(z, y, x) = float((z / 2) * 100 + (y / 2) * 10 + x / 2);
    auto patches = vp::split_patches(v, 2);
    const auto grid = vp::make_patch_grid(v.dims(), 2);
    for (std::size_t i = 0; i < patches.size(); ++i) {
      const auto c = grid.cell(i);
      CHECK(patches[i].at(0, 0, 0) == float(c.gz * 100 + c.gy * 10 + c.gx));
      CHECK(grid.index(c) == i);
    }
  }
  SUBCASE("split then reassemble is bitwise exact") {
    std::mt19937_64 rng(18);
    for (std::size_t p : {1u, 2u, 3u, 6u}) {
      auto v = random_volume(Dims{6, 12, 18}, rng);
      auto patches = vp::split_patches(v, p);
      CHECK(vp::reassemble<float>(patches, p) == v);
      auto m = random_mask(Dims{6, 12, 18}, rng, 0.5);
      auto mp = vp::split_patches(m, p);
      CHECK(vp::reassemble<std::uint8_t>(mp, p) == m);
    }
  }
  SUBCASE("non-divisible grids are rejected") {
    CHECK_THROWS_AS(vp::split_patches(Volume(Dims{8, 8, 9}), 2), std::invalid_argument);
  }
  SUBCASE("indicator values") {
    MaskVolume patch(Dims{4, 4, 4});
    CHECK(vp::patch_indicator(patch) == 0);
    patch.at(3, 0, 2) = kMaskOn;
    CHECK(vp::patch_indicator(patch) == 1);
    CHECK(vp::patch_indicator(MaskVolume(Dims{4, 4, 4}, kMaskOn)) == 1);
    CHECK(vp::patch_indicator(patch, 0.5) == 0);
  }
  SUBCASE("structure vector matches brute force on random sparse masks") {
    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 25; ++trial) {
      auto m = random_mask(Dims{12, 12, 12}, rng, 0.003);
      const auto f = vp::structure_vector(m, 3);
      for (std::size_t i = 0; i < 27; ++i) {
        const std::size_t gz = i / 9, gy = (i / 3) % 3, gx = i % 3;
        bool any = false;
        for (std::size_t z = gz * 4; z < gz * 4 + 4; ++z)
          for (std::size_t y = gy * 4; y < gy * 4 + 4; ++y)
            for (std::size_t x = gx * 4; x < gx * 4 + 4; ++x) any = any || m.at(z, y, x) == kMaskOn;
        CHECK(f[i] == (any ? 1 : 0));
      }
    }
  }
}

TEST_CASE("npy files") {
  const auto dir = temp_dir();
  std::mt19937_64 rng(20);

  SUBCASE("volume roundtrip is bitwise exact") {
    auto v = random_volume(Dims{3, 5, 7}, rng);
    v.voxels()[4] = -0.0f;
    v.voxels()[5] = std::numeric_limits<float>::denorm_min();
    npy::write_npy(dir / "v.npy", v);
    auto back = npy::read_volume(dir / "v.npy");
    CHECK(back.dims() == v.dims());
    CHECK(std::memcmp(back.voxels().data(), v.voxels().data(), v.size() * sizeof(float)) == 0);
  }
  SUBCASE("mask roundtrip, dtype dispatch") {
    auto m = random_mask(Dims{4, 4, 2}, rng, 0.5);
    npy::write_npy(dir / "m.npy", m);
    auto any = npy::read_npy(dir / "m.npy");
    REQUIRE(std::holds_alternative<MaskVolume>(any));
    CHECK(std::get<MaskVolume>(any) == m);
    for (auto x : std::get<MaskVolume>(any).voxels()) CHECK((x == 0 || x == kMaskOn));
  }
  SUBCASE("layout: magic, version, aligned header, 32-byte payload for 2x2x2 f4") {
    const std::string bytes = npy::encode(npy::from_values(std::vector<float>(8, 1.0f), {2, 2, 2}));
    CHECK(bytes.substr(0, 6) == std::string("\x93NUMPY"));
    CHECK(bytes[6] == 1);
    CHECK(bytes[7] == 0);
    const std::size_t header_len = std::size_t(std::uint8_t(bytes[8])) | (std::size_t(std::uint8_t(bytes[9])) << 8);
    CHECK((10 + header_len) % 64 == 0);
    CHECK(bytes.size() - 10 - header_len == 32);
    const std::string header = bytes.substr(10, header_len);
    CHECK(header.rfind("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 2, 2), }", 0) == 0);
    CHECK(header.back() == '\n');
  }
  SUBCASE("distinct error kinds") {
    auto kind_of = [](const std::string& bytes) {
      try {
        npy::decode(bytes);
      } catch (const npy::NpyError& e) {
        return e.kind();
      }
      FAIL("decode succeeded");
      return npy::ErrorKind::kIo;
    };
    const std::string good = npy::encode(npy::from_values(std::vector<float>(8, 2.0f), {2, 2, 2}));
    CHECK(kind_of("NOTNPY" + good.substr(6)) == npy::ErrorKind::kBadMagic);
    CHECK(kind_of(good.substr(0, good.size() - 3)) == npy::ErrorKind::kTruncated);
    std::string int_array = good;
    int_array.replace(int_array.find("<f4"), 3, "<i4");
    CHECK(kind_of(int_array) == npy::ErrorKind::kUnsupportedDtype);
    std::string fortran = good;
    fortran.replace(fortran.find("False"), 5, "True ");
    CHECK(kind_of(fortran) == npy::ErrorKind::kUnsupportedLayout);
    std::string bad_version = good;
    bad_version[6] = 9;
    CHECK(kind_of(bad_version) == npy::ErrorKind::kUnsupportedVersion);
  }
  SUBCASE("non-binary mask payloads are rejected") {
    std::vector<std::uint8_t> raw(8, 0);
    raw[3] = 7;
    npy::write_file(dir / "bad_mask.npy", npy::from_values(std::span<const std::uint8_t>(raw), {2, 2, 2}));
    CHECK_THROWS_AS(npy::read_mask(dir / "bad_mask.npy"), npy::NpyError);
  }
  SUBCASE("volumes must be 3-d float32") {
    std::vector<double> raw(8, 1.0);
    npy::write_file(dir / "f8.npy", npy::from_values(std::span<const double>(raw), {2, 2, 2}));
    CHECK_THROWS_AS(npy::read_volume(dir / "f8.npy"), npy::NpyError);
    npy::write_file(dir / "flat.npy", npy::from_values(std::vector<float>(8, 1.0f), {8}));
    CHECK_THROWS_AS(npy::read_volume(dir / "flat.npy"), npy::NpyError);
    CHECK_THROWS_AS(npy::read_volume(dir / "missing.npy"), npy::NpyError);
  }
}
