#include <array>
#include <random>

#include "sranet/trainer.hpp"

namespace sranet::trainer {
namespace {

using Coord = std::array<std::size_t, 3>;

Coord extents(const Dims& d) { return {d.d, d.h, d.w}; }

template <typename V>
Grid<V> remap(const Grid<V>& src, const Coord& out_ext, const std::function<Coord(const Coord&)>& source_of) {
  Grid<V> out(Dims{out_ext[0], out_ext[1], out_ext[2]});
  Coord c{};
  std::size_t i = 0;
  for (c[0] = 0; c[0] < out_ext[0]; ++c[0])
    for (c[1] = 0; c[1] < out_ext[1]; ++c[1])
      for (c[2] = 0; c[2] < out_ext[2]; ++c[2]) {
        const Coord s = source_of(c);
        out.voxels()[i++] = src.at(s[0], s[1], s[2]);
      }
  return out;
}

// out[.., i, .., j, ..] = in[.., n_a - 1 - j, .., i, ..] in the (a, b) plane.
template <typename V>
Grid<V> quarter_turn(const Grid<V>& src, int axis) {
  const std::size_t a = axis == 0 ? 1 : 0, b = axis == 2 ? 1 : 2;
  const Coord in = extents(src.dims());
  Coord out = in;
  std::swap(out[a], out[b]);
  return remap<V>(src, out, [&](const Coord& c) {
    Coord s = c;
    s[a] = in[a] - 1 - c[b];
    s[b] = c[a];
    return s;
  });
}

}  // namespace

AugmentDraw draw_augment(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  AugmentDraw d;
  for (bool& f : d.flip) f = coin(rng);
  d.axis = std::uniform_int_distribution<int>(0, 2)(rng);
  d.quarter_turns = std::uniform_int_distribution<int>(0, 3)(rng);
  return d;
}

template <typename V>
Grid<V> apply_augment(const Grid<V>& grid, const AugmentDraw& draw) {
  if (draw.axis < 0 || draw.axis > 2) throw std::invalid_argument("augment: rotation axis must be 0, 1 or 2");
  Grid<V> out = grid;
  if (draw.flip[0] || draw.flip[1] || draw.flip[2]) {
    const Coord n = extents(grid.dims());
    out = remap<V>(grid, n, [&](const Coord& c) {
      Coord s = c;
      for (int k = 0; k < 3; ++k)
        if (draw.flip[k]) s[k] = n[k] - 1 - c[k];
      return s;
    });
  }
  const int turns = ((draw.quarter_turns % 4) + 4) % 4;
  for (int t = 0; t < turns; ++t) out = quarter_turn(out, draw.axis);
  return out;
}

synth::LabeledSample augment(const synth::LabeledSample& sample, std::uint64_t seed) {
  if (sample.volume.dims() != sample.bone_truth.dims() || sample.volume.dims() != sample.lesion_truth.dims()) {
    throw std::invalid_argument("augment: volume and masks must share dimensions");
  }
  const AugmentDraw draw = draw_augment(seed);
  if (draw.identity()) return sample;
  return {apply_augment(sample.volume, draw), apply_augment(sample.bone_truth, draw),
          apply_augment(sample.lesion_truth, draw), sample.label};
}

template Grid<float> apply_augment(const Grid<float>&, const AugmentDraw&);
template Grid<std::uint8_t> apply_augment(const Grid<std::uint8_t>&, const AugmentDraw&);

}  // namespace sranet::trainer
