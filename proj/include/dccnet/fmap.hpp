#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dccnet/tensor.hpp"

namespace dccnet {

// Dense feature grid standing in for backbone conv features.
struct FeatureMap {
  Tensor data;  // [d, h, w]
  bool normalized = false;

  std::size_t channels() const { return data.shape()[0]; }
  std::size_t height() const { return data.shape()[1]; }
  std::size_t width() const { return data.shape()[2]; }
  void validate() const;
};

enum class FmapDtype : std::uint8_t { f32 = 0, f64 = 1 };

// FMAP container, little-endian:
//   "FMAP" | u16 version | u8 dtype (0=f32, 1=f64) | u8 pad
//   version 1: u32 d, h, w                (feature maps)
//   version 2: u32 rank, u32 dims[rank]   (general payloads, e.g. 4D volumes)
// followed by the scalars, channel-major (row-major over the declared dims).
void save_fmap(const FeatureMap& fm, const std::string& path, FmapDtype dtype = FmapDtype::f64);
FeatureMap load_fmap(const std::string& path);

void save_tensor_fmap(const Tensor& t, const std::string& path, FmapDtype dtype = FmapDtype::f64);
Tensor load_tensor_fmap(const std::string& path);

// Cell-to-cell bijection on the overlapping support of a synthetic pair.
struct GroundTruthMap {
  struct Entry {
    std::size_t src_i, src_j, tgt_i, tgt_j;
  };
  std::vector<Entry> pairs;

  bool injective() const;
  // JSON form: [[src_i, src_j, tgt_i, tgt_j], ...]
  std::string to_json() const;
  static GroundTruthMap from_json(const std::string& text);
  void save(const std::string& path) const;
  static GroundTruthMap load(const std::string& path);
};

enum class SynthTransform { identity, shift, permutation };

struct SynthPairSpec {
  std::size_t height = 10, width = 10;
  std::size_t channels = 16;
  SynthTransform transform = SynthTransform::identity;
  long shift_rows = 0, shift_cols = 0;
  double noise = 0.0;
  std::uint64_t seed = 0;
};

struct SynthPair {
  FeatureMap a, b;
  GroundTruthMap truth;
};

// b is a transformed copy of a with newly revealed cells filled by fresh
// noise; both maps come out L2-normalized.
SynthPair synth_pair(const SynthPairSpec& spec);

}  // namespace dccnet
