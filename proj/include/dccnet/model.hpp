#pragma once

#include <string>
#include <vector>

#include "dccnet/fusion.hpp"
#include "dccnet/spatial_context.hpp"

namespace dccnet {

// Grid extents are part of the model: the 1x1 attention layer's parameter
// count depends on the target cell count.
struct ModelConfig {
  std::size_t channels = 16;        // feature dim d
  std::size_t context_kernel = 9;   // self-similarity k (odd)
  std::size_t context_dim = 64;     // projection output l
  std::size_t grid_h = 10, grid_w = 10;
  std::size_t consensus_layers = 3;
  std::size_t consensus_kernel = 5;  // per-axis extent of the 4D kernels
  std::size_t consensus_channels = 16;
  std::size_t embed_layers = 3;
  std::size_t embed_kernel = 5;
  std::size_t embed_channels = 16;
  bool symmetrize = true;
  FuseInput fuse_input = FuseInput::consensus;

  std::size_t cells() const { return grid_h * grid_w; }
  void validate() const;
};

enum class ConsensusInit { random, delta };

struct ModelParams {
  ModelConfig config;
  ContextEncoderParams context;
  ConsensusParams consensus;
  EmbedParams embed;
  AttentionParams attention;

  void validate() const;

  struct NamedTensor {
    std::string name;
    Tensor* tensor;
  };
  // Stable ordering; drives Adam, gradcheck and serialization.
  std::vector<NamedTensor> named_tensors();
  std::vector<NamedTensor> named_tensors() const;
};

// Uniform fan-in init per tensor, biases zero; the RNG stream does not depend
// on the consensus init mode, so other tensors match across modes.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed,
                        ConsensusInit consensus_init = ConsensusInit::random);

// "DCCP" | u16 version | records of {u16 name_len, name, u8 rank, u32 dims...,
// f64 data LE}. Config scalars ride along as config.* records.
void save_params(const ModelParams& params, const std::string& path);
ModelParams load_params(const std::string& path);

}  // namespace dccnet
