#include "dccnet/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace dccnet {

void ModelConfig::validate() const {
  require(channels >= 1, Errc::invalid_argument, "config: channels must be >= 1");
  require(context_kernel >= 1 && context_kernel % 2 == 1, Errc::invalid_argument,
          "config: context kernel must be odd");
  require(context_dim >= 1, Errc::invalid_argument, "config: context dim must be >= 1");
  require(grid_h >= 1 && grid_w >= 1, Errc::invalid_argument, "config: grid extents must be >= 1");
  require(consensus_layers >= 1 && embed_layers >= 1, Errc::invalid_argument,
          "config: need at least one conv layer per chain");
  require(consensus_kernel % 2 == 1 && embed_kernel % 2 == 1, Errc::invalid_argument,
          "config: 4D kernel extents must be odd");
}

void ModelParams::validate() const {
  config.validate();
  std::size_t rows = config.channels + config.context_kernel * config.context_kernel;
  require(context.rows() == rows && context.out_dim() == config.context_dim, Errc::shape_mismatch,
          "params: context projection is " + context.w.shape_str() + ", config expects [" +
              std::to_string(rows) + "x" + std::to_string(config.context_dim) + "]");
  consensus.validate();
  embed.validate();
  attention.validate();
  require(attention.stacked_channels() == 2 * config.cells(), Errc::shape_mismatch,
          "params: attention expects " + std::to_string(attention.stacked_channels() / 2) +
              " cells, config grid has " + std::to_string(config.cells()));
}

std::vector<ModelParams::NamedTensor> ModelParams::named_tensors() {
  std::vector<NamedTensor> out;
  out.push_back({"context.w", &context.w});
  for (std::size_t i = 0; i < consensus.layers.size(); ++i) {
    out.push_back({"consensus." + std::to_string(i) + ".weights", &consensus.layers[i].weights});
    out.push_back({"consensus." + std::to_string(i) + ".bias", &consensus.layers[i].bias});
  }
  for (std::size_t i = 0; i < embed.layers.size(); ++i) {
    out.push_back({"embed." + std::to_string(i) + ".weights", &embed.layers[i].weights});
    out.push_back({"embed." + std::to_string(i) + ".bias", &embed.layers[i].bias});
  }
  out.push_back({"attention.weights", &attention.weights});
  out.push_back({"attention.bias", &attention.bias});
  return out;
}

std::vector<ModelParams::NamedTensor> ModelParams::named_tensors() const {
  return const_cast<ModelParams*>(this)->named_tensors();
}

namespace {
void fill_uniform(Rng& rng, Tensor& t, double bound) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
}

std::vector<std::size_t> channel_plan(std::size_t layers, std::size_t mid) {
  std::vector<std::size_t> plan{1};
  for (std::size_t i = 0; i + 1 < layers; ++i) plan.push_back(mid);
  plan.push_back(1);
  return plan;
}

std::vector<Conv4DKernel> init_chain(Rng& rng, std::size_t layers, std::size_t mid, std::size_t k,
                                     bool delta) {
  std::vector<Conv4DKernel> out;
  auto plan = channel_plan(layers, mid);
  for (std::size_t i = 0; i < layers; ++i) {
    Conv4DKernel kern = Conv4DKernel::zeros(plan[i + 1], plan[i], k);
    double fan_in = double(plan[i]) * double(k) * double(k) * double(k) * double(k);
    // biases draw from the same fan-in range; zero biases would park dead
    // cells exactly on the relu kink and break finite-difference checks
    fill_uniform(rng, kern.weights, 1.0 / std::sqrt(fan_in));
    fill_uniform(rng, kern.bias, 1.0 / std::sqrt(fan_in));
    if (delta) kern = Conv4DKernel::delta(plan[i + 1], plan[i], k);
    out.push_back(std::move(kern));
  }
  return out;
}
}  // namespace

ModelParams init_params(const ModelConfig& config, std::uint64_t seed,
                        ConsensusInit consensus_init) {
  config.validate();
  Rng rng(seed);
  ModelParams p;
  p.config = config;

  std::size_t rows = config.channels + config.context_kernel * config.context_kernel;
  p.context.w = Tensor({rows, config.context_dim});
  fill_uniform(rng, p.context.w, 1.0 / std::sqrt(double(rows)));

  p.consensus.layers = init_chain(rng, config.consensus_layers, config.consensus_channels,
                                  config.consensus_kernel, consensus_init == ConsensusInit::delta);
  p.consensus.symmetrize = config.symmetrize;
  p.embed.layers = init_chain(rng, config.embed_layers, config.embed_channels, config.embed_kernel,
                              false);

  std::size_t stacked = 2 * config.cells();
  p.attention.weights = Tensor({2, stacked});
  fill_uniform(rng, p.attention.weights, 1.0 / std::sqrt(double(stacked)));
  p.attention.bias = Tensor({2});
  fill_uniform(rng, p.attention.bias, 1.0 / std::sqrt(double(stacked)));
  p.validate();
  return p;
}

namespace {
constexpr char kMagic[4] = {'D', 'C', 'C', 'P'};

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
}

void put_record(std::string& out, const std::string& name, const Tensor& t) {
  put_u16(out, std::uint16_t(name.size()));
  out.append(name);
  out.push_back(char(t.rank()));
  for (std::size_t e : t.shape()) put_u32(out, std::uint32_t(e));
  for (std::size_t i = 0; i < t.size(); ++i) put_f64(out, t[i]);
}

void put_scalar(std::string& out, const std::string& name, double v) {
  put_record(out, name, Tensor::from_data({1}, {v}));
}

struct RecordReader {
  const std::string& buf;
  std::string path;
  std::size_t pos = 0;

  bool done() const { return pos >= buf.size(); }
  void need(std::size_t n) {
    require(pos + n <= buf.size(), Errc::truncated, path + ": truncated parameter file");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = std::uint16_t(std::uint8_t(buf[pos])) |
                      std::uint16_t(std::uint8_t(buf[pos + 1])) << 8;
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(std::uint8_t(buf[pos + i])) << (8 * i);
    pos += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};
}  // namespace

void save_params(const ModelParams& params, const std::string& path) {
  params.validate();
  std::string buf;
  buf.append(kMagic, 4);
  put_u16(buf, 1);
  const ModelConfig& c = params.config;
  put_scalar(buf, "config.channels", double(c.channels));
  put_scalar(buf, "config.context_kernel", double(c.context_kernel));
  put_scalar(buf, "config.context_dim", double(c.context_dim));
  put_scalar(buf, "config.grid_h", double(c.grid_h));
  put_scalar(buf, "config.grid_w", double(c.grid_w));
  put_scalar(buf, "config.consensus_layers", double(c.consensus_layers));
  put_scalar(buf, "config.consensus_kernel", double(c.consensus_kernel));
  put_scalar(buf, "config.consensus_channels", double(c.consensus_channels));
  put_scalar(buf, "config.embed_layers", double(c.embed_layers));
  put_scalar(buf, "config.embed_kernel", double(c.embed_kernel));
  put_scalar(buf, "config.embed_channels", double(c.embed_channels));
  put_scalar(buf, "config.symmetrize", c.symmetrize ? 1.0 : 0.0);
  put_scalar(buf, "config.fuse_input", c.fuse_input == FuseInput::consensus ? 0.0 : 1.0);
  for (const auto& nt : params.named_tensors()) put_record(buf, nt.name, *nt.tensor);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(bool(out), Errc::io, "cannot write " + path);
  out.write(buf.data(), std::streamsize(buf.size()));
  require(bool(out), Errc::io, "short write to " + path);
}

ModelParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), Errc::io, "cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(buf.size() >= 6 && std::memcmp(buf.data(), kMagic, 4) == 0, Errc::bad_magic,
          path + ": bad magic, not a DCCP file");

  RecordReader r{buf, path, 4};
  std::uint16_t version = r.u16();
  require(version == 1, Errc::bad_format, path + ": unsupported DCCP version");

  std::map<std::string, Tensor> records;
  while (!r.done()) {
    std::uint16_t len = r.u16();
    r.need(len);
    std::string name = buf.substr(r.pos, len);
    r.pos += len;
    r.need(1);
    std::uint8_t rank = std::uint8_t(buf[r.pos++]);
    require(rank >= 1 && rank <= 6, Errc::bad_format, path + ": record rank out of range");
    std::vector<std::size_t> shape;
    std::size_t total = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      std::uint32_t e = r.u32();
      require(e >= 1, Errc::bad_format, path + ": zero extent in record " + name);
      require(total <= (std::size_t(1) << 31) / e, Errc::extent_overflow,
              path + ": record extents overflow");
      total *= e;
      shape.push_back(e);
    }
    std::vector<double> data(total);
    for (std::size_t i = 0; i < total; ++i) data[i] = r.f64();
    records.emplace(name, Tensor::from_data(std::move(shape), std::move(data)));
  }

  auto scalar = [&](const std::string& name) {
    auto it = records.find(name);
    require(it != records.end(), Errc::bad_format, path + ": missing record " + name);
    return it->second[0];
  };
  auto tensor = [&](const std::string& name) {
    auto it = records.find(name);
    require(it != records.end(), Errc::bad_format, path + ": missing record " + name);
    return std::move(it->second);
  };

  ModelParams p;
  p.config.channels = std::size_t(scalar("config.channels"));
  p.config.context_kernel = std::size_t(scalar("config.context_kernel"));
  p.config.context_dim = std::size_t(scalar("config.context_dim"));
  p.config.grid_h = std::size_t(scalar("config.grid_h"));
  p.config.grid_w = std::size_t(scalar("config.grid_w"));
  p.config.consensus_layers = std::size_t(scalar("config.consensus_layers"));
  p.config.consensus_kernel = std::size_t(scalar("config.consensus_kernel"));
  p.config.consensus_channels = std::size_t(scalar("config.consensus_channels"));
  p.config.embed_layers = std::size_t(scalar("config.embed_layers"));
  p.config.embed_kernel = std::size_t(scalar("config.embed_kernel"));
  p.config.embed_channels = std::size_t(scalar("config.embed_channels"));
  p.config.symmetrize = scalar("config.symmetrize") != 0.0;
  p.config.fuse_input =
      scalar("config.fuse_input") == 0.0 ? FuseInput::consensus : FuseInput::embedded;

  p.context.w = tensor("context.w");
  p.consensus.symmetrize = p.config.symmetrize;
  for (std::size_t i = 0; i < p.config.consensus_layers; ++i) {
    Conv4DKernel k;
    k.weights = tensor("consensus." + std::to_string(i) + ".weights");
    k.bias = tensor("consensus." + std::to_string(i) + ".bias");
    p.consensus.layers.push_back(std::move(k));
  }
  for (std::size_t i = 0; i < p.config.embed_layers; ++i) {
    Conv4DKernel k;
    k.weights = tensor("embed." + std::to_string(i) + ".weights");
    k.bias = tensor("embed." + std::to_string(i) + ".bias");
    p.embed.layers.push_back(std::move(k));
  }
  p.attention.weights = tensor("attention.weights");
  p.attention.bias = tensor("attention.bias");
  p.validate();
  return p;
}

}  // namespace dccnet
