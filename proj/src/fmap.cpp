#include "dccnet/fmap.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <utility>

#include <json.hpp>

namespace dccnet {

void FeatureMap::validate() const {
  require(data.rank() == 3, Errc::shape_mismatch,
          "FeatureMap data must be [d, h, w], got " + data.shape_str());
}

namespace {

constexpr char kMagic[4] = {'F', 'M', 'A', 'P'};
constexpr std::size_t kMaxElements = std::size_t(1) << 31;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

  std::uint8_t u8() {
    need(1);
    return std::uint8_t(buf_[pos_++]);
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = std::uint16_t(std::uint8_t(buf_[pos_])) |
                      std::uint16_t(std::uint8_t(buf_[pos_ + 1])) << 8;
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  void need(std::size_t n) {
    require(pos_ + n <= buf_.size(), Errc::truncated,
            path_ + ": truncated, header promises more data than present");
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  const std::string& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), Errc::io, "cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

void spew(const std::string& path, const std::string& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(bool(out), Errc::io, "cannot write " + path);
  out.write(buf.data(), std::streamsize(buf.size()));
  require(bool(out), Errc::io, "short write to " + path);
}

void encode_payload(std::string& buf, const Tensor& t, FmapDtype dtype) {
  if (dtype == FmapDtype::f32) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      float f = float(t[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(buf, bits);
    }
  } else {
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::uint64_t bits;
      double v = t[i];
      std::memcpy(&bits, &v, 8);
      put_u64(buf, bits);
    }
  }
}

void write_container(const Tensor& t, const std::string& path, FmapDtype dtype, bool rank3_v1) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u16(buf, rank3_v1 ? 1 : 2);
  buf.push_back(char(dtype));
  buf.push_back(0);  // pad
  if (rank3_v1) {
    for (std::size_t ax = 0; ax < 3; ++ax) put_u32(buf, std::uint32_t(t.shape()[ax]));
  } else {
    put_u32(buf, std::uint32_t(t.rank()));
    for (std::size_t e : t.shape()) put_u32(buf, std::uint32_t(e));
  }
  encode_payload(buf, t, dtype);
  spew(path, buf);
}

Tensor read_container(const std::string& path) {
  std::string buf = slurp(path);
  require(buf.size() >= 4 && std::memcmp(buf.data(), kMagic, 4) == 0, Errc::bad_magic,
          path + ": bad magic, not an FMAP file");
  Reader r(buf, path);
  r.u32();  // skip magic
  std::uint16_t version = r.u16();
  require(version == 1 || version == 2, Errc::bad_format,
          path + ": unsupported FMAP version " + std::to_string(version));
  std::uint8_t dtype = r.u8();
  require(dtype <= 1, Errc::bad_format, path + ": unknown dtype " + std::to_string(dtype));
  r.u8();  // pad

  std::vector<std::size_t> shape;
  if (version == 1) {
    for (int i = 0; i < 3; ++i) shape.push_back(r.u32());
  } else {
    std::uint32_t rank = r.u32();
    require(rank >= 1 && rank <= 6, Errc::bad_format,
            path + ": rank " + std::to_string(rank) + " out of range");
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u32());
  }
  std::size_t total = 1;
  for (std::size_t e : shape) {
    require(e >= 1, Errc::bad_format, path + ": zero extent in header");
    require(total <= kMaxElements / e, Errc::extent_overflow,
            path + ": extent product overflows sane limits");
    total *= e;
  }
  std::size_t scalar = dtype == 0 ? 4 : 8;
  require(r.remaining() >= total * scalar, Errc::truncated,
          path + ": truncated, header promises " + std::to_string(total) + " scalars");
  require(r.remaining() == total * scalar, Errc::bad_format, path + ": trailing bytes after payload");

  std::vector<double> data(total);
  if (dtype == 0) {
    for (std::size_t i = 0; i < total; ++i) {
      std::uint32_t bits = r.u32();
      float f;
      std::memcpy(&f, &bits, 4);
      data[i] = double(f);
    }
  } else {
    for (std::size_t i = 0; i < total; ++i) {
      std::uint64_t bits = r.u64();
      double v;
      std::memcpy(&v, &bits, 8);
      data[i] = v;
    }
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace

void save_fmap(const FeatureMap& fm, const std::string& path, FmapDtype dtype) {
  fm.validate();
  write_container(fm.data, path, dtype, true);
}

FeatureMap load_fmap(const std::string& path) {
  Tensor t = read_container(path);
  require(t.rank() == 3, Errc::bad_format, path + ": expected a rank-3 feature map");
  FeatureMap fm{std::move(t), false};
  // treat unit columns as normalized so downstream checks don't force a rescale
  std::size_t d = fm.channels(), hw = fm.height() * fm.width();
  bool ok = true;
  for (std::size_t p = 0; p < hw && ok; ++p) {
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      double v = fm.data[c * hw + p];
      sq += v * v;
    }
    ok = sq == 0.0 || std::abs(sq - 1.0) < 1e-9;
  }
  fm.normalized = ok;
  return fm;
}

void save_tensor_fmap(const Tensor& t, const std::string& path, FmapDtype dtype) {
  write_container(t, path, dtype, t.rank() == 3);
}

Tensor load_tensor_fmap(const std::string& path) { return read_container(path); }

bool GroundTruthMap::injective() const {
  std::set<std::pair<std::size_t, std::size_t>> src, tgt;
  for (const auto& e : pairs) {
    if (!src.insert({e.src_i, e.src_j}).second) return false;
    if (!tgt.insert({e.tgt_i, e.tgt_j}).second) return false;
  }
  return true;
}

std::string GroundTruthMap::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : pairs) j.push_back({e.src_i, e.src_j, e.tgt_i, e.tgt_j});
  return j.dump();
}

GroundTruthMap GroundTruthMap::from_json(const std::string& text) {
  GroundTruthMap gt;
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  require(!j.is_discarded() && j.is_array(), Errc::bad_format, "ground truth JSON must be a list");
  for (const auto& row : j) {
    require(row.is_array() && row.size() == 4, Errc::bad_format,
            "ground truth rows must be [src_i, src_j, tgt_i, tgt_j]");
    gt.pairs.push_back({row[0].get<std::size_t>(), row[1].get<std::size_t>(),
                        row[2].get<std::size_t>(), row[3].get<std::size_t>()});
  }
  return gt;
}

void GroundTruthMap::save(const std::string& path) const { spew(path, to_json()); }

GroundTruthMap GroundTruthMap::load(const std::string& path) { return from_json(slurp(path)); }

namespace {
void fill_normals(Rng& rng, Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
}
}  // namespace

SynthPair synth_pair(const SynthPairSpec& spec) {
  require(spec.channels >= 1 && spec.height >= 1 && spec.width >= 1, Errc::invalid_argument,
          "synth_pair: grid and channel extents must be >= 1");
  if (spec.transform == SynthTransform::shift) {
    require(std::size_t(std::abs(spec.shift_rows)) < spec.height &&
                std::size_t(std::abs(spec.shift_cols)) < spec.width,
            Errc::invalid_argument, "synth_pair: shift magnitude must be smaller than the grid");
  }
  require(spec.noise >= 0.0, Errc::invalid_argument, "synth_pair: noise must be non-negative");

  std::size_t h = spec.height, w = spec.width, d = spec.channels, hw = h * w;
  Rng rng(spec.seed);

  Tensor a_raw({d, h, w});
  fill_normals(rng, a_raw);
  Tensor b_raw({d, h, w});
  fill_normals(rng, b_raw);  // fresh noise everywhere; mapped cells overwritten below

  // cell -> cell map, row-major over source cells
  std::vector<long> target_of(hw, -1);
  switch (spec.transform) {
    case SynthTransform::identity:
      for (std::size_t p = 0; p < hw; ++p) target_of[p] = long(p);
      break;
    case SynthTransform::shift:
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          long ti = long(i) + spec.shift_rows;
          long tj = long(j) + spec.shift_cols;
          if (ti >= 0 && ti < long(h) && tj >= 0 && tj < long(w)) {
            target_of[i * w + j] = ti * long(w) + tj;
          }
        }
      }
      break;
    case SynthTransform::permutation: {
      std::vector<std::size_t> perm(hw);
      for (std::size_t p = 0; p < hw; ++p) perm[p] = p;
      for (std::size_t p = hw; p > 1; --p) {
        std::size_t q = rng.index(p);
        std::swap(perm[p - 1], perm[q]);
      }
      for (std::size_t p = 0; p < hw; ++p) target_of[p] = long(perm[p]);
      break;
    }
  }

  SynthPair out;
  for (std::size_t p = 0; p < hw; ++p) {
    if (target_of[p] < 0) continue;
    std::size_t q = std::size_t(target_of[p]);
    for (std::size_t c = 0; c < d; ++c) {
      double v = a_raw[c * hw + p];
      if (spec.noise > 0.0) v += spec.noise * rng.normal();
      b_raw[c * hw + q] = v;
    }
    out.truth.pairs.push_back({p / w, p % w, q / w, q % w});
  }

  out.a = FeatureMap{l2_normalize_channels(a_raw), true};
  out.b = FeatureMap{l2_normalize_channels(b_raw), true};
  return out;
}

}  // namespace dccnet
