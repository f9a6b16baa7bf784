// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include <cstring>
#include <fstream>
#include <map>

#include "vertenet/model.hpp"

namespace vertenet {

namespace {

constexpr char kMagic[4] = {'V', 'N', 'E', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kMetaName = "__meta__";

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(os, bits);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& is) {
  const std::uint64_t bits = read_u64(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

void write_record(std::ostream& os, const std::string& name, const Shape& s,
                  std::span<const double> data) {
  write_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(os, 4);
  write_u64(os, static_cast<std::uint64_t>(s.b));
  write_u64(os, static_cast<std::uint64_t>(s.c));
  write_u64(os, static_cast<std::uint64_t>(s.h));
  write_u64(os, static_cast<std::uint64_t>(s.w));
  for (double v : data) write_f64(os, v);
}

std::vector<double> config_to_doubles(const ModelConfig& cfg) {
  std::vector<double> v;
  for (int w : cfg.widths) v.push_back(w);
  v.push_back(cfg.gdfn_gamma);
  v.push_back(cfg.heads_high);
  v.push_back(cfg.heads_low);
  v.push_back(cfg.normalize_blocks ? 1.0 : 0.0);
  for (const auto& [r, p] : cfg.level_rp) {
    v.push_back(r);
    v.push_back(p);
  }
  v.push_back(static_cast<double>(cfg.fusion));
  v.push_back(cfg.head_stride);
  v.push_back(cfg.canonical_h);
  v.push_back(cfg.canonical_w);
  v.push_back(cfg.vertebra_count);
  return v;
}

ModelConfig config_from_doubles(const std::vector<double>& v) {
  if (v.size() != 19) {
    throw std::runtime_error("model file: malformed config record");
  }
  ModelConfig cfg;
  std::size_t i = 0;
  for (int& w : cfg.widths) w = static_cast<int>(v[i++]);
  cfg.gdfn_gamma = static_cast<int>(v[i++]);
  cfg.heads_high = static_cast<int>(v[i++]);
  cfg.heads_low = static_cast<int>(v[i++]);
  cfg.normalize_blocks = v[i++] != 0.0;
  for (auto& [r, p] : cfg.level_rp) {
    r = static_cast<int>(v[i++]);
    p = static_cast<int>(v[i++]);
  }
  cfg.fusion = static_cast<FusionMode>(static_cast<int>(v[i++]));
  cfg.head_stride = static_cast<int>(v[i++]);
  cfg.canonical_h = static_cast<int>(v[i++]);
  cfg.canonical_w = static_cast<int>(v[i++]);
  cfg.vertebra_count = static_cast<int>(v[i++]);
  return cfg;
}

}  // namespace

void save_model(const std::filesystem::path& path,
                const VerteNetParams& params, const ModelConfig& cfg) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("save_model: cannot open '" + path.string() +
                             "' for writing");
  }
  os.write(kMagic, 4);
  write_u32(os, kVersion);

  const auto meta = config_to_doubles(cfg);
  write_record(os, kMetaName, {1, 1, 1, static_cast<int>(meta.size())}, meta);
  for (const auto& [name, t] : params.named_params()) {
    write_record(os, name, t.shape(), t.data());
  }
  if (!os) {
    throw std::runtime_error("save_model: write failed for '" + path.string() +
                             "'");
  }
}

std::pair<VerteNetParams, ModelConfig> load_model(
    const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw std::runtime_error("load_model: cannot open '" + path.string() + "'");
  }
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("load_model: '" + path.string() +
                             "' is not a model file");
  }
  const std::uint32_t version = read_u32(is);
  if (version != kVersion) {
    throw std::runtime_error("load_model: unsupported version " +
                             std::to_string(version));
  }

  struct Record {
    Shape shape;
    std::vector<double> data;
  };
  std::map<std::string, Record> records;
  while (true) {
    std::uint32_t name_len = read_u32(is);
    if (is.eof()) break;
    if (!is) throw std::runtime_error("load_model: truncated record header");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t rank = read_u32(is);
    if (rank != 4) {
      throw std::runtime_error("load_model: unsupported rank " +
                               std::to_string(rank) + " for '" + name + "'");
    }
    Record rec;
    rec.shape.b = static_cast<int>(read_u64(is));
    rec.shape.c = static_cast<int>(read_u64(is));
    rec.shape.h = static_cast<int>(read_u64(is));
    rec.shape.w = static_cast<int>(read_u64(is));
    rec.data.resize(rec.shape.numel());
    for (double& v : rec.data) v = read_f64(is);
    if (!is) throw std::runtime_error("load_model: truncated payload in '" +
                                      name + "'");
    records.emplace(std::move(name), std::move(rec));
  }

  auto meta_it = records.find(kMetaName);
  if (meta_it == records.end()) {
    throw std::runtime_error("load_model: missing config record");
  }
  ModelConfig cfg = config_from_doubles(meta_it->second.data);
  cfg.validate();

  Rng rng(0);
  VerteNetParams params = VerteNetParams::init(cfg, rng);
  for (auto& [name, t] : params.named_params()) {
    auto it = records.find(name);
    if (it == records.end()) {
      throw std::runtime_error("load_model: missing tensor '" + name + "'");
    }
    if (!(it->second.shape == t.shape())) {
      throw std::runtime_error("load_model: shape mismatch for '" + name +
                               "': file has " + it->second.shape.str() +
                               ", model expects " + t.shape().str());
    }
    Tensor handle = t;
    auto dst = handle.data_mut();
    std::copy(it->second.data.begin(), it->second.data.end(), dst.begin());
  }
  return {std::move(params), cfg};
}

}  // namespace vertenet
