// SPDX-License-Identifier: Apache-2.0
#include "gcrnn/checkpoint.hpp"

#include <fstream>
#include <map>

#include "binary_io.hpp"
#include "gcrnn/errors.hpp"

namespace gcrnn {

using detail::get_le;
using detail::put_le;

namespace {

constexpr const char* kMagic = "GCRNNCKPT";
constexpr std::uint32_t kVersion = 1;

void put_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (double v : t.values()) detail::put_f32(os, v);
}

Tensor vector_tensor(const std::vector<double>& v) { return Tensor({v.size()}, v); }

}  // namespace

void round_to_storage(NormStats& stats) {
  for (double& v : stats.mean) v = static_cast<double>(static_cast<float>(v));
  for (double& v : stats.std) v = static_cast<double>(static_cast<float>(v));
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::vector<std::pair<std::string, const Tensor*>> entries = ckpt.params.named();
  std::vector<Tensor> extra;  // owns tensors built on the fly
  extra.reserve(3);
  if (ckpt.adam) {
    const auto& names = entries;
    const std::size_t n = names.size();
    if (ckpt.adam->m.size() != n || ckpt.adam->v.size() != n) {
      throw DimensionError("save_checkpoint: optimizer state does not match parameters");
    }
    std::vector<std::pair<std::string, const Tensor*>> adam_entries;
    for (std::size_t i = 0; i < n; ++i) {
      adam_entries.emplace_back("adam.m." + names[i].first, &ckpt.adam->m[i]);
      adam_entries.emplace_back("adam.v." + names[i].first, &ckpt.adam->v[i]);
    }
    extra.push_back(Tensor::scalar(static_cast<double>(ckpt.adam->step)));
    entries.insert(entries.end(), adam_entries.begin(), adam_entries.end());
    entries.emplace_back("adam.step", &extra.back());
  }
  if (ckpt.norm) {
    extra.push_back(vector_tensor(ckpt.norm->mean));
    entries.emplace_back("norm.mean", &extra.back());
    extra.push_back(vector_tensor(ckpt.norm->std));
    entries.emplace_back("norm.std", &extra.back());
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  detail::put_header(out, kMagic, kVersion);
  put_le<std::uint64_t>(out, ckpt.params.config.hash());
  const std::string cfg = ckpt.params.config.serialize();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) put_tensor(out, name, *t);
  out.flush();
  if (!out) throw DataError("failed writing checkpoint " + path.string() + " (disk full?)");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string what = "checkpoint " + path.string();
  const std::uint32_t version = detail::get_header(in, kMagic, what);
  if (version != kVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
  const std::uint64_t hash = get_le<std::uint64_t>(in, what);
  const std::uint32_t cfg_len = get_le<std::uint32_t>(in, what);
  std::string cfg_text(cfg_len, '\0');
  if (!in.read(cfg_text.data(), cfg_len)) throw FormatError(what + ": truncated config");
  const ModelConfig config = ModelConfig::parse(cfg_text);
  if (config.hash() != hash) throw FormatError(what + ": config hash mismatch");

  std::map<std::string, Tensor> tensors;
  const std::uint32_t count = get_le<std::uint32_t>(in, what);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = get_le<std::uint32_t>(in, what);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError(what + ": truncated tensor name");
    const std::uint32_t rank = get_le<std::uint32_t>(in, what);
    Shape shape(rank);
    for (auto& d : shape) d = get_le<std::uint32_t>(in, what);
    Tensor t(shape);
    for (double& v : t.values()) v = detail::get_f32(in, what + " tensor " + name);
    tensors.emplace(std::move(name), std::move(t));
  }

  Checkpoint ckpt;
  ckpt.params = init_params(config, 0);
  auto take = [&](const std::string& name, const Shape& expect) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError(what + ": missing tensor " + name);
    if (it->second.shape() != expect) {
      throw FormatError(what + ": tensor " + name + " has shape " +
                        shape_string(it->second.shape()) + ", expected " + shape_string(expect));
    }
    Tensor t = std::move(it->second);
    tensors.erase(it);
    return t;
  };
  auto named = ckpt.params.named();
  for (auto& [name, t] : named) *t = take(name, t->shape());
  if (tensors.count("adam.step")) {
    AdamState adam;
    adam.step = static_cast<std::uint64_t>(take("adam.step", {1})[0]);
    for (auto& [name, t] : named) {
      adam.m.push_back(take("adam.m." + name, t->shape()));
      adam.v.push_back(take("adam.v." + name, t->shape()));
    }
    ckpt.adam = std::move(adam);
  }
  if (tensors.count("norm.mean")) {
    NormStats stats;
    stats.kind = config.feature;
    const Tensor mean = take("norm.mean", {config.n_bins});
    const Tensor sd = take("norm.std", {config.n_bins});
    stats.mean.assign(mean.values().begin(), mean.values().end());
    stats.std.assign(sd.values().begin(), sd.values().end());
    ckpt.norm = std::move(stats);
  }
  if (!tensors.empty()) throw FormatError(what + ": unexpected tensor " + tensors.begin()->first);
  return ckpt;
}

}  // namespace gcrnn
