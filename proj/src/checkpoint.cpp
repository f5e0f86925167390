// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "splitbench/bytes.hpp"
#include "splitbench/errors.hpp"

namespace splitbench {
namespace {

constexpr char kMagic[4] = {'S', 'L', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::string encode_checkpoint(const NamedParams& params, const nlohmann::json& manifest) {
  ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  const std::string m = manifest.dump();
  w.u64(m.size());
  w.raw(m.data(), m.size());
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f32_array(t.data());
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  ByteReader r(bytes, "checkpoint");
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FrameError("checkpoint: bad magic");
  if (std::uint32_t v = r.u32(); v != kVersion) {
    throw FrameError("checkpoint: unsupported version " + std::to_string(v));
  }
  Checkpoint ck;
  const std::uint64_t mlen = r.u64();
  std::string m(r.take(mlen));
  try {
    ck.manifest = nlohmann::json::parse(m);
  } catch (const nlohmann::json::exception& e) {
    throw FrameError(std::string("checkpoint: manifest is not valid JSON: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.take(r.u32()));
    const std::uint8_t nd = r.u8();
    Shape shape(nd);
    for (auto& d : shape) d = r.u32();
    std::vector<float> data(numel_of(shape));
    r.f32_array(data);
    ck.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw FrameError("checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Transformer& model,
                     const nlohmann::json& meta) {
  nlohmann::json manifest{{"config", model.config().to_json()}, {"meta", meta}};
  const std::string bytes = encode_checkpoint(model.named_parameters(), manifest);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

Transformer model_from_checkpoint(const Checkpoint& ck) {
  Transformer m = Transformer::build(ck.config(), 0);
  m.load_state(ck.tensors);
  return m;
}

}  // namespace splitbench
