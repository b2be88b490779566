#include "tfm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <ostream>

#include "tfm/errors.hpp"

namespace tfm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'T', 'F', 'M', 'C', 'K', 'P', 'T', '1'};

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}
  template <typename V>
  V get() {
    V v;
    bytes(&v, sizeof v);
    return v;
  }
  void bytes(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!in_) throw FormatError("checkpoint '" + path_ + "' is truncated");
  }
  std::string string(std::size_t limit) {
    const auto n = get<std::uint32_t>();
    if (n > limit) throw FormatError("checkpoint '" + path_ + "' has an implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint '" + path + "'");
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, ckpt.version);
    put<std::uint64_t>(out, ckpt.config_hash);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.config_text.size()));
    out.write(ckpt.config_text.data(), static_cast<std::streamsize>(ckpt.config_text.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.entries.size()));
    for (const auto& e : ckpt.entries) {
      if (shape_numel(e.shape) != e.values.size()) throw DimensionError("checkpoint entry '" + e.name + "' shape mismatch");
      put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
      for (auto d : e.shape) put<std::uint64_t>(out, d);
      out.write(reinterpret_cast<const char*>(e.values.data()),
                static_cast<std::streamsize>(e.values.size() * sizeof(float)));
    }
    if (!out) throw FormatError("cannot write checkpoint '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw FormatError("cannot move checkpoint into '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  Reader r(in, path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError("'" + path + "' is not a checkpoint (bad magic)");
  Checkpoint c;
  c.version = r.get<std::uint32_t>();
  if (c.version != Checkpoint::kVersion)
    throw FormatError("checkpoint '" + path + "' has unsupported version " + std::to_string(c.version));
  c.config_hash = r.get<std::uint64_t>();
  c.config_text = r.string(1 << 20);
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointEntry e;
    e.name = r.string(4096);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError("checkpoint '" + path + "' entry '" + e.name + "' has rank " + std::to_string(rank));
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      e.shape.push_back(r.get<std::uint64_t>());
      n *= e.shape.back();
      if (n > (std::size_t{1} << 32)) throw FormatError("checkpoint '" + path + "' entry too large");
    }
    e.values.resize(n);
    r.bytes(e.values.data(), n * sizeof(float));
    c.entries.push_back(std::move(e));
  }
  return c;
}

Checkpoint snapshot(Matcher<float>& model, const Adam<float>* adam, std::uint64_t step) {
  Checkpoint c;
  c.config_hash = model.config().architecture_hash();
  c.config_text = model.config().to_text();
  auto reg = model.registry();
  for (const auto& p : reg.params)
    c.entries.push_back({p.name, p.tensor.shape(), {p.tensor.values().begin(), p.tensor.values().end()}});
  for (const auto& b : reg.buffers) c.entries.push_back({b.name, {b.data->size()}, *b.data});
  if (adam) {
    for (std::size_t k = 0; k < reg.params.size(); ++k) {
      c.entries.push_back({"adam.m." + reg.params[k].name, reg.params[k].tensor.shape(), adam->m[k]});
      c.entries.push_back({"adam.v." + reg.params[k].name, reg.params[k].tensor.shape(), adam->v[k]});
    }
    c.entries.push_back({"adam.steps", {1}, {static_cast<float>(adam->steps)}});
  }
  // Steps are stored as two exact 24-bit halves of a 48-bit counter.
  c.entries.push_back({"meta.step", {2},
                       {static_cast<float>(step & 0xffffff), static_cast<float>((step >> 24) & 0xffffff)}});
  return c;
}

std::uint64_t restore(Matcher<float>& model, const Checkpoint& ckpt, Adam<float>* adam, std::ostream& warn) {
  if (ckpt.config_hash != model.config().architecture_hash())
    warn << "warning: checkpoint config hash differs from the current config; parameter shapes may not match\n";
  auto need = [&](const std::string& name, std::size_t count) -> const CheckpointEntry& {
    const auto* e = ckpt.find(name);
    if (!e) throw FormatError("checkpoint lacks entry '" + name + "'");
    if (e->values.size() != count)
      throw FormatError("checkpoint entry '" + name + "' holds " + std::to_string(e->values.size()) +
                        " values, expected " + std::to_string(count));
    return *e;
  };
  auto reg = model.registry();
  for (auto& p : reg.params) {
    const auto& e = need(p.name, p.tensor.numel());
    std::copy(e.values.begin(), e.values.end(), p.tensor.mutable_values().begin());
  }
  for (auto& b : reg.buffers) *b.data = need(b.name, b.data->size()).values;
  if (adam) {
    for (std::size_t k = 0; k < reg.params.size(); ++k) {
      adam->m[k] = need("adam.m." + reg.params[k].name, adam->m[k].size()).values;
      adam->v[k] = need("adam.v." + reg.params[k].name, adam->v[k].size()).values;
    }
    adam->steps = static_cast<std::uint64_t>(need("adam.steps", 1).values[0]);
  }
  const auto* meta = ckpt.find("meta.step");
  if (!meta || meta->values.size() != 2) return 0;
  return static_cast<std::uint64_t>(meta->values[0]) | (static_cast<std::uint64_t>(meta->values[1]) << 24);
}

}  // namespace tfm
