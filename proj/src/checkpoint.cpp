#include "terracer/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace terracer {

namespace {

constexpr char kMagic[6] = {'T', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw DataError("checkpoint: truncated record header");
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
         uint32_t(b[3]) << 24;
}

// Host is little-endian on every supported target; payloads go through
// a byte-exact path regardless.
void put_f32_le(std::ostream& os, const float* data, size_t n) {
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(data),
           static_cast<std::streamsize>(n * 4));
}

}  // namespace

void write_checkpoint_records(const std::filesystem::path& path,
                              const std::vector<CheckpointRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot open for writing: " +
                           path.string());
  os.write(kMagic, sizeof(kMagic));
  for (const auto& r : records) {
    put_u32(os, static_cast<uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put_u32(os, static_cast<uint32_t>(r.shape.size()));
    for (int e : r.shape) put_u32(os, static_cast<uint32_t>(e));
    put_f32_le(os, r.data.data(), r.data.size());
  }
  if (!os) throw DataError("checkpoint: write failed: " + path.string());
}

std::vector<CheckpointRecord> read_checkpoint_records(
    const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open: " + path.string());
  char magic[6];
  is.read(magic, 6);
  if (!is || std::memcmp(magic, kMagic, 6) != 0)
    throw DataError("checkpoint: bad magic in " + path.string());
  std::vector<CheckpointRecord> out;
  while (true) {
    is.peek();
    if (is.eof()) break;
    CheckpointRecord r;
    const uint32_t nlen = get_u32(is);
    r.name.resize(nlen);
    is.read(r.name.data(), nlen);
    const uint32_t rank = get_u32(is);
    if (rank > 8) throw DataError("checkpoint: implausible rank");
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const uint32_t e = get_u32(is);
      r.shape.push_back(static_cast<int>(e));
      numel *= e;
    }
    r.data.resize(static_cast<size_t>(numel));
    is.read(reinterpret_cast<char*>(r.data.data()), numel * 4);
    if (!is) throw DataError("checkpoint: truncated payload for '" + r.name +
                             "' in " + path.string());
    out.push_back(std::move(r));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path,
                     const Model<float>& model) {
  std::vector<CheckpointRecord> records;
  auto push = [&records](const std::string& name, const Var<float>& v) {
    records.push_back({name, v->value.shape(), v->value.vec()});
  };
  for (const auto& [name, v] : model.params) push(name, v);
  for (const auto& [name, v] : model.buffers) push(name, v);
  write_checkpoint_records(path, records);
}

void load_checkpoint(const std::filesystem::path& path, Model<float>& model) {
  auto records = read_checkpoint_records(path);
  size_t used = 0;
  auto fill = [&](const std::string& name, const Var<float>& v) {
    for (const auto& r : records) {
      if (r.name != name) continue;
      if (r.shape != v->value.shape())
        throw DataError("checkpoint: shape mismatch for '" + name + "': " +
                        shape_str(r.shape) + " vs " +
                        shape_str(v->value.shape()));
      v->value.vec() = r.data;
      ++used;
      return;
    }
    throw DataError("checkpoint: missing record '" + name + "' in " +
                    path.string());
  };
  for (const auto& [name, v] : model.params) fill(name, v);
  for (const auto& [name, v] : model.buffers) fill(name, v);
  if (used != records.size())
    throw DataError("checkpoint: file has " +
                    std::to_string(records.size() - used) +
                    " record(s) unknown to this architecture");
}

void write_checkpoint_meta(const std::filesystem::path& ckpt_path,
                           const CheckpointMeta& meta) {
  nlohmann::json j;
  j["preset"] = meta.preset;
  j["bands"] = meta.bands;
  j["classes"] = meta.classes;
  j["strategy"] = meta.strategy;
  j["seed"] = meta.seed;
  std::ofstream os(ckpt_path.string() + ".json");
  if (!os)
    throw DataError("checkpoint: cannot write sidecar for " +
                    ckpt_path.string());
  os << j.dump(2) << "\n";
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& ckpt_path) {
  std::ifstream is(ckpt_path.string() + ".json");
  if (!is)
    throw DataError("checkpoint: missing sidecar " + ckpt_path.string() +
                    ".json (needed to rebuild the architecture)");
  nlohmann::json j = nlohmann::json::parse(is);
  CheckpointMeta m;
  m.preset = j.at("preset").get<std::string>();
  m.bands = j.at("bands").get<int>();
  m.classes = j.at("classes").get<int>();
  m.strategy = j.at("strategy").get<std::string>();
  m.seed = j.value("seed", uint64_t{0});
  return m;
}

Model<float> load_model(const std::filesystem::path& ckpt_path) {
  const CheckpointMeta meta = read_checkpoint_meta(ckpt_path);
  Model<float> m =
      build_preset<float>(meta.preset, meta.seed, meta.bands, meta.classes);
  load_checkpoint(ckpt_path, m);
  return m;
}

}  // namespace terracer
