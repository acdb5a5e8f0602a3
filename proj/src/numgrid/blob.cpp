#include "depthlab/numgrid/blob.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "depthlab/errors.hpp"

namespace depthlab::numgrid {
namespace {

static_assert(std::endian::native == std::endian::little,
              "blob encoding assumes a little-endian host");

constexpr char kMagic[8] = {'D', 'L', 'B', 'L', 'O', 'B', '0', '1'};

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw IoError("blob: negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

const BlobArray& Blob::array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw IoError("blob: missing array '" + name + "'");
}

std::string encode_blob(const Blob& blob) {
  nlohmann::json header;
  header["meta"] = blob.meta;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : blob.arrays) {
    if (element_count(a.shape) != a.values.size()) {
      throw ConfigError("blob: array '" + a.name + "' shape does not match value count");
    }
    header["arrays"].push_back(
        {{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.values.size()}});
    offset += a.values.size();
  }
  const std::string text = header.dump();
  const std::uint64_t n = text.size();
  std::string out(kMagic, sizeof kMagic);
  out.append(reinterpret_cast<const char*>(&n), sizeof n);
  out += text;
  for (const auto& a : blob.arrays) {
    out.append(reinterpret_cast<const char*>(a.values.data()), a.values.size() * sizeof(double));
  }
  return out;
}

Blob decode_blob(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw IoError("blob: bad magic");
  }
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data() + 8, sizeof n);
  if (16 + n > bytes.size()) throw IoError("blob: truncated header");
  const auto header = nlohmann::json::parse(bytes.substr(16, n));
  Blob blob;
  blob.meta = header.at("meta");
  const std::size_t payload = 16 + n;
  for (const auto& entry : header.at("arrays")) {
    BlobArray a;
    a.name = entry.at("name").get<std::string>();
    a.shape = entry.at("shape").get<std::vector<int>>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto count = entry.at("count").get<std::uint64_t>();
    if (count != element_count(a.shape)) throw IoError("blob: count/shape mismatch for " + a.name);
    const std::size_t begin = payload + offset * sizeof(double);
    if (begin + count * sizeof(double) > bytes.size()) throw IoError("blob: truncated payload");
    a.values.resize(count);
    std::memcpy(a.values.data(), bytes.data() + begin, count * sizeof(double));
    blob.arrays.push_back(std::move(a));
  }
  return blob;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename into '" + path.string() + "': " + ec.message());
}

void write_blob(const std::filesystem::path& path, const Blob& blob) {
  write_file(path, encode_blob(blob));
}

Blob read_blob(const std::filesystem::path& path) { return decode_blob(read_file(path)); }

Blob checkpoint_blob(const ModelParams& params, std::uint64_t seed, std::int64_t step,
                     const nlohmann::json& extra) {
  Blob blob;
  blob.meta = {{"format", "depthlab-checkpoint"},
               {"version", 1},
               {"config", to_json(params.config)},
               {"seed", seed},
               {"step", step},
               {"extra", extra}};
  for (ParamGroup g : {ParamGroup::kEncoder, ParamGroup::kDepthHead, ParamGroup::kSegHead}) {
    for (const auto& t : params.group(g)) {
      blob.arrays.push_back({std::string(group_name(g)) + "/" + t.name, t.shape, t.values});
    }
  }
  return blob;
}

ModelParams params_from_blob(const Blob& blob) {
  if (blob.meta.value("format", "") != "depthlab-checkpoint") {
    throw IoError("blob is not a depthlab checkpoint");
  }
  ModelParams params = ModelParams::zeros(model_config_from_json(blob.meta.at("config")));
  for (ParamGroup g : {ParamGroup::kEncoder, ParamGroup::kDepthHead, ParamGroup::kSegHead}) {
    for (auto& t : params.group(g)) {
      const auto& a = blob.array(std::string(group_name(g)) + "/" + t.name);
      if (a.shape != t.shape) throw IoError("checkpoint: shape mismatch for " + a.name);
      t.values = a.values;
    }
  }
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     std::uint64_t seed, std::int64_t step, const nlohmann::json& extra) {
  write_blob(path, checkpoint_blob(params, seed, step, extra));
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  return params_from_blob(read_blob(path));
}

}  // namespace depthlab::numgrid
