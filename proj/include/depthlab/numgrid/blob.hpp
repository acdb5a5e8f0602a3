#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "depthlab/numgrid/model.hpp"

namespace depthlab::numgrid {

// Binary container used for checkpoints and exact rasters:
//   8 bytes   magic "DLBLOB01"
//   8 bytes   little-endian uint64 header length N
//   N bytes   UTF-8 JSON header {"meta": {...}, "arrays": [{name, shape, offset, count}]}
//   payload   little-endian float64 values, arrays back to back
struct BlobArray {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;
};

struct Blob {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<BlobArray> arrays;

  const BlobArray& array(const std::string& name) const;
};

std::string encode_blob(const Blob& blob);
Blob decode_blob(const std::string& bytes);
void write_blob(const std::filesystem::path& path, const Blob& blob);
Blob read_blob(const std::filesystem::path& path);

// Checkpoint = model config, seed and step count in the header plus one
// array per parameter tensor ("encoder/enc1.weight", ...).
Blob checkpoint_blob(const ModelParams& params, std::uint64_t seed, std::int64_t step,
                     const nlohmann::json& extra = nlohmann::json::object());
ModelParams params_from_blob(const Blob& blob);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     std::uint64_t seed, std::int64_t step,
                     const nlohmann::json& extra = nlohmann::json::object());
ModelParams load_checkpoint(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary file and rename so readers never see partial output.
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace depthlab::numgrid
