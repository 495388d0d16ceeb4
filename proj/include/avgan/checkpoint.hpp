#pragma once

// Single-file versioned archive: an 8-byte magic, a format version, a JSON
// header and a sequence of raw little-endian double blobs described by the
// header's "blobs" list.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace avgan {

inline constexpr char kCheckpointMagic[8] = {'A', 'V', 'G', 'A', 'N', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Archive {
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, std::vector<double>>> blobs;

  const std::vector<double>& blob(const std::string& name) const;
};

/// Writes to a temporary sibling and renames, so readers never see a partial file.
void save_archive(const std::filesystem::path& path, const Archive& archive);
Archive load_archive(const std::filesystem::path& path);

}  // namespace avgan
