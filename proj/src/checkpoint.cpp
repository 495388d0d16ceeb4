#include "avgan/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "avgan/error.hpp"

namespace avgan {

const std::vector<double>& Archive::blob(const std::string& name) const {
  for (const auto& [n, v] : blobs) {
    if (n == name) return v;
  }
  throw IoError("checkpoint has no entry " + name);
}

void save_archive(const std::filesystem::path& path, const Archive& archive) {
  nlohmann::json header = archive.header;
  header["blobs"] = nlohmann::json::array();
  for (const auto& [name, values] : archive.blobs) header["blobs"].push_back({{"name", name}, {"count", values.size()}});
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [_, values] : archive.blobs) {
      out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    }
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof kCheckpointMagic];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw IoError(path.string() + " is not a checkpoint");
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in) throw IoError("truncated checkpoint " + path.string());
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated checkpoint header in " + path.string());

  Archive a;
  try {
    a.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  for (const auto& b : a.header.at("blobs")) {
    std::vector<double> values(b.at("count").get<std::size_t>());
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint data in " + path.string());
    a.blobs.emplace_back(b.at("name").get<std::string>(), std::move(values));
  }
  a.header.erase("blobs");
  return a;
}

}  // namespace avgan
