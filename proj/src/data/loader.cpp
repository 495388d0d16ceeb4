#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>

#include "avgan/data.hpp"
#include "avgan/error.hpp"

namespace avgan::data {

int num_workers_from_env() {
  const char* env = std::getenv("AVGAN_NUM_WORKERS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw InvalidInput(std::string("AVGAN_NUM_WORKERS must be a positive integer, got ") + env);
  return static_cast<int>(n);
}

std::vector<NamedImage> load_directory(const std::filesystem::path& dir, bool allow_empty) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> paths;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty() && !allow_empty) throw InvalidInput("empty domain directory: " + dir.string());

  std::vector<NamedImage> out(paths.size());
  const int workers = std::min<int>(num_workers_from_env(), static_cast<int>(std::max<std::size_t>(paths.size(), 1)));
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  auto work = [&](int w) {
    try {
      for (std::size_t i = next++; i < paths.size(); i = next++) {
        out[i] = {paths[i].filename().string(), read_png(paths[i])};
      }
    } catch (...) {
      errors[static_cast<std::size_t>(w)] = std::current_exception();
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

UnpairedLoader::UnpairedLoader(const std::filesystem::path& dir_a, const std::filesystem::path& dir_b)
    : UnpairedLoader(load_directory(dir_a), load_directory(dir_b)) {}

UnpairedLoader::UnpairedLoader(std::vector<NamedImage> a, std::vector<NamedImage> b)
    : a_(std::move(a)), b_(std::move(b)) {
  if (a_.empty() || b_.empty()) throw InvalidInput("unpaired loader needs non-empty domains");
}

UnpairedLoader::Pair UnpairedLoader::next(Rng& rng) const {
  Pair p;
  p.index_a = uniform_index(rng, a_.size());
  p.index_b = uniform_index(rng, b_.size());
  p.x = to_tensor(a_[p.index_a].image);
  p.y = to_tensor(b_[p.index_b].image);
  return p;
}

}  // namespace avgan::data
