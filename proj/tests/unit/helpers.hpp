#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"

#include "avgan/nn.hpp"
#include "avgan/tensor.hpp"

namespace testing {

inline std::vector<double> uniform(avgan::Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline avgan::Tensor random_tensor(avgan::Rng& rng, avgan::Shape shape, double lo = -1.0, double hi = 1.0) {
  const std::size_t n = avgan::shape_numel(shape);
  return avgan::Tensor(std::move(shape), uniform(rng, n, lo, hi));
}

inline avgan::Tensor random_param(avgan::Rng& rng, avgan::Shape shape, double lo = -1.0, double hi = 1.0) {
  const std::size_t n = avgan::shape_numel(shape);
  return avgan::Tensor::parameter(std::move(shape), uniform(rng, n, lo, hi));
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradCheck {
  double max_rel_error = 0.0;  // worst single entry
  double max_abs_grad = 0.0;
  // |a - n| / max(|a|, |n|) over every checked entry as one vector
  double norm_rel_error = 0.0;
  // the same per input tensor, with abs_floor on the denominator
  double max_tensor_norm_rel_error = 0.0;
  int checked = 0;
};

/// Compares backward() against central differences on up to `per_tensor`
/// entries of every input. `f` must rebuild the graph on each call.
inline GradCheck check_gradients(const std::function<avgan::Tensor()>& f, std::vector<avgan::Tensor> inputs,
                                 int per_tensor = 12, double h = 1e-6, double abs_floor = 1e-7) {
  for (auto& t : inputs) t.zero_grad();
  f().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.push_back(t.grad());
  GradCheck out;
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    double td2 = 0.0, ta2 = 0.0, tn2 = 0.0;
    auto data = inputs[k].mutable_data();
    const std::size_t n = data.size();
    const std::size_t step = std::max<std::size_t>(1, n / static_cast<std::size_t>(per_tensor));
    for (std::size_t i = 0; i < n; i += step) {
      const double saved = data[i];
      data[i] = saved + h;
      const double fp = f().item();
      data[i] = saved - h;
      const double fm = f().item();
      data[i] = saved;
      const double numeric = (fp - fm) / (2 * h);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), abs_floor});
      out.max_rel_error = std::max(out.max_rel_error, err);
      out.max_abs_grad = std::max(out.max_abs_grad, std::abs(a));
      td2 += (a - numeric) * (a - numeric);
      ta2 += a * a;
      tn2 += numeric * numeric;
      ++out.checked;
    }
    out.max_tensor_norm_rel_error = std::max(
        out.max_tensor_norm_rel_error, std::sqrt(td2) / std::max({std::sqrt(ta2), std::sqrt(tn2), abs_floor}));
    diff2 += td2;
    a2 += ta2;
    n2 += tn2;
  }
  out.norm_rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), abs_floor});
  return out;
}

/// Fresh directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("avgan_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace testing
