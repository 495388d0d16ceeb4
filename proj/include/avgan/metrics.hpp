#pragma once

// Distribution metrics (FID, KID) over feature vectors and the H-channel
// structural similarity (CSS) between paired source/translation images.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "avgan/color_space.hpp"
#include "avgan/nn.hpp"
#include "avgan/tensor.hpp"

namespace avgan::metrics {

using FeatureSet = std::vector<std::vector<double>>;  // one row per sample

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  /// Deterministic map from a 3 x H x W image to a dim() vector.
  virtual std::vector<double> extract(const Tensor& image) const = 0;

  FeatureSet extract_all(const std::vector<Tensor>& images) const;
};

/// Fixed-seed random convolutional network: three stride-2 3x3 conv + ReLU
/// layers (16, 32, 64 channels) and global average pooling.
class ToyConvExtractor final : public FeatureExtractor {
 public:
  explicit ToyConvExtractor(std::uint64_t seed = 1234);
  std::string name() const override { return "toy-conv64"; }
  int dim() const override { return 64; }
  std::vector<double> extract(const Tensor& image) const override;

 private:
  ParamStore store_;
  std::vector<Conv2d> layers_;
};

using ExtractorFactory = std::function<std::unique_ptr<FeatureExtractor>()>;

/// Registry; "toy" is built in. Register e.g. an inception adapter under its
/// own name to obtain paper-comparable numbers.
void register_extractor(const std::string& name, ExtractorFactory factory);
std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name);
std::vector<std::string> extractor_names();

struct Moments {
  std::vector<double> mean;
  std::vector<std::vector<double>> cov;  // d x d
};

/// Sample mean and unbiased covariance; needs >= 2 samples.
Moments moments(const FeatureSet& x);

struct FidInfo {
  bool regularized = false;  // epsilon * I was added to both covariances
};

inline constexpr double kFidEpsilon = 1e-6;

/// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
double fid_from_moments(const Moments& a, const Moments& b, FidInfo* info = nullptr);
double fid(const FeatureSet& a, const FeatureSet& b, FidInfo* info = nullptr);

/// (x.y / d + 1)^3
double polynomial_kernel(std::span<const double> x, std::span<const double> y);

/// Unbiased MMD^2 estimate for one pair of equally sized subsets.
double mmd2_unbiased(const FeatureSet& a, const FeatureSet& b);

struct KidOptions {
  int subsets = 100;
  int subset_size = 1000;  // clipped to the smaller set
  std::uint64_t seed = 0;
};

/// Mean of mmd2_unbiased over random subsets (raw value, not x100).
double kid(const FeatureSet& a, const FeatureSet& b, const KidOptions& options = {});

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), data range 1.
/// Inputs are 1 x H x W (or H x W flattened with the given dims).
double ssim(const Tensor& a, const Tensor& b);

/// Mean over pairs of ssim(h_channel(source), h_channel(translated)).
double css(const std::vector<Tensor>& sources, const std::vector<Tensor>& translated,
           const color::StainMatrix& stains = color::ruifrok_johnston());

struct MetricReport {
  double fid = 0.0;
  double kid_x100 = 0.0;
  double css = 0.0;
  int n_samples = 0;
  std::string extractor;
  std::string config_hash;
  bool fid_regularized = false;

  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

/// FID and KID between translated and target images; CSS between sources
/// and their translations (paired by position).
MetricReport evaluate_sets(const std::vector<Tensor>& sources, const std::vector<Tensor>& translated,
                           const std::vector<Tensor>& targets, const FeatureExtractor& extractor,
                           const KidOptions& kid_options = {});

}  // namespace avgan::metrics
