#include "avgan/metrics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <mutex>

#include "json.hpp"

#include "avgan/error.hpp"
#include "avgan/ops.hpp"

namespace avgan::metrics {
namespace {

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& m) {
  const int d = static_cast<int>(m.size());
  Eigen::MatrixXd out(d, d);
  for (int i = 0; i < d; ++i) {
    if (static_cast<int>(m[static_cast<std::size_t>(i)].size()) != d) throw InvalidInput("covariance must be square");
    for (int j = 0; j < d; ++j) out(i, j) = m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return out;
}

int check_features(const FeatureSet& x, const char* which) {
  if (x.size() < 2) throw InvalidInput(std::string(which) + " needs at least 2 samples");
  const std::size_t d = x.front().size();
  if (d == 0) throw InvalidInput(std::string(which) + ": empty feature vectors");
  for (const auto& row : x) {
    if (row.size() != d) throw InvalidInput(std::string(which) + ": inconsistent feature dimension");
  }
  return static_cast<int>(d);
}

struct Registry {
  std::mutex mu;
  std::map<std::string, ExtractorFactory> factories;
};

Registry& registry() {
  static Registry* r = [] {
    auto* init = new Registry;
    init->factories["toy"] = [] { return std::make_unique<ToyConvExtractor>(); };
    return init;
  }();
  return *r;
}

// Separable valid-mode Gaussian filter over an H x W plane.
std::vector<double> gaussian_filter_valid(const std::vector<double>& x, int h, int w, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size());
  const int ow = w - r + 1;
  const int oh = h - r + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int i = 0; i < r; ++i) s += k[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(y) * w + c + i];
      tmp[static_cast<std::size_t>(y) * ow + c] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int i = 0; i < r; ++i) s += k[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>(y + i) * ow + c];
      out[static_cast<std::size_t>(y) * ow + c] = s;
    }
  }
  return out;
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - (size - 1) / 2.0;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
    total += k[static_cast<std::size_t>(i)];
  }
  for (double& v : k) v /= total;
  return k;
}

}  // namespace

FeatureSet FeatureExtractor::extract_all(const std::vector<Tensor>& images) const {
  FeatureSet out;
  out.reserve(images.size());
  for (const Tensor& img : images) out.push_back(extract(img));
  return out;
}

ToyConvExtractor::ToyConvExtractor(std::uint64_t seed) {
  Rng rng(seed);
  int in = 3;
  int i = 0;
  for (int out : {16, 32, 64}) {
    const double stddev = std::sqrt(2.0 / (in * 9));
    layers_.push_back(make_conv(store_, "toy" + std::to_string(i++), in, out, 3, 2, 1, rng, true, stddev));
    in = out;
  }
}

std::vector<double> ToyConvExtractor::extract(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) throw InvalidInput("feature extractor expects 3 x H x W");
  NoGradGuard no_grad;
  Tensor h = image;
  for (const Conv2d& c : layers_) h = relu(c(h));
  const int c = h.dim(0);
  const std::size_t hw = static_cast<std::size_t>(h.dim(1)) * h.dim(2);
  std::vector<double> out(static_cast<std::size_t>(c), 0.0);
  const auto d = h.data();
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t p = 0; p < hw; ++p) s += d[static_cast<std::size_t>(ch) * hw + p];
    out[static_cast<std::size_t>(ch)] = s / static_cast<double>(hw);
  }
  return out;
}

void register_extractor(const std::string& name, ExtractorFactory factory) {
  Registry& r = registry();
  std::lock_guard lock(r.mu);
  r.factories[name] = std::move(factory);
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name) {
  Registry& r = registry();
  std::lock_guard lock(r.mu);
  const auto it = r.factories.find(name);
  if (it == r.factories.end()) throw InvalidInput("unknown feature extractor '" + name + "'");
  return it->second();
}

std::vector<std::string> extractor_names() {
  Registry& r = registry();
  std::lock_guard lock(r.mu);
  std::vector<std::string> out;
  for (const auto& [k, _] : r.factories) out.push_back(k);
  return out;
}

Moments moments(const FeatureSet& x) {
  const int d = check_features(x, "moments");
  const double n = static_cast<double>(x.size());
  Moments m;
  m.mean.assign(static_cast<std::size_t>(d), 0.0);
  for (const auto& row : x) {
    for (int j = 0; j < d; ++j) m.mean[static_cast<std::size_t>(j)] += row[static_cast<std::size_t>(j)];
  }
  for (double& v : m.mean) v /= n;
  m.cov.assign(static_cast<std::size_t>(d), std::vector<double>(static_cast<std::size_t>(d), 0.0));
  for (const auto& row : x) {
    for (int i = 0; i < d; ++i) {
      const double di = row[static_cast<std::size_t>(i)] - m.mean[static_cast<std::size_t>(i)];
      for (int j = i; j < d; ++j) {
        m.cov[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] += di * (row[static_cast<std::size_t>(j)] - m.mean[static_cast<std::size_t>(j)]);
      }
    }
  }
  for (int i = 0; i < d; ++i) {
    for (int j = i; j < d; ++j) {
      double& v = m.cov[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      v /= (n - 1.0);
      m.cov[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = v;
    }
  }
  return m;
}

double fid_from_moments(const Moments& a, const Moments& b, FidInfo* info) {
  const std::size_t d = a.mean.size();
  if (d == 0 || b.mean.size() != d || a.cov.size() != d || b.cov.size() != d) {
    throw InvalidInput("fid: moment dimensions differ");
  }
  Eigen::MatrixXd sa = to_matrix(a.cov);
  Eigen::MatrixXd sb = to_matrix(b.cov);
  const Eigen::Index n = static_cast<Eigen::Index>(d);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(sa);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eb(sb);
  const auto singular = [](const Eigen::VectorXd& ev) {
    const double top = std::max(1.0, ev.cwiseAbs().maxCoeff());
    return ev.minCoeff() <= 1e-12 * top;
  };
  const bool regularize = singular(ea.eigenvalues()) || singular(eb.eigenvalues());
  if (regularize) {
    std::cerr << "fid: singular covariance, adding " << kFidEpsilon << " * I\n";
    sa += kFidEpsilon * Eigen::MatrixXd::Identity(n, n);
    sb += kFidEpsilon * Eigen::MatrixXd::Identity(n, n);
    ea.compute(sa);
  }
  if (info != nullptr) info->regularized = regularize;

  const Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd root_a = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd inner = root_a * sb * root_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ei(inner, Eigen::EigenvaluesOnly);
  const double tr_sqrt = ei.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  double mean_term = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = a.mean[i] - b.mean[i];
    mean_term += diff * diff;
  }
  const double value = mean_term + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, value);
}

double fid(const FeatureSet& a, const FeatureSet& b, FidInfo* info) {
  if (check_features(a, "fid") != check_features(b, "fid")) throw InvalidInput("fid: feature dimensions differ");
  return fid_from_moments(moments(a), moments(b), info);
}

double polynomial_kernel(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw InvalidInput("kernel: dimension mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * y[i];
  const double base = dot / static_cast<double>(x.size()) + 1.0;
  return base * base * base;
}

double mmd2_unbiased(const FeatureSet& a, const FeatureSet& b) {
  if (check_features(a, "kid") != check_features(b, "kid")) throw InvalidInput("kid: feature dimensions differ");
  const double m = static_cast<double>(a.size());
  const double n = static_cast<double>(b.size());
  double kxx = 0.0;
  double kyy = 0.0;
  double kxy = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) kxx += polynomial_kernel(a[i], a[j]);
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (std::size_t j = i + 1; j < b.size(); ++j) kyy += polynomial_kernel(b[i], b[j]);
  }
  for (const auto& x : a) {
    for (const auto& y : b) kxy += polynomial_kernel(x, y);
  }
  return 2.0 * kxx / (m * (m - 1.0)) + 2.0 * kyy / (n * (n - 1.0)) - 2.0 * kxy / (m * n);
}

double kid(const FeatureSet& a, const FeatureSet& b, const KidOptions& options) {
  if (check_features(a, "kid") != check_features(b, "kid")) throw InvalidInput("kid: feature dimensions differ");
  if (options.subsets < 1 || options.subset_size < 2) throw InvalidInput("kid: need >= 1 subset of >= 2 samples");
  const int m = std::min({options.subset_size, static_cast<int>(a.size()), static_cast<int>(b.size())});
  if (m == static_cast<int>(a.size()) && m == static_cast<int>(b.size())) return mmd2_unbiased(a, b);
  Rng rng(options.seed);
  double total = 0.0;
  for (int s = 0; s < options.subsets; ++s) {
    FeatureSet sa;
    FeatureSet sb;
    for (int i : sample_without_replacement(rng, static_cast<int>(a.size()), m)) sa.push_back(a[static_cast<std::size_t>(i)]);
    for (int i : sample_without_replacement(rng, static_cast<int>(b.size()), m)) sb.push_back(b[static_cast<std::size_t>(i)]);
    total += mmd2_unbiased(sa, sb);
  }
  return total / options.subsets;
}

double ssim(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw InvalidInput("ssim: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  if (a.rank() != 3 || a.dim(0) != 1) throw InvalidInput("ssim expects 1 x H x W");
  constexpr int kWindow = 11;
  const int h = a.dim(1);
  const int w = a.dim(2);
  if (h < kWindow || w < kWindow) throw InvalidInput("ssim: images must be at least 11 x 11");
  const std::vector<double> k = gaussian_window(kWindow, 1.5);
  const std::vector<double> x(a.data().begin(), a.data().end());
  const std::vector<double> y(b.data().begin(), b.data().end());
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = gaussian_filter_valid(x, h, w, k);
  const auto my = gaussian_filter_valid(y, h, w, k);
  const auto exx = gaussian_filter_valid(xx, h, w, k);
  const auto eyy = gaussian_filter_valid(yy, h, w, k);
  const auto exy = gaussian_filter_valid(xy, h, w, k);
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double mxy = mx[i] * my[i];
    const double mxx = mx[i] * mx[i];
    const double myy = my[i] * my[i];
    const double vx = exx[i] - mxx;
    const double vy = eyy[i] - myy;
    const double cxy = exy[i] - mxy;
    total += ((2.0 * mxy + c1) * (2.0 * cxy + c2)) / ((mxx + myy + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

double css(const std::vector<Tensor>& sources, const std::vector<Tensor>& translated, const color::StainMatrix& stains) {
  if (sources.size() != translated.size()) throw InvalidInput("css: source and translated sets differ in size");
  if (sources.empty()) throw InvalidInput("css: empty image sets");
  NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    total += ssim(color::h_channel(sources[i], stains), color::h_channel(translated[i], stains));
  }
  return total / static_cast<double>(sources.size());
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["fid"] = fid;
  j["kid_x100"] = kid_x100;
  j["css"] = css;
  j["n_samples"] = n_samples;
  j["extractor"] = extractor;
  j["config_hash"] = config_hash;
  j["fid_regularized"] = fid_regularized;
  return j.dump(2) + "\n";
}

std::string MetricReport::csv_header() { return "fid,kid_x100,css,n_samples,extractor,config_hash"; }

std::string MetricReport::csv_row() const {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%d,", fid, kid_x100, css, n_samples);
  return buf + extractor + "," + config_hash;
}

MetricReport evaluate_sets(const std::vector<Tensor>& sources, const std::vector<Tensor>& translated,
                           const std::vector<Tensor>& targets, const FeatureExtractor& extractor,
                           const KidOptions& kid_options) {
  const FeatureSet ft = extractor.extract_all(translated);
  const FeatureSet fr = extractor.extract_all(targets);
  MetricReport r;
  FidInfo info;
  r.fid = fid(ft, fr, &info);
  r.fid_regularized = info.regularized;
  r.kid_x100 = 100.0 * kid(ft, fr, kid_options);
  r.css = css(sources, translated);
  r.n_samples = static_cast<int>(translated.size());
  r.extractor = extractor.name();
  return r;
}

}  // namespace avgan::metrics
