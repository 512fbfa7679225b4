#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "cnnzoo/gradcheck.hpp"
#include "cnnzoo/rng.hpp"
#include "cnnzoo/tensor.hpp"

namespace testing_support {

using cnnzoo::Rng;
using cnnzoo::Shape;
using cnnzoo::Tensor;

template <typename T = double>
Tensor<T> random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<T> t(s);
  for (auto& v : t.values()) v = static_cast<T>(scale * rng.normal());
  return t;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Worst relative error between `analytic` and central differences of the
/// scalar function f with respect to every entry of `wrt`.
inline double max_fd_error(Tensor<double>& wrt, const Tensor<double>& analytic, const std::function<double()>& f,
                           double eps = 1e-4) {
  double worst = 0.0;
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    const double saved = wrt[i];
    wrt[i] = saved + eps;
    const double plus = f();
    wrt[i] = saved - eps;
    const double minus = f();
    wrt[i] = saved;
    worst = std::max(worst, cnnzoo::relative_error(analytic[i], (plus - minus) / (2.0 * eps)));
  }
  return worst;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("cnnzoo_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support
