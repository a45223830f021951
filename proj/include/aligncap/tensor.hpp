#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace aligncap {

// Dense row-major matrix of doubles. Row-vector convention: y = x * W with
// W shaped (in x out).
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  double* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
  size_t size() const { return v.size(); }
  void zero() { std::fill(v.begin(), v.end(), 0.0); }
};

using Vec = std::vector<double>;

// out(n x q) = a(n x p) * b(p x q)
Mat matmul(const Mat& a, const Mat& b);
// out(n x p) = a(n x q) * b(p x q)^T
Mat matmul_bt(const Mat& a, const Mat& b);
// out(p x q) = a(n x p)^T * b(n x q)
Mat matmul_at(const Mat& a, const Mat& b);

void add_inplace(Mat& a, const Mat& b);
void axpy(Mat& a, double s, const Mat& b);  // a += s * b
Mat scaled(const Mat& a, double s);
Vec col_sums(const Mat& a);

bool all_finite(const Mat& a);
bool all_finite(const Vec& a);

// Deterministic RNG: mt19937_64 for integers, Box-Muller on top for
// gaussians so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  uint64_t next_u64();
  double uniform();                 // [0, 1)
  double gaussian();                // N(0, 1)
  int uniform_int(int lo, int hi);  // inclusive
  template <typename T>
  void shuffle(std::vector<T>& xs) {
    for (int i = static_cast<int>(xs.size()) - 1; i > 0; --i) {
      std::swap(xs[i], xs[uniform_int(0, i)]);
    }
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Named view into a parameter tensor, used for checkpointing, SGD updates
// and finite-difference sweeps.
struct TensorRef {
  std::string name;
  std::vector<int> shape;
  double* data = nullptr;
  size_t size = 0;
};

}  // namespace aligncap
