#include "aligncap/tensor.hpp"

#include <cmath>

namespace aligncap {

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: shape mismatch");
  Mat out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    double* or_ = out.row(i);
    for (int k = 0; k < a.cols; ++k) {
      const double aik = ar[k];
      if (aik == 0.0) continue;
      const double* br = b.row(k);
      for (int j = 0; j < b.cols; ++j) or_[j] += aik * br[j];
    }
  }
  return out;
}

Mat matmul_bt(const Mat& a, const Mat& b) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_bt: shape mismatch");
  Mat out(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* br = b.row(j);
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += ar[k] * br[k];
      out.at(i, j) = s;
    }
  }
  return out;
}

Mat matmul_at(const Mat& a, const Mat& b) {
  if (a.rows != b.rows) throw std::invalid_argument("matmul_at: shape mismatch");
  Mat out(a.cols, b.cols);
  for (int n = 0; n < a.rows; ++n) {
    const double* ar = a.row(n);
    const double* br = b.row(n);
    for (int i = 0; i < a.cols; ++i) {
      const double ai = ar[i];
      if (ai == 0.0) continue;
      double* or_ = out.row(i);
      for (int j = 0; j < b.cols; ++j) or_[j] += ai * br[j];
    }
  }
  return out;
}

void add_inplace(Mat& a, const Mat& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("add: shape mismatch");
  for (size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

void axpy(Mat& a, double s, const Mat& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("axpy: shape mismatch");
  for (size_t i = 0; i < a.v.size(); ++i) a.v[i] += s * b.v[i];
}

Mat scaled(const Mat& a, double s) {
  Mat out = a;
  for (double& x : out.v) x *= s;
  return out;
}

Vec col_sums(const Mat& a) {
  Vec out(a.cols, 0.0);
  for (int i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    for (int j = 0; j < a.cols; ++j) out[j] += ar[j];
  }
  return out;
}

bool all_finite(const Mat& a) {
  for (double x : a.v)
    if (!std::isfinite(x)) return false;
  return true;
}

bool all_finite(const Vec& a) {
  for (double x : a)
    if (!std::isfinite(x)) return false;
  return true;
}

uint64_t Rng::next_u64() {
  // xorshift* would do; mt19937_64 step emulated inline is overkill, so use
  // splitmix64 which is fully portable.
  uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
}

double Rng::gaussian() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

int Rng::uniform_int(int lo, int hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(next_u64() % span);
}

}  // namespace aligncap
