#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hseg {

// Dense 4-D array (batch, channel, height, width), row-major. Real is float
// for model math and double for gradient checking / metric accumulation.
template <class Real>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<Real> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
      throw std::invalid_argument("tensor: negative extent");
    v.assign(static_cast<size_t>(n_) * c_ * h_ * w_, Real(0));
  }

  static Tensor full(int n, int c, int h, int w, Real value) {
    Tensor t(n, c, h, w);
    for (auto& x : t.v) x = value;
    return t;
  }

  size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }

  size_t idx(int in, int ic, int iy, int ix) const {
    return ((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix;
  }
  Real& at(int in, int ic, int iy, int ix) { return v[idx(in, ic, iy, ix)]; }
  Real at(int in, int ic, int iy, int ix) const { return v[idx(in, ic, iy, ix)]; }

  // Pointer to the start of one (image, channel) plane.
  Real* plane(int in, int ic) { return v.data() + idx(in, ic, 0, 0); }
  const Real* plane(int in, int ic) const { return v.data() + idx(in, ic, 0, 0); }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }

  void fill(Real value) {
    for (auto& x : v) x = value;
  }

  bool all_finite() const {
    for (Real x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <class Other>
  Tensor<Other> cast() const {
    Tensor<Other> t(n, c, h, w);
    for (size_t i = 0; i < v.size(); ++i) t.v[i] = static_cast<Other>(v[i]);
    return t;
  }
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Deterministic RNG. mt19937 output is pinned by the standard; the mappings
// below avoid std::*_distribution, whose sequences differ across libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(static_cast<uint32_t>(seed ^ (seed >> 32))) {}

  double uniform() {  // [0, 1)
    return gen_() * (1.0 / 4294967296.0);
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int bound) {
    if (bound <= 1) return 0;
    return static_cast<int>(gen_() % static_cast<uint32_t>(bound));
  }

  double normal() {  // Box-Muller, pair cached
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-12) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <class T>
  void shuffle(std::vector<T>& items) {  // Fisher-Yates
    for (int i = static_cast<int>(items.size()) - 1; i > 0; --i) {
      const int j = uniform_int(i + 1);
      std::swap(items[static_cast<size_t>(i)], items[static_cast<size_t>(j)]);
    }
  }

  uint32_t raw() { return gen_(); }

 private:
  std::mt19937 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Stable derived seed for per-sample / per-epoch streams.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t x = a * 0x9e3779b97f4a7c15ULL + b + 0x853c49e6748fea9bULL;
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

template <class Real>
void fill_normal(Tensor<Real>& t, Rng& rng, double stddev) {
  for (auto& x : t.v) x = static_cast<Real>(rng.normal() * stddev);
}

template <class Real>
void fill_uniform(Tensor<Real>& t, Rng& rng, double lo, double hi) {
  for (auto& x : t.v) x = static_cast<Real>(rng.uniform(lo, hi));
}

}  // namespace hseg
