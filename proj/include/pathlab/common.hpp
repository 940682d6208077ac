#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace pathlab {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

// Dense square boolean matrix, 0-based indices.
class BoolMatrix {
 public:
  BoolMatrix() = default;
  explicit BoolMatrix(int n) : n_(n), bits_(static_cast<std::size_t>(n) * n, 0) {}

  int size() const { return n_; }

  bool operator()(int r, int c) const { return bits_[index(r, c)] != 0; }
  void set(int r, int c, bool v = true) { bits_[index(r, c)] = v ? 1 : 0; }

  std::size_t count() const {
    std::size_t k = 0;
    for (auto b : bits_) k += b;
    return k;
  }

  MatrixD as_double() const {
    MatrixD m(n_, n_);
    for (int r = 0; r < n_; ++r)
      for (int c = 0; c < n_; ++c) m(r, c) = (*this)(r, c) ? 1.0 : 0.0;
    return m;
  }

  bool operator==(const BoolMatrix&) const = default;

 private:
  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(c);
  }

  int n_ = 0;
  std::vector<std::uint8_t> bits_;
};

// SplitMix64 finalizer; used to derive independent RNG streams from a base
// seed plus integer coordinates (pair, trial, ...).
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(base) ^ a) ^ (b * 0x2545f4914f6cdd1dULL + 1));
}

}  // namespace pathlab
