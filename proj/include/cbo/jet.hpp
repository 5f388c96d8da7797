#pragma once

#include <array>
#include <cmath>

namespace cbo {

// Truncated Taylor polynomial in one variable: c[k] = f^(k)(x0) / k!.
template <int K>
struct Jet {
  static_assert(K >= 0);
  std::array<double, K + 1> c{};

  static Jet constant(double v) {
    Jet j;
    j.c[0] = v;
    return j;
  }
  static Jet variable(double x0) {
    Jet j;
    j.c[0] = x0;
    if constexpr (K >= 1) j.c[1] = 1.0;
    return j;
  }

  double value() const { return c[0]; }
  double derivative(int k) const {
    double f = 1.0;
    for (int i = 2; i <= k; ++i) f *= i;
    return c[k] * f;
  }

  Jet& operator+=(const Jet& o) {
    for (int k = 0; k <= K; ++k) c[k] += o.c[k];
    return *this;
  }
  Jet& operator-=(const Jet& o) {
    for (int k = 0; k <= K; ++k) c[k] -= o.c[k];
    return *this;
  }
  Jet& operator*=(double s) {
    for (auto& v : c) v *= s;
    return *this;
  }
  Jet& operator+=(double s) {
    c[0] += s;
    return *this;
  }
};

template <int K>
Jet<K> operator+(Jet<K> a, const Jet<K>& b) { return a += b; }
template <int K>
Jet<K> operator-(Jet<K> a, const Jet<K>& b) { return a -= b; }
template <int K>
Jet<K> operator-(Jet<K> a) { return a *= -1.0; }
template <int K>
Jet<K> operator*(Jet<K> a, double s) { return a *= s; }
template <int K>
Jet<K> operator*(double s, Jet<K> a) { return a *= s; }
template <int K>
Jet<K> operator+(Jet<K> a, double s) { return a += s; }
template <int K>
Jet<K> operator+(double s, Jet<K> a) { return a += s; }
template <int K>
Jet<K> operator-(Jet<K> a, double s) { return a += -s; }
template <int K>
Jet<K> operator-(double s, Jet<K> a) { return (a *= -1.0) += s; }

template <int K>
Jet<K> operator*(const Jet<K>& a, const Jet<K>& b) {
  Jet<K> r;
  for (int k = 0; k <= K; ++k) {
    double s = 0.0;
    for (int j = 0; j <= k; ++j) s += a.c[j] * b.c[k - j];
    r.c[k] = s;
  }
  return r;
}

template <int K>
Jet<K> operator/(const Jet<K>& a, const Jet<K>& b) {
  Jet<K> r;
  for (int k = 0; k <= K; ++k) {
    double s = a.c[k];
    for (int j = 1; j <= k; ++j) s -= b.c[j] * r.c[k - j];
    r.c[k] = s / b.c[0];
  }
  return r;
}

template <int K>
Jet<K> exp(const Jet<K>& a) {
  Jet<K> r;
  r.c[0] = std::exp(a.c[0]);
  for (int k = 1; k <= K; ++k) {
    double s = 0.0;
    for (int j = 1; j <= k; ++j) s += j * a.c[j] * r.c[k - j];
    r.c[k] = s / k;
  }
  return r;
}

// |a| away from the kink; the sign of the value picks the branch.
template <int K>
Jet<K> abs(const Jet<K>& a) {
  return a.c[0] < 0.0 ? -a : a;
}

template <int K>
Jet<K> square(const Jet<K>& a) { return a * a; }

}  // namespace cbo
