#ifndef VELO_DUAL_HPP
#define VELO_DUAL_HPP

#include <array>
#include <cmath>

namespace velo {

/**
 * Forward-mode dual number carrying N partial derivatives.
 *
 * Used to differentiate the closed-form kinetic solution with respect to
 * time, transcription scaling, and the per-gene rate parameters without
 * hand-deriving every branch.
 */
template <int N>
struct Dual {
    double v = 0.0;
    std::array<double, N> d{};

    Dual() = default;
    Dual(double value) : v(value) {}  // NOLINT: implicit constants are convenient in kernels

    static Dual variable(double value, int index) {
        Dual out(value);
        out.d[index] = 1.0;
        return out;
    }

    Dual& operator+=(const Dual& o) {
        v += o.v;
        for (int i = 0; i < N; ++i) d[i] += o.d[i];
        return *this;
    }
    Dual& operator-=(const Dual& o) {
        v -= o.v;
        for (int i = 0; i < N; ++i) d[i] -= o.d[i];
        return *this;
    }
    Dual& operator*=(const Dual& o) {
        for (int i = 0; i < N; ++i) d[i] = d[i] * o.v + v * o.d[i];
        v *= o.v;
        return *this;
    }
    Dual& operator/=(const Dual& o) {
        const double inv = 1.0 / o.v;
        for (int i = 0; i < N; ++i) d[i] = (d[i] - v * inv * o.d[i]) * inv;
        v *= inv;
        return *this;
    }
};

template <int N> Dual<N> operator+(Dual<N> a, const Dual<N>& b) { return a += b; }
template <int N> Dual<N> operator-(Dual<N> a, const Dual<N>& b) { return a -= b; }
template <int N> Dual<N> operator*(Dual<N> a, const Dual<N>& b) { return a *= b; }
template <int N> Dual<N> operator/(Dual<N> a, const Dual<N>& b) { return a /= b; }
template <int N> Dual<N> operator+(Dual<N> a, double b) { a.v += b; return a; }
template <int N> Dual<N> operator+(double b, Dual<N> a) { a.v += b; return a; }
template <int N> Dual<N> operator-(Dual<N> a, double b) { a.v -= b; return a; }
template <int N> Dual<N> operator-(double b, const Dual<N>& a) {
    Dual<N> out(b - a.v);
    for (int i = 0; i < N; ++i) out.d[i] = -a.d[i];
    return out;
}
template <int N> Dual<N> operator-(const Dual<N>& a) { return 0.0 - a; }
template <int N> Dual<N> operator*(Dual<N> a, double b) {
    a.v *= b;
    for (auto& x : a.d) x *= b;
    return a;
}
template <int N> Dual<N> operator*(double b, Dual<N> a) { return a * b; }
template <int N> Dual<N> operator/(Dual<N> a, double b) { return a * (1.0 / b); }
template <int N> Dual<N> operator/(double b, const Dual<N>& a) { return Dual<N>(b) / a; }

template <int N> bool operator<(const Dual<N>& a, const Dual<N>& b) { return a.v < b.v; }
template <int N> bool operator<(const Dual<N>& a, double b) { return a.v < b; }
template <int N> bool operator<(double a, const Dual<N>& b) { return a < b.v; }
template <int N> bool operator<=(const Dual<N>& a, double b) { return a.v <= b; }

template <int N>
Dual<N> exp(const Dual<N>& a) {
    Dual<N> out(std::exp(a.v));
    for (int i = 0; i < N; ++i) out.d[i] = out.v * a.d[i];
    return out;
}

template <int N>
Dual<N> expm1(const Dual<N>& a) {
    Dual<N> out(std::expm1(a.v));
    const double slope = std::exp(a.v);
    for (int i = 0; i < N; ++i) out.d[i] = slope * a.d[i];
    return out;
}

template <int N>
Dual<N> abs(const Dual<N>& a) {
    return a.v < 0.0 ? -a : a;
}

inline double value_of(double x) { return x; }
template <int N> double value_of(const Dual<N>& x) { return x.v; }

}  // namespace velo

#endif
