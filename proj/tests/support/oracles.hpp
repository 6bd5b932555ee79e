#ifndef VELO_TEST_ORACLES_HPP
#define VELO_TEST_ORACLES_HPP

// Reference computations written independently of the library so that tests
// compare two separate implementations.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace oracle {

struct UV {
    double u = 0.0;
    double s = 0.0;
};

/// Classic RK4 for du/dt = a(t) - beta u, ds/dt = beta u - gamma s with fixed step h.
inline UV integrate(const std::function<double(double)>& a, double beta, double gamma, UV x, double t0, double t1,
                    double h = 1e-4) {
    const int steps = std::max(1, static_cast<int>(std::ceil((t1 - t0) / h - 1e-9)));
    const double dt = (t1 - t0) / steps;
    auto f = [&](double t, const UV& y) { return UV{a(t) - beta * y.u, beta * y.u - gamma * y.s}; };
    double t = t0;
    for (int k = 0; k < steps; ++k) {
        const UV k1 = f(t, x);
        const UV k2 = f(t + dt / 2, {x.u + dt / 2 * k1.u, x.s + dt / 2 * k1.s});
        const UV k3 = f(t + dt / 2, {x.u + dt / 2 * k2.u, x.s + dt / 2 * k2.s});
        const UV k4 = f(t + dt, {x.u + dt * k3.u, x.s + dt * k3.s});
        x.u += dt / 6 * (k1.u + 2 * k2.u + 2 * k3.u + k4.u);
        x.s += dt / 6 * (k1.s + 2 * k2.s + 2 * k3.s + k4.s);
        t += dt;
    }
    return x;
}

/// Switching gene from rest: on in [t_on, t_off), off afterwards; integrates each phase separately.
inline UV switching(double alpha, double beta, double gamma, double t_on, double t_off, double t, double h = 1e-4) {
    if (t <= t_on) {
        return {};
    }
    auto on = [alpha](double) { return alpha; };
    auto off = [](double) { return 0.0; };
    if (t <= t_off) {
        return integrate(on, beta, gamma, {}, t_on, t, h);
    }
    const UV at_off = integrate(on, beta, gamma, {}, t_on, t_off, h);
    return integrate(off, beta, gamma, at_off, t_off, t, h);
}

/// Ranks by exhaustive pairwise counting: rank = 1 + #smaller + #equal-others / 2.
inline std::vector<double> brute_ranks(const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double smaller = 0, equal = 0;
        for (std::size_t j = 0; j < v.size(); ++j) {
            if (j == i) continue;
            if (v[j] < v[i]) smaller += 1;
            if (v[j] == v[i]) equal += 1;
        }
        r[i] = 1 + smaller + equal / 2;
    }
    return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

inline double brute_spearman(const std::vector<double>& a, const std::vector<double>& b) {
    return pearson(brute_ranks(a), brute_ranks(b));
}

/// Relative error with an absolute floor so that near-zero pairs compare on absolute scale.
inline double rel_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of f around x[i].
template <class F>
double central_difference(F&& f, double& x, double eps = 1e-5) {
    const double keep = x;
    x = keep + eps;
    const double plus = f();
    x = keep - eps;
    const double minus = f();
    x = keep;
    return (plus - minus) / (2 * eps);
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace oracle

#endif
