#include "dmsva/num/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dmsva/errors.hpp"

namespace dmsva::num {

namespace {

void require_same_dim(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw DimensionMismatch(std::string(what) + ": " + std::to_string(a) + " vs " +
                                std::to_string(b));
    }
}

} // namespace

double cosine_sim(std::span<const double> x, std::span<const double> y) {
    require_same_dim(x.size(), y.size(), "cosine_sim");
    const double nx = norm2(x);
    const double ny = norm2(y);
    if (nx <= kNormEpsilon || ny <= kNormEpsilon) {
        throw ZeroNormVector("cosine_sim operand norm <= 1e-12");
    }
    return dot(x, y) / (nx * ny);
}

double cosine_sim(const Vector& x, const Vector& y) {
    return cosine_sim(x.values(), y.values());
}

Vector softmax(const Vector& logits) {
    Vector out(logits.dim());
    if (logits.dim() == 0) {
        return out;
    }
    const auto v = logits.values();
    const double top = *std::max_element(v.begin(), v.end());
    double total = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - top);
        total += out[i];
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] /= total;
    }
    return out;
}

double kl_div(const Vector& p, const Vector& q) {
    require_same_dim(p.dim(), q.dim(), "kl_div");
    double s = 0.0;
    for (std::size_t i = 0; i < p.dim(); ++i) {
        if (p[i] > 0.0) {
            s += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kKlFloor)));
        }
    }
    return s;
}

double mse(const Vector& x, const Vector& y) {
    require_same_dim(x.dim(), y.dim(), "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < x.dim(); ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

} // namespace dmsva::num
