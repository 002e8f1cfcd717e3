#include "milbag/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace milbag {

bool Matrix::all_finite() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](double v) { return std::isfinite(v); });
}

void Matrix::fill(double v) {
    std::fill(values_.begin(), values_.end(), v);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimError(fmt::format("matmul: shape mismatch {}x{} * {}x{}",
                                   a.rows(), a.cols(), b.rows(), b.cols()));
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.data() + k * b.cols();
            double* orow = out.data() + i * out.cols();
            for (std::size_t j = 0; j < b.cols(); ++j) {
                orow[j] += aik * brow[j];
            }
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

Matrix identity(std::size_t n) {
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
    return out;
}

std::vector<double> softmax(std::span<const double> x) {
    if (x.empty()) throw DomainError("softmax: empty input");
    const double m = *std::max_element(x.begin(), x.end());
    std::vector<double> out(x.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - m);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

CrossEntropyResult cross_entropy(std::span<const double> target, std::span<const double> logits) {
    if (target.size() != logits.size()) {
        throw DimError(fmt::format("cross_entropy: target length {} vs logits length {}",
                                   target.size(), logits.size()));
    }
    double tsum = 0.0;
    for (double t : target) tsum += t;
    if (std::abs(tsum - 1.0) > 1e-9) {
        throw DomainError(fmt::format("cross_entropy: target sums to {} (expected 1)", tsum));
    }
    CrossEntropyResult res;
    std::vector<double> p = softmax(logits);
    for (std::size_t c = 0; c < p.size(); ++c) {
        res.loss -= target[c] * std::log(std::max(p[c], 1e-12));
    }
    res.dlogits.resize(p.size());
    for (std::size_t c = 0; c < p.size(); ++c) {
        res.dlogits[c] = p[c] - target[c];
    }
    return res;
}

void adam_step(ParamTensor& p, const AdamConfig& cfg) {
    if (cfg.lr <= 0.0) throw DomainError("adam_step: lr must be positive");
    if (!p.value.same_shape(p.grad) || !p.value.same_shape(p.m1) || !p.value.same_shape(p.m2)) {
        throw IntegrityError("adam_step: tensor shapes disagree for " + p.name);
    }
    if (!p.grad.all_finite()) {
        throw NumericError("adam_step: non-finite gradient in " + p.name);
    }
    // Decoupled weight decay, applied to the value before the Adam delta.
    if (cfg.weight_decay != 0.0) {
        for (double& v : p.value.values()) v -= cfg.lr * cfg.weight_decay * v;
    }
    const auto t = static_cast<double>(p.step_count + 1);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    auto& val = p.value.values();
    auto& g = p.grad.values();
    auto& m1 = p.m1.values();
    auto& m2 = p.m2.values();
    for (std::size_t i = 0; i < val.size(); ++i) {
        m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g[i];
        m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double mhat = m1[i] / bc1;
        const double vhat = m2[i] / bc2;
        val[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    ++p.step_count;
    p.zero_grad();
}

GradCheckReport finite_diff_check(const std::function<double()>& loss_fn,
                                  std::span<ParamTensor* const> params,
                                  double h,
                                  std::size_t max_coords_per_tensor,
                                  std::uint64_t subsample_seed) {
    if (h < 1e-7 || h > 1e-3) {
        throw DomainError(fmt::format("finite_diff_check: h={} outside [1e-7, 1e-3]", h));
    }
    const double f0 = loss_fn();
    if (loss_fn() != f0) {
        throw NumericError("finite_diff_check: loss_fn is not deterministic");
    }
    GradCheckReport report;
    std::mt19937_64 rng = seeded_rng(subsample_seed, 0xFDC);
    for (ParamTensor* p : params) {
        const std::vector<double> analytic = p->grad.values();
        std::vector<std::size_t> coords(p->value.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (max_coords_per_tensor > 0 && coords.size() > max_coords_per_tensor) {
            std::vector<std::size_t> picked;
            picked.reserve(max_coords_per_tensor);
            std::sample(coords.begin(), coords.end(), std::back_inserter(picked),
                        max_coords_per_tensor, rng);
            coords = std::move(picked);
        }
        auto& val = p->value.values();
        for (std::size_t i : coords) {
            const double saved = val[i];
            auto probe = [&](double step) {
                val[i] = saved + step;
                const double fp = loss_fn();
                val[i] = saved - step;
                const double fm = loss_fn();
                val[i] = saved;
                const double numeric = (fp - fm) / (2.0 * step);
                const double denom =
                    std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
                return std::abs(analytic[i] - numeric) / denom;
            };
            double rel = probe(h);
            // A disagreement at one step can be quotient roundoff (tiny
            // gradient, step too small) or truncation (third derivative,
            // step too large); a wrong analytic gradient stays wrong at
            // every step. Re-probe suspicious coordinates at smaller steps
            // and keep the best agreement.
            for (double divisor : {4.0, 16.0, 64.0}) {
                if (rel <= 1e-6) break;
                rel = std::min(rel, probe(h / divisor));
            }
            report.max_rel_err = std::max(report.max_rel_err, rel);
            ++report.coords_checked;
        }
    }
    return report;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t stream) {
    return std::mt19937_64(splitmix64(seed ^ splitmix64(stream)));
}

}  // namespace milbag
