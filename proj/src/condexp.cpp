#include "dadp/condexp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dadp/csv.hpp"

namespace dadp {

namespace {

void check_table(const SampleTable& t) {
    if (t.rows() == 0) throw std::invalid_argument("fit_estimator: empty sample table");
    if (t.lam.size() != t.y.size()) throw std::invalid_argument("fit_estimator: row mismatch");
    for (int s = 0; s < t.rows(); ++s) {
        for (double v : t.y[static_cast<size_t>(s)])
            if (!std::isfinite(v))
                throw std::invalid_argument("fit_estimator: non-finite info value at row " +
                                            std::to_string(s));
        for (double v : t.lam[static_cast<size_t>(s)])
            if (!std::isfinite(v))
                throw std::invalid_argument("fit_estimator: non-finite target at row " +
                                            std::to_string(s));
        if (t.y[static_cast<size_t>(s)].size() != t.y[0].size() ||
            t.lam[static_cast<size_t>(s)].size() != t.lam[0].size())
            throw std::invalid_argument("fit_estimator: inconsistent dimensions at row " +
                                        std::to_string(s));
    }
}

double row_weight(const SampleTable& t, int s) {
    return t.weight.empty() ? 1.0 : t.weight[static_cast<size_t>(s)];
}

Vec weighted_mean(const SampleTable& t) {
    Vec m(static_cast<size_t>(t.ldim()), 0.0);
    double wsum = 0.0;
    for (int s = 0; s < t.rows(); ++s) {
        double w = row_weight(t, s);
        wsum += w;
        for (int k = 0; k < t.ldim(); ++k)
            m[static_cast<size_t>(k)] += w * t.lam[static_cast<size_t>(s)][static_cast<size_t>(k)];
    }
    for (auto& v : m) v /= wsum;
    return m;
}

} // namespace

std::size_t Estimator::bin_of(std::span<const double> y) const {
    std::size_t flat = 0;
    for (int d = 0; d < ydim_; ++d) {
        const Vec& e = edges_[static_cast<size_t>(d)];
        auto it = std::upper_bound(e.begin(), e.end(), y[static_cast<size_t>(d)]);
        long idx = static_cast<long>(it - e.begin()) - 1;
        idx = std::clamp<long>(idx, 0, static_cast<long>(dims_[static_cast<size_t>(d)]) - 1);
        flat = flat * static_cast<size_t>(dims_[static_cast<size_t>(d)]) + static_cast<size_t>(idx);
    }
    return flat;
}

Estimator fit_estimator(const SampleTable& samples, EstimatorKind kind,
                        const BinnedOptions& bopt, const KernelOptions& kopt) {
    check_table(samples);
    Estimator est;
    est.kind_ = kind;
    est.ydim_ = samples.ydim();
    est.ldim_ = samples.ldim();
    est.global_mean_ = weighted_mean(samples);

    if (kind == EstimatorKind::Constant) return est;

    if (kind == EstimatorKind::Binned) {
        if (static_cast<int>(bopt.edges.size()) != samples.ydim())
            throw std::invalid_argument("fit_estimator: need bin edges per y-dimension");
        std::size_t total = 1;
        for (const auto& e : bopt.edges) {
            if (e.size() < 2) throw std::invalid_argument("fit_estimator: need at least one bin");
            for (size_t k = 1; k < e.size(); ++k)
                if (!(e[k] > e[k - 1]))
                    throw std::invalid_argument("fit_estimator: bin edges must be strictly increasing");
            total *= e.size() - 1;
        }
        est.edges_ = bopt.edges;
        for (const auto& e : bopt.edges) est.dims_.push_back(static_cast<int>(e.size()) - 1);
        est.bin_mean_.assign(total, Vec(static_cast<size_t>(est.ldim_), 0.0));
        est.bin_weight_.assign(total, 0.0);
        for (int s = 0; s < samples.rows(); ++s) {
            std::size_t b = est.bin_of(samples.y[static_cast<size_t>(s)]);
            double w = row_weight(samples, s);
            est.bin_weight_[b] += w;
            for (int k = 0; k < est.ldim_; ++k)
                est.bin_mean_[b][static_cast<size_t>(k)] +=
                    w * samples.lam[static_cast<size_t>(s)][static_cast<size_t>(k)];
        }
        for (size_t b = 0; b < total; ++b) {
            if (est.bin_weight_[b] > 0.0)
                for (auto& v : est.bin_mean_[b]) v /= est.bin_weight_[b];
            else
                est.bin_mean_[b] = est.global_mean_; // empty-bin fallback
        }
        return est;
    }

    // kernel: product Gaussian Nadaraya-Watson
    est.ys_ = samples.y;
    est.lams_ = samples.lam;
    est.row_weight_ = samples.weight;
    if (!kopt.bandwidth.empty()) {
        if (static_cast<int>(kopt.bandwidth.size()) != samples.ydim())
            throw std::invalid_argument("fit_estimator: bandwidth per y-dimension required");
        for (double h : kopt.bandwidth)
            if (!(h > 0.0)) throw std::invalid_argument("fit_estimator: bandwidth must be positive");
        est.bandwidth_ = kopt.bandwidth;
    } else {
        // Silverman-style default: sd * S^(-1/5)
        est.bandwidth_.assign(static_cast<size_t>(samples.ydim()), 1.0);
        for (int d = 0; d < samples.ydim(); ++d) {
            double mu = 0.0;
            for (int s = 0; s < samples.rows(); ++s) mu += samples.y[static_cast<size_t>(s)][static_cast<size_t>(d)];
            mu /= samples.rows();
            double ss = 0.0;
            for (int s = 0; s < samples.rows(); ++s) {
                double dv = samples.y[static_cast<size_t>(s)][static_cast<size_t>(d)] - mu;
                ss += dv * dv;
            }
            double sd = samples.rows() > 1 ? std::sqrt(ss / (samples.rows() - 1)) : 1.0;
            if (sd <= 0.0) sd = 1.0;
            est.bandwidth_[static_cast<size_t>(d)] =
                sd * std::pow(static_cast<double>(samples.rows()), -0.2);
        }
    }
    return est;
}

Vec Estimator::predict(std::span<const double> y) const {
    if (static_cast<int>(y.size()) != ydim_ && kind_ != EstimatorKind::Constant)
        throw std::invalid_argument("predict: info dimension mismatch");
    switch (kind_) {
    case EstimatorKind::Constant:
        return global_mean_;
    case EstimatorKind::Binned:
        return bin_mean_[bin_of(y)];
    case EstimatorKind::Kernel: {
        Vec num(static_cast<size_t>(ldim_), 0.0);
        double den = 0.0;
        for (size_t s = 0; s < ys_.size(); ++s) {
            double e = 0.0;
            for (int d = 0; d < ydim_; ++d) {
                double z = (y[static_cast<size_t>(d)] - ys_[s][static_cast<size_t>(d)]) /
                           bandwidth_[static_cast<size_t>(d)];
                e += z * z;
            }
            double w = std::exp(-0.5 * e);
            if (!row_weight_.empty()) w *= row_weight_[s];
            den += w;
            for (int k = 0; k < ldim_; ++k) num[static_cast<size_t>(k)] += w * lams_[s][static_cast<size_t>(k)];
        }
        if (den <= 0.0 || !std::isfinite(den)) return global_mean_;
        for (auto& v : num) v /= den;
        return num;
    }
    }
    return global_mean_;
}

BinnedOptions equal_width_bins(const SampleTable& samples, int bins_per_dim) {
    if (bins_per_dim < 1) throw std::invalid_argument("equal_width_bins: need >= 1 bin");
    BinnedOptions opt;
    for (int d = 0; d < samples.ydim(); ++d) {
        double lo = kInf, hi = -kInf;
        for (int s = 0; s < samples.rows(); ++s) {
            lo = std::min(lo, samples.y[static_cast<size_t>(s)][static_cast<size_t>(d)]);
            hi = std::max(hi, samples.y[static_cast<size_t>(s)][static_cast<size_t>(d)]);
        }
        if (!(hi > lo)) hi = lo + 1.0; // degenerate axis: one wide bin
        Vec e;
        for (int k = 0; k <= bins_per_dim; ++k)
            e.push_back(lo + (hi - lo) * static_cast<double>(k) / bins_per_dim);
        opt.edges.push_back(std::move(e));
    }
    return opt;
}

double deviance(const Estimator& est, const SampleTable& samples) {
    if (samples.rows() < 2) throw std::invalid_argument("deviance: need >= 2 rows");
    Vec mean = weighted_mean(samples);
    double sse0 = 0.0, sse = 0.0;
    for (int s = 0; s < samples.rows(); ++s) {
        double w = samples.weight.empty() ? 1.0 : samples.weight[static_cast<size_t>(s)];
        Vec pred = est.predict(samples.y[static_cast<size_t>(s)]);
        for (int k = 0; k < samples.ldim(); ++k) {
            double t = samples.lam[static_cast<size_t>(s)][static_cast<size_t>(k)];
            double d0 = t - mean[static_cast<size_t>(k)];
            double d1 = t - pred[static_cast<size_t>(k)];
            sse0 += w * d0 * d0;
            sse += w * d1 * d1;
        }
    }
    if (sse0 <= 0.0) throw std::domain_error("deviance undefined: zero target variance");
    return 1.0 - sse / sse0;
}

void Estimator::dump_csv(const std::string& path) const {
    CsvWriter csv(path);
    if (kind_ == EstimatorKind::Constant) {
        std::vector<std::string> hdr = {"id"};
        for (int k = 0; k < ldim_; ++k) hdr.push_back("mean" + std::to_string(k));
        csv.header(hdr);
        csv.field(0);
        for (double v : global_mean_) csv.field(v);
        csv.endrow();
    } else if (kind_ == EstimatorKind::Binned) {
        std::vector<std::string> hdr = {"bin", "weight"};
        for (int k = 0; k < ldim_; ++k) hdr.push_back("mean" + std::to_string(k));
        csv.header(hdr);
        for (size_t b = 0; b < bin_mean_.size(); ++b) {
            csv.field(static_cast<long long>(b));
            csv.field(bin_weight_[b]);
            for (double v : bin_mean_[b]) csv.field(v);
            csv.endrow();
        }
    } else {
        std::vector<std::string> hdr = {"sample"};
        for (int d = 0; d < ydim_; ++d) hdr.push_back("y" + std::to_string(d));
        for (int k = 0; k < ldim_; ++k) hdr.push_back("lam" + std::to_string(k));
        csv.header(hdr);
        for (size_t s = 0; s < ys_.size(); ++s) {
            csv.field(static_cast<long long>(s));
            for (double v : ys_[s]) csv.field(v);
            for (double v : lams_[s]) csv.field(v);
            csv.endrow();
        }
    }
}

} // namespace dadp
