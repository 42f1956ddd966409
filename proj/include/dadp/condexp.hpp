#pragma once

#include <optional>
#include <string>

#include "dadp/model.hpp"

namespace dadp {

// Paired (information value, multiplier sample) rows for one stage.
struct SampleTable {
    std::vector<Vec> y;   // info values, common dimension
    std::vector<Vec> lam; // targets, dimension d
    Vec weight;           // optional per-row probability weights; empty = uniform

    int rows() const { return static_cast<int>(y.size()); }
    int ydim() const { return y.empty() ? 0 : static_cast<int>(y[0].size()); }
    int ldim() const { return lam.empty() ? 0 : static_cast<int>(lam[0].size()); }
};

enum class EstimatorKind { Constant, Binned, Kernel };

struct BinnedOptions {
    std::vector<Vec> edges; // per y-dimension, strictly increasing cell edges (B+1 per dim)
};
struct KernelOptions {
    Vec bandwidth; // per y-dimension; empty = Silverman-style sd * S^(-1/5)
};

// Conditional-mean estimator of E[lambda | y]. Immutable once fitted;
// predict is safe for concurrent use.
class Estimator {
public:
    EstimatorKind kind() const { return kind_; }
    Vec predict(std::span<const double> y) const;
    const Vec& global_mean() const { return global_mean_; }

    // audit dump: one row per bin or retained sample
    void dump_csv(const std::string& path) const;

    friend Estimator fit_estimator(const SampleTable&, EstimatorKind,
                                   const BinnedOptions&, const KernelOptions&);

private:
    EstimatorKind kind_ = EstimatorKind::Constant;
    int ydim_ = 0, ldim_ = 0;
    Vec global_mean_;

    // binned
    std::vector<Vec> edges_;
    std::vector<Vec> bin_mean_;
    std::vector<double> bin_weight_;
    std::vector<int> dims_; // bins per y-dimension

    // kernel
    std::vector<Vec> ys_;
    std::vector<Vec> lams_;
    Vec row_weight_;
    Vec bandwidth_;

    std::size_t bin_of(std::span<const double> y) const;
};

Estimator fit_estimator(const SampleTable& samples, EstimatorKind kind,
                        const BinnedOptions& bopt = {}, const KernelOptions& kopt = {});

// equal-width bin edges from the sample range (utility for callers that only
// know a bin count)
BinnedOptions equal_width_bins(const SampleTable& samples, int bins_per_dim);

// 1 - SSE(est)/SSE(mean) over the table; 0 for the constant fit on its own
// training data, 1 iff predictions are exact. Throws on zero target variance.
double deviance(const Estimator& est, const SampleTable& samples);

} // namespace dadp
