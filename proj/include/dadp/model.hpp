#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace dadp {

using Vec = std::vector<double>;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Dense row-major matrix, tiny dimensions throughout (state/control/noise
// spaces are a handful of coordinates each).
struct Mat {
    int rows = 0, cols = 0;
    Vec a;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}
    double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

    // y += M x
    void apply_add(std::span<const double> x, std::span<double> y) const {
        for (int i = 0; i < rows; ++i) {
            double s = 0.0;
            for (int j = 0; j < cols; ++j) s += (*this)(i, j) * x[j];
            y[i] += s;
        }
    }
    static Mat identity(int n) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

// Per-stage coefficient container: one entry broadcasts to every stage.
template <class T>
struct Stagewise {
    std::vector<T> v;
    Stagewise() = default;
    Stagewise(T single) { v.push_back(std::move(single)); }
    const T& at(int t) const { return v.size() == 1 ? v[0] : v[static_cast<size_t>(t)]; }
    bool broadcast() const { return v.size() == 1; }
};

// ---------------------------------------------------------------------------
// Noise model: finite support per stage, stages independent by construction.

struct StageDist {
    std::vector<Vec> points; // support points in W_t
    Vec probs;               // matching probabilities
};

struct NoisePartition {
    // one entry per noise coordinate: kGlobal or the owning subsystem index
    static constexpr int kGlobal = -1;
    std::vector<int> owner;
};

struct NoiseModel {
    int horizon = 0; // T: number of decision stages
    int dim = 0;     // noise vector dimension, fixed across stages
    std::vector<StageDist> stages;
    NoisePartition partition;

    Vec stage_mean(int t) const {
        Vec m(dim, 0.0);
        const auto& st = stages[static_cast<size_t>(t)];
        for (size_t k = 0; k < st.points.size(); ++k)
            for (int j = 0; j < dim; ++j) m[static_cast<size_t>(j)] += st.probs[k] * st.points[k][static_cast<size_t>(j)];
        return m;
    }
    Vec stage_var(int t) const {
        Vec mu = stage_mean(t), v(dim, 0.0);
        const auto& st = stages[static_cast<size_t>(t)];
        for (size_t k = 0; k < st.points.size(); ++k)
            for (int j = 0; j < dim; ++j) {
                double d = st.points[k][static_cast<size_t>(j)] - mu[static_cast<size_t>(j)];
                v[static_cast<size_t>(j)] += st.probs[k] * d * d;
            }
        return v;
    }
};

// ---------------------------------------------------------------------------
// Catalog mappings. Problems are defined from a closed catalog (affine
// dynamics, quadratic / piecewise-linear costs, affine couplings) so that a
// problem file is just catalog names plus coefficient arrays.

// x' = A x + B u + C w + b
struct AffineDynamics {
    Stagewise<Mat> A, B, C;
    Stagewise<Vec> b;

    void next_state(int t, std::span<const double> x, std::span<const double> u,
                    std::span<const double> w, std::span<double> out) const {
        const Vec& bt = b.at(t);
        for (size_t i = 0; i < out.size(); ++i) out[i] = bt[i];
        A.at(t).apply_add(x, out);
        B.at(t).apply_add(u, out);
        C.at(t).apply_add(w, out);
    }
};

// optional multiplier on a quadratic control coefficient, driven by one
// noise coordinate (e.g. thermal availability scaling the fuel cost)
struct NoiseScale {
    int coord = 0;
    double base = 1.0;
    double slope = 0.0;
    double factor(std::span<const double> w) const { return base + slope * w[static_cast<size_t>(coord)]; }
};

struct QuadControlTerm { // sum_k coeff_k u_k^2 + lin_k u_k, optionally noise-scaled
    Vec coeff;
    Vec lin;
    std::optional<NoiseScale> scale;
};
struct QuadStateTerm { // sum_k coeff_k (x_k - ref_k)^2
    Vec coeff;
    Vec ref;
};
struct LinStateTerm {
    Vec coeff;
};
struct PwlControlTerm { // max_p (a_p . u + b_p), convex piecewise-linear
    std::vector<std::pair<Vec, double>> pieces;
};
struct ConstTerm {
    double value = 0.0;
};

using CostTerm = std::variant<QuadControlTerm, QuadStateTerm, LinStateTerm, PwlControlTerm, ConstTerm>;
using CostTerms = std::vector<CostTerm>;

double eval_cost_terms(const CostTerms& terms, std::span<const double> x,
                       std::span<const double> u, std::span<const double> w);

// g(x,u,w) = P u + Q x + R w + r, one row per coupling coordinate
struct AffineCoupling {
    Stagewise<Mat> P, Q, R;
    Stagewise<Vec> r;

    void eval_add(int t, std::span<const double> x, std::span<const double> u,
                  std::span<const double> w, std::span<double> out) const {
        const Vec& rt = r.at(t);
        for (size_t i = 0; i < out.size(); ++i) out[i] += rt[i];
        P.at(t).apply_add(u, out);
        Q.at(t).apply_add(x, out);
        R.at(t).apply_add(w, out);
    }
};

// ---------------------------------------------------------------------------

struct SubsystemSpec {
    std::string name;
    int state_dim = 0;
    int control_dim = 0;
    Vec x0;
    Stagewise<Vec> x_lo, x_hi; // state bounds, stages 0..T (entry t = bound on x_t)
    Stagewise<Vec> u_lo, u_hi; // control bounds, stages 0..T-1
    AffineDynamics dynamics;
    Stagewise<CostTerms> cost; // stage cost C_t(x,u,w)
    CostTerms final_cost;      // K(x)
    AffineCoupling coupling;   // g_t(x,u,w), coupling_dim rows

    double stage_cost(int t, std::span<const double> x, std::span<const double> u,
                      std::span<const double> w) const {
        return eval_cost_terms(cost.at(t), x, u, w);
    }
    double terminal_cost(std::span<const double> x) const {
        return eval_cost_terms(final_cost, x, {}, {});
    }
};

struct ProblemSpec {
    std::vector<SubsystemSpec> subsystems;
    NoiseModel noise;
    int coupling_dim = 0;

    int units() const { return static_cast<int>(subsystems.size()); }
    int horizon() const { return noise.horizon; }

    void coupling_sum(int t, const std::vector<Vec>& x_per_unit,
                      const std::vector<Vec>& u_per_unit, std::span<const double> w,
                      std::span<double> out) const {
        for (auto& o : out) o = 0.0;
        for (size_t i = 0; i < subsystems.size(); ++i)
            subsystems[i].coupling.eval_add(t, x_per_unit[i], u_per_unit[i], w, out);
    }
};

// ---------------------------------------------------------------------------
// Validation. Structural problems are reported, never thrown.

struct Violation {
    int subsystem = -1; // -1: problem-level / noise
    int stage = -1;     // -1: not stage-specific
    std::string code;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
    std::string to_string() const;
};

ValidationReport validate_problem(const ProblemSpec& spec);

} // namespace dadp
