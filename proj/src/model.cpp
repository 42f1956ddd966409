#include "dadp/model.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace dadp {

double eval_cost_terms(const CostTerms& terms, std::span<const double> x,
                       std::span<const double> u, std::span<const double> w) {
    double total = 0.0;
    for (const auto& term : terms) {
        if (const auto* qc = std::get_if<QuadControlTerm>(&term)) {
            double s = 1.0;
            if (qc->scale) s = qc->scale->factor(w);
            for (size_t k = 0; k < qc->coeff.size(); ++k) total += s * qc->coeff[k] * u[k] * u[k];
            for (size_t k = 0; k < qc->lin.size(); ++k) total += qc->lin[k] * u[k];
        } else if (const auto* qs = std::get_if<QuadStateTerm>(&term)) {
            for (size_t k = 0; k < qs->coeff.size(); ++k) {
                double d = x[k] - qs->ref[k];
                total += qs->coeff[k] * d * d;
            }
        } else if (const auto* ls = std::get_if<LinStateTerm>(&term)) {
            for (size_t k = 0; k < ls->coeff.size(); ++k) total += ls->coeff[k] * x[k];
        } else if (const auto* pw = std::get_if<PwlControlTerm>(&term)) {
            double best = -kInf;
            for (const auto& [a, b] : pw->pieces) {
                double v = b;
                for (size_t k = 0; k < a.size(); ++k) v += a[k] * u[k];
                best = std::max(best, v);
            }
            total += best;
        } else if (const auto* c = std::get_if<ConstTerm>(&term)) {
            total += c->value;
        }
    }
    return total;
}

namespace {

void check_stagewise_len(ValidationReport& rep, int sub, size_t len, int expected,
                         const char* what) {
    if (len != 1 && len != static_cast<size_t>(expected)) {
        rep.violations.push_back({sub, -1, "stagewise length",
                                  std::string(what) + " has " + std::to_string(len) +
                                      " stage entries, expected 1 or " + std::to_string(expected)});
    }
}

bool finite_or_inf_bound(double v) { return !std::isnan(v); }

} // namespace

ValidationReport validate_problem(const ProblemSpec& spec) {
    ValidationReport rep;
    const int T = spec.noise.horizon;
    const int d = spec.coupling_dim;

    if (T <= 0)
        rep.violations.push_back({-1, -1, "horizon", "horizon must be positive"});
    if (spec.subsystems.empty())
        rep.violations.push_back({-1, -1, "subsystems", "no subsystems"});

    // noise: per-stage distributions
    if (static_cast<int>(spec.noise.stages.size()) != T)
        rep.violations.push_back({-1, -1, "noise stages",
                                  "noise has " + std::to_string(spec.noise.stages.size()) +
                                      " stage distributions, horizon is " + std::to_string(T)});
    for (int t = 0; t < static_cast<int>(spec.noise.stages.size()); ++t) {
        const auto& st = spec.noise.stages[static_cast<size_t>(t)];
        if (st.points.empty() || st.points.size() != st.probs.size()) {
            rep.violations.push_back({-1, t, "noise support", "empty or mismatched support/probabilities"});
            continue;
        }
        double sum = 0.0;
        bool neg = false;
        for (double p : st.probs) {
            sum += p;
            if (p < 0.0) neg = true;
        }
        if (neg)
            rep.violations.push_back({-1, t, "noise probabilities", "negative probability"});
        if (std::abs(sum - 1.0) > 1e-12) {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", sum);
            rep.violations.push_back({-1, t, "noise probabilities",
                                      std::string("probabilities sum to ") + buf});
        }
        for (const auto& pt : st.points)
            if (static_cast<int>(pt.size()) != spec.noise.dim)
                rep.violations.push_back({-1, t, "noise point", "support point dimension mismatch"});
    }

    // partition covers each coordinate exactly once, classes valid
    if (static_cast<int>(spec.noise.partition.owner.size()) != spec.noise.dim) {
        rep.violations.push_back({-1, -1, "noise partition",
                                  "partition must assign every noise coordinate"});
    } else {
        for (int j = 0; j < spec.noise.dim; ++j) {
            int o = spec.noise.partition.owner[static_cast<size_t>(j)];
            if (o < NoisePartition::kGlobal || o >= spec.units())
                rep.violations.push_back({-1, -1, "noise partition",
                                          "coordinate " + std::to_string(j) + " assigned to invalid class"});
        }
    }

    for (int i = 0; i < spec.units(); ++i) {
        const auto& sub = spec.subsystems[static_cast<size_t>(i)];
        if (static_cast<int>(sub.x0.size()) != sub.state_dim)
            rep.violations.push_back({i, -1, "initial state", "x0 dimension mismatch"});

        check_stagewise_len(rep, i, sub.x_lo.v.size(), T + 1, "state lower bounds");
        check_stagewise_len(rep, i, sub.x_hi.v.size(), T + 1, "state upper bounds");
        check_stagewise_len(rep, i, sub.u_lo.v.size(), T, "control lower bounds");
        check_stagewise_len(rep, i, sub.u_hi.v.size(), T, "control upper bounds");
        check_stagewise_len(rep, i, sub.cost.v.size(), T, "stage cost");
        check_stagewise_len(rep, i, sub.dynamics.A.v.size(), T, "dynamics A");
        check_stagewise_len(rep, i, sub.coupling.P.v.size(), T, "coupling P");

        // bound ordering per stage
        for (int t = 0; t <= T; ++t) {
            if (sub.x_lo.v.empty() || sub.x_hi.v.empty()) break;
            const Vec& lo = sub.x_lo.at(t);
            const Vec& hi = sub.x_hi.at(t);
            for (size_t k = 0; k < lo.size() && k < hi.size(); ++k) {
                if (!finite_or_inf_bound(lo[k]) || !finite_or_inf_bound(hi[k]) || lo[k] > hi[k]) {
                    rep.violations.push_back({i, t, "state bounds inverted",
                                              "x_lo > x_hi in coordinate " + std::to_string(k)});
                    break;
                }
            }
            if (sub.x_lo.broadcast() && sub.x_hi.broadcast()) break;
        }
        for (int t = 0; t < T; ++t) {
            if (sub.u_lo.v.empty() || sub.u_hi.v.empty()) break;
            const Vec& lo = sub.u_lo.at(t);
            const Vec& hi = sub.u_hi.at(t);
            for (size_t k = 0; k < lo.size() && k < hi.size(); ++k) {
                if (!finite_or_inf_bound(lo[k]) || !finite_or_inf_bound(hi[k]) || lo[k] > hi[k]) {
                    rep.violations.push_back({i, t, "control bounds inverted",
                                              "u_lo > u_hi in coordinate " + std::to_string(k)});
                    break;
                }
            }
            if (sub.u_lo.broadcast() && sub.u_hi.broadcast()) break;
        }

        // x0 within stage-0 state bounds
        if (!sub.x_lo.v.empty() && !sub.x_hi.v.empty() &&
            static_cast<int>(sub.x0.size()) == sub.state_dim) {
            const Vec& lo = sub.x_lo.at(0);
            const Vec& hi = sub.x_hi.at(0);
            for (int k = 0; k < sub.state_dim; ++k) {
                if (sub.x0[static_cast<size_t>(k)] < lo[static_cast<size_t>(k)] ||
                    sub.x0[static_cast<size_t>(k)] > hi[static_cast<size_t>(k)]) {
                    rep.violations.push_back({i, 0, "initial state out of bounds",
                                              "x0 outside stage-0 state box"});
                    break;
                }
            }
        }

        // coupling dimension consistency
        for (const auto& P : sub.coupling.P.v)
            if (P.rows != d)
                rep.violations.push_back({i, -1, "coupling dimension mismatch",
                                          "coupling map returns dimension " + std::to_string(P.rows) +
                                              ", problem coupling dimension is " + std::to_string(d)});

        // shape checks on the catalog coefficients (mappings must be total)
        for (const auto& A : sub.dynamics.A.v)
            if (A.rows != sub.state_dim || A.cols != sub.state_dim)
                rep.violations.push_back({i, -1, "dynamics shape", "A must be state_dim x state_dim"});
        for (const auto& B : sub.dynamics.B.v)
            if (B.rows != sub.state_dim || B.cols != sub.control_dim)
                rep.violations.push_back({i, -1, "dynamics shape", "B must be state_dim x control_dim"});
        for (const auto& C : sub.dynamics.C.v)
            if (C.rows != sub.state_dim || C.cols != spec.noise.dim)
                rep.violations.push_back({i, -1, "dynamics shape", "C must be state_dim x noise_dim"});
    }
    return rep;
}

std::string ValidationReport::to_string() const {
    std::ostringstream os;
    if (ok()) {
        os << "OK";
        return os.str();
    }
    for (const auto& v : violations) {
        os << "violation";
        if (v.subsystem >= 0) os << " [subsystem " << v.subsystem << "]";
        if (v.stage >= 0) os << " [stage " << v.stage << "]";
        os << ": " << v.code << " - " << v.message << "\n";
    }
    return os.str();
}

} // namespace dadp
