#pragma once

// Stage minimization kernel shared by the DP solvers, policy queries and the
// scenario-tree enumerator. Keeping one implementation makes the DP/tree
// cross-check an identity of arithmetic, not a tolerance.

#include <span>
#include <vector>

#include "dadp/dp.hpp"
#include "dadp/model.hpp"

namespace dadp::detail {

constexpr int kMaxDim = 16;   // total joint state dimension
constexpr int kMaxUnits = 16;

struct UnitStageView {
    const SubsystemSpec* sub = nullptr;
    const std::vector<Vec>* upoints = nullptr; // control grid at this stage
    const Vec* xlo_next = nullptr;             // bounds on x_{t+1}
    const Vec* xhi_next = nullptr;
    const Vec* ulo = nullptr; // stage control bounds (slack feasibility)
    const Vec* uhi = nullptr;
};

struct JointStageView {
    int t = 0;
    int coupling_dim = 0;
    std::vector<UnitStageView> units;
    CouplingMode coupling = CouplingMode::None;
    int slack_unit = -1;
    double coupling_tol = 1e-9;

    // stage objective for one joint control combo; false when the combo is
    // infeasible (bounds or coupling)
    template <class Cont>
    bool eval_combo(std::span<const Vec> x, std::span<const double> w,
                    const Vec* const* u, std::span<const double> price_row, Cont&& cont,
                    double& out) const {
        const int N = static_cast<int>(units.size());
        double xn_joint[kMaxDim];
        double cost = 0.0;
        double g[4] = {0.0, 0.0, 0.0, 0.0};
        std::span<double> gs(g, static_cast<size_t>(coupling_dim));

        for (int i = 0; i < N; ++i) {
            const SubsystemSpec& sub = *units[static_cast<size_t>(i)].sub;
            cost += sub.stage_cost(t, x[static_cast<size_t>(i)], *u[i], w);
            if (coupling_dim > 0)
                sub.coupling.eval_add(t, x[static_cast<size_t>(i)], *u[i], w, gs);
        }
        if (coupling == CouplingMode::GridFilter) {
            for (int j = 0; j < coupling_dim; ++j)
                if (g[j] > coupling_tol || g[j] < -coupling_tol) return false;
        }
        if (!price_row.empty())
            for (int j = 0; j < coupling_dim; ++j) cost += price_row[static_cast<size_t>(j)] * g[j];

        int off = 0;
        for (int i = 0; i < N; ++i) {
            const auto& uv = units[static_cast<size_t>(i)];
            const SubsystemSpec& sub = *uv.sub;
            std::span<double> xn(xn_joint + off, static_cast<size_t>(sub.state_dim));
            for (auto& v : xn) v = 0.0;
            sub.dynamics.next_state(t, x[static_cast<size_t>(i)], *u[i], w, xn);
            for (int k = 0; k < sub.state_dim; ++k) {
                if (xn[static_cast<size_t>(k)] < (*uv.xlo_next)[static_cast<size_t>(k)] ||
                    xn[static_cast<size_t>(k)] > (*uv.xhi_next)[static_cast<size_t>(k)])
                    return false; // hard state constraint: exclude, do not project
            }
            off += sub.state_dim;
        }
        double v = cont(std::span<const double>(xn_joint, static_cast<size_t>(off)));
        if (v == kInf) return false;
        out = cost + v;
        return true;
    }

    // Exhaustive minimization over the product control grid, lexicographic
    // tie-break (first strict improvement wins). In Eliminate mode the slack
    // unit's control is solved from the coupling equation instead of gridded.
    template <class Cont>
    double min_over_controls(std::span<const Vec> x, std::span<const double> w,
                             std::span<const double> price_row, Cont&& cont,
                             std::vector<Vec>* argmin_u = nullptr) const {
        const int N = static_cast<int>(units.size());
        const Vec* u[kMaxUnits];
        size_t idx[kMaxUnits] = {};
        Vec slack_u(slack_unit >= 0
                        ? static_cast<size_t>(units[static_cast<size_t>(slack_unit)].sub->control_dim)
                        : 0);
        double best = kInf;
        const bool eliminate = coupling == CouplingMode::Eliminate;

        while (true) {
            bool ok = true;
            for (int i = 0; i < N; ++i) {
                if (eliminate && i == slack_unit)
                    u[i] = &slack_u;
                else
                    u[i] = &(*units[static_cast<size_t>(i)].upoints)[idx[i]];
            }
            if (eliminate) ok = solve_slack(x, w, u, slack_u);
            if (ok) {
                double v;
                if (eval_combo(x, w, u, price_row, cont, v) && v < best) {
                    best = v;
                    if (argmin_u) {
                        argmin_u->resize(static_cast<size_t>(N));
                        for (int i = 0; i < N; ++i) (*argmin_u)[static_cast<size_t>(i)] = *u[i];
                    }
                }
            }
            int i = N - 1;
            for (; i >= 0; --i) { // odometer, last unit fastest
                if (eliminate && i == slack_unit) continue;
                auto& k = idx[i];
                if (++k < units[static_cast<size_t>(i)].upoints->size()) break;
                k = 0;
            }
            if (i < 0) break;
        }
        return best;
    }

    bool solve_slack(std::span<const Vec> x, std::span<const double> w, const Vec* const* u,
                     Vec& slack_u) const {
        const auto& sv = units[static_cast<size_t>(slack_unit)];
        const SubsystemSpec& sub = *sv.sub;
        double g[4] = {0.0, 0.0, 0.0, 0.0};
        std::span<double> gs(g, static_cast<size_t>(coupling_dim));
        for (auto& v : slack_u) v = 0.0; // residual with slack control at zero
        for (size_t i = 0; i < units.size(); ++i)
            units[i].sub->coupling.eval_add(t, x[i], *u[i], w, gs);
        const Mat& P = sub.coupling.P.at(t);
        double p = P(0, 0);
        if (p == 0.0) return false;
        double us = -g[0] / p;
        if (us < (*sv.ulo)[0] || us > (*sv.uhi)[0]) return false;
        slack_u[0] = us;
        return true;
    }
};

} // namespace dadp::detail
