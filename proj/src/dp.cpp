#include "dadp/dp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dadp/csv.hpp"
#include "dadp/detail/stage_kernel.hpp"

namespace dadp {

// ---------------------------------------------------------------------------
// PricedTerm

PricedTerm PricedTerm::zero(int T, int d) {
    PricedTerm p;
    p.d_ = d;
    p.zero_ = true;
    p.consts_.assign(static_cast<size_t>(T), Vec(static_cast<size_t>(d), 0.0));
    return p;
}

PricedTerm PricedTerm::constants(std::vector<Vec> per_stage) {
    PricedTerm p;
    p.d_ = per_stage.empty() ? 0 : static_cast<int>(per_stage[0].size());
    p.consts_ = std::move(per_stage);
    return p;
}

PricedTerm PricedTerm::estimators(std::vector<Estimator> per_stage, int d) {
    PricedTerm p;
    p.d_ = d;
    p.ests_ = std::move(per_stage);
    return p;
}

Vec PricedTerm::at(int t, std::span<const double> y) const {
    if (!ests_.empty()) return ests_[static_cast<size_t>(t)].predict(y);
    return consts_[static_cast<size_t>(t)];
}

// ---------------------------------------------------------------------------

double interpolate_value(const ValueFunction& vf, int t, std::span<const double> x) {
    return vf.grid.interpolate(vf.values[static_cast<size_t>(t)], x);
}

void export_value_function_csv(const ValueFunction& vf, const std::string& path) {
    CsvWriter csv(path);
    std::vector<std::string> hdr = {"t"};
    for (int d = 0; d < vf.grid.dims(); ++d) hdr.push_back("x" + std::to_string(d));
    hdr.push_back("value");
    csv.header(hdr);
    Vec coords(static_cast<size_t>(vf.grid.dims()));
    for (size_t t = 0; t < vf.values.size(); ++t)
        for (std::size_t n = 0; n < vf.grid.node_count(); ++n) {
            vf.grid.node_coords(n, coords);
            csv.field(static_cast<long long>(t));
            for (double c : coords) csv.field(c);
            csv.field(vf.values[t][n]);
            csv.endrow();
        }
}

// ---------------------------------------------------------------------------

std::vector<Vec> control_points(const SubsystemSpec& sub, int t,
                                const std::vector<int>& control_nodes) {
    const Vec& lo = sub.u_lo.at(t);
    const Vec& hi = sub.u_hi.at(t);
    for (size_t k = 0; k < lo.size(); ++k)
        if (!std::isfinite(lo[k]) || !std::isfinite(hi[k]))
            throw std::invalid_argument("control grid requires finite control bounds (unit " +
                                        sub.name + ")");
    Grid g = Grid::uniform(lo, hi, control_nodes);
    std::vector<Vec> pts(g.node_count(), Vec(static_cast<size_t>(sub.control_dim)));
    for (std::size_t n = 0; n < g.node_count(); ++n) g.node_coords(n, pts[n]);
    return pts;
}

namespace {

Vec envelope_lo(const SubsystemSpec& sub, int T) {
    Vec lo(static_cast<size_t>(sub.state_dim), kInf);
    for (int t = 0; t <= T; ++t) {
        const Vec& v = sub.x_lo.at(t);
        for (int k = 0; k < sub.state_dim; ++k) lo[static_cast<size_t>(k)] = std::min(lo[static_cast<size_t>(k)], v[static_cast<size_t>(k)]);
        if (sub.x_lo.broadcast()) break;
    }
    return lo;
}
Vec envelope_hi(const SubsystemSpec& sub, int T) {
    Vec hi(static_cast<size_t>(sub.state_dim), -kInf);
    for (int t = 0; t <= T; ++t) {
        const Vec& v = sub.x_hi.at(t);
        for (int k = 0; k < sub.state_dim; ++k) hi[static_cast<size_t>(k)] = std::max(hi[static_cast<size_t>(k)], v[static_cast<size_t>(k)]);
        if (sub.x_hi.broadcast()) break;
    }
    return hi;
}

Grid build_joint_grid(const ProblemSpec& spec, const std::vector<int>& state_nodes) {
    Grid g;
    int dim_index = 0;
    for (const auto& sub : spec.subsystems) {
        Vec lo = envelope_lo(sub, spec.horizon());
        Vec hi = envelope_hi(sub, spec.horizon());
        for (int k = 0; k < sub.state_dim; ++k) {
            if (!std::isfinite(lo[static_cast<size_t>(k)]) || !std::isfinite(hi[static_cast<size_t>(k)]))
                throw std::invalid_argument("grid DP requires finite state bounds (unit " + sub.name + ")");
            int n = state_nodes.size() == 1 ? state_nodes[0]
                                            : state_nodes[static_cast<size_t>(dim_index)];
            Grid ax = Grid::uniform({lo[static_cast<size_t>(k)]}, {hi[static_cast<size_t>(k)]}, {n});
            g.axes.push_back(std::move(ax.axes[0]));
            ++dim_index;
        }
    }
    return g;
}

// per-unit slices of a joint state vector
std::vector<Vec> split_state(const ProblemSpec& spec, std::span<const double> x_joint) {
    std::vector<Vec> xs(static_cast<size_t>(spec.units()));
    int off = 0;
    for (int i = 0; i < spec.units(); ++i) {
        int n = spec.subsystems[static_cast<size_t>(i)].state_dim;
        xs[static_cast<size_t>(i)] = Vec(x_joint.begin() + off, x_joint.begin() + off + n);
        off += n;
    }
    return xs;
}

struct StageStorage {
    std::vector<std::vector<Vec>> upoints; // per unit
    detail::JointStageView view;
};

StageStorage make_stage(const ProblemSpec& spec, int t, const GlobalDpOptions& opts) {
    StageStorage st;
    st.view.t = t;
    st.view.coupling_dim = opts.coupling == CouplingMode::None ? 0 : spec.coupling_dim;
    st.view.coupling = opts.coupling;
    st.view.slack_unit = opts.slack_unit;
    st.view.coupling_tol = opts.coupling_tol;
    st.upoints.resize(static_cast<size_t>(spec.units()));
    int ctrl_dim_index = 0;
    for (int i = 0; i < spec.units(); ++i) {
        const auto& sub = spec.subsystems[static_cast<size_t>(i)];
        std::vector<int> nodes;
        if (opts.control_nodes.size() == 1) {
            nodes = {opts.control_nodes[0]};
        } else {
            for (int k = 0; k < sub.control_dim; ++k)
                nodes.push_back(opts.control_nodes[static_cast<size_t>(ctrl_dim_index + k)]);
        }
        ctrl_dim_index += sub.control_dim;
        if (!(opts.coupling == CouplingMode::Eliminate && i == opts.slack_unit))
            st.upoints[static_cast<size_t>(i)] = control_points(sub, t, nodes);
        detail::UnitStageView uv;
        uv.sub = &sub;
        uv.upoints = &st.upoints[static_cast<size_t>(i)];
        uv.xlo_next = &sub.x_lo.at(t + 1);
        uv.xhi_next = &sub.x_hi.at(t + 1);
        uv.ulo = &sub.u_lo.at(t);
        uv.uhi = &sub.u_hi.at(t);
        st.view.units.push_back(uv);
    }
    return st;
}

void check_eliminate_preconditions(const ProblemSpec& spec, const GlobalDpOptions& opts) {
    if (opts.coupling != CouplingMode::Eliminate) return;
    if (opts.slack_unit < 0 || opts.slack_unit >= spec.units())
        throw std::invalid_argument("eliminate coupling: invalid slack unit");
    if (spec.coupling_dim != 1 ||
        spec.subsystems[static_cast<size_t>(opts.slack_unit)].control_dim != 1)
        throw std::invalid_argument("eliminate coupling: needs scalar coupling and slack control");
}

long long combos_at(const StageStorage& st) {
    long long c = 1;
    for (size_t i = 0; i < st.upoints.size(); ++i) {
        if (st.view.coupling == CouplingMode::Eliminate &&
            static_cast<int>(i) == st.view.slack_unit)
            continue;
        c *= static_cast<long long>(st.upoints[i].size());
    }
    return c;
}

} // namespace

GlobalSolve solve_global_dp(const ProblemSpec& spec, const GlobalDpOptions& opts) {
    check_eliminate_preconditions(spec, opts);
    const int T = spec.horizon();
    auto vf = std::make_shared<ValueFunction>();
    vf->grid = build_joint_grid(spec, opts.state_nodes);
    vf->state_dims = vf->grid.dims();
    vf->values.assign(static_cast<size_t>(T) + 1, Vec());
    const std::size_t nodes = vf->grid.node_count();
    if (vf->grid.dims() > detail::kMaxDim)
        throw std::invalid_argument("joint state dimension too large for grid DP");

    // cap guard before any heavy work
    long long max_support = 0;
    for (const auto& stg : spec.noise.stages)
        max_support = std::max<long long>(max_support, static_cast<long long>(stg.points.size()));
    {
        StageStorage probe = make_stage(spec, 0, opts);
        long long per_stage = static_cast<long long>(nodes) * max_support * combos_at(probe);
        if (per_stage > opts.eval_cap / std::max(1, T))
            throw std::runtime_error(
                "grid cap exceeded: state x control x noise product too large; consider "
                "decomposition (priced subproblems) instead of a joint solve");
    }

    // terminal condition: V_T = sum of unit terminal costs at every node
    vf->values[static_cast<size_t>(T)].assign(nodes, 0.0);
    {
        Vec coords(static_cast<size_t>(vf->grid.dims()));
        for (std::size_t n = 0; n < nodes; ++n) {
            vf->grid.node_coords(n, coords);
            auto xs = split_state(spec, coords);
            double k = 0.0;
            for (int i = 0; i < spec.units(); ++i)
                k += spec.subsystems[static_cast<size_t>(i)].terminal_cost(xs[static_cast<size_t>(i)]);
            vf->values[static_cast<size_t>(T)][n] = k;
        }
    }

    for (int t = T - 1; t >= 0; --t) {
        StageStorage st = make_stage(spec, t, opts);
        const auto& dist = spec.noise.stages[static_cast<size_t>(t)];
        Vec& out = vf->values[static_cast<size_t>(t)];
        out.assign(nodes, 0.0);
        const Vec& next = vf->values[static_cast<size_t>(t) + 1];
        const Grid& grid = vf->grid;

#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (opts.parallel)
#endif
        for (long long n = 0; n < static_cast<long long>(nodes); ++n) {
            Vec coords(static_cast<size_t>(grid.dims()));
            grid.node_coords(static_cast<std::size_t>(n), coords);
            auto xs = split_state(spec, coords);
            auto cont = [&](std::span<const double> xn) { return grid.interpolate(next, xn); };
            double acc = 0.0;
            for (size_t kw = 0; kw < dist.points.size(); ++kw) {
                double v = st.view.min_over_controls(xs, dist.points[kw], {}, cont);
                acc += dist.probs[kw] * v;
            }
            out[static_cast<std::size_t>(n)] = acc;
        }
    }

    // joint x0
    Vec x0;
    for (const auto& sub : spec.subsystems) x0.insert(x0.end(), sub.x0.begin(), sub.x0.end());
    GlobalSolve res;
    res.vf = vf;
    res.policy = GlobalPolicy(&spec, vf, opts);
    res.value_at_x0 = vf->grid.interpolate(vf->values[0], x0);
    if (res.value_at_x0 == kInf)
        throw std::runtime_error("problem infeasible on grid at the initial state");
    return res;
}

std::vector<Vec> GlobalPolicy::controls(int t, const std::vector<Vec>& x_per_unit,
                                        std::span<const double> w) const {
    StageStorage st = make_stage(*spec_, t, opts_);
    const Vec& next = vf_->values[static_cast<size_t>(t) + 1];
    const Grid& grid = vf_->grid;
    auto cont = [&](std::span<const double> xn) { return grid.interpolate(next, xn); };
    std::vector<Vec> argmin;
    double v = st.view.min_over_controls(x_per_unit, w, {}, cont, &argmin);
    if (v == kInf)
        throw std::runtime_error("global policy query infeasible at stage " + std::to_string(t));
    return argmin;
}

// ---------------------------------------------------------------------------
// Priced subproblem

SubproblemSolve solve_priced_subproblem(const SubsystemSpec& sub, const NoiseModel& noise,
                                        const PricedTerm& price, const InformationSpec& info,
                                        const DpOptions& opts) {
    if (info.mode == InformationSpec::Mode::Path)
        throw std::invalid_argument(
            "solve_priced_subproblem: path info is only meaningful on scenario trees");
    const int T = noise.horizon;
    const bool markov = info.mode == InformationSpec::Mode::Markovian;
    if (markov && info.info_grid.dims() != info.ydim())
        throw std::invalid_argument("markovian info mode requires an info grid matching y");

    auto vf = std::make_shared<ValueFunction>();
    Vec lo = envelope_lo(sub, T), hi = envelope_hi(sub, T);
    for (int k = 0; k < sub.state_dim; ++k)
        if (!std::isfinite(lo[static_cast<size_t>(k)]) || !std::isfinite(hi[static_cast<size_t>(k)]))
            throw std::invalid_argument("grid DP requires finite state bounds (unit " + sub.name + ")");
    Grid xgrid = Grid::uniform(lo, hi, opts.state_nodes);
    vf->grid = markov ? Grid::product(xgrid, info.info_grid) : xgrid;
    vf->state_dims = sub.state_dim;
    const std::size_t nodes = vf->grid.node_count();
    vf->values.assign(static_cast<size_t>(T) + 1, Vec());

    long long max_support = 0;
    for (const auto& stg : noise.stages)
        max_support = std::max<long long>(max_support, static_cast<long long>(stg.points.size()));
    {
        long long combos = static_cast<long long>(control_points(sub, 0, opts.control_nodes).size());
        if (static_cast<long long>(nodes) * max_support * combos > opts.eval_cap / std::max(1, T))
            throw std::runtime_error("grid cap exceeded in priced subproblem solve");
    }

    // terminal: K on the state axes, constant along info axes
    vf->values[static_cast<size_t>(T)].assign(nodes, 0.0);
    {
        Vec coords(static_cast<size_t>(vf->grid.dims()));
        for (std::size_t n = 0; n < nodes; ++n) {
            vf->grid.node_coords(n, coords);
            vf->values[static_cast<size_t>(T)][n] =
                sub.terminal_cost(std::span<const double>(coords).first(static_cast<size_t>(sub.state_dim)));
        }
    }

    const int d = price.dim();
    for (int t = T - 1; t >= 0; --t) {
        std::vector<Vec> upoints = control_points(sub, t, opts.control_nodes);
        detail::JointStageView view;
        view.t = t;
        view.coupling_dim = d;
        view.coupling = CouplingMode::None;
        detail::UnitStageView uv;
        uv.sub = &sub;
        uv.upoints = &upoints;
        uv.xlo_next = &sub.x_lo.at(t + 1);
        uv.xhi_next = &sub.x_hi.at(t + 1);
        uv.ulo = &sub.u_lo.at(t);
        uv.uhi = &sub.u_hi.at(t);
        view.units.push_back(uv);

        const auto& dist = noise.stages[static_cast<size_t>(t)];
        Vec& out = vf->values[static_cast<size_t>(t)];
        out.assign(nodes, 0.0);
        const Vec& next = vf->values[static_cast<size_t>(t) + 1];
        const Grid& grid = vf->grid;

        // constant-info price rows can be computed once per stage
        Vec const_price;
        if (info.mode == InformationSpec::Mode::Constant) const_price = price.at(t, {});

#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (opts.parallel)
#endif
        for (long long n = 0; n < static_cast<long long>(nodes); ++n) {
            Vec coords(static_cast<size_t>(grid.dims()));
            grid.node_coords(static_cast<std::size_t>(n), coords);
            std::vector<Vec> xs(1);
            xs[0] = Vec(coords.begin(), coords.begin() + sub.state_dim);
            Vec y_prev(coords.begin() + sub.state_dim, coords.end());

            double acc = 0.0;
            for (size_t kw = 0; kw < dist.points.size(); ++kw) {
                const Vec& w = dist.points[kw];
                Vec y_t;
                std::span<const double> price_row;
                Vec pr;
                if (info.mode == InformationSpec::Mode::Constant) {
                    price_row = const_price;
                } else if (info.mode == InformationSpec::Mode::NoiseFn) {
                    y_t = info.value_from_noise(w);
                    pr = price.at(t, y_t);
                    price_row = pr;
                } else { // Markovian
                    y_t = info.evolve(t, y_prev, w);
                    pr = price.at(t, y_t);
                    price_row = pr;
                }
                double v;
                if (markov) {
                    auto cont = [&](std::span<const double> xn) {
                        Vec q(xn.begin(), xn.end());
                        q.insert(q.end(), y_t.begin(), y_t.end());
                        return grid.interpolate(next, q);
                    };
                    v = view.min_over_controls(xs, w, price_row, cont);
                } else {
                    auto cont = [&](std::span<const double> xn) { return grid.interpolate(next, xn); };
                    v = view.min_over_controls(xs, w, price_row, cont);
                }
                acc += dist.probs[kw] * v;
            }
            out[static_cast<std::size_t>(n)] = acc;
        }
    }

    SubproblemSolve res;
    res.vf = vf;
    res.policy = SubproblemPolicy(&sub, &noise, vf, price, info, opts);
    Vec q0 = sub.x0;
    if (markov) {
        Vec first_y(static_cast<size_t>(info.info_grid.dims()));
        info.info_grid.node_coords(0, first_y);
        q0.insert(q0.end(), first_y.begin(), first_y.end());
    }
    res.value_at_x0 = vf->grid.interpolate(vf->values[0], q0);
    if (res.value_at_x0 == kInf)
        throw std::runtime_error("problem infeasible on grid at the initial state");
    return res;
}

Vec SubproblemPolicy::control(int t, std::span<const double> x, std::span<const double> w,
                              std::span<const double> y_prev) const {
    std::vector<Vec> upoints = control_points(*sub_, t, opts_.control_nodes);
    detail::JointStageView view;
    view.t = t;
    view.coupling_dim = price_.dim();
    view.coupling = CouplingMode::None;
    detail::UnitStageView uv;
    uv.sub = sub_;
    uv.upoints = &upoints;
    uv.xlo_next = &sub_->x_lo.at(t + 1);
    uv.xhi_next = &sub_->x_hi.at(t + 1);
    uv.ulo = &sub_->u_lo.at(t);
    uv.uhi = &sub_->u_hi.at(t);
    view.units.push_back(uv);

    const bool markov = info_.mode == InformationSpec::Mode::Markovian;
    Vec y_t;
    Vec pr;
    std::span<const double> price_row;
    if (info_.mode == InformationSpec::Mode::Constant) {
        pr = price_.at(t, {});
        price_row = pr;
    } else if (info_.mode == InformationSpec::Mode::NoiseFn) {
        y_t = info_.value_from_noise(w);
        pr = price_.at(t, y_t);
        price_row = pr;
    } else {
        y_t = info_.evolve(t, y_prev, w);
        pr = price_.at(t, y_t);
        price_row = pr;
    }

    std::vector<Vec> xs(1);
    xs[0] = Vec(x.begin(), x.end());
    const Vec& next = vf_->values[static_cast<size_t>(t) + 1];
    const Grid& grid = vf_->grid;
    std::vector<Vec> argmin;
    double v;
    if (markov) {
        auto cont = [&](std::span<const double> xn) {
            Vec q(xn.begin(), xn.end());
            q.insert(q.end(), y_t.begin(), y_t.end());
            return grid.interpolate(next, q);
        };
        v = view.min_over_controls(xs, w, price_row, cont, &argmin);
    } else {
        auto cont = [&](std::span<const double> xn) { return grid.interpolate(next, xn); };
        v = view.min_over_controls(xs, w, price_row, cont, &argmin);
    }
    if (v == kInf)
        throw std::runtime_error("subproblem policy query infeasible at stage " + std::to_string(t));
    return argmin[0];
}

UnitFeedback SubproblemPolicy::feedback() const {
    SubproblemPolicy copy = *this;
    return [copy](int t, std::span<const double> x, std::span<const double> w,
                  std::span<const double> y_prev) { return copy.control(t, x, w, y_prev); };
}

} // namespace dadp
