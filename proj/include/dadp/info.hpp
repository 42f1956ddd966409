#pragma once

#include "dadp/grid.hpp"
#include "dadp/model.hpp"

namespace dadp {

// Information variable y_t conditioning the price projection. Modes:
//   Constant  : y carries nothing; prices are per-stage constants.
//   NoiseFn   : y_t = selected coordinates of w_t (memoryless).
//   Markovian : y_t = M y_{t-1} + N w_t + c, y_0 = N0 w_0 + c0; the DP
//               embeds y_{t-1} in the state, on the supplied info grid.
//   Path      : y_t is the full noise prefix; only meaningful on exhaustive
//               scenario trees (perfect-memory coordination).
struct InformationSpec {
    enum class Mode { Constant, NoiseFn, Markovian, Path };
    Mode mode = Mode::Constant;

    std::vector<int> noise_coords; // NoiseFn

    Mat M, N;  // Markovian step
    Vec c;
    Mat N0; // Markovian init from w_0
    Vec c0;
    Grid info_grid; // Markovian value-table axes for y

    int ydim() const {
        switch (mode) {
        case Mode::Constant: return 0;
        case Mode::NoiseFn: return static_cast<int>(noise_coords.size());
        case Mode::Markovian: return static_cast<int>(c.size());
        case Mode::Path: return 0; // handled structurally, not by value
        }
        return 0;
    }

    Vec value_from_noise(std::span<const double> w) const {
        Vec y(noise_coords.size());
        for (size_t k = 0; k < noise_coords.size(); ++k)
            y[k] = w[static_cast<size_t>(noise_coords[k])];
        return y;
    }

    Vec markov_init(std::span<const double> w) const {
        Vec y = c0;
        N0.apply_add(w, y);
        return y;
    }
    Vec markov_step(std::span<const double> y_prev, std::span<const double> w) const {
        Vec y = c;
        M.apply_add(y_prev, y);
        N.apply_add(w, y);
        return y;
    }

    // y_t as a function of (t, y_{t-1}, w_t); used by both the DP recursion
    // and forward simulation so the two can never disagree
    Vec evolve(int t, std::span<const double> y_prev, std::span<const double> w) const {
        switch (mode) {
        case Mode::Constant: return {};
        case Mode::NoiseFn: return value_from_noise(w);
        case Mode::Markovian: return t == 0 ? markov_init(w) : markov_step(y_prev, w);
        case Mode::Path: return {};
        }
        return {};
    }
};

} // namespace dadp
