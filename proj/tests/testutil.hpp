#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "knowaug/matrix.hpp"
#include "knowaug/rng.hpp"

namespace testutil {

using knowaug::Matrix;
using knowaug::Rng;

// Central finite differences of a scalar function at `inputs`, one input
// matrix at a time. Independent of the autodiff path it is used to check.
inline std::vector<Matrix> finite_difference_grads(
    const std::function<double(const std::vector<Matrix>&)>& f,
    std::vector<Matrix> inputs, double step = 1e-5) {
    std::vector<Matrix> grads;
    grads.reserve(inputs.size());
    for (std::size_t m = 0; m < inputs.size(); ++m) {
        Matrix g(inputs[m].rows, inputs[m].cols, 0.0);
        for (std::size_t i = 0; i < inputs[m].size(); ++i) {
            const double saved = inputs[m].data[i];
            inputs[m].data[i] = saved + step;
            const double fp = f(inputs);
            inputs[m].data[i] = saved - step;
            const double fm = f(inputs);
            inputs[m].data[i] = saved;
            g.data[i] = (fp - fm) / (2.0 * step);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

// Relative comparison with an absolute floor for near-zero entries.
inline bool grads_close(const Matrix& analytic, const Matrix& numeric,
                        double rel_tol = 1e-4, double abs_floor = 1e-7) {
    if (!analytic.same_shape(numeric)) return false;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic.data[i];
        const double n = numeric.data[i];
        const double diff = std::abs(a - n);
        const double scale = std::max({std::abs(a), std::abs(n), abs_floor});
        if (diff / scale > rel_tol && diff > abs_floor) return false;
    }
    return true;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng,
                            double lo = -1.0, double hi = 1.0) {
    return Matrix::uniform(r, c, lo, hi, rng);
}

// Scratch area under the test runner's working directory.
inline std::string scratch_dir() {
    std::filesystem::create_directories("ktest_tmp");
    return "ktest_tmp";
}

inline std::string write_temp(const std::string& name, const std::string& content) {
    std::string path = scratch_dir() + "/" + name;
    std::ofstream out(path);
    out << content;
    return path;
}

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

} // namespace testutil
