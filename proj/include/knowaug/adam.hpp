#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "knowaug/errors.hpp"
#include "knowaug/matrix.hpp"

namespace knowaug {

// Named parameter matrices in a fixed registration order, so that update
// sweeps and serialization are deterministic.
class ParamStore {
public:
    Matrix& add(const std::string& name, Matrix init) {
        for (auto& [n, m] : items_)
            if (n == name) throw contract_error("param '" + name + "' registered twice");
        items_.emplace_back(name, std::move(init));
        return items_.back().second;
    }

    Matrix& get(const std::string& name) {
        for (auto& [n, m] : items_)
            if (n == name) return m;
        throw contract_error("unknown param '" + name + "'");
    }

    const Matrix& get(const std::string& name) const {
        return const_cast<ParamStore*>(this)->get(name);
    }

    bool has(const std::string& name) const {
        for (auto& [n, m] : items_)
            if (n == name) return true;
        return false;
    }

    std::vector<std::pair<std::string, Matrix>>& items() { return items_; }
    const std::vector<std::pair<std::string, Matrix>>& items() const { return items_; }
    std::size_t count() const { return items_.size(); }

private:
    std::vector<std::pair<std::string, Matrix>> items_;
};

struct AdamConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One gradient-descent step target: parameter matrix plus its gradient.
struct ParamGrad {
    std::string name;
    Matrix* param;
    const Matrix* grad;
};

// Adam with bias correction. Moment buffers are keyed by parameter name;
// the step counter advances once per apply() over the whole set.
class AdamOptimizer {
public:
    explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    std::size_t steps() const { return step_; }

    void apply(const std::vector<ParamGrad>& updates) {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (const ParamGrad& u : updates) {
            Matrix& p = *u.param;
            const Matrix& g = *u.grad;
            if (!p.same_shape(g))
                throw shape_error("adam: param '" + u.name + "' " + shape_str(p) +
                                  " vs grad " + shape_str(g));
            if (!g.all_finite())
                throw numeric_error("adam: non-finite gradient for parameter '" + u.name + "'");
            auto& [m, v] = moments_[u.name];
            if (m.size() == 0) {
                m = Matrix::zeros(p.rows, p.cols);
                v = Matrix::zeros(p.rows, p.cols);
            }
            for (std::size_t i = 0; i < p.size(); ++i) {
                m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * g.data[i];
                v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * g.data[i] * g.data[i];
                const double mhat = m.data[i] / bc1;
                const double vhat = v.data[i] / bc2;
                p.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

private:
    AdamConfig cfg_;
    std::size_t step_ = 0;
    std::map<std::string, std::pair<Matrix, Matrix>> moments_;
};

} // namespace knowaug
