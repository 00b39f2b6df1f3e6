#pragma once

// Glue between a ParamStore and a Graph tape: binds named parameters as graph
// leaves for one forward/backward pass, then hands (param, grad) pairs to the
// optimizer.

#include <string>
#include <vector>

#include "knowaug/adam.hpp"
#include "knowaug/graph.hpp"

namespace knowaug {

class BoundParams {
public:
    BoundParams(Graph& g, ParamStore& store) : g_(&g), store_(&store) {}

    Graph::Var bind(const std::string& name) {
        Graph::Var v = g_->leaf(store_->get(name));
        bound_.push_back({name, v});
        return v;
    }

    // Valid after Graph::backward. Parameters unreachable from the loss get a
    // zero gradient so the whole set moves through Adam in lockstep.
    std::vector<ParamGrad> grads() {
        std::vector<ParamGrad> out;
        out.reserve(bound_.size());
        zero_fallbacks_.clear();
        zero_fallbacks_.reserve(bound_.size());
        for (const auto& b : bound_) {
            Matrix& p = store_->get(b.name);
            const Matrix& g = g_->grad(b.var);
            if (g.rows == p.rows && g.cols == p.cols) {
                out.push_back({b.name, &p, &g});
            } else {
                zero_fallbacks_.push_back(Matrix::zeros(p.rows, p.cols));
                out.push_back({b.name, &p, &zero_fallbacks_.back()});
            }
        }
        return out;
    }

private:
    struct Bound {
        std::string name;
        Graph::Var var;
    };
    Graph* g_;
    ParamStore* store_;
    std::vector<Bound> bound_;
    std::vector<Matrix> zero_fallbacks_;
};

}  // namespace knowaug
