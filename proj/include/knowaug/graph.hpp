#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "knowaug/errors.hpp"
#include "knowaug/matrix.hpp"

namespace knowaug {

// Reverse-mode autodiff over dense matrices. Nodes are appended in
// topological order (every op's operands already exist), so the backward
// pass is a single reverse sweep over the nodes reachable from the loss.
// Shared subexpressions accumulate gradients along every path.
class Graph {
public:
    using Var = std::size_t;

    explicit Graph(bool check_finite = true) : check_finite_(check_finite) {}

    Var leaf(Matrix value) {
        return push("leaf", std::move(value), {}, nullptr);
    }

    const Matrix& value(Var v) const { return nodes_[v].value; }
    const Matrix& grad(Var v) const { return nodes_[v].grad; }
    std::size_t size() const { return nodes_.size(); }

    Var matmul(Var a, Var b) {
        const Matrix& A = val(a);
        const Matrix& B = val(b);
        if (A.cols != B.rows)
            throw shape_error("matmul: lhs " + shape_str(A) + " rhs " + shape_str(B));
        return push("matmul", knowaug::matmul(A, B), {a, b}, [](Graph& g, Node& n) {
            const Matrix& A = g.val(n.parents[0]);
            const Matrix& B = g.val(n.parents[1]);
            Matrix& dA = g.grd(n.parents[0]);
            Matrix& dB = g.grd(n.parents[1]);
            // dA += G B^T
            for (std::size_t i = 0; i < A.rows; ++i)
                for (std::size_t k = 0; k < B.cols; ++k) {
                    const double gik = n.grad(i, k);
                    if (gik == 0.0) continue;
                    for (std::size_t j = 0; j < A.cols; ++j) dA(i, j) += gik * B(j, k);
                }
            // dB += A^T G
            for (std::size_t k = 0; k < A.rows; ++k)
                for (std::size_t i = 0; i < B.rows; ++i) {
                    const double aki = A(k, i);
                    if (aki == 0.0) continue;
                    for (std::size_t j = 0; j < B.cols; ++j) dB(i, j) += aki * n.grad(k, j);
                }
        });
    }

    Var add(Var a, Var b) { return ewise2("add", a, b, [](double x, double y) { return x + y; }, 1.0, 1.0); }
    Var sub(Var a, Var b) { return ewise2("sub", a, b, [](double x, double y) { return x - y; }, 1.0, -1.0); }

    Var hadamard(Var a, Var b) {
        const Matrix& A = val(a);
        const Matrix& B = val(b);
        if (!A.same_shape(B))
            throw shape_error("hadamard: lhs " + shape_str(A) + " rhs " + shape_str(B));
        Matrix out = A;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= B.data[i];
        return push("hadamard", std::move(out), {a, b}, [](Graph& g, Node& n) {
            const Matrix& A = g.val(n.parents[0]);
            const Matrix& B = g.val(n.parents[1]);
            Matrix& dA = g.grd(n.parents[0]);
            Matrix& dB = g.grd(n.parents[1]);
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                dA.data[i] += n.grad.data[i] * B.data[i];
                dB.data[i] += n.grad.data[i] * A.data[i];
            }
        });
    }

    Var scale(Var a, double s) {
        Matrix out = val(a);
        for (double& v : out.data) v *= s;
        return push("scale", std::move(out), {a}, [s](Graph& g, Node& n) {
            Matrix& dA = g.grd(n.parents[0]);
            for (std::size_t i = 0; i < n.grad.size(); ++i) dA.data[i] += s * n.grad.data[i];
        });
    }

    Var add_const(Var a, double c) {
        Matrix out = val(a);
        for (double& v : out.data) v += c;
        return push("add_const", std::move(out), {a}, [](Graph& g, Node& n) {
            Matrix& dA = g.grd(n.parents[0]);
            for (std::size_t i = 0; i < n.grad.size(); ++i) dA.data[i] += n.grad.data[i];
        });
    }

    // m + s broadcast over every entry of m; s must be 1x1.
    Var add_scalar(Var a, Var s) {
        const Matrix& S = val(s);
        if (S.rows != 1 || S.cols != 1)
            throw shape_error("add_scalar: scalar operand is " + shape_str(S));
        Matrix out = val(a);
        const double sv = S.data[0];
        for (double& v : out.data) v += sv;
        return push("add_scalar", std::move(out), {a, s}, [](Graph& g, Node& n) {
            Matrix& dA = g.grd(n.parents[0]);
            Matrix& dS = g.grd(n.parents[1]);
            double total = 0.0;
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                dA.data[i] += n.grad.data[i];
                total += n.grad.data[i];
            }
            dS.data[0] += total;
        });
    }

    Var sigmoid(Var a) {
        return ewise1("sigmoid", a,
                      [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                      [](double, double y) { return y * (1.0 - y); });
    }

    Var tanh_(Var a) {
        return ewise1("tanh", a,
                      [](double x) { return std::tanh(x); },
                      [](double, double y) { return 1.0 - y * y; });
    }

    Var exp_(Var a) {
        return ewise1("exp", a,
                      [](double x) { return std::exp(x); },
                      [](double, double y) { return y; });
    }

    // Caller keeps inputs positive (see clamp); log of a non-positive entry
    // is a numeric failure, not a silent NaN.
    Var log_(Var a) {
        for (double v : val(a).data)
            if (v <= 0.0) throw numeric_error("log: non-positive input " + std::to_string(v));
        return ewise1("log", a,
                      [](double x) { return std::log(x); },
                      [](double x, double) { return 1.0 / x; });
    }

    Var leaky_relu(Var a, double slope) {
        return ewise1("leaky_relu", a,
                      [slope](double x) { return x > 0.0 ? x : slope * x; },
                      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
    }

    Var elu(Var a, double alpha = 1.0) {
        return ewise1("elu", a,
                      [alpha](double x) { return x > 0.0 ? x : alpha * (std::exp(x) - 1.0); },
                      [alpha](double x, double y) { return x > 0.0 ? 1.0 : y + alpha; });
    }

    // Zero gradient through clamped entries.
    Var clamp(Var a, double lo, double hi) {
        return ewise1("clamp", a,
                      [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
                      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
    }

    Var concat_rows(std::span<const Var> parts) {
        if (parts.empty()) throw contract_error("concat_rows: no operands");
        const std::size_t cols = val(parts[0]).cols;
        std::size_t rows = 0;
        for (Var p : parts) {
            if (val(p).cols != cols)
                throw shape_error("concat_rows: " + shape_str(val(parts[0])) + " vs " + shape_str(val(p)));
            rows += val(p).rows;
        }
        Matrix out(rows, cols);
        std::size_t at = 0;
        for (Var p : parts) {
            const Matrix& m = val(p);
            std::copy(m.data.begin(), m.data.end(), out.data.begin() + at);
            at += m.size();
        }
        return push("concat_rows", std::move(out), {parts.begin(), parts.end()},
                    [](Graph& g, Node& n) {
                        std::size_t at = 0;
                        for (Var p : n.parents) {
                            Matrix& dP = g.grd(p);
                            for (std::size_t i = 0; i < dP.size(); ++i) dP.data[i] += n.grad.data[at + i];
                            at += dP.size();
                        }
                    });
    }

    Var concat_rows(std::initializer_list<Var> parts) {
        std::vector<Var> v(parts);
        return concat_rows(std::span<const Var>(v));
    }

    Var concat_cols(std::span<const Var> parts) {
        if (parts.empty()) throw contract_error("concat_cols: no operands");
        const std::size_t rows = val(parts[0]).rows;
        std::size_t cols = 0;
        for (Var p : parts) {
            if (val(p).rows != rows)
                throw shape_error("concat_cols: " + shape_str(val(parts[0])) + " vs " + shape_str(val(p)));
            cols += val(p).cols;
        }
        Matrix out(rows, cols);
        std::size_t col_at = 0;
        for (Var p : parts) {
            const Matrix& m = val(p);
            for (std::size_t i = 0; i < m.rows; ++i)
                for (std::size_t j = 0; j < m.cols; ++j) out(i, col_at + j) = m(i, j);
            col_at += m.cols;
        }
        return push("concat_cols", std::move(out), {parts.begin(), parts.end()},
                    [](Graph& g, Node& n) {
                        std::size_t col_at = 0;
                        for (Var p : n.parents) {
                            Matrix& dP = g.grd(p);
                            for (std::size_t i = 0; i < dP.rows; ++i)
                                for (std::size_t j = 0; j < dP.cols; ++j)
                                    dP(i, j) += n.grad(i, col_at + j);
                            col_at += dP.cols;
                        }
                    });
    }

    Var concat_cols(std::initializer_list<Var> parts) {
        std::vector<Var> v(parts);
        return concat_cols(std::span<const Var>(v));
    }

    // Select rows by index; duplicate indices accumulate gradient.
    Var row_gather(Var a, std::vector<std::size_t> rows) {
        const Matrix& A = val(a);
        for (std::size_t r : rows)
            if (r >= A.rows)
                throw shape_error("row_gather: row " + std::to_string(r) + " out of " + shape_str(A));
        Matrix out(rows.size(), A.cols);
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < A.cols; ++j) out(i, j) = A(rows[i], j);
        return push("row_gather", std::move(out), {a},
                    [rows = std::move(rows)](Graph& g, Node& n) {
                        Matrix& dA = g.grd(n.parents[0]);
                        for (std::size_t i = 0; i < rows.size(); ++i)
                            for (std::size_t j = 0; j < dA.cols; ++j)
                                dA(rows[i], j) += n.grad(i, j);
                    });
    }

    // Softmax along each row over entries where mask != 0; masked entries
    // output 0. Max-subtraction keeps the exponentials bounded. A row with
    // no unmasked entry has no well-defined distribution.
    Var masked_row_softmax(Var a, const Matrix& mask) {
        const Matrix& A = val(a);
        if (!A.same_shape(mask))
            throw shape_error("masked_row_softmax: logits " + shape_str(A) + " mask " + shape_str(mask));
        Matrix out(A.rows, A.cols, 0.0);
        for (std::size_t i = 0; i < A.rows; ++i) {
            double mx = -1e308;
            bool any = false;
            for (std::size_t j = 0; j < A.cols; ++j)
                if (mask(i, j) != 0.0) { any = true; mx = std::max(mx, A(i, j)); }
            if (!any)
                throw contract_error("masked_row_softmax: fully masked row " + std::to_string(i));
            double z = 0.0;
            for (std::size_t j = 0; j < A.cols; ++j)
                if (mask(i, j) != 0.0) { out(i, j) = std::exp(A(i, j) - mx); z += out(i, j); }
            for (std::size_t j = 0; j < A.cols; ++j) out(i, j) /= z;
        }
        return push("masked_row_softmax", std::move(out), {a},
                    [mask](Graph& g, Node& n) {
                        Matrix& dA = g.grd(n.parents[0]);
                        for (std::size_t i = 0; i < n.value.rows; ++i) {
                            double dot = 0.0;
                            for (std::size_t j = 0; j < n.value.cols; ++j)
                                dot += n.grad(i, j) * n.value(i, j);
                            for (std::size_t j = 0; j < n.value.cols; ++j)
                                if (mask(i, j) != 0.0)
                                    dA(i, j) += n.value(i, j) * (n.grad(i, j) - dot);
                        }
                    });
    }

    Var softmax_row(Var a) {
        return masked_row_softmax(a, Matrix::constant(val(a).rows, val(a).cols, 1.0));
    }

    // Column means: n x c -> 1 x c.
    Var mean_over_rows(Var a) {
        const Matrix& A = val(a);
        if (A.rows == 0) throw contract_error("mean_over_rows: empty input");
        Matrix out(1, A.cols, 0.0);
        for (std::size_t i = 0; i < A.rows; ++i)
            for (std::size_t j = 0; j < A.cols; ++j) out(0, j) += A(i, j);
        for (double& v : out.data) v /= static_cast<double>(A.rows);
        return push("mean_over_rows", std::move(out), {a}, [](Graph& g, Node& n) {
            Matrix& dA = g.grd(n.parents[0]);
            const double inv = 1.0 / static_cast<double>(dA.rows);
            for (std::size_t i = 0; i < dA.rows; ++i)
                for (std::size_t j = 0; j < dA.cols; ++j)
                    dA(i, j) += n.grad(0, j) * inv;
        });
    }

    Var transpose_(Var a) {
        return push("transpose", knowaug::transpose(val(a)), {a}, [](Graph& g, Node& n) {
            Matrix& dA = g.grd(n.parents[0]);
            for (std::size_t i = 0; i < dA.rows; ++i)
                for (std::size_t j = 0; j < dA.cols; ++j) dA(i, j) += n.grad(j, i);
        });
    }

    Var sum(Var a) {
        double total = 0.0;
        for (double v : val(a).data) total += v;
        Matrix out(1, 1, total);
        return push("sum", std::move(out), {a}, [](Graph& g, Node& n) {
            Matrix& dA = g.grd(n.parents[0]);
            const double gv = n.grad.data[0];
            for (double& v : dA.data) v += gv;
        });
    }

    Var mean_all(Var a) {
        const double n = static_cast<double>(val(a).size());
        return scale(sum(a), 1.0 / n);
    }

    // Populates grad(v) = d loss / d v for every node reachable from loss.
    void backward(Var loss) {
        const Matrix& L = val(loss);
        if (L.rows != 1 || L.cols != 1)
            throw contract_error("backward: loss must be 1x1, got " + shape_str(L));

        std::vector<char> reachable(nodes_.size(), 0);
        std::vector<Var> stack{loss};
        reachable[loss] = 1;
        while (!stack.empty()) {
            Var v = stack.back();
            stack.pop_back();
            for (Var p : nodes_[v].parents)
                if (!reachable[p]) { reachable[p] = 1; stack.push_back(p); }
        }
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            if (reachable[i])
                nodes_[i].grad = Matrix::zeros(nodes_[i].value.rows, nodes_[i].value.cols);

        nodes_[loss].grad.data[0] = 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (reachable[i] && n.back) n.back(*this, n);
        }
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        std::vector<Var> parents;
        std::function<void(Graph&, Node&)> back;
        const char* op;
    };

    const Matrix& val(Var v) const { return nodes_[v].value; }
    Matrix& grd(Var v) { return nodes_[v].grad; }

    Var push(const char* op, Matrix value, std::vector<Var> parents,
             std::function<void(Graph&, Node&)> back) {
        if (check_finite_ && !value.all_finite())
            throw numeric_error(std::string(op) + ": non-finite result");
        nodes_.push_back(Node{std::move(value), Matrix{}, std::move(parents), std::move(back), op});
        return nodes_.size() - 1;
    }

    template <typename F, typename DF>
    Var ewise1(const char* op, Var a, F f, DF df) {
        Matrix out = val(a);
        for (double& v : out.data) v = f(v);
        return push(op, std::move(out), {a}, [df](Graph& g, Node& n) {
            const Matrix& X = g.val(n.parents[0]);
            Matrix& dA = g.grd(n.parents[0]);
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                dA.data[i] += n.grad.data[i] * df(X.data[i], n.value.data[i]);
        });
    }

    template <typename F>
    Var ewise2(const char* op, Var a, Var b, F f, double da, double db) {
        const Matrix& A = val(a);
        const Matrix& B = val(b);
        if (!A.same_shape(B))
            throw shape_error(std::string(op) + ": lhs " + shape_str(A) + " rhs " + shape_str(B));
        Matrix out(A.rows, A.cols);
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = f(A.data[i], B.data[i]);
        return push(op, std::move(out), {a, b}, [da, db](Graph& g, Node& n) {
            Matrix& dA = g.grd(n.parents[0]);
            Matrix& dB = g.grd(n.parents[1]);
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                dA.data[i] += da * n.grad.data[i];
                dB.data[i] += db * n.grad.data[i];
            }
        });
    }

    std::vector<Node> nodes_;
    bool check_finite_;
};

} // namespace knowaug
