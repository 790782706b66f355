#pragma once

#include <Eigen/Core>
#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nbvae/common.hpp"

namespace nbvae::diff {

using Matrix = Eigen::MatrixXd;

// Numerical guards shared by the graph ops and the plain forward paths.
inline constexpr double kExpInputClamp = 30.0;
inline constexpr double kProbClampLo = 1e-7;
inline constexpr double kProbClampHi = 1.0 - 1e-7;
inline constexpr double kLogVarClamp = 10.0;

class Tape;

/// One value in the computation graph: a dense float64 array plus a
/// same-shape gradient slot and a record of the producing operation.
/// Nodes are owned by their Tape and live exactly as long as it does.
struct Node {
    Matrix value;
    Matrix grad;
    const char* op = "constant";
    std::array<Node*, 3> inputs{};
    int n_inputs = 0;
    std::function<void(Node&)> backprop;  // empty for leaves

    Eigen::Index rows() const { return value.rows(); }
    Eigen::Index cols() const { return value.cols(); }
    double scalar() const {
        if (rows() != 1 || cols() != 1) throw ContractError(std::string(op) + ": node is not scalar");
        return value(0, 0);
    }
};

/// A trainable tensor: persistent value plus the gradient accumulator and
/// the two Adam moment arrays.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    Matrix adam_m;
    Matrix adam_v;

    Parameter() = default;
    Parameter(std::string name_, Matrix init)
        : name(std::move(name_)),
          value(std::move(init)),
          grad(Matrix::Zero(value.rows(), value.cols())),
          adam_m(Matrix::Zero(value.rows(), value.cols())),
          adam_v(Matrix::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(); }
};

enum class EltOp { Exp, Log, Sigmoid, Softplus, Tanh, Sqrt, Neg, Square, Lgamma, Log1mExp };

const char* elt_op_name(EltOp op);

enum class Axis { Rows, Cols, All };

/// Define-by-run reverse-mode tape over dense float64 arrays. The graph is
/// rebuilt per minibatch; creation order is a topological order, so
/// backward() is a single reverse sweep. Numerical guards: exp inputs are
/// clamped to <= 30 and sigmoid outputs to [1e-7, 1 - 1e-7], with zero
/// gradient through the clamped region.
///
/// A tape and its nodes are confined to one worker. Distinct workers may
/// build independent forward-only tapes over a shared read-only parameter
/// snapshot; backward() writes into Parameter::grad and must stay
/// single-threaded.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Node* constant(Matrix v, const char* name = "constant");

    /// Registers a trainable leaf; backward accumulates into p.grad.
    Node* leaf(Parameter& p);

    /// value = x W + b with the 1-by-b bias broadcast over rows.
    Node* affine(Node* x, Node* w, Node* b);

    Node* add(Node* a, Node* b);
    Node* sub(Node* a, Node* b);
    Node* mul(Node* a, Node* b);
    Node* div(Node* a, Node* b);

    Node* add_scalar(Node* x, double c);
    Node* mul_scalar(Node* x, double c);
    /// c - x elementwise.
    Node* rsub_scalar(double c, Node* x);

    Node* elementwise(EltOp op, Node* x);
    Node* exp(Node* x) { return elementwise(EltOp::Exp, x); }
    Node* log(Node* x) { return elementwise(EltOp::Log, x); }
    Node* sigmoid(Node* x) { return elementwise(EltOp::Sigmoid, x); }
    Node* softplus(Node* x) { return elementwise(EltOp::Softplus, x); }
    Node* tanh(Node* x) { return elementwise(EltOp::Tanh, x); }
    Node* sqrt(Node* x) { return elementwise(EltOp::Sqrt, x); }
    Node* neg(Node* x) { return elementwise(EltOp::Neg, x); }
    Node* square(Node* x) { return elementwise(EltOp::Square, x); }
    Node* lgamma(Node* x) { return elementwise(EltOp::Lgamma, x); }
    /// log(1 - e^x) for x < 0.
    Node* log1mexp(Node* x) { return elementwise(EltOp::Log1mExp, x); }

    Node* clamp(Node* x, double lo, double hi);

    /// Row-wise log softmax (stable, max-shifted).
    Node* log_softmax_rows(Node* x);

    Node* reduce_sum(Node* x, Axis axis);
    Node* reduce_mean(Node* x, Axis axis);
    Node* sum_cols(Node* x) { return reduce_sum(x, Axis::Cols); }
    Node* sum_rows(Node* x) { return reduce_sum(x, Axis::Rows); }
    Node* sum_all(Node* x) { return reduce_sum(x, Axis::All); }
    Node* mean_all(Node* x) { return reduce_mean(x, Axis::All); }

    /// Seeds d(loss)/d(loss) = 1 and sweeps the graph once in reverse
    /// topological order. loss must be 1x1; a second call on the same tape
    /// is a contract error.
    void backward(Node* loss);

    std::size_t size() const { return nodes_.size(); }

  private:
    Node* make(Matrix value, const char* op, std::initializer_list<Node*> ins,
               std::function<void(Node&)> back);

    std::vector<std::unique_ptr<Node>> nodes_;
    bool backward_run_ = false;
};

}  // namespace nbvae::diff
