#include "nbvae/diff.hpp"

#include <cmath>

#include "nbvae/special.hpp"

namespace nbvae::diff {

namespace {

constexpr double kExpClampHi = kExpInputClamp;
constexpr double kSigmoidLo = kProbClampLo;
constexpr double kSigmoidHi = kProbClampHi;

double stable_sigmoid(double x) { return sigmoid_stable(x); }
double stable_softplus(double x) { return softplus_stable(x); }

void check_domain(EltOp op, const Matrix& x, bool positive_required, bool negative_required) {
    if (!positive_required && !negative_required) return;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double v = x(i, j);
            if (positive_required && !(v > 0.0))
                throw NumericDomainError(std::string(elt_op_name(op)) + ": input must be strictly positive at (" +
                                         std::to_string(i) + ", " + std::to_string(j) + "), got " + std::to_string(v));
            if (negative_required && !(v < 0.0))
                throw NumericDomainError(std::string(elt_op_name(op)) + ": input must be strictly negative at (" +
                                         std::to_string(i) + ", " + std::to_string(j) + "), got " + std::to_string(v));
        }
    }
}

double log1mexp_scalar(double x) {
    // log(1 - e^x), x < 0; split at -ln 2 for full relative accuracy.
    if (x > -M_LN2) return std::log(-std::expm1(x));
    return std::log1p(-std::exp(x));
}

}  // namespace

const char* elt_op_name(EltOp op) {
    switch (op) {
        case EltOp::Exp: return "exp";
        case EltOp::Log: return "log";
        case EltOp::Sigmoid: return "sigmoid";
        case EltOp::Softplus: return "softplus";
        case EltOp::Tanh: return "tanh";
        case EltOp::Sqrt: return "sqrt";
        case EltOp::Neg: return "neg";
        case EltOp::Square: return "square";
        case EltOp::Lgamma: return "lgamma";
        case EltOp::Log1mExp: return "log1mexp";
    }
    return "?";
}

Node* Tape::make(Matrix value, const char* op, std::initializer_list<Node*> ins,
                 std::function<void(Node&)> back) {
    auto node = std::make_unique<Node>();
    node->value = std::move(value);
    node->grad = Matrix::Zero(node->value.rows(), node->value.cols());
    node->op = op;
    int k = 0;
    for (Node* in : ins) node->inputs[k++] = in;
    node->n_inputs = k;
    node->backprop = std::move(back);
    nodes_.push_back(std::move(node));
    return nodes_.back().get();
}

Node* Tape::constant(Matrix v, const char* name) { return make(std::move(v), name, {}, {}); }

Node* Tape::leaf(Parameter& p) {
    Parameter* pp = &p;
    return make(p.value, "parameter", {}, [pp](Node& n) { pp->grad += n.grad; });
}

Node* Tape::affine(Node* x, Node* w, Node* b) {
    if (x->cols() != w->rows())
        throw DimensionError("affine: inner dimensions disagree: x is " + std::to_string(x->rows()) + "x" +
                             std::to_string(x->cols()) + ", W is " + std::to_string(w->rows()) + "x" +
                             std::to_string(w->cols()));
    if (b->rows() != 1 || b->cols() != w->cols())
        throw DimensionError("affine: bias must be 1x" + std::to_string(w->cols()));
    Matrix out = x->value * w->value;
    out.rowwise() += b->value.row(0);
    return make(std::move(out), "affine", {x, w, b}, [x, w, b](Node& n) {
        x->grad.noalias() += n.grad * w->value.transpose();
        w->grad.noalias() += x->value.transpose() * n.grad;
        b->grad.row(0) += n.grad.colwise().sum();
    });
}

Node* Tape::add(Node* a, Node* b) {
    if (a->rows() != b->rows() || a->cols() != b->cols()) throw DimensionError("add: shape mismatch");
    return make(a->value + b->value, "add", {a, b}, [a, b](Node& n) {
        a->grad += n.grad;
        b->grad += n.grad;
    });
}

Node* Tape::sub(Node* a, Node* b) {
    if (a->rows() != b->rows() || a->cols() != b->cols()) throw DimensionError("sub: shape mismatch");
    return make(a->value - b->value, "sub", {a, b}, [a, b](Node& n) {
        a->grad += n.grad;
        b->grad -= n.grad;
    });
}

Node* Tape::mul(Node* a, Node* b) {
    if (a->rows() != b->rows() || a->cols() != b->cols()) throw DimensionError("mul: shape mismatch");
    return make(a->value.cwiseProduct(b->value), "mul", {a, b}, [a, b](Node& n) {
        a->grad.array() += n.grad.array() * b->value.array();
        b->grad.array() += n.grad.array() * a->value.array();
    });
}

Node* Tape::div(Node* a, Node* b) {
    if (a->rows() != b->rows() || a->cols() != b->cols()) throw DimensionError("div: shape mismatch");
    return make(a->value.cwiseQuotient(b->value), "div", {a, b}, [a, b](Node& n) {
        a->grad.array() += n.grad.array() / b->value.array();
        b->grad.array() -= n.grad.array() * a->value.array() / (b->value.array() * b->value.array());
    });
}

Node* Tape::add_scalar(Node* x, double c) {
    return make(x->value.array() + c, "add_scalar", {x}, [x](Node& n) { x->grad += n.grad; });
}

Node* Tape::mul_scalar(Node* x, double c) {
    return make(x->value * c, "mul_scalar", {x}, [x, c](Node& n) { x->grad += n.grad * c; });
}

Node* Tape::rsub_scalar(double c, Node* x) {
    return make(c - x->value.array(), "rsub_scalar", {x}, [x](Node& n) { x->grad -= n.grad; });
}

Node* Tape::elementwise(EltOp op, Node* x) {
    const Matrix& v = x->value;
    Matrix out(v.rows(), v.cols());
    switch (op) {
        case EltOp::Exp:
            out = v.array().min(kExpClampHi).exp();
            return make(std::move(out), "exp", {x}, [x](Node& n) {
                x->grad.array() += n.grad.array() * n.value.array() * (x->value.array() < kExpClampHi).cast<double>();
            });
        case EltOp::Log:
            check_domain(op, v, true, false);
            out = v.array().log();
            return make(std::move(out), "log", {x}, [x](Node& n) {
                x->grad.array() += n.grad.array() / x->value.array();
            });
        case EltOp::Sigmoid:
            out = v.unaryExpr([](double t) { return std::clamp(stable_sigmoid(t), kSigmoidLo, kSigmoidHi); });
            return make(std::move(out), "sigmoid", {x}, [x](Node& n) {
                x->grad.array() += n.grad.array() *
                                   x->value.unaryExpr([](double t) {
                                        const double s = stable_sigmoid(t);
                                        if (s < kSigmoidLo || s > kSigmoidHi) return 0.0;
                                        return s * (1.0 - s);
                                    }).array();
            });
        case EltOp::Softplus:
            out = v.unaryExpr([](double t) { return stable_softplus(t); });
            return make(std::move(out), "softplus", {x}, [x](Node& n) {
                x->grad.array() += n.grad.array() * x->value.unaryExpr([](double t) { return stable_sigmoid(t); }).array();
            });
        case EltOp::Tanh:
            out = v.array().tanh();
            return make(std::move(out), "tanh", {x}, [x](Node& n) {
                x->grad.array() += n.grad.array() * (1.0 - n.value.array().square());
            });
        case EltOp::Sqrt:
            check_domain(op, v, true, false);
            out = v.array().sqrt();
            return make(std::move(out), "sqrt", {x}, [x](Node& n) {
                x->grad.array() += n.grad.array() / (2.0 * n.value.array());
            });
        case EltOp::Neg:
            out = -v;
            return make(std::move(out), "neg", {x}, [x](Node& n) { x->grad -= n.grad; });
        case EltOp::Square:
            out = v.array().square();
            return make(std::move(out), "square", {x}, [x](Node& n) {
                x->grad.array() += 2.0 * n.grad.array() * x->value.array();
            });
        case EltOp::Lgamma:
            check_domain(op, v, true, false);
            out = v.unaryExpr([](double t) { return lgamma_lanczos(t); });
            return make(std::move(out), "lgamma", {x}, [x](Node& n) {
                x->grad.array() += n.grad.array() * x->value.unaryExpr([](double t) { return digamma(t); }).array();
            });
        case EltOp::Log1mExp:
            check_domain(op, v, false, true);
            out = v.unaryExpr([](double t) { return log1mexp_scalar(t); });
            return make(std::move(out), "log1mexp", {x}, [x](Node& n) {
                // d/dt log(1 - e^t) = -1 / expm1(-t)
                x->grad.array() += n.grad.array() * x->value.unaryExpr([](double t) { return -1.0 / std::expm1(-t); }).array();
            });
    }
    throw ContractError("elementwise: unknown op");
}

Node* Tape::clamp(Node* x, double lo, double hi) {
    Matrix out = x->value.array().max(lo).min(hi);
    return make(std::move(out), "clamp", {x}, [x, lo, hi](Node& n) {
        x->grad.array() +=
            n.grad.array() * ((x->value.array() >= lo) && (x->value.array() <= hi)).cast<double>();
    });
}

Node* Tape::log_softmax_rows(Node* x) {
    Matrix out(x->rows(), x->cols());
    for (Eigen::Index i = 0; i < x->rows(); ++i) {
        const double m = x->value.row(i).maxCoeff();
        Eigen::ArrayXd shifted = x->value.row(i).array() - m;
        out.row(i) = shifted - std::log(shifted.exp().sum());
    }
    return make(std::move(out), "log_softmax_rows", {x}, [x](Node& n) {
        for (Eigen::Index i = 0; i < n.rows(); ++i) {
            const double gsum = n.grad.row(i).sum();
            x->grad.row(i).array() += n.grad.row(i).array() - n.value.row(i).array().exp() * gsum;
        }
    });
}

Node* Tape::reduce_sum(Node* x, Axis axis) {
    switch (axis) {
        case Axis::Rows: {
            Matrix out = x->value.colwise().sum();
            return make(std::move(out), "sum_rows", {x}, [x](Node& n) {
                x->grad.rowwise() += n.grad.row(0);
            });
        }
        case Axis::Cols: {
            Matrix out = x->value.rowwise().sum();
            return make(std::move(out), "sum_cols", {x}, [x](Node& n) {
                x->grad.colwise() += n.grad.col(0);
            });
        }
        case Axis::All: {
            Matrix out(1, 1);
            out(0, 0) = x->value.sum();
            return make(std::move(out), "sum_all", {x}, [x](Node& n) {
                x->grad.array() += n.grad(0, 0);
            });
        }
    }
    throw ContractError("reduce_sum: unknown axis");
}

Node* Tape::reduce_mean(Node* x, Axis axis) {
    double count = 1.0;
    switch (axis) {
        case Axis::Rows: count = static_cast<double>(x->rows()); break;
        case Axis::Cols: count = static_cast<double>(x->cols()); break;
        case Axis::All: count = static_cast<double>(x->rows() * x->cols()); break;
    }
    return mul_scalar(reduce_sum(x, axis), 1.0 / count);
}

void Tape::backward(Node* loss) {
    if (loss->rows() != 1 || loss->cols() != 1)
        throw ContractError("backward: loss must be a 1x1 scalar node");
    if (backward_run_)
        throw ContractError("backward: already called on this tape; rebuild the graph before differentiating again");
    backward_run_ = true;
    loss->grad(0, 0) = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = **it;
        if (n.backprop) n.backprop(n);
    }
}

}  // namespace nbvae::diff
