#include "nbvae/gradcheck.hpp"

#include <cmath>
#include <functional>

namespace nbvae {

namespace {

using diff::Matrix;
using diff::Node;
using diff::Tape;

constexpr double kStep = 1e-5;

double rel_err(double ad, double fd) { return std::abs(ad - fd) / std::max(1.0, std::abs(fd)); }

Matrix random_matrix(RandomStream& rng, Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = lo + (hi - lo) * rng.uniform();
    return m;
}

// Builder maps leaf nodes (one per checked parameter) to a scalar loss.
using LossBuilder = std::function<Node*(Tape&, const std::vector<Node*>&)>;

// Central-difference comparison of d(loss)/d(param) for every component of
// every parameter, against one reverse sweep. Returns the worst relative
// error seen.
double check_loss(const LossBuilder& build, std::vector<diff::Parameter>& params, bool corrupt) {
    auto eval = [&]() {
        Tape t;
        std::vector<Node*> leaves;
        leaves.reserve(params.size());
        for (auto& p : params) leaves.push_back(t.leaf(p));
        return build(t, leaves)->scalar();
    };

    for (auto& p : params) p.zero_grad();
    {
        Tape t;
        std::vector<Node*> leaves;
        leaves.reserve(params.size());
        for (auto& p : params) leaves.push_back(t.leaf(p));
        t.backward(build(t, leaves));
    }

    double worst = 0.0;
    for (auto& p : params) {
        for (Eigen::Index i = 0; i < p.value.rows(); ++i) {
            for (Eigen::Index j = 0; j < p.value.cols(); ++j) {
                const double saved = p.value(i, j);
                p.value(i, j) = saved + kStep;
                const double up = eval();
                p.value(i, j) = saved - kStep;
                const double down = eval();
                p.value(i, j) = saved;
                const double fd = (up - down) / (2.0 * kStep);
                double ad = p.grad(i, j);
                if (corrupt) ad *= 1.01;
                worst = std::max(worst, rel_err(ad, fd));
            }
        }
    }
    return worst;
}

struct OpCheck {
    std::string name;
    double tolerance;
    // fills the parameter list and returns the loss builder for one seed
    std::function<LossBuilder(RandomStream&, std::vector<diff::Parameter>&)> setup;
};

LossBuilder unary_loss(diff::EltOp op) {
    return [op](Tape& t, const std::vector<Node*>& leaves) {
        return t.sum_all(t.elementwise(op, leaves[0]));
    };
}

std::vector<OpCheck> op_checks() {
    std::vector<OpCheck> checks;

    struct EltSpec {
        diff::EltOp op;
        double lo, hi;
    };
    const EltSpec elementwise[] = {
        {diff::EltOp::Exp, -3.0, 3.0},      {diff::EltOp::Log, 0.2, 5.0},
        {diff::EltOp::Sigmoid, -5.0, 5.0},  {diff::EltOp::Softplus, -5.0, 5.0},
        {diff::EltOp::Tanh, -3.0, 3.0},     {diff::EltOp::Sqrt, 0.2, 5.0},
        {diff::EltOp::Neg, -3.0, 3.0},      {diff::EltOp::Square, -3.0, 3.0},
        {diff::EltOp::Lgamma, 0.2, 8.0},    {diff::EltOp::Log1mExp, -5.0, -0.1},
    };
    for (const EltSpec& entry : elementwise) {
        checks.push_back(
            {diff::elt_op_name(entry.op), 1e-6,
             [entry](RandomStream& rng, std::vector<diff::Parameter>& params) {
                 params.emplace_back("x", random_matrix(rng, 3, 4, entry.lo, entry.hi));
                 return unary_loss(entry.op);
             }});
    }

    checks.push_back({"affine", 1e-4, [](RandomStream& rng, std::vector<diff::Parameter>& params) {
                          params.emplace_back("x", random_matrix(rng, 3, 2, -2.0, 2.0));
                          params.emplace_back("w", random_matrix(rng, 2, 4, -2.0, 2.0));
                          params.emplace_back("b", random_matrix(rng, 1, 4, -1.0, 1.0));
                          return [](Tape& t, const std::vector<Node*>& l) {
                              return t.sum_all(t.square(t.affine(l[0], l[1], l[2])));
                          };
                      }});

    checks.push_back({"add", 1e-4, [](RandomStream& rng, std::vector<diff::Parameter>& params) {
                          params.emplace_back("a", random_matrix(rng, 3, 4, -2.0, 2.0));
                          params.emplace_back("b", random_matrix(rng, 3, 4, -2.0, 2.0));
                          return [](Tape& t, const std::vector<Node*>& l) {
                              return t.sum_all(t.square(t.add(l[0], l[1])));
                          };
                      }});
    checks.push_back({"sub", 1e-4, [](RandomStream& rng, std::vector<diff::Parameter>& params) {
                          params.emplace_back("a", random_matrix(rng, 3, 4, -2.0, 2.0));
                          params.emplace_back("b", random_matrix(rng, 3, 4, -2.0, 2.0));
                          return [](Tape& t, const std::vector<Node*>& l) {
                              return t.sum_all(t.square(t.sub(l[0], l[1])));
                          };
                      }});
    checks.push_back({"mul", 1e-4, [](RandomStream& rng, std::vector<diff::Parameter>& params) {
                          params.emplace_back("a", random_matrix(rng, 3, 4, -2.0, 2.0));
                          params.emplace_back("b", random_matrix(rng, 3, 4, -2.0, 2.0));
                          return [](Tape& t, const std::vector<Node*>& l) {
                              return t.sum_all(t.square(t.mul(l[0], l[1])));
                          };
                      }});
    checks.push_back({"div", 1e-4, [](RandomStream& rng, std::vector<diff::Parameter>& params) {
                          params.emplace_back("a", random_matrix(rng, 3, 4, -2.0, 2.0));
                          params.emplace_back("b", random_matrix(rng, 3, 4, 0.5, 2.0));
                          return [](Tape& t, const std::vector<Node*>& l) {
                              return t.sum_all(t.square(t.div(l[0], l[1])));
                          };
                      }});

    checks.push_back({"clamp", 1e-4, [](RandomStream& rng, std::vector<diff::Parameter>& params) {
                          // keep every entry at least 10 FD steps away from
                          // the clamp boundaries at +-1
                          Matrix x = random_matrix(rng, 3, 4, -3.0, 3.0);
                          for (Eigen::Index i = 0; i < x.size(); ++i) {
                              while (std::abs(std::abs(x(i)) - 1.0) < 10.0 * kStep)
                                  x(i) = -3.0 + 6.0 * rng.uniform();
                          }
                          params.emplace_back("x", std::move(x));
                          return [](Tape& t, const std::vector<Node*>& l) {
                              return t.sum_all(t.square(t.clamp(l[0], -1.0, 1.0)));
                          };
                      }});

    checks.push_back({"log_softmax", 1e-4, [](RandomStream& rng, std::vector<diff::Parameter>& params) {
                          params.emplace_back("x", random_matrix(rng, 3, 5, -2.0, 2.0));
                          Matrix weights = random_matrix(rng, 3, 5, 0.0, 3.0);
                          return [weights](Tape& t, const std::vector<Node*>& l) {
                              return t.sum_all(t.mul(t.constant(weights), t.log_softmax_rows(l[0])));
                          };
                      }});

    for (diff::Axis axis : {diff::Axis::Rows, diff::Axis::Cols, diff::Axis::All}) {
        const char* name = axis == diff::Axis::Rows   ? "reduce_sum[rows]"
                           : axis == diff::Axis::Cols ? "reduce_sum[cols]"
                                                      : "reduce_sum[all]";
        checks.push_back({name, 1e-4, [axis](RandomStream& rng, std::vector<diff::Parameter>& params) {
                              params.emplace_back("x", random_matrix(rng, 3, 4, -2.0, 2.0));
                              return [axis](Tape& t, const std::vector<Node*>& l) {
                                  return t.sum_all(t.square(t.reduce_sum(l[0], axis)));
                              };
                          }});
    }
    checks.push_back({"reduce_mean", 1e-4, [](RandomStream& rng, std::vector<diff::Parameter>& params) {
                          params.emplace_back("x", random_matrix(rng, 3, 4, -2.0, 2.0));
                          return [](Tape& t, const std::vector<Node*>& l) {
                              return t.sum_all(t.square(t.reduce_mean(l[0], diff::Axis::Cols)));
                          };
                      }});

    return checks;
}

// FD check of the full ELBO graph against every model parameter on a tiny
// architecture.
double check_elbo_variant(Variant variant, std::uint64_t seed, bool corrupt) {
    ModelConfig mc;
    mc.variant = variant;
    mc.input_dim = 4;
    mc.latent_dim = 2;
    mc.encoder_layers = {3};
    mc.decoder_layers = {3};
    mc.feature_dim = variant == Variant::NbvaeC ? 3 : 0;
    mc.seed = seed;

    ModelParams params = ModelParams::init(mc);
    RandomStream rng(derive_seed(seed, 0xe1b0));

    const Eigen::Index n = 2;
    Batch batch;
    batch.counts = Matrix(n, 4);
    const bool binary = mc.needs_binary_data();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index v = 0; v < 4; ++v)
            batch.counts(i, v) =
                binary ? static_cast<double>(rng.uniform() < 0.5) : std::floor(rng.uniform() * 6.0);
    if (variant == Variant::NbvaeC) batch.features = random_matrix(rng, n, 3, -1.0, 1.0);

    Matrix noise(n, 2);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < 2; ++k) noise(i, k) = rng.normal();
    const double beta = 0.7;

    auto eval = [&]() {
        Tape t;
        return elbo(t, params, batch, beta, noise)->scalar();
    };

    params.zero_grads();
    {
        Tape t;
        t.backward(elbo(t, params, batch, beta, noise));
    }

    double worst = 0.0;
    for (diff::Parameter* p : params.parameters()) {
        for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
            for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
                const double saved = p->value(i, j);
                p->value(i, j) = saved + kStep;
                const double up = eval();
                p->value(i, j) = saved - kStep;
                const double down = eval();
                p->value(i, j) = saved;
                const double fd = (up - down) / (2.0 * kStep);
                double ad = p->grad(i, j);
                if (corrupt) ad *= 1.01;
                worst = std::max(worst, rel_err(ad, fd));
            }
        }
    }
    return worst;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_checks(const GradCheckOptions& options) {
    std::vector<GradCheckResult> results;

    for (const OpCheck& check : op_checks()) {
        const bool corrupt = options.corrupt_op == check.name;
        double worst = 0.0;
        for (std::size_t s = 0; s < options.seeds; ++s) {
            RandomStream rng(derive_seed(s, 0x9c));
            std::vector<diff::Parameter> params;
            LossBuilder build = check.setup(rng, params);
            worst = std::max(worst, check_loss(build, params, corrupt));
        }
        const double tol = check.tolerance == 1e-6 ? options.tol_elementwise : options.tol_general;
        results.push_back({check.name, worst, tol, worst < tol});
    }

    for (Variant variant : {Variant::Nbvae, Variant::NbvaeDm, Variant::NbvaeB, Variant::NbvaeC,
                            Variant::Multivae}) {
        const std::string name = "elbo[" + variant_to_string(variant) + "]";
        const bool corrupt = options.corrupt_op == name;
        double worst = 0.0;
        for (std::size_t s = 0; s < options.seeds; ++s)
            worst = std::max(worst, check_elbo_variant(variant, s + 1, corrupt));
        results.push_back({name, worst, options.tol_general, worst < options.tol_general});
    }

    return results;
}

}  // namespace nbvae
