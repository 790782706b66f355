#pragma once

#include <string>
#include <vector>

#include "nbvae/models.hpp"

namespace nbvae {

struct GradCheckOptions {
    std::size_t seeds = 100;
    double tol_elementwise = 1e-6;
    double tol_general = 1e-4;
    // Test fixture: multiplies the named op's reverse-mode gradient by 1.01
    // before comparison, so the harness itself can be shown to catch a
    // broken backward rule.
    std::string corrupt_op;
};

struct GradCheckResult {
    std::string op;
    double worst_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

/// Central finite differences (h = 1e-5) against the reverse-mode gradient
/// for every engine op and the full per-variant ELBO graph, across seeded
/// random inputs drawn away from domain boundaries. Relative error is
/// |ad - fd| / max(1, |fd|).
std::vector<GradCheckResult> run_gradient_checks(const GradCheckOptions& options = {});

}  // namespace nbvae
