#pragma once

#include <vector>

#include "tsattr/attribution.hpp"
#include "tsattr/autodiff.hpp"
#include "tsattr/error.hpp"
#include "tsattr/model.hpp"

namespace tsattr {

/// Gradient-weighted attention rollout. `maps[l][h]` and `grads[l][h]` are
/// square attention matrices and their gradients. Per layer, heads are
/// averaged after clipping grad * A at zero, and R <- R + A_bar R starting
/// from the identity. Returns R.
template <typename Scalar>
ad::MatrixX<Scalar> gradient_rollout(const std::vector<std::vector<ad::MatrixX<Scalar>>>& maps,
                                     const std::vector<std::vector<ad::MatrixX<Scalar>>>& grads) {
  if (maps.size() != grads.size() || maps.empty() || maps.front().empty()) {
    throw ShapeError("rollout: maps and gradients must be non-empty and aligned");
  }
  const Eigen::Index n = maps.front().front().rows();
  ad::MatrixX<Scalar> r = ad::MatrixX<Scalar>::Identity(n, n);
  for (std::size_t l = 0; l < maps.size(); ++l) {
    if (maps[l].size() != grads[l].size() || maps[l].empty()) throw ShapeError("rollout: head count mismatch");
    ad::MatrixX<Scalar> bar = ad::MatrixX<Scalar>::Zero(n, n);
    for (std::size_t h = 0; h < maps[l].size(); ++h) {
      const auto& a = maps[l][h];
      const auto& g = grads[l][h];
      if (a.rows() != n || a.cols() != n || g.rows() != n || g.cols() != n) {
        throw ShapeError("rollout: attention maps must be visits x visits");
      }
      bar += g.cwiseProduct(a).cwiseMax(Scalar(0));
    }
    bar /= static_cast<Scalar>(maps[l].size());
    r = (r + bar * r).eval();
  }
  return r;
}

/// Chefer-style relevance. Visit scores are the column means of the rollout
/// matrix; each visit's score is split over its feature positions in
/// proportion to the L1 norm of gradient * input on their contribution rows.
/// Throws NotApplicableError for architectures without attention.
AttributionMap chefer(const Model& model, const PatientRecord& record, int target_class);

}  // namespace tsattr
