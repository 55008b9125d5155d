#pragma once

// Finite-difference audits of every layer type and of the whole model with
// its PIT SI-SDR loss, in double precision.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ps2/ad/gradcheck.hpp"
#include "ps2/model/config.hpp"

namespace ps2::model {

struct AuditEntry {
  std::string name;
  ad::GradCheckReport report;
};

struct GradientAudit {
  std::vector<AuditEntry> checks;
  double max_rel_error = 0.0;
  double tol = 1e-5;
  bool passed() const { return max_rel_error < tol; }
};

// One check per layer group: conv/layer norm/prelu/linear/deconv, BLSTM with
// fold, BGRU, Mamba and frame attention. Five-point stencil, eps 1e-3.
GradientAudit audit_layers(std::uint64_t seed = 40);

// Forward + PIT loss of a freshly initialized model on a random mixture of
// `length` samples, every parameter tensor checked with Ridders' method.
// The PReLU slope is set to 1 and the Mamba parameters moved to a random
// point so that no stencil straddles a kink and no gradient sits at roundoff.
AuditEntry audit_model(const Ps2Config& cfg, std::size_t length = 40, std::uint64_t seed = 41);

nlohmann::ordered_json to_json(const GradientAudit& audit);

}  // namespace ps2::model
