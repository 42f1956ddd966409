#pragma once

#include <optional>
#include <string>

#include "dadp/model.hpp"

namespace dadp {

// Problem definition files are JSON documents with sections `horizon`,
// `coupling_dimension`, `noise` and `subsystems` (catalog entries plus
// coefficient arrays). Schema violations come back as a ValidationReport,
// never as a crash; a loaded spec is additionally structurally validated.
struct ProblemLoadResult {
    std::optional<ProblemSpec> spec;
    ValidationReport report;
    bool ok() const { return spec.has_value() && report.ok(); }
};

ProblemLoadResult parse_problem_json(const std::string& text);
ProblemLoadResult load_problem_json(const std::string& path);
std::string problem_to_json(const ProblemSpec& spec);
void save_problem_json(const ProblemSpec& spec, const std::string& path);

} // namespace dadp
