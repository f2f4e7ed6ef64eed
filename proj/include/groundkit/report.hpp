#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "groundkit/metrics.hpp"

namespace groundkit {

inline constexpr const char* kReportFormat = "groundkit-eval-report/1";

// Machine-readable report. Keys are sorted and no wall-clock data is
// included, so identical inputs give byte-identical documents.
nlohmann::json report_to_json(const EvalReport& report, const nlohmann::json& provenance, bool complete = true);
std::string render_report_json(const EvalReport& report, const nlohmann::json& provenance, bool complete = true);

EvalReport report_from_json(const nlohmann::json& doc);

// Aligned text tables: benchmark accuracies with their average, then the
// miss-distance distribution.
std::string render_text_tables(const EvalReport& report, const std::string& method_name);

} // namespace groundkit
