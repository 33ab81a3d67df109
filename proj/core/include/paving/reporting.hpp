// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "paving/baselines.hpp"
#include "paving/errors.hpp"
#include "paving/evaluation.hpp"
#include "paving/training.hpp"
#include "paving/trajectory.hpp"

namespace paving {

// Machine-readable projections. Every derived quantity a table shows (for
// example preservation in pp) is computed here, so the renderer only formats.

nlohmann::json to_json(const RateCI& r);
nlohmann::json to_json(const EvalReport& r, bool include_prompts = true);
nlohmann::json to_json(const OracleGaps& g);
nlohmann::json to_json(const TrajectoryReport& r);
nlohmann::json to_json(const SweepResult& s);
nlohmann::json to_json(const GateCalibration& c);
nlohmann::json to_json(const VetoCalibration& c);
nlohmann::json to_json(const TrainingTranscript& t);

/// Non-finite doubles become the strings "inf", "-inf" or "nan".
nlohmann::json number_json(double v);

class RenderError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

enum class CellFormat {
  text,      // string or integer as is
  number,    // fixed decimals
  signed_number,  // fixed decimals with an explicit sign
  ci,        // object {lower, upper} -> "[lo, hi]"
  mean_std,  // object {mean, std} -> "m ± s"
  flag,      // bool -> "yes" / "no"
};

struct ColumnSpec {
  std::string header;
  std::string pointer;  // JSON pointer into the row object
  CellFormat format = CellFormat::text;
  int decimals = 1;
};

struct TableSpec {
  std::string title;
  std::vector<ColumnSpec> columns;
};

struct Rendered {
  std::string text;
  std::string tsv;
};

/// Formats each row object through the column pointers. A missing field throws
/// RenderError naming the row and column; JSON null renders as "n/a".
Rendered render(const std::vector<nlohmann::json>& rows, const TableSpec& spec);

TableSpec main_table_spec();        // base / learned / oracle rows
TableSpec gap_table_spec();         // oracle gaps
TableSpec ablation_table_spec();    // design ablations
TableSpec trajectory_table_spec();  // per-bucket trajectory groups
TableSpec layer_profile_spec();     // per-layer edit alignment
TableSpec sweep_table_spec();       // steering baseline sweep rows
TableSpec calibration_table_spec(); // gate calibration candidates

/// Row objects for the list-valued reports.
std::vector<nlohmann::json> trajectory_rows(const nlohmann::json& trajectory_report);
std::vector<nlohmann::json> layer_profile_rows(const nlohmann::json& trajectory_report);
std::vector<nlohmann::json> sweep_rows(const nlohmann::json& sweep_report);
std::vector<nlohmann::json> calibration_rows(const nlohmann::json& calibration_report);

/// Renders every table a run report holds, in a fixed order.
Rendered render_run_report(const nlohmann::json& run_report);

}  // namespace paving
