#pragma once

#include "json.hpp"

#include "tpsd/allocation.hpp"
#include "tpsd/cohort.hpp"
#include "tpsd/estimators.hpp"
#include "tpsd/glm.hpp"
#include "tpsd/montecarlo.hpp"
#include "tpsd/scenario.hpp"

namespace tpsd {

using Json = nlohmann::ordered_json;

Json to_json(const ScenarioSpec& spec);
/// Starts from the series defaults; absent keys keep them.
ScenarioSpec scenario_from_json(const Json& j);

Json to_json(const SimulationConfig& cfg);
SimulationConfig simulation_from_json(const Json& j);

Json to_json(const Allocation& a);
Allocation allocation_from_json(const Json& j);

Json to_json(const ReportRow& r);
Json to_json(const MonteCarloReport& r);
MonteCarloReport report_from_json_value(const Json& j);

Json to_json(const EstimatorResult& r);

Json to_json(const Term& t);
Term term_from_json(const Json& j);
Json to_json(const ModelSpec& m);
ModelSpec model_from_json(const Json& j);

Json to_json(const StratificationRule& r);
StratificationRule stratification_from_json(const Json& j);

Json to_json(const Schema& s);
Schema schema_from_json(const Json& j);

/// Scenario parameter grids for series 1-4 and the NWTS-like cohort.
Json presets_json();

}  // namespace tpsd
