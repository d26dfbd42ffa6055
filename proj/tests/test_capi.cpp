#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "tpsd/tpsd.h"

using Json = nlohmann::ordered_json;

namespace {

std::string take(char* p) {
  std::string s = p ? p : "";
  tpsd_string_free(p);
  return s;
}

const char* kSchema = R"({"y": "outcome", "x": "phase2", "z": "auxiliary", "w": "phase1"})";

std::string two_phase_csv() {
  std::string csv = "y,x,z,w\n";
  for (int i = 0; i < 200; ++i) {
    double x = ((i * 37) % 101) / 50.0 - 1.0;
    double z = x + (((i * 53) % 17) - 8) / 40.0;
    double w = (i / 2) % 2;
    double y = 1.0 + 0.5 * x - 0.3 * w + (((i * 29) % 23) - 11) / 20.0;
    bool sampled = (z > 0.5 || z < -0.5) ? (i % 2 == 0) : (i % 4 == 0);
    csv += std::to_string(y) + "," + (sampled ? std::to_string(x) : std::string("NA")) + "," + std::to_string(z) + "," +
           std::to_string(w) + "\n";
  }
  return csv;
}

}  // namespace

TEST_CASE("version and status names") {
  CHECK(std::strlen(tpsd_version()) > 0);
  CHECK(std::string(tpsd_status_name(TPSD_OK)) == "ok");
  CHECK(std::string(tpsd_status_name(TPSD_ERR_INFEASIBLE)) == "infeasible");
  CHECK(std::string(tpsd_status_name(TPSD_ERR_TIMEOUT)) == "timeout");
  tpsd_string_free(nullptr);
}

TEST_CASE("cohort, strata and allocation handles") {
  tpsd_cohort* c = nullptr;
  REQUIRE(tpsd_cohort_parse_csv(two_phase_csv().c_str(), kSchema, &c) == TPSD_OK);
  CHECK(tpsd_cohort_rows(c) == 200);
  tpsd_strata* s = nullptr;
  REQUIRE(tpsd_stratify(c, R"({"kind": "quantile", "inputs": "z", "breakpoints": [0.25, 0.75]})", &s) == TPSD_OK);
  CHECK(tpsd_strata_count(s) == 3);
  CHECK(tpsd_strata_size(s, 0) + tpsd_strata_size(s, 1) + tpsd_strata_size(s, 2) == 200);
  CHECK(tpsd_strata_size(s, 7) == 0);

  tpsd_allocation* a = nullptr;
  REQUIRE(tpsd_allocate(c, s, R"({"method": "pss", "n": 40})", &a) == TPSD_OK);
  CHECK(tpsd_allocation_total(a) == 40);
  CHECK(tpsd_allocation_strata(a) == 3);
  char* text = nullptr;
  REQUIRE(tpsd_allocation_to_json(a, &text) == TPSD_OK);
  Json j = Json::parse(take(text));
  CHECK(j["total"] == 40);
  CHECK(j["strata"].size() == 3);
  CHECK(j["strata"][0]["k"] == 1);
  CHECK(j["policy"]["method"] == "pss");
  tpsd_allocation_free(a);

  a = nullptr;
  REQUIRE(tpsd_allocate(c, s, R"({"method": "neyman", "n": 30, "variable": "z"})", &a) == TPSD_OK);
  CHECK(tpsd_allocation_total(a) == 30);
  tpsd_allocation_free(a);

  a = nullptr;
  const char* gr = R"({"method": "if-gr", "n": 40, "outcome": {"family": "linear", "response": "y", "terms": ["z", "w"]},
                      "h_hat_column": "z"})";
  CHECK(tpsd_allocate(c, s, gr, &a) == TPSD_OK);
  CHECK(tpsd_allocation_total(a) == 40);
  tpsd_allocation_free(a);

  a = nullptr;
  CHECK(tpsd_allocate(c, s, R"({"method": "bss", "n": 500})", &a) == TPSD_ERR_INFEASIBLE);
  CHECK(a == nullptr);
  CHECK(std::strlen(tpsd_last_error()) > 0);
  CHECK(tpsd_allocate(c, s, R"({"method": "scc"})", &a) == TPSD_ERR_INVALID_ARGUMENT);
  CHECK(tpsd_allocate(c, s, "{not json", &a) == TPSD_ERR_PARSE);
  CHECK(tpsd_allocate(c, s, R"({"method": "neyman", "n": 30, "variable": "q"})", &a) == TPSD_ERR_MISSING_COLUMN);
  CHECK(tpsd_allocate(nullptr, s, R"({"method": "pss", "n": 4})", &a) == TPSD_ERR_INVALID_ARGUMENT);
  tpsd_strata_free(s);
  tpsd_cohort_free(c);
}

TEST_CASE("ingestion errors map to status codes") {
  tpsd_cohort* c = nullptr;
  CHECK(tpsd_cohort_parse_csv("y,x\n1,2\n", kSchema, &c) == TPSD_ERR_MISSING_COLUMN);
  CHECK(tpsd_cohort_parse_csv("y,x,z,w\n1,2,NA,1\n", kSchema, &c) == TPSD_ERR_MISSING_VALUE);
  CHECK(tpsd_cohort_parse_csv("y\n1\n", R"({"y": "bogus"})", &c) == TPSD_ERR_INVALID_ARGUMENT);
  CHECK(tpsd_cohort_load_csv("/nonexistent.csv", kSchema, &c) == TPSD_ERR_IO);
  CHECK(c == nullptr);
  CHECK(tpsd_cohort_rows(nullptr) == 0);
}

TEST_CASE("moments allocation") {
  tpsd_allocation* a = nullptr;
  REQUIRE(tpsd_allocate_moments(R"({"sizes": [100, 100], "sd": [1, 3], "n": 40})", &a) == TPSD_OK);
  CHECK(tpsd_allocation_n(a, 0) == 10);
  CHECK(tpsd_allocation_n(a, 1) == 30);
  tpsd_allocation_free(a);
  REQUIRE(tpsd_allocate_moments(R"({"sizes": [3026, 220, 507, 162], "n": 1337, "method": "pss"})", &a) == TPSD_OK);
  CHECK(tpsd_allocation_n(a, 0) == 1034);
  CHECK(tpsd_allocation_n(a, 3) == 55);
  tpsd_allocation_free(a);
  CHECK(tpsd_allocate_moments(R"({"sizes": [10, 10], "sd": [1], "n": 5})", &a) == TPSD_ERR_INVALID_ARGUMENT);
  CHECK(tpsd_allocate_moments(R"({"sizes": [10, 10], "sd": [1, 1], "n": 50})", &a) == TPSD_ERR_INFEASIBLE);
}

TEST_CASE("generated cohorts are reproducible") {
  const char* spec = R"({"series": "1", "N": 300, "n": 60, "rho": 0.9})";
  tpsd_cohort *a = nullptr, *b = nullptr;
  REQUIRE(tpsd_cohort_generate(spec, 5, &a) == TPSD_OK);
  REQUIRE(tpsd_cohort_generate(spec, 5, &b) == TPSD_OK);
  char *ta = nullptr, *tb = nullptr;
  REQUIRE(tpsd_cohort_to_csv(a, &ta) == TPSD_OK);
  REQUIRE(tpsd_cohort_to_csv(b, &tb) == TPSD_OK);
  CHECK(take(ta) == take(tb));
  CHECK(tpsd_cohort_rows(a) == 300);
  tpsd_cohort_free(a);
  tpsd_cohort_free(b);
  CHECK(tpsd_cohort_generate(R"({"series": "1", "N": 300, "bogus": 1})", 5, &a) == TPSD_ERR_PARSE);
}

TEST_CASE("scenario allocation compares designs") {
  char* out = nullptr;
  REQUIRE(tpsd_scenario_allocate(R"({"scenario": {"series": "1", "rho": 0.9}, "methods": ["IF-IPW", "IF-GR", "PSS"],
                                     "seed": 3})",
                                 &out) == TPSD_OK);
  Json j = Json::parse(take(out));
  REQUIRE(j["allocations"].size() == 3);
  CHECK(j["strata_sizes"] == Json::array({1200, 2800}));
  auto ipw = j["allocations"][0]["strata"];
  auto gr = j["allocations"][1]["strata"];
  CHECK(j["allocations"][1]["method"] == "IF-GR");
  CHECK(gr[0]["n"].get<int>() > ipw[0]["n"].get<int>());
  CHECK(j["allocations"][2]["strata"][0]["n"] == 180);
  char* again = nullptr;
  REQUIRE(tpsd_scenario_allocate(R"({"scenario": {"series": "1", "rho": 0.9}, "methods": ["IF-IPW", "IF-GR", "PSS"],
                                     "seed": 3})",
                                 &again) == TPSD_OK);
  CHECK(Json::parse(take(again)) == j);
  CHECK(tpsd_scenario_allocate(R"({"methods": ["PSS"]})", &out) == TPSD_ERR_INVALID_ARGUMENT);
  CHECK(tpsd_scenario_allocate(R"({"scenario": {"series": "1", "N": 100, "n": 400}})", &out) == TPSD_ERR_INFEASIBLE);
}

TEST_CASE("estimation on a two-phase file") {
  tpsd_cohort* c = nullptr;
  REQUIRE(tpsd_cohort_parse_csv(two_phase_csv().c_str(), kSchema, &c) == TPSD_OK);
  const char* outcome = R"("outcome": {"family": "linear", "response": "y", "terms": ["x", "w"], "target": "x"})";
  const char* strata = R"("strata": {"kind": "quantile", "inputs": "z", "breakpoints": [0.25, 0.75]})";
  std::string ipw_req = std::string("{") + outcome + "," + strata + R"(, "estimator": "ipw"})";
  char* out = nullptr;
  REQUIRE(tpsd_estimate(c, ipw_req.c_str(), &out) == TPSD_OK);
  Json ipw = Json::parse(take(out));
  CHECK(ipw["estimator"] == "IPW");
  CHECK(ipw["target"] == "x");
  CHECK(ipw["converged"] == true);
  CHECK(ipw["phase2_rows"].get<int>() > 20);

  std::string rak_req = std::string("{") + outcome + "," + strata +
                        R"(, "estimator": "raking", "imputation": {"model": {"family": "linear", "response": "x",
                        "terms": ["z", "w"]}}, "distance": "chi-square"})";
  REQUIRE(tpsd_estimate(c, rak_req.c_str(), &out) == TPSD_OK);
  Json rak = Json::parse(take(out));
  CHECK(rak["estimator"] == "Raking");
  CHECK(rak["diagnostics"]["fell_back_to_ipw"] == false);
  CHECK(rak["diagnostics"]["calibration_residual"].get<double>() < 1e-6);
  CHECK(std::abs(rak["target_coef"].get<double>() - ipw["target_coef"].get<double>()) < 0.5);

  std::string no_pi = std::string("{") + outcome + R"(, "estimator": "ipw"})";
  CHECK(tpsd_estimate(c, no_pi.c_str(), &out) == TPSD_ERR_INVALID_ARGUMENT);
  std::string bad_dist = std::string("{") + outcome + "," + strata + R"(, "auxiliary_columns": ["z"], "distance": "l1"})";
  CHECK(tpsd_estimate(c, bad_dist.c_str(), &out) == TPSD_ERR_INVALID_ARGUMENT);
  tpsd_cohort_free(c);
}

TEST_CASE("simulation through the C interface") {
  const char* cfg = R"({"scenario": {"series": "1", "N": 300, "n": 60}, "grid": {"rho": [0.9, 0.5]},
                        "designs": ["SRS", "IF-IPW"], "estimators": ["IPW", "Raking"], "reps": 6, "seed": 4})";
  tpsd_report* r = nullptr;
  REQUIRE(tpsd_simulate(cfg, 0.0, &r) == TPSD_OK);
  CHECK(tpsd_report_rows(r) == 8);
  char* csv = nullptr;
  REQUIRE(tpsd_report_format(r, "csv", &csv) == TPSD_OK);
  std::string text = take(csv);
  CHECK(text.rfind("design,estimator,params", 0) == 0);
  CHECK(tpsd_report_format(r, "xml", &csv) == TPSD_ERR_INVALID_ARGUMENT);
  tpsd_report_free(r);

  const char* slow = R"({"scenario": {"series": "1"}, "designs": ["IF-GR"], "estimators": ["Raking"], "reps": 500})";
  r = nullptr;
  CHECK(tpsd_simulate(slow, 1e-6, &r) == TPSD_ERR_TIMEOUT);
  CHECK(r == nullptr);
  CHECK(tpsd_simulate(R"({"scenario": {"series": "1"}, "designs": ["SCC"], "reps": 2})", 0.0, &r) ==
        TPSD_ERR_INVALID_ARGUMENT);
}

TEST_CASE("presets") {
  char* out = nullptr;
  REQUIRE(tpsd_presets_json(&out) == TPSD_OK);
  Json j = Json::parse(take(out));
  std::vector<std::string> ids;
  for (const auto& p : j) ids.push_back(p["id"].get<std::string>());
  for (const char* id : {"series1", "series2", "series3", "series4", "nwts"}) {
    CHECK(std::find(ids.begin(), ids.end(), id) != ids.end());
  }
}
