#ifndef TPSD_TPSD_H
#define TPSD_TPSD_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(TPSD_BUILDING_LIBRARY)
#    define TPSD_API __declspec(dllexport)
#  else
#    define TPSD_API __declspec(dllimport)
#  endif
#else
#  define TPSD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tpsd_status {
  TPSD_OK = 0,
  TPSD_ERR_INVALID_ARGUMENT = 1,
  TPSD_ERR_PARSE = 2,
  TPSD_ERR_MISSING_COLUMN = 3,
  TPSD_ERR_MISSING_VALUE = 4,
  TPSD_ERR_EMPTY_STRATUM = 5,
  TPSD_ERR_INFEASIBLE = 6,
  TPSD_ERR_RANK_DEFICIENT = 7,
  TPSD_ERR_NON_CONVERGENCE = 8,
  TPSD_ERR_SEPARATION = 9,
  TPSD_ERR_SINGULAR = 10,
  TPSD_ERR_DIVERGENCE = 11,
  TPSD_ERR_ESTIMATOR_FAILURE = 12,
  TPSD_ERR_IO = 13,
  TPSD_ERR_TIMEOUT = 14,
  TPSD_ERR_INTERNAL = 99
} tpsd_status;

typedef struct tpsd_cohort tpsd_cohort;
typedef struct tpsd_strata tpsd_strata;
typedef struct tpsd_allocation tpsd_allocation;
typedef struct tpsd_report tpsd_report;

TPSD_API const char* tpsd_version(void);
TPSD_API const char* tpsd_status_name(tpsd_status status);
/* Message of the last failed call on this thread; "" if none. */
TPSD_API const char* tpsd_last_error(void);
/* Frees strings returned through char** out-parameters. */
TPSD_API void tpsd_string_free(char* s);

/* Cohorts. schema_json maps column -> "outcome" | "phase1" | "phase2" | "auxiliary". */
TPSD_API tpsd_status tpsd_cohort_load_csv(const char* path, const char* schema_json, tpsd_cohort** out);
TPSD_API tpsd_status tpsd_cohort_parse_csv(const char* text, const char* schema_json, tpsd_cohort** out);
/* Phase-1 data of one scenario replicate (scenario JSON as in presets). */
TPSD_API tpsd_status tpsd_cohort_generate(const char* scenario_json, uint64_t seed, tpsd_cohort** out);
TPSD_API size_t tpsd_cohort_rows(const tpsd_cohort* cohort);
TPSD_API tpsd_status tpsd_cohort_to_csv(const tpsd_cohort* cohort, char** out);
TPSD_API void tpsd_cohort_free(tpsd_cohort* cohort);

/* Strata. rule_json: {"kind": "quantile-cut"|"cross-classification"|"explicit-column",
   "inputs": [...], "breakpoints": [[...]], "merge": [...]} */
TPSD_API tpsd_status tpsd_stratify(const tpsd_cohort* cohort, const char* rule_json, tpsd_strata** out);
TPSD_API size_t tpsd_strata_count(const tpsd_strata* strata);
TPSD_API size_t tpsd_strata_size(const tpsd_strata* strata, size_t k);
TPSD_API void tpsd_strata_free(tpsd_strata* strata);

/* Allocation on a cohort. request_json:
   {"method": "neyman"|"if-ipw"|"if-gr"|"pss"|"bss"|"scc"|"srs", "n": int, "min_per_stratum": int,
    "outcome": model, "h_hat_column": name, "imputation": {"model": model, "m": int},
    "variable": name (neyman), "case_column": name (scc), "seed": int} */
TPSD_API tpsd_status tpsd_allocate(const tpsd_cohort* cohort, const tpsd_strata* strata, const char* request_json,
                                   tpsd_allocation** out);
/* Neyman allocation from moments: {"sizes": [...], "sd": [...], "n": int, "min_per_stratum": int} */
TPSD_API tpsd_status tpsd_allocate_moments(const char* moments_json, tpsd_allocation** out);
TPSD_API size_t tpsd_allocation_strata(const tpsd_allocation* alloc);
TPSD_API size_t tpsd_allocation_n(const tpsd_allocation* alloc, size_t k);
TPSD_API size_t tpsd_allocation_total(const tpsd_allocation* alloc);
TPSD_API tpsd_status tpsd_allocation_to_json(const tpsd_allocation* alloc, char** out);
TPSD_API void tpsd_allocation_free(tpsd_allocation* alloc);

/* Allocations of several designs on one generated scenario replicate.
   request_json: {"scenario": {...}, "methods": [...], "seed": int} */
TPSD_API tpsd_status tpsd_scenario_allocate(const char* request_json, char** out_json);

/* IPW or raking estimate on a two-phase cohort; unsampled rows have a missing
   phase-2 value. request_json: {"estimator": "ipw"|"raking", "outcome": model,
   "strata": rule | "pi_column": name, "imputation": {...}, "auxiliary_columns": [...],
   "distance": "exponential"|"chi-square"} */
TPSD_API tpsd_status tpsd_estimate(const tpsd_cohort* cohort, const char* request_json, char** out_json);

/* Monte Carlo run. config_json: {"scenario": {...}, "grid": {...}, "designs": [...],
   "estimators": [...], "reps": int, "seed": int, "jobs": int}. A positive
   time_budget_seconds aborts with TPSD_ERR_TIMEOUT once exceeded. */
TPSD_API tpsd_status tpsd_simulate(const char* config_json, double time_budget_seconds, tpsd_report** out);
TPSD_API size_t tpsd_report_rows(const tpsd_report* report);
/* format: "csv" | "json" | "markdown" */
TPSD_API tpsd_status tpsd_report_format(const tpsd_report* report, const char* format, char** out);
TPSD_API void tpsd_report_free(tpsd_report* report);

TPSD_API tpsd_status tpsd_presets_json(char** out);

#ifdef __cplusplus
}
#endif

#endif
