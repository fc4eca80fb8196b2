/* collabrag — query-decomposition RAG pipeline engine.
 *
 * C API over the C++ core. All functions return crag_status; functions that
 * produce text allocate a NUL-terminated UTF-8 string into *out which the
 * caller releases with crag_string_free(). On any failure the thread-local
 * message from crag_last_error() describes what went wrong.
 */
#ifndef COLLABRAG_COLLABRAG_H
#define COLLABRAG_COLLABRAG_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define CRAG_API __declspec(dllexport)
#else
#define CRAG_API __attribute__((visibility("default")))
#endif

typedef enum crag_status {
  CRAG_OK = 0,
  CRAG_PARTIAL = 2, /* completed with per-item failures; outputs were written */
  CRAG_ERR_INVALID_ARGUMENT = -1,
  CRAG_ERR_PARSE = -2,
  CRAG_ERR_IO = -3,
  CRAG_ERR_BACKEND = -4,
  CRAG_ERR_AUTH = -5,
  CRAG_ERR_CACHE_CORRUPT = -6,
  CRAG_ERR_MISSING_PREDECESSOR = -7,
  CRAG_ERR_INTERNAL = -8
} crag_status;

/* Opaque pipeline instance: config + response cache + model gateway. */
typedef struct crag_engine crag_engine;

CRAG_API const char* crag_version(void);

/* Last error message for the calling thread; valid until the next failing
 * call on the same thread. */
CRAG_API const char* crag_last_error(void);

CRAG_API void crag_string_free(char* s);

/* config_path may be NULL (defaults); overrides_json may be NULL or a JSON
 * object merged over the file (e.g. "{\"concurrency\":4}"). */
CRAG_API crag_status crag_engine_create(const char* config_path,
                                        const char* overrides_json,
                                        crag_engine** out);
CRAG_API void crag_engine_destroy(crag_engine* engine);

/* Digest of the engine's effective config (hex, embedded in all outputs). */
CRAG_API crag_status crag_engine_config_digest(crag_engine* engine,
                                               char** out);

/* ---- decomposition protocol (pure; no engine needed) ------------------- */

/* Parses `### Q<t>: ...` blocks. On success *out_json holds
 * {"steps":[{"index":1,"template":"..."}...]}. Parse failures return
 * CRAG_ERR_PARSE with the violation in crag_last_error(). */
CRAG_API crag_status crag_parse_decomposition(const char* raw,
                                              char** out_json);

/* Format verdict {"valid":bool,"violations":["..."]}; never fails on model
 * output (a bad parse is reported inside the verdict). t_max <= 0 selects
 * the default cap. */
CRAG_API crag_status crag_check_format(const char* raw, int t_max,
                                       char** out_json);

/* Replaces #j placeholders with prior[j-1]. */
CRAG_API crag_status crag_resolve_step(const char* template_text,
                                       const char* const* prior,
                                       size_t n_prior, char** out_text);

/* Canonical serialization of crag_parse_decomposition output. */
CRAG_API crag_status crag_serialize_decomposition(const char* decomposition_json,
                                                  char** out_text);

/* ---- answer metrics (pure) --------------------------------------------- */

CRAG_API crag_status crag_normalize_answer(const char* s, char** out);
CRAG_API crag_status crag_exact_match(const char* pred, const char* const* gold,
                                      size_t n_gold, int* out);
CRAG_API crag_status crag_accuracy(const char* pred, const char* const* gold,
                                   size_t n_gold, int* out);
CRAG_API crag_status crag_f1_score(const char* pred, const char* const* gold,
                                   size_t n_gold, double* out);

/* Composite reward of one episode:
 * {"format_valid":bool,"em":0|1,"acc":0|1,"u":0|0.5|1}. */
CRAG_API crag_status crag_score_episode(const char* final_answer,
                                        const char* const* gold, size_t n_gold,
                                        const char* raw_decomposition,
                                        int t_max, char** out_json);

/* ---- prompt rendering (pure) ------------------------------------------- */

CRAG_API crag_status crag_render_decompose_prompt(const char* question,
                                                  char** out);
/* passages_json: [{"title":"...","text":"..."}...] in rank order. */
CRAG_API crag_status crag_render_subanswer_prompt(const char* subquestion,
                                                  const char* passages_json,
                                                  char** out);
/* qa_json: [{"question":"...","answer":"..."}...] in step order. */
CRAG_API crag_status crag_render_final_prompt(const char* question,
                                              const char* qa_json, char** out);

/* SHA-256 hex of the exact prompt bytes (script tables key on this). */
CRAG_API crag_status crag_prompt_digest(const char* prompt, char** out);

/* ---- objective math (pure) --------------------------------------------- */

/* logprobs: concatenated traces; lens[i] gives each trace's length. */
CRAG_API crag_status crag_sft_loss(const double* logprobs, const size_t* lens,
                                   size_t n_traces, double* out);

/* pairs_json: array of {"chosen_policy":[...],"chosen_reference":[...],
 * "rejected_policy":[...],"rejected_reference":[...]}. Reports
 * {"dpo_loss":...,"mean_margin":...}. */
CRAG_API crag_status crag_dpo_loss(const char* pairs_json, double beta,
                                   char** out_json);

/* ---- pipeline commands (file in / file out) ----------------------------- */

CRAG_API crag_status crag_ingest(crag_engine* engine, const char* corpus_jsonl,
                                 const char* index_dir, char** report_json);
CRAG_API crag_status crag_run(crag_engine* engine, const char* dataset_path,
                              const char* format, const char* out_traces,
                              int limit, char** report_json);
CRAG_API crag_status crag_sample(crag_engine* engine, const char* dataset_path,
                                 const char* format, const char* out_candidates,
                                 int sft_only, int limit, char** report_json);
CRAG_API crag_status crag_build_sft(crag_engine* engine,
                                    const char* candidates_path,
                                    const char* out_path, int include_all,
                                    char** report_json);
CRAG_API crag_status crag_build_prefs(crag_engine* engine,
                                      const char* candidates_path,
                                      const char* out_path, int round,
                                      char** report_json);
/* mode: "single-query" | "decomposed-union". dataset_path/format may be NULL
 * to use the gold aliases embedded in the traces. */
CRAG_API crag_status crag_recall(crag_engine* engine, const char* traces_path,
                                 const char* mode, const char* dataset_path,
                                 const char* format, char** report_json);
/* manifest_path may be NULL; when given, beta and round come from it. */
CRAG_API crag_status crag_loss_check(crag_engine* engine,
                                     const char* pairs_path,
                                     const char* manifest_path,
                                     char** report_json);
CRAG_API crag_status crag_round(crag_engine* engine, int round,
                                const char* dataset_path, const char* format,
                                const char* runs_dir, int limit,
                                char** report_json);
CRAG_API crag_status crag_verify(crag_engine* engine, const char* file_path,
                                 char** report_json);
CRAG_API crag_status crag_cache_stats(crag_engine* engine, char** report_json);
CRAG_API crag_status crag_cache_clear(crag_engine* engine, char** report_json);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* COLLABRAG_COLLABRAG_H */
