#ifndef UPM_SIM_H
#define UPM_SIM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UpmAgent {
  UPM_AGENT_CPU = 0,
  UPM_AGENT_GPU = 1,
} UpmAgent;

/**
 * Same order as the simulator's allocator kinds.
 */
typedef enum UpmAllocator {
  UPM_ALLOCATOR_MALLOC = 0,
  UPM_ALLOCATOR_MALLOC_REGISTERED = 1,
  UPM_ALLOCATOR_HIP_MALLOC = 2,
  UPM_ALLOCATOR_HIP_HOST_MALLOC = 3,
  UPM_ALLOCATOR_HIP_MALLOC_MANAGED = 4,
  UPM_ALLOCATOR_STATIC_MANAGED = 5,
} UpmAllocator;

typedef enum UpmCounter {
  UPM_COUNTER_LIBNUMA = 0,
  UPM_COUNTER_MEMINFO = 1,
  UPM_COUNTER_HIP_MEM_GET_INFO = 2,
  UPM_COUNTER_RSS = 3,
} UpmCounter;

typedef enum UpmDtype {
  UPM_DTYPE_UINT64 = 0,
  UPM_DTYPE_FP64 = 1,
} UpmDtype;

typedef enum UpmFaultScenario {
  UPM_FAULT_SCENARIO_CPU1 = 0,
  UPM_FAULT_SCENARIO_CPU12 = 1,
  UPM_FAULT_SCENARIO_GPU_MINOR = 2,
  UPM_FAULT_SCENARIO_GPU_MAJOR = 3,
} UpmFaultScenario;

typedef enum UpmFormat {
  UPM_FORMAT_CSV = 0,
  UPM_FORMAT_TABLE = 1,
} UpmFormat;

typedef enum UpmStatus {
  UPM_STATUS_OK = 0,
  UPM_STATUS_NULL_POINTER = 1,
  UPM_STATUS_INVALID_ARGUMENT = 2,
  UPM_STATUS_INVALID_PROFILE = 3,
  UPM_STATUS_OUT_OF_MEMORY = 4,
  UPM_STATUS_ACCESS_VIOLATION = 5,
  UPM_STATUS_INVALID_ALLOCATION = 6,
  UPM_STATUS_INVALID_WORKLOAD = 7,
  UPM_STATUS_INVALID_SPEC = 8,
  UPM_STATUS_VERIFY_FAILED = 9,
  UPM_STATUS_INTERNAL = 10,
} UpmStatus;

/**
 * Opaque simulated process.
 */
typedef struct UpmMemory UpmMemory;

/**
 * Opaque machine profile.
 */
typedef struct UpmProfile UpmProfile;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *upm_last_error(void);

/**
 * # Safety
 * `s` must come from this library, or be null.
 */
void upm_string_free(char *s);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum UpmStatus upm_profile_builtin(struct UpmProfile **out);

/**
 * Parses a profile file's contents.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` valid for writes.
 */
enum UpmStatus upm_profile_load(const char *text, struct UpmProfile **out);

/**
 * # Safety
 * `profile` must be a live handle; `out` valid for writes.
 */
enum UpmStatus upm_profile_serialize(const struct UpmProfile *profile, char **out);

/**
 * # Safety
 * `profile` must come from this library and not be used afterwards, or be null.
 */
void upm_profile_free(struct UpmProfile *profile);

/**
 * A fresh simulated process on `profile`'s machine.
 *
 * # Safety
 * `profile` must be a live handle; `out` valid for writes.
 */
enum UpmStatus upm_memory_new(const struct UpmProfile *profile,
                              uint64_t seed,
                              struct UpmMemory **out);

/**
 * # Safety
 * `mem` must come from this library and not be used afterwards, or be null.
 */
void upm_memory_free(struct UpmMemory *mem);

/**
 * # Safety
 * `mem` must be a live handle; `out_id` valid for writes.
 */
enum UpmStatus upm_allocate(struct UpmMemory *mem, uint32_t kind, uint64_t bytes, uint64_t *out_id);

/**
 * First touch of the whole allocation by `threads` workers of `agent`.
 *
 * # Safety
 * `mem` must be a live handle; `out_faults` valid for writes or null.
 */
enum UpmStatus upm_touch(struct UpmMemory *mem,
                         uint64_t id,
                         uint32_t agent,
                         uint64_t threads,
                         uint64_t *out_faults);

/**
 * # Safety
 * `mem` must be a live handle.
 */
enum UpmStatus upm_release(struct UpmMemory *mem, uint64_t id);

/**
 * Bytes in use as one counter reports them.
 *
 * # Safety
 * `mem` must be a live handle; `out_bytes` valid for writes.
 */
enum UpmStatus upm_usage(const struct UpmMemory *mem, uint32_t counter, uint64_t *out_bytes);

/**
 * Chase latency in ns over `working_set` bytes at the given channel balance.
 *
 * # Safety
 * `profile` must be a live handle; `out_ns` valid for writes.
 */
enum UpmStatus upm_chase_latency(const struct UpmProfile *profile,
                                 uint32_t agent,
                                 uint64_t working_set,
                                 double balance,
                                 double *out_ns);

/**
 * STREAM TRIAD bandwidth in bytes/s.
 *
 * # Safety
 * `profile` must be a live handle; `out_bw` valid for writes.
 */
enum UpmStatus upm_triad_bandwidth(const struct UpmProfile *profile,
                                   uint32_t agent,
                                   uint32_t kind,
                                   uint32_t init_agent,
                                   uint64_t threads,
                                   uint64_t seed,
                                   double *out_bw);

/**
 * Pages/s with `pages` outstanding faults.
 *
 * # Safety
 * `profile` must be a live handle; `out_rate` valid for writes.
 */
enum UpmStatus upm_fault_throughput(const struct UpmProfile *profile,
                                    uint32_t scenario,
                                    uint64_t pages,
                                    double *out_rate);

/**
 * Atomic histogram update rates in updates/s.
 *
 * # Safety
 * `profile` must be a live handle; both out-pointers valid for writes.
 */
enum UpmStatus upm_atomics_throughput(const struct UpmProfile *profile,
                                      uint64_t cpu_threads,
                                      uint64_t gpu_threads,
                                      uint64_t array_len,
                                      uint32_t dtype,
                                      double *out_cpu_rate,
                                      double *out_gpu_rate);

/**
 * Runs a benchmark by name with `KEY=V1,V2` grid overrides and renders
 * the report.
 *
 * # Safety
 * `profile` must be a live handle, `benchmark` a NUL-terminated string,
 * `grid` an array of `grid_len` NUL-terminated strings (or null when
 * `grid_len` is 0), and `out_report` valid for writes.
 */
enum UpmStatus upm_run(const struct UpmProfile *profile,
                       const char *benchmark,
                       const char *const *grid,
                       size_t grid_len,
                       uint64_t seed,
                       uint32_t format,
                       char **out_report);

/**
 * Checks the profile against every calibration anchor. The rendered table
 * is written to `out_report` (if non-null) in both outcomes; hard failures
 * return `UPM_STATUS_VERIFY_FAILED`.
 *
 * # Safety
 * `profile` must be a live handle; `out_report` valid for writes or null.
 */
enum UpmStatus upm_verify(const struct UpmProfile *profile, char **out_report);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* UPM_SIM_H */
