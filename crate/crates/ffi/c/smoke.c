#include <stdio.h>
#include <string.h>

#include "upm_sim.h"

#define CHECK(call)                                                        \
  do {                                                                     \
    enum UpmStatus s_ = (call);                                            \
    if (s_ != UPM_STATUS_OK) {                                             \
      fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, upm_last_error()); \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(void) {
  UpmProfile *p = NULL;
  UpmMemory *m = NULL;
  uint64_t id = 0, faults = 0, bytes = 0;
  double ns = 0.0;
  char *report = NULL;
  const char *grid[] = {"src=libc", "dst=device", "sdma=on"};

  CHECK(upm_profile_builtin(&p));
  CHECK(upm_chase_latency(p, UPM_AGENT_GPU, 1024, 1.0, &ns));
  CHECK(upm_memory_new(p, 1, &m));
  CHECK(upm_allocate(m, UPM_ALLOCATOR_MALLOC, 1 << 20, &id));
  CHECK(upm_touch(m, id, UPM_AGENT_CPU, 1, &faults));
  CHECK(upm_usage(m, UPM_COUNTER_RSS, &bytes));
  CHECK(upm_run(p, "memcpy", grid, 3, 0, UPM_FORMAT_CSV, &report));
  if (upm_release(m, id) != UPM_STATUS_OK || upm_release(m, id) != UPM_STATUS_INVALID_ALLOCATION) {
    return 2;
  }
  printf("%.1f %llu %llu\n%s", ns, (unsigned long long)faults, (unsigned long long)bytes, report);
  upm_string_free(report);
  upm_memory_free(m);
  upm_profile_free(p);
  return 0;
}
