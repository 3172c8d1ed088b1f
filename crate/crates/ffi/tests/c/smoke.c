#include <stdio.h>
#include <string.h>
#include "curator.h"

#define CHECK(expr)                                                        \
  do {                                                                     \
    CurStatus st_ = (expr);                                                \
    if (st_ != CUR_STATUS_OK) {                                            \
      fprintf(stderr, "%s -> %d: %s\n", #expr, st_, cur_last_error());     \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(void) {
  char *norm = NULL;
  CHECK(cur_normalize_text("x\r\ny  ", &norm));
  if (strcmp(norm, "x\ny") != 0) return 2;
  cur_string_free(norm);

  CurLrSpec spec = {1.0, 10, 20, 30, 0.5, 40, 0.0};
  CurLrSchedule *lr = NULL;
  CHECK(cur_lr_schedule_new(&spec, &lr));
  double v = 0;
  CHECK(cur_lr_schedule_at(lr, 15, &v));
  if (v != 1.0) return 3;
  cur_lr_schedule_free(lr);

  uint32_t a[] = {1, 2, 3}, b[] = {4, 5};
  const uint32_t *docs[] = {a, b};
  size_t lens[] = {3, 2};
  CurPacked *p = NULL;
  CHECK(cur_pack(docs, lens, 2, 8, 0, &p));
  bool allowed = true;
  CHECK(cur_packed_mask(p, 0, 3, 2, &allowed));
  if (allowed) return 4;
  cur_packed_free(p);

  CurRopeConfig rope;
  CHECK(cur_rope_config(CUR_ROPE_STAGE_EXT2, &rope));
  if (rope.seq_len != 131072 || rope.theta != 1.28e8) return 5;

  if (cur_normalize_text(NULL, &norm) != CUR_STATUS_NULL_ARGUMENT) return 6;
  printf("ok %s\n", cur_version());
  return 0;
}
