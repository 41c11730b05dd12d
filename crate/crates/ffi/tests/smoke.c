#include <stdio.h>
#include <string.h>

#include "sicmimo.h"

#define CHECK(expr)                                                          \
  do {                                                                       \
    SmStatus st_ = (expr);                                                   \
    if (st_ != SM_STATUS_OK) {                                               \
      fprintf(stderr, "%s failed (%d): %s\n", #expr, st_, sm_last_error()); \
      return 1;                                                              \
    }                                                                        \
  } while (0)

int main(void) {
  /* H = I (2x2), X_P = 2 I, so Y_P = 2 I and the LS estimate is ~I. */
  double eye[4] = {1, 0, 0, 1};
  double two[4] = {2, 0, 0, 2};
  SmMatrix *x = NULL, *y = NULL, *h = NULL;
  CHECK(sm_matrix_new(2, 2, two, NULL, &x));
  CHECK(sm_matrix_new(2, 2, two, NULL, &y));
  CHECK(sm_ls_estimate(y, x, 0.0, &h));
  double re[4], im[4];
  CHECK(sm_matrix_read(h, re, im, 4));
  for (int i = 0; i < 4; i++) {
    if (re[i] - eye[i] > 1e-12 || eye[i] - re[i] > 1e-12 || im[i] != 0.0) {
      fprintf(stderr, "entry %d: %g%+gi\n", i, re[i], im[i]);
      return 1;
    }
  }
  SmConstellation *c = NULL;
  if (sm_constellation_qam(3, &c) != SM_STATUS_INVALID_ARGUMENT ||
      strlen(sm_last_error()) == 0) {
    return 1;
  }
  SmLangevinParams p = sm_langevin_params_default();
  if (p.n_levels == 0) return 1;
  sm_matrix_free(h);
  sm_matrix_free(y);
  sm_matrix_free(x);
  puts("ok");
  return 0;
}
