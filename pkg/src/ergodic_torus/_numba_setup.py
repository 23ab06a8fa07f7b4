"""Numba runtime configuration shared by the compiled modules."""

import os

import numba

if "NUMBA_THREADING_LAYER" not in os.environ:
    # skip the TBB probe; results do not depend on the layer
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
