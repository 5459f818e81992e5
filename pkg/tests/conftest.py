import os

# Keep BLAS single-threaded before numpy loads: deterministic and, at this
# package's matrix sizes, much faster than OpenBLAS thread spinning.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
