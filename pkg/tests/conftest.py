"""Test-session setup: pin BLAS to one thread per process.

The gate-by-gate engines spend their time in many small SVD/QR calls,
where multi-threaded OpenBLAS is several times slower than single-threaded;
parallelism belongs at the trajectory level instead.
"""

import os
import sys

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

try:
    from threadpoolctl import threadpool_limits

    threadpool_limits(limits=1)
except Exception:
    pass

sys.path.insert(0, os.path.dirname(__file__))
