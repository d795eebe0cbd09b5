"""Two-stream RGB + optical-flow stroke detection."""
import os

# STROKEDETECT_THREADS caps BLAS worker threads; it must be applied before numpy loads.
_threads = os.environ.get("STROKEDETECT_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
