"""Select the circuit stage kernel at import time.

The compiled extension is preferred; set ``SEMIDAE_FORCE_PYTHON=1`` to use
the pure-Python fallback even when the extension is built.
"""
import os

from . import _pykernels

PythonKernel = _pykernels.CircuitKernel

try:
    if os.environ.get("SEMIDAE_FORCE_PYTHON"):
        raise ImportError("forced pure-Python kernel")
    from ._ckernels import CircuitKernel as CompiledKernel
except ImportError:
    CompiledKernel = None

DEFAULT_BACKEND = "compiled" if CompiledKernel is not None else "python"
STATUS_MESSAGES = {
    _pykernels.NO_CONVERGENCE: "Newton did not converge",
    _pykernels.SINGULAR: "dF/du singular",
    _pykernels.NONFINITE: "non-finite constraint residual",
}


def kernel_class(backend: str = "auto"):
    """Kernel class for ``backend`` in {"auto", "compiled", "python"}."""
    if backend == "auto":
        backend = DEFAULT_BACKEND
    if backend == "compiled":
        if CompiledKernel is None:
            raise ImportError("compiled kernel is not available; build the extension first")
        return CompiledKernel
    if backend == "python":
        return PythonKernel
    raise ValueError(f"unknown kernel backend {backend!r}")
