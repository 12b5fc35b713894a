"""Deep mixed-residual (MIM) PDE solver with exact boundary/initial conditions.

Subpackage map:

- ``autodiff``      batched expression tape: parameter gradients of losses that
                    themselves contain input derivatives of network outputs
- ``network``       ResNet approximator, parameter packing and counting
- ``geometry``      domains, samplers, normals and boundary helper fields
- ``constructions`` trial functions enforcing boundary/initial data exactly
- ``losses``        Monte Carlo least-squares residuals and manufactured sources
- ``optimizer``     ADAM and the resampled training loop
- ``catalog``       the experiment catalogue wiring everything together
- ``harness``       CLI, configs, run records and table reproduction
- ``verification``  the no-training property suite behind ``mimpde verify``
"""

import os as _os

# Optional cap on BLAS threads for the point-parallel loss evaluation.  Must
# run before numpy is first imported, hence here.
_threads = _os.environ.get("MIM_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
