"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``BACKDOOR_DIFFUSION_KERNELS=python`` forces the fallback and
``=cython`` makes a missing extension an error.
"""
import logging
import os

from . import _kernels_py

log = logging.getLogger(__name__)

_choice = os.environ.get("BACKDOOR_DIFFUSION_KERNELS", "auto").lower()

if _choice == "python":
    _impl = _kernels_py
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _choice == "cython":
            raise
        log.debug("compiled kernels unavailable, using numpy fallback")
        _impl = _kernels_py

BACKEND = _impl.BACKEND
mlp_forward = _impl.mlp_forward
mlp_loss_grad = _impl.mlp_loss_grad
adam_update = _impl.adam_update
ddim_encode = _impl.ddim_encode
ddim_decode = _impl.ddim_decode
train_epoch = _impl.train_epoch
rbf_kernel_sum = _impl.rbf_kernel_sum

BACKENDS = {"python": _kernels_py}
try:
    from . import _ckernels

    BACKENDS["cython"] = _ckernels
except ImportError:
    pass
