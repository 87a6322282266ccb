"""RMSProp on flat parameter stores."""

from __future__ import annotations

import numpy as np

from .nets import ParamStore


class DivergenceError(FloatingPointError):
    """Raised when a loss or gradient stops being finite.

    ``state`` optionally carries the last valid solver state.
    """

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


def rmsprop_step(
    store: ParamStore,
    grad: np.ndarray,
    lr: float,
    rho: float = 0.99,
    eps: float = 1e-8,
    direction: str = "descend",
) -> ParamStore:
    """Return a new store after one RMSProp update; ``store`` is left untouched.

    accum <- rho * accum + (1 - rho) * grad**2
    params <- params -/+ lr * grad / (sqrt(accum) + eps)
    """
    grad = np.asarray(grad, dtype=float)
    if grad.shape != store.params.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameters {store.params.shape}")
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient entries")
    if direction not in ("descend", "ascend"):
        raise ValueError(f"unknown direction {direction!r}")
    accum = rho * store.accum + (1.0 - rho) * grad * grad
    denom = np.sqrt(accum) + eps
    # 0/0 when grad, accum and eps are all zero: no movement
    step = np.divide(lr * grad, denom, out=np.zeros_like(grad), where=denom > 0)
    params = store.params - step if direction == "descend" else store.params + step
    return ParamStore(params, accum)
