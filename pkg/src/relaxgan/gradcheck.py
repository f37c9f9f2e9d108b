"""Central finite-difference checks for the autodiff engine."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """||a - b|| / max(||a|| + ||b||, floor).

    The floor keeps gradients that are exactly zero (compared with numeric
    noise of order h^2) from reading as a 100% error.
    """
    den = max(np.linalg.norm(a) + np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / den)


def check_grads(build: Callable[[Sequence[ad.Tensor]], ad.Tensor], arrays: Sequence[np.ndarray],
                h: float = 1e-5, joint: bool = False) -> list[float]:
    """Relative error between analytic and numeric gradients of a scalar
    ``build(tensors)`` with respect to each input array.

    With ``joint`` a single error is returned for the gradient over all inputs
    taken together, which suits composite layers where some parameters have a
    gradient that is exactly zero (a conv bias feeding batch norm, say).
    """
    leaves = [ad.Tensor(a, requires_grad=True) for a in arrays]
    with ad.Graph() as g:
        loss = build(leaves)
        grads = g.backward(loss, wrt=leaves)

    def value():
        with ad.no_grad():
            return build([ad.Tensor(l.data) for l in leaves]).item()

    nums = [numeric_grad(value, leaf.data, h) for leaf in leaves]
    anas = [grads[leaf.node_id].data for leaf in leaves]
    if joint:
        flat = lambda xs: np.concatenate([x.ravel() for x in xs])
        return [rel_error(flat(anas), flat(nums))]
    return [rel_error(a, n) for a, n in zip(anas, nums)]
