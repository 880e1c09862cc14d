"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .params import ParamStore
from .tensor import NumericsError, no_grad


# multiples of the eps_mach * |f| / eps cancellation noise observed in practice
NOISE_KAPPA = 25.0


def finite_diff_check(
    loss_fn,
    params: ParamStore,
    eps: float = 1e-5,
    max_per_param: int | None = None,
    seed: int = 0,
    details: dict | None = None,
    rel_target: float = 1e-4,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``loss_fn()`` must rebuild the forward pass from the current contents of
    ``params`` and return a scalar tensor; it must be deterministic (seeded).
    Every element of every parameter is probed by default.  For large stores,
    ``max_per_param`` caps the probed elements per tensor, drawn
    deterministically from ``seed``; tensors at or under the cap are still
    checked exhaustively.

    Relative error per element: ``|fd - g| / max(1e-8, |fd| + |g|, floor)``.
    Central differences carry irreducible cancellation noise of about
    ``eps_mach * |f| / (2 eps)`` in absolute terms, so gradients far below
    that cannot be certified to ``rel_target`` by any correct
    implementation; the floor converts the comparison for such elements
    into an absolute one against an explicit noise budget (a zeroed or
    sign-flipped gradient still exceeds the budget by orders of magnitude).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    params.zero_grads()
    loss = loss_fn()
    if loss.data.size != 1:
        raise NumericsError("loss_fn must return a scalar")
    loss.backward()
    grads = {name: params.grad(name).copy() for name in params.names()}
    f0 = abs(float(loss.data))
    noise = NOISE_KAPPA * np.finfo(np.float64).eps * max(1.0, f0) / (2.0 * eps)
    floor = max(1e-8, noise / rel_target)

    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for name, t in params.items():
            flat = t.data.reshape(-1)
            gflat = grads[name].reshape(-1)
            if max_per_param is None or flat.size <= max_per_param:
                indices = range(flat.size)
            else:
                indices = np.sort(rng.choice(flat.size, size=max_per_param, replace=False))
            param_worst = 0.0
            for i in indices:
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = float(loss_fn().data)
                flat[i] = orig - eps
                f_minus = float(loss_fn().data)
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * eps)
                g = gflat[i]
                rel = abs(fd - g) / max(abs(fd) + abs(g), floor)
                param_worst = max(param_worst, rel)
            if details is not None:
                details[name] = param_worst
            worst = max(worst, param_worst)
    return worst
