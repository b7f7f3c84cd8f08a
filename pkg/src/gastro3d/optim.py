"""Dense Levenberg-Marquardt with optional manifold (local) updates.

Used by camera calibration and pose refinement. Bundle adjustment has its
own sparse Schur-complement implementation in ``sfm.ba``.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConvergenceError

_LAMBDA_MAX = 1e12


@dataclass
class LMResult:
    state: object
    cost: float
    iterations: int
    converged: bool
    accepted_costs: list


def levenberg_marquardt(
    residual_fn: Callable,
    jacobian_fn: Callable,
    state,
    plus: Callable = None,
    lambda0: float = 1e-3,
    max_iters: int = 200,
    cost_tol: float = 1e-10,
) -> LMResult:
    """Minimize ``sum(residual_fn(state)**2)`` by damped Gauss-Newton.

    Args:
        residual_fn: state -> (m,) residual vector.
        jacobian_fn: state -> (m, n) Jacobian of residuals w.r.t. the local
            increment applied by ``plus``.
        state: Initial state (ndarray, or any object when ``plus`` given).
        plus: (state, delta (n,)) -> new state. Defaults to addition.
        lambda0: Initial damping; x10 on rejected steps, /10 on accepted.
        max_iters: Outer iteration cap.
        cost_tol: Stop when the relative cost decrease of an accepted step
            falls below this.

    Returns:
        LMResult with the best state and the accepted-step cost sequence.

    Raises:
        ConvergenceError: Damping exceeded its cap without any acceptable
            step; carries the last iterate.
    """
    if plus is None:
        plus = lambda x, d: x + d

    r = residual_fn(state)
    cost = float(r @ r)
    accepted = [cost]
    lam = lambda0
    converged = False
    it = 0

    for it in range(1, max_iters + 1):
        jac = jacobian_fn(state)
        jtj = jac.T @ jac
        g = jac.T @ r
        diag = np.maximum(np.diag(jtj), 1e-12)
        while True:
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None:
                trial = plus(state, delta)
                r_trial = residual_fn(trial)
                trial_cost = float(r_trial @ r_trial)
                if np.isfinite(trial_cost) and trial_cost < cost:
                    rel_drop = (cost - trial_cost) / max(cost, 1e-300)
                    state, r, cost = trial, r_trial, trial_cost
                    accepted.append(cost)
                    lam = max(lam / 10.0, 1e-12)
                    if rel_drop < cost_tol:
                        converged = True
                    break
            lam *= 10.0
            if lam > _LAMBDA_MAX:
                # with lam at the cap the step is ~0: either we are at a
                # stationary point (fine) or we never left x0 (divergence)
                if len(accepted) == 1:
                    raise ConvergenceError(
                        "LM diverged: no acceptable step from the initial state",
                        last_iterate=state,
                    )
                converged = True
                break
        if converged or cost == 0.0:
            converged = True
            break

    return LMResult(state=state, cost=cost, iterations=it, converged=converged, accepted_costs=accepted)
