"""Safeguarded, regularized Anderson acceleration for fixed-point problems x = f(x).

The accelerated iterate is a linear combination of recent damped (fallback)
iterates, with mixing weights obtained from a Tikhonov-regularized least
squares fit of the residual history.  A safeguard test, applied on the first
candidate step and periodically afterwards, rejects accelerated steps whose
residual has not decayed on schedule and falls back to plain damped iteration.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "AAConfig",
    "AATrace",
    "AANonConvergenceError",
    "aa_solve",
    "ELO_PRESET",
    "EQN_PRESET",
]


class AANonConvergenceError(RuntimeError):
    """Raised when the iteration cap is hit; carries the trace so far."""

    def __init__(self, message: str, trace: "AATrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class AAConfig:
    """Tuning constants for :func:`aa_solve`.

    regularization       weight of the Tikhonov term in the mixing fit
    safeguard_scale      multiplier D of the residual-decay acceptance bound
    safeguard_decay      exponent offset eps of the acceptance bound
    check_interval       accepted steps between safeguard re-checks
    memory               max number of stored residual/iterate differences
                         (0 degenerates to damped fixed-point iteration)
    relaxation           damping beta in (0, 1] of the fallback step
    tol                  stop when the residual 2-norm falls below this
    max_iter             iteration cap; exceeding it raises
    """

    regularization: float = 1e-8
    safeguard_scale: float = 1e5
    safeguard_decay: float = 1e-5
    check_interval: int = 10
    memory: int = 5
    relaxation: float = 1.0
    tol: float = 1e-6
    max_iter: int = 200

    def __post_init__(self):
        if not (self.regularization > 0):
            raise ValueError("regularization must be > 0")
        if not (self.safeguard_scale > 0 and self.safeguard_decay > 0):
            raise ValueError("safeguard constants must be > 0")
        if self.check_interval < 1:
            raise ValueError("check_interval must be >= 1")
        if self.memory < 0:
            raise ValueError("memory must be >= 0")
        if not (0.0 < self.relaxation <= 1.0):
            raise ValueError("relaxation must be in (0, 1]")
        if not (self.tol > 0):
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


# Presets used by the two fixed-point problems of the solver pipeline.
ELO_PRESET = AAConfig(
    regularization=1e-8,
    safeguard_scale=1e5,
    safeguard_decay=1e-5,
    check_interval=10,
    memory=5,
    relaxation=1.0,
    tol=1e-6,
    max_iter=200,
)
EQN_PRESET = AAConfig(
    regularization=1e-7,
    safeguard_scale=1e4,
    safeguard_decay=1e-5,
    check_interval=5,
    memory=10,
    relaxation=0.1,
    tol=1e-4,
    max_iter=500,
)


@dataclass
class AATrace:
    """Per-iteration record of an :func:`aa_solve` run."""

    residuals: list[float] = field(default_factory=list)
    kinds: list[str] = field(default_factory=list)  # "init" | "aa" | "fallback"
    checked: list[bool] = field(default_factory=list)
    bounds: list[float] = field(default_factory=list)  # acceptance RHS when checked, else nan
    memory_sizes: list[int] = field(default_factory=list)
    iterates: list[np.ndarray] | None = None
    n_evals: int = 0
    converged: bool = False

    @property
    def iterations(self) -> int:
        """Number of recorded iterations (the prologue step counts as 0)."""
        return max(0, len(self.residuals) - 1)

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("nan")

    def rows(self):
        """Trace as (iter, residual, kind, checked, bound) rows for CSV export."""
        for i, r in enumerate(self.residuals):
            yield (i, r, self.kinds[i], int(self.checked[i]), self.bounds[i])


class _MemoizedMap:
    """Wraps f with a tiny bitwise-exact cache.

    Fixed-point drivers re-evaluate f at the previous iterate when the
    fallback step is a no-op (zero gap); for expensive maps this avoids the
    duplicate evaluation without changing any result.
    """

    def __init__(self, f: Callable[[np.ndarray], np.ndarray], trace: AATrace):
        self._f = f
        self._trace = trace
        self._cache: dict[bytes, np.ndarray] = {}

    def __call__(self, x: np.ndarray) -> np.ndarray:
        key = x.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        fx = np.asarray(self._f(x), dtype=float)
        if fx.shape != x.shape:
            raise ValueError(f"fixed-point map changed shape {x.shape} -> {fx.shape}")
        if not np.all(np.isfinite(fx)):
            raise FloatingPointError("fixed-point map returned non-finite values")
        self._trace.n_evals += 1
        if len(self._cache) >= 4:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = fx
        return fx


def _mixing_weights(gap: np.ndarray, Y: list[np.ndarray], S: list[np.ndarray],
                    reg: float) -> np.ndarray:
    """Solve min_c ||gap - Y c||^2 + reg*(||Y||_F^2 + ||S||_F^2)*||c||^2."""
    Ym = np.column_stack(Y)
    Sm = np.column_stack(S)
    scale = reg * (np.sum(Ym * Ym) + np.sum(Sm * Sm))
    m = Ym.shape[1]
    A = Ym.T @ Ym + scale * np.eye(m)
    return np.linalg.solve(A, Ym.T @ gap)


def aa_solve(f: Callable[[np.ndarray], np.ndarray], x0: np.ndarray,
             config: AAConfig, record_iterates: bool = False
             ) -> tuple[np.ndarray, AATrace]:
    """Solve x = f(x) by safeguarded Anderson acceleration.

    Returns the first iterate whose residual 2-norm is within ``config.tol``
    together with the iteration trace.  Raises :class:`AANonConvergenceError`
    if ``config.max_iter`` iterations do not suffice.
    """
    trace = AATrace(iterates=[] if record_iterates else None)
    fmap = _MemoizedMap(f, trace)
    beta = config.relaxation

    x = np.array(x0, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("initial point contains non-finite values")

    gap0 = x - fmap(x)
    gap0_norm = float(np.linalg.norm(gap0))
    trace.residuals.append(gap0_norm)
    trace.kinds.append("init")
    trace.checked.append(False)
    trace.bounds.append(float("nan"))
    trace.memory_sizes.append(0)
    if record_iterates:
        trace.iterates.append(x.copy())

    x_prev, gap_prev = x, gap0
    x = x - beta * gap0
    # Fallback history; entry j holds the damped iterate produced at step j.
    fallbacks: deque[np.ndarray] = deque(maxlen=config.memory + 1)
    fallbacks.append(x.copy())
    Y: deque[np.ndarray] = deque(maxlen=max(config.memory, 1))
    S: deque[np.ndarray] = deque(maxlen=max(config.memory, 1))

    n_accepted = 0          # accepted accelerated steps so far
    since_check = 0         # accepted steps since the last safeguard check
    first_check_pending = True

    for i in range(1, config.max_iter + 1):
        gap = x - fmap(x)
        resid = float(np.linalg.norm(gap))
        if record_iterates:
            trace.iterates.append(x.copy())
        if resid <= config.tol:
            trace.residuals.append(resid)
            trace.kinds.append("final")
            trace.checked.append(False)
            trace.bounds.append(float("nan"))
            trace.memory_sizes.append(len(Y))
            trace.converged = True
            return x, trace

        m_i = min(config.memory, i)
        fallback = x - beta * gap
        Y.append(gap - gap_prev)
        S.append(x - x_prev)
        fallbacks.append(fallback.copy())

        if m_i == 0:
            x_aa = fallback
        else:
            gamma = _mixing_weights(gap, list(Y)[-m_i:], list(S)[-m_i:],
                                    config.regularization)
            # Difference recovery: alpha_0 = c_0, alpha_j = c_j - c_{j-1},
            # alpha_m = 1 - c_{m-1}; combination taken over stored fallbacks.
            alpha = np.empty(m_i + 1)
            alpha[0] = gamma[0]
            alpha[1:m_i] = gamma[1:] - gamma[:-1]
            alpha[m_i] = 1.0 - gamma[m_i - 1]
            window = list(fallbacks)[-(m_i + 1):]
            x_aa = sum(a * w for a, w in zip(alpha, window))

        do_check = first_check_pending or since_check >= config.check_interval
        bound = float("nan")
        if do_check:
            bound = (config.safeguard_scale * gap0_norm
                     * (n_accepted / config.check_interval + 1.0)
                     ** (-1.0 - config.safeguard_decay))
            if resid ** 2 <= bound:
                x_next, kind = x_aa, "aa"
                n_accepted += 1
                since_check = 1
                first_check_pending = False
            else:
                x_next, kind = fallback, "fallback"
                since_check = 0
        else:
            x_next, kind = x_aa, "aa"
            n_accepted += 1
            since_check += 1

        trace.residuals.append(resid)
        trace.kinds.append(kind)
        trace.checked.append(do_check)
        trace.bounds.append(bound)
        trace.memory_sizes.append(m_i)

        x_prev, gap_prev = x, gap
        x = x_next

    trace.converged = False
    raise AANonConvergenceError(
        f"no convergence after {config.max_iter} iterations "
        f"(last residual {trace.residuals[-1]:.3e}, tol {config.tol:.1e})",
        trace,
    )
