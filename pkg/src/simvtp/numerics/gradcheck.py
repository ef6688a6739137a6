"""Finite-difference verification of analytic gradients.

The checker perturbs parameter coordinates one at a time and compares the
analytic gradient against the central difference (f(x+h) - f(x-h)) / 2h.
It requires float64 parameters; at float32 the difference quotient is noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from . import engine


@dataclass
class CoordResult:
    param: str
    index: tuple
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    passed: bool
    n_coords: int
    worst: CoordResult | None
    coords: list[CoordResult] = field(default_factory=list, repr=False)


def _rel_err(a: float, n: float, floor: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(
    f,
    params,
    h: float = 1e-5,
    tol: float = 1e-6,
    samples_per_param: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-3,
) -> GradCheckReport:
    """Compare analytic gradients of a scalar computation with central differences.

    ``f`` must be a deterministic closure over ``params`` (a dict name->DiffArray
    or an iterable of (name, DiffArray) pairs) returning a scalar DiffArray.
    With ``samples_per_param=None`` every coordinate is checked; otherwise that
    many coordinates are drawn per parameter (all params are always covered).
    ``floor`` guards the relative-error denominator so that near-zero gradients
    whose difference quotient is pure roundoff do not register as failures.
    """
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = list(params)
    for name, p in named:
        if p.dtype != np.float64:
            raise ContractError(
                f"grad_check requires float64 parameters; '{name}' is {p.dtype}"
            )
        if not p.requires_grad:
            raise ContractError(f"grad_check parameter '{name}' does not require gradients")

    for _, p in named:
        p.zero_grad()
    out = f()
    if not isinstance(out, engine.DiffArray) or out.size != 1:
        raise ContractError("grad_check target must return a scalar DiffArray")
    out.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in named
    }

    if rng is None:
        rng = np.random.default_rng(0)

    results: list[CoordResult] = []
    with engine.no_grad():
        for name, p in named:
            flat = p.data.reshape(-1)
            if samples_per_param is None or samples_per_param >= flat.size:
                coords = np.arange(flat.size)
            else:
                coords = rng.choice(flat.size, size=samples_per_param, replace=False)
            for c in coords:
                orig = flat[c]
                flat[c] = orig + h
                f_plus = f().item()
                flat[c] = orig - h
                f_minus = f().item()
                flat[c] = orig
                numeric = (f_plus - f_minus) / (2.0 * h)
                a = float(analytic[name].reshape(-1)[c])
                results.append(
                    CoordResult(name, np.unravel_index(int(c), p.shape), a, numeric,
                                _rel_err(a, numeric, floor))
                )

    worst = max(results, key=lambda r: r.rel_err) if results else None
    max_err = worst.rel_err if worst else 0.0
    return GradCheckReport(
        max_rel_err=max_err,
        tol=tol,
        passed=max_err <= tol,
        n_coords=len(results),
        worst=worst,
        coords=results,
    )
