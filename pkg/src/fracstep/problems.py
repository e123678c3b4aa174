"""Benchmark problem factories on the unit square with T = 0.5.

Benchmark 1 has the manufactured solution u = t^alpha x y (1-x)(1-y) with
cubic reaction u - u^3; its source is generated analytically from
D_t^alpha t^alpha = Gamma(1+alpha), not by runtime differentiation.
Benchmark 2 (logistic reaction, sine-bump initial data, no source) has no
closed solution and is meant for two-mesh order estimation.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gamma as gamma_fn

from .solver import ProblemSpec


def _bump(X, Y):
    return X * Y * (1.0 - X) * (1.0 - Y)


def _bump_laplacian(X, Y):
    return -2.0 * (Y * (1.0 - Y) + X * (1.0 - X))


def example1(alpha: float, N: int, r: float, M1: int = 25, M2: int = 25,
             T: float = 0.5, nu: float = 0.1) -> ProblemSpec:
    """Cubic-reaction problem with known solution t^alpha x y (1-x)(1-y)."""
    gamma_1a = gamma_fn(1.0 + alpha)

    def exact(X, Y, t):
        return t ** alpha * _bump(X, Y)

    def exact_laplacian(X, Y, t):
        return t ** alpha * _bump_laplacian(X, Y)

    def source(X, Y, t):
        u = t ** alpha * _bump(X, Y)
        return (gamma_1a * _bump(X, Y)
                - nu * t ** alpha * _bump_laplacian(X, Y)
                - (u - u ** 3))

    return ProblemSpec(
        alpha=alpha, nu=nu, T=T, L1=1.0, L2=1.0, N=N, r=r, M1=M1, M2=M2,
        reaction=lambda u: u - u ** 3,
        reaction_prime=lambda u: 1.0 - 3.0 * u ** 2,
        initial=lambda X, Y: 0.0 * X,
        source=source, exact=exact, exact_laplacian=exact_laplacian,
        label="example1")


def example2(alpha: float, N: int, r: float, M1: int = 25, M2: int = 25,
             T: float = 0.5, nu: float = 0.3) -> ProblemSpec:
    """Logistic-reaction problem without a known solution."""
    return ProblemSpec(
        alpha=alpha, nu=nu, T=T, L1=1.0, L2=1.0, N=N, r=r, M1=M1, M2=M2,
        reaction=lambda u: u * (1.0 - u),
        reaction_prime=lambda u: 1.0 - 2.0 * u,
        initial=lambda X, Y: np.sin(np.pi * X) * np.sin(np.pi * Y),
        source=None, exact=None, label="example2")


def by_id(example: int | str, alpha: float, N: int, r: float, M1: int = 25,
          M2: int = 25, T: float = 0.5, nu: float | None = None) -> ProblemSpec:
    """Dispatch by benchmark id; ``nu=None`` takes each benchmark's default."""
    key = str(example)
    if key == "1":
        kwargs = {} if nu is None else {"nu": nu}
        return example1(alpha, N, r, M1, M2, T, **kwargs)
    if key == "2":
        kwargs = {} if nu is None else {"nu": nu}
        return example2(alpha, N, r, M1, M2, T, **kwargs)
    raise ValueError(f"unknown benchmark id {example!r} (choose 1 or 2)")
