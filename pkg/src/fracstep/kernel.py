"""Convolution weights for the offset fractional time derivative.

At each step n the Caputo derivative of order alpha is approximated at the
offset point t_n^* = t_n - (1-sigma) tau_n by

    delta^alpha u^n = sum_{j=1..n} g_{n-1,j-1} (u^j - u^{j-1}),

with piecewise-quadratic interpolation of the history and linear
interpolation on the current step.  With sigma = 1 - alpha/2 the formula is
exact for quadratics, which is what gives the method its second order.

Every weight is assembled from two families of cell integrals against the
kernel (t_n^* - s)^{-alpha}: a plain average (``a``) and a first moment
about the cell midpoint (``b``).  Both have closed antiderivatives; an
adaptive Gauss-Kronrod path evaluates the same integrals directly and
serves as the independent reference in tests.

Also here: the property audit of the weight rows (positivity, row
monotonicity, the diagonal-dominance inequality, the kernel lower bound
with constant 11/4, and the step-ratio cap 7/4) and a scalar lab that
marches the perturbed recurrence

    (delta^alpha - lambda1) v^j - lambda2 v^{j-1} = (tau_1/t_j)^{gamma+1}

and fits the hidden constant of the bound v^j <= C tau_1 t_j^{alpha-1}
(tau_1/t_j)^{min(0,gamma)}.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma as gamma_fn

from .mesh import RATIO_UPPER_BOUND, MeshReport, TemporalMesh, validate_mesh

# Kernel lower-bound constant, valid while tau_j/tau_{j+1} <= 7/4.
PI_A = 11.0 / 4.0

# Adaptive quadrature tolerances for the reference path.
QUAD_EPSABS = 1e-14
QUAD_EPSREL = 1e-12

# Below this half-width/distance ratio the moment integral is summed as a
# series; above it the closed bracket is free of harmful cancellation.
_MOMENT_SERIES_CUTOFF = 0.05
_MOMENT_SERIES_TERMS = 8


@dataclass(frozen=True)
class SchemeParams:
    """Fractional order and offset parameter of the time discretization.

    ``sigma`` defaults to 1 - alpha/2, the unique offset for which the
    stencil is exact on quadratics.
    """

    alpha: float
    sigma: float = None  # type: ignore[assignment]

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"fractional order must lie in (0,1), got alpha={self.alpha}")
        if self.sigma is None:
            object.__setattr__(self, "sigma", 1.0 - self.alpha / 2.0)
        if not 0.5 <= self.sigma <= 1.0:
            raise ValueError(f"offset parameter must lie in [1/2, 1], got sigma={self.sigma}")

    @property
    def sigma_is_canonical(self) -> bool:
        return abs(self.sigma - (1.0 - self.alpha / 2.0)) <= 1e-12

    def star_points(self, mesh: TemporalMesh) -> np.ndarray:
        """Offset evaluation times t_n^* = t_n - (1-sigma) tau_n, n = 1..N."""
        return mesh.points[1:] - (1.0 - self.sigma) * mesh.steps


def power_difference(x, gap, p):
    """Stable x**p - (x-gap)**p for x > 0, 0 <= gap <= x.

    The direct difference loses ~log10(x/gap) digits when gap << x; routing
    through expm1/log1p keeps full relative accuracy in every regime.  The
    gap must be supplied exactly (e.g. as a mesh step), not recomputed as a
    difference of rounded endpoints.
    """
    x = np.asarray(x, dtype=float)
    gap = np.asarray(gap, dtype=float)
    with np.errstate(divide="ignore"):
        # gap == x gives log1p(-1) = -inf and expm1(-inf) = -1: exact limit.
        return -(x ** p) * np.expm1(p * np.log1p(-gap / x))


def _moment_integral(s0, tau, alpha):
    """I = integral of s^{-alpha} (d - s) ds over [s0-tau, s0], d = s0 - tau/2.

    This is the midpoint moment of the kernel over one history cell in the
    distance variable s = t^* - eta.  For thin far cells (tau << d) the
    closed bracket cancels to O((tau/d)^2) of its terms, so a short series
    in x = (tau/2)/d takes over below the cutoff.
    """
    s0 = np.asarray(s0, dtype=float)
    tau = np.asarray(tau, dtype=float)
    h = 0.5 * tau
    d = s0 - h
    x = h / d

    bracket = (d * power_difference(s0, tau, 1.0 - alpha) / (1.0 - alpha)
               - power_difference(s0, tau, 2.0 - alpha) / (2.0 - alpha))

    # sum_l (alpha)_{2l+1} / (2l+1)! / (2l+3) * x^{2l+3}, times 2 d^{2-alpha}
    xx = x * x
    term = np.full_like(x, alpha / 3.0) * x * xx
    series = term.copy()
    poch = alpha
    fact = 1.0
    for l in range(1, _MOMENT_SERIES_TERMS):
        poch *= (alpha + 2 * l - 1) * (alpha + 2 * l)
        fact *= (2 * l) * (2 * l + 1)
        term = poch / (fact * (2 * l + 3)) * x * xx ** (l + 1)
        series += term
    series *= 2.0 * d ** (2.0 - alpha)

    return np.where(x < _MOMENT_SERIES_CUTOFF, series, bracket)


@dataclass(frozen=True)
class AlikhanovWeights:
    """One convolution-weight row g_{n-1,j-1}, j = 1..n, with its backing
    cell integrals and the path that produced them."""

    n: int
    g: np.ndarray          # length n
    a: np.ndarray          # a_{n-1,0..n-1}, length n
    b: np.ndarray          # b_{n-1,0..n-2}, length n-1 (empty when n = 1)
    method: str            # "closed-form" | "quadrature"

    def __post_init__(self):
        for arr in (self.g, self.a, self.b):
            arr.setflags(write=False)

    @property
    def g_diag(self) -> float:
        """Coefficient of u^n in the expanded stencil (= g_{n-1,n-1})."""
        return float(self.g[-1])

    def p_coefficients(self) -> np.ndarray:
        """Expanded form: delta^alpha u^n = sum_{k=0..n} p_{n,k} u^k.

        p_{n,n} = g_{n-1,n-1} > 0 and, under property P1, p_{n,k} < 0 for
        k < n; the coefficients sum to zero.
        """
        p = np.empty(self.n + 1)
        p[0] = -self.g[0]
        p[1:-1] = self.g[:-1] - self.g[1:]
        p[-1] = self.g[-1]
        return p


def a_coeff(k: int, j: int, mesh: TemporalMesh, params: SchemeParams) -> float:
    """Cell average of the kernel: a_{k,j} over [t_j, t_{j+1}] against
    (t_{k+1}^* - eta)^{-alpha} / Gamma(1-alpha); closed form throughout."""
    if not 0 <= j <= k:
        raise ValueError(f"need 0 <= j <= k, got k={k}, j={j}")
    alpha, sigma = params.alpha, params.sigma
    if j == k:
        return sigma ** (1.0 - alpha) / gamma_fn(2.0 - alpha) * mesh.steps[k] ** (1.0 - alpha)
    tstar = mesh.points[k + 1] - (1.0 - sigma) * mesh.steps[k]
    if tstar <= mesh.points[j + 1]:
        raise ValueError(f"offset point t*_{k + 1}={tstar} does not clear cell {j}")
    s0 = tstar - mesh.points[j]
    return float(power_difference(s0, mesh.steps[j], 1.0 - alpha)) / gamma_fn(2.0 - alpha)


def b_coeff(k: int, j: int, mesh: TemporalMesh, params: SchemeParams) -> float:
    """Midpoint moment b_{k,j} of the kernel over [t_j, t_{j+1}], scaled by
    2/(t_{j+2} - t_j); closed bracket with series fallback for thin cells."""
    if k < 1 or not 0 <= j <= k - 1:
        raise ValueError(f"need k >= 1 and 0 <= j <= k-1, got k={k}, j={j}")
    alpha, sigma = params.alpha, params.sigma
    tstar = mesh.points[k + 1] - (1.0 - sigma) * mesh.steps[k]
    if tstar <= mesh.points[j + 1]:
        raise ValueError(f"offset point t*_{k + 1}={tstar} does not clear cell {j}")
    s0 = tstar - mesh.points[j]
    w = 2.0 / (mesh.points[j + 2] - mesh.points[j])
    return w * float(_moment_integral(s0, mesh.steps[j], alpha)) / gamma_fn(1.0 - alpha)


def a_coeff_quadrature(k: int, j: int, mesh: TemporalMesh, params: SchemeParams) -> float:
    """a_{k,j} for j < k by adaptive Gauss-Kronrod on the raw integrand."""
    if not 0 <= j < k:
        raise ValueError(f"quadrature path needs 0 <= j < k, got k={k}, j={j}")
    alpha, sigma = params.alpha, params.sigma
    tstar = mesh.points[k + 1] - (1.0 - sigma) * mesh.steps[k]
    val, _ = quad(lambda e: (tstar - e) ** (-alpha),
                  mesh.points[j], mesh.points[j + 1],
                  epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200)
    return val / gamma_fn(1.0 - alpha)


def b_coeff_quadrature(k: int, j: int, mesh: TemporalMesh, params: SchemeParams) -> float:
    """b_{k,j} by adaptive Gauss-Kronrod on the raw moment integrand."""
    if k < 1 or not 0 <= j <= k - 1:
        raise ValueError(f"need k >= 1 and 0 <= j <= k-1, got k={k}, j={j}")
    alpha, sigma = params.alpha, params.sigma
    tstar = mesh.points[k + 1] - (1.0 - sigma) * mesh.steps[k]
    c = 0.5 * (mesh.points[j] + mesh.points[j + 1])
    val, _ = quad(lambda e: (tstar - e) ** (-alpha) * (e - c),
                  mesh.points[j], mesh.points[j + 1],
                  epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200)
    return 2.0 / (mesh.points[j + 2] - mesh.points[j]) * val / gamma_fn(1.0 - alpha)


def _row_from_cells(n: int, a: np.ndarray, b: np.ndarray, steps: np.ndarray,
                    method: str) -> AlikhanovWeights:
    k = n - 1
    g = np.empty(n)
    if k == 0:
        g[0] = a[0] / steps[0]
    else:
        g[0] = (a[0] - b[0]) / steps[0]
        g[1:k] = (a[1:k] + b[: k - 1] - b[1:k]) / steps[1:k]
        g[k] = (a[k] + b[k - 1]) / steps[k]
    return AlikhanovWeights(n=n, g=g, a=a, b=b, method=method)


def assemble_weights(n: int, mesh: TemporalMesh, params: SchemeParams,
                     method: str = "closed-form") -> AlikhanovWeights:
    """Weight row for step n (1 <= n <= N).

    ``method`` selects the evaluation path for the history-cell integrals:
    "closed-form" (default, used by the solver) or "quadrature" (adaptive
    Gauss-Kronrod reference).  The current-step coefficient a_{n-1,n-1} is
    a stated closed form in both paths.
    """
    if not 1 <= n <= mesh.N:
        raise ValueError(f"step index must satisfy 1 <= n <= {mesh.N}, got n={n}")
    alpha, sigma = params.alpha, params.sigma
    k = n - 1
    a_diag = sigma ** (1.0 - alpha) / gamma_fn(2.0 - alpha) * mesh.steps[k] ** (1.0 - alpha)
    if method == "closed-form":
        tstar = mesh.points[n] - (1.0 - sigma) * mesh.steps[k]
        s0 = tstar - mesh.points[:k]
        tau = mesh.steps[:k]
        a = np.empty(n)
        a[:k] = power_difference(s0, tau, 1.0 - alpha) / gamma_fn(2.0 - alpha)
        a[k] = a_diag
        if k == 0:
            b = np.empty(0)
        else:
            w = 2.0 / (mesh.points[2:k + 2] - mesh.points[:k])
            b = w * _moment_integral(s0, tau, alpha) / gamma_fn(1.0 - alpha)
    elif method == "quadrature":
        a = np.array([a_coeff_quadrature(k, j, mesh, params) for j in range(k)] + [a_diag])
        b = np.array([b_coeff_quadrature(k, j, mesh, params) for j in range(k)])
    else:
        raise ValueError(f"unknown weight method {method!r}")
    return _row_from_cells(n, a, b, mesh.steps, method)


def weight_rows(mesh: TemporalMesh, params: SchemeParams, n_max: int | None = None,
                method: str = "closed-form") -> list[AlikhanovWeights]:
    """All rows n = 1..n_max; rows are mutually independent."""
    n_max = mesh.N if n_max is None else n_max
    return [assemble_weights(n, mesh, params, method) for n in range(1, n_max + 1)]


def apply_discrete_derivative(weights: AlikhanovWeights, history):
    """delta^alpha u^n = sum_j g_{n-1,j-1} (u^j - u^{j-1}).

    ``history`` holds u^0..u^n along axis 0 (scalars or nodal arrays);
    returns a scalar or an array of the trailing shape.
    """
    hist = np.asarray(history, dtype=float)
    if hist.shape[0] != weights.n + 1:
        raise ValueError(f"history must hold {weights.n + 1} levels, got {hist.shape[0]}")
    increments = np.diff(hist, axis=0)
    out = np.tensordot(weights.g, increments, axes=(0, 0))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PropertyCheck:
    name: str
    evaluated: bool
    passed: bool | None = None
    worst_margin: float | None = None
    worst_index: tuple[int, ...] | None = None


@dataclass(frozen=True)
class PropertyReport:
    """Outcome of the weight-property audit on one mesh.

    P1: every weight positive, rows increasing toward the diagonal.
    P2: (2 sigma - 1) g_{m-1,m-1} > sigma g_{m-1,m-2}.
    P3: pi_A tau_j g_{m-1,j-1} dominates the averaged kernel integral,
        pi_A = 11/4.
    P4: tau_j / tau_{j+1} <= 7/4.

    P1-P3 are only evaluated when the hypotheses hold (canonical sigma and
    the mesh-ratio window); outside the window the report flags the
    violation instead of asserting properties whose validity is unknown.
    """

    alpha: float
    sigma: float
    N: int
    n_max: int
    mesh_report: MeshReport
    hypothesis_ok: bool
    p1: PropertyCheck
    p2: PropertyCheck
    p3: PropertyCheck
    p4: PropertyCheck

    @property
    def all_passed(self) -> bool:
        return self.hypothesis_ok and all(
            c.evaluated and bool(c.passed) for c in (self.p1, self.p2, self.p3, self.p4))

    def checks(self) -> tuple[PropertyCheck, ...]:
        return (self.p1, self.p2, self.p3, self.p4)


def audit_properties(mesh: TemporalMesh, params: SchemeParams,
                     n_max: int | None = None,
                     rows: Sequence[AlikhanovWeights] | None = None) -> PropertyReport:
    """Enumerate P1-P4 over all rows m <= n_max, recording worst margins.

    Margins are relative; a property passes when its worst margin is
    strictly positive (P4: nonnegative, uniform meshes sit on the bound).
    """
    n_max = mesh.N if n_max is None else n_max
    report = validate_mesh(mesh, params.sigma)
    hypothesis_ok = report.passed and params.sigma_is_canonical

    # P4 is a pure mesh statement; evaluate it regardless.
    inv = 1.0 / mesh.ratios if mesh.N >= 2 else np.empty(0)
    if inv.size:
        worst4 = int(np.argmax(inv))
        m4 = RATIO_UPPER_BOUND - float(inv[worst4])
        p4 = PropertyCheck("P4", True, m4 >= -1e-12 * RATIO_UPPER_BOUND, m4, (worst4 + 1,))
    else:
        p4 = PropertyCheck("P4", True, True, RATIO_UPPER_BOUND - 1.0, None)

    if not hypothesis_ok:
        skipped = PropertyCheck("", False)
        return PropertyReport(
            alpha=params.alpha, sigma=params.sigma, N=mesh.N, n_max=n_max,
            mesh_report=report, hypothesis_ok=False,
            p1=PropertyCheck("P1", False), p2=PropertyCheck("P2", False),
            p3=PropertyCheck("P3", False), p4=p4)

    if rows is None:
        rows = weight_rows(mesh, params, n_max)
    sigma, alpha = params.sigma, params.alpha
    g2 = gamma_fn(2.0 - alpha)

    # P1: positivity plus row monotonicity (relative increment margin).
    pos_min, pos_idx = np.inf, None
    mono_min, mono_idx = np.inf, None
    for row in rows[:n_max]:
        jmin = int(np.argmin(row.g))
        if row.g[jmin] < pos_min:
            pos_min, pos_idx = float(row.g[jmin]), (row.n, jmin + 1)
        if row.n >= 2:
            inc = np.diff(row.g) / row.g[1:]
            jm = int(np.argmin(inc))
            if inc[jm] < mono_min:
                mono_min, mono_idx = float(inc[jm]), (row.n, jm + 1)
    if mono_idx is None:  # n_max == 1: positivity alone decides
        p1 = PropertyCheck("P1", True, pos_min > 0.0, pos_min, pos_idx)
    else:
        p1 = PropertyCheck("P1", True, pos_min > 0.0 and mono_min > 0.0, mono_min, mono_idx)

    # P2 over rows m >= 2.
    m2_min, m2_idx = np.inf, None
    for row in rows[:n_max]:
        if row.n < 2:
            continue
        lead = (2.0 * sigma - 1.0) * row.g[-1]
        margin = (lead - sigma * row.g[-2]) / lead
        if margin < m2_min:
            m2_min, m2_idx = float(margin), (row.n,)
    if m2_idx is None:
        p2 = PropertyCheck("P2", True, True, np.inf, None)
    else:
        p2 = PropertyCheck("P2", True, m2_min > 0.0, m2_min, m2_idx)

    # P3: pi_A tau_j g_{m-1,j-1} >= averaged kernel integral (to t_m).
    m3_min, m3_idx = np.inf, None
    for row in rows[:n_max]:
        m = row.n
        tm = mesh.points[m]
        kernel_int = power_difference(tm - mesh.points[:m], mesh.steps[:m], 1.0 - alpha) / g2
        ratio = PI_A * mesh.steps[:m] * row.g / kernel_int - 1.0
        jm = int(np.argmin(ratio))
        if ratio[jm] < m3_min:
            m3_min, m3_idx = float(ratio[jm]), (m, jm + 1)
    p3 = PropertyCheck("P3", True, m3_min > 0.0, m3_min, m3_idx)

    return PropertyReport(alpha=alpha, sigma=sigma, N=mesh.N, n_max=n_max,
                          mesh_report=report, hypothesis_ok=True,
                          p1=p1, p2=p2, p3=p3, p4=p4)


@dataclass(frozen=True)
class RecurrenceSpec:
    """Scalar stability-recurrence problem: march

        (delta^alpha - lambda1) v^j - lambda2 v^{j-1} = (tau_1/t_j)^{gamma+1}

    from v^0 = 0 and compare against V(j,gamma) = tau_1 t_j^{alpha-1}
    (tau_1/t_j)^{min(0,gamma)}.
    """

    mesh: TemporalMesh
    params: SchemeParams
    gamma: float
    lambda1: float = 0.0
    lambda2: float = 0.0

    def __post_init__(self):
        if self.gamma == 0.0:
            raise ValueError("gamma = 0 is outside the bound's validity; refusing")
        if self.lambda1 < 0.0 or self.lambda2 < 0.0:
            raise ValueError("lambda1 and lambda2 must be nonnegative")

    @property
    def admissible(self) -> bool | None:
        """Whether (r, gamma) fall in a regime the bound covers; None when
        the mesh carries no grading exponent."""
        r = self.mesh.r
        if r is None:
            return None
        alpha = self.params.alpha
        return bool(1.0 <= r <= (3.0 - alpha) / alpha) or self.gamma <= alpha - 1.0


@dataclass(frozen=True)
class RecurrenceResult:
    spec: RecurrenceSpec
    t: np.ndarray          # t_1..t_N
    v: np.ndarray          # v^1..v^N
    bound: np.ndarray      # V(j,gamma)
    ratios: np.ndarray     # v^j / V(j,gamma)
    constant: float        # max ratio: the fitted uniform-bound constant


def solve_scalar_recurrence(spec: RecurrenceSpec,
                            rhs: np.ndarray | None = None) -> RecurrenceResult:
    """March the recurrence exactly, solving for v^j each step.

    Requires lambda1 * tau_max^alpha <= 1/(2 Gamma(2-alpha)), the step-size
    condition under which the diagonal g_{j-1,j-1} - lambda1 stays positive;
    a violation raises with the offending numbers.  ``rhs`` overrides the
    default right-hand side (tau_1/t_j)^{gamma+1} (used by trivial tests).
    """
    mesh, params = spec.mesh, spec.params
    alpha = params.alpha
    cap = 1.0 / (2.0 * gamma_fn(2.0 - alpha))
    load = spec.lambda1 * mesh.tau_max ** alpha
    if load > cap:
        raise ValueError(
            f"step-size condition violated: lambda1 * tau^alpha = {load:.3e} "
            f"> 1/(2*Gamma(2-alpha)) = {cap:.3e}; refine the mesh or shrink lambda1")

    t = mesh.points[1:]
    tau1 = mesh.steps[0]
    if rhs is None:
        rhs = (tau1 / t) ** (spec.gamma + 1.0)
    else:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != t.shape:
            raise ValueError(f"rhs must have length {t.size}")

    N = mesh.N
    v = np.zeros(N + 1)
    dv = np.zeros(N)
    for j in range(1, N + 1):
        row = assemble_weights(j, mesh, params)
        gd = row.g_diag
        hist = row.g[:-1] @ dv[: j - 1] if j > 1 else 0.0
        vj = (rhs[j - 1] + (gd + spec.lambda2) * v[j - 1] - hist) / (gd - spec.lambda1)
        dv[j - 1] = vj - v[j - 1]
        v[j] = vj

    bound = tau1 * t ** (alpha - 1.0) * (tau1 / t) ** min(0.0, spec.gamma)
    ratios = v[1:] / bound
    return RecurrenceResult(spec=spec, t=t, v=v[1:], bound=bound,
                            ratios=ratios, constant=float(ratios.max()))


def weights_to_csv(rows: Sequence[AlikhanovWeights], path) -> None:
    """Debug dump of weight rows: one line per (n, j) with g, a, b values."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "j", "g", "a", "b", "method"])
        for row in rows:
            for j in range(1, row.n + 1):
                b = f"{row.b[j - 1]:.17g}" if j - 1 < row.b.size else ""
                writer.writerow([row.n, j, f"{row.g[j - 1]:.17g}",
                                 f"{row.a[j - 1]:.17g}", b, row.method])


def recurrence_to_csv(result: RecurrenceResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["j", "t_j", "v_j", "V_j", "ratio"])
        for j in range(result.t.size):
            writer.writerow([j + 1, f"{result.t[j]:.17g}", f"{result.v[j]:.17g}",
                             f"{result.bound[j]:.17g}", f"{result.ratios[j]:.17g}"])
