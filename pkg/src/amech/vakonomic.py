"""Constrained-variational dynamics on an algebroid chart.

The constraint submanifold is given as a graph over the free velocities,
y^alpha = Psi^alpha(x, y^a). State is (x, y^a, p_alpha); dependent momenta
are recomputed from the primary constraint at every evaluation, never
integrated. The bracket on the constrained phase space coincides with the
linear Poisson bracket of the dual bundle and is implemented as a direct
delegation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .algebroid import AlgebroidChart, DualPoint, chart_from_spec, lie_poisson_bracket
from .dsl import SystemSpec
from .errors import MuSolveFailed, SingularR
from .expr import Expr, ScalarFunction, substitute, variables_of
from .linalg import rank_rtol

__all__ = [
    "VakState",
    "VakonomicSystem",
    "RegularityMatrixReport",
    "vakonomic_from_spec",
    "pontryagin_H",
    "w1_constraints",
    "regularity_matrix",
    "vakonomic_rhs",
    "vakonomic_bracket",
    "hamiltonian_section",
    "mu_solve",
    "momenta",
    "h_w1",
    "euler_poincare_residual",
]


@dataclass(frozen=True)
class VakState:
    """Vakonomic phase point: base coords, free velocities, multipliers."""

    x: np.ndarray
    ya: np.ndarray
    palpha: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "ya", np.asarray(self.ya, dtype=float))
        object.__setattr__(self, "palpha", np.asarray(self.palpha, dtype=float))
        for arr in (self.x, self.ya, self.palpha):
            if not np.all(np.isfinite(arr)):
                raise ValueError("vakonomic state has non-finite entries")


class VakonomicSystem:
    """Chart, index split and constraint graph of one vakonomic problem.

    constrained lists the fiber indices alpha whose velocities are determined
    by Psi; the rest are free. The restricted Lagrangian is a function of the
    base coordinates and the free velocities only.
    """

    def __init__(self, chart: AlgebroidChart, constrained: Sequence[int],
                 psi: Sequence["Expr | Callable"],
                 restricted_lagrangian: "Expr | Callable"):
        self.chart = chart
        self.constrained = tuple(int(a) for a in constrained)
        if len(set(self.constrained)) != len(self.constrained):
            raise ValueError("repeated constrained index")
        for a in self.constrained:
            if not 0 <= a < chart.n:
                raise ValueError(f"constrained index {a} out of range")
        if len(psi) != len(self.constrained):
            raise ValueError("one constraint expression per constrained index")
        self.free = tuple(a for a in range(chart.n) if a not in self.constrained)
        self.free_names = tuple(chart.fiber_names[a] for a in self.free)
        names = chart.base_names + self.free_names
        self._lt = _scalar(names, restricted_lagrangian, chart)
        self._psi = tuple(_scalar(names, f, chart) for f in psi)

    @property
    def n_free(self) -> int:
        return len(self.free)

    @property
    def n_constrained(self) -> int:
        return len(self.constrained)

    @property
    def state_labels(self) -> tuple[str, ...]:
        p_labels = tuple(f"p{a + 1}" for a in self.constrained)
        return self.chart.base_names + self.free_names + p_labels

    def pack(self, s: VakState) -> np.ndarray:
        return np.concatenate([s.x, s.ya, s.palpha])

    def unpack(self, vec: np.ndarray) -> VakState:
        m, nf = self.chart.m, self.n_free
        return VakState(x=vec[:m], ya=vec[m:m + nf], palpha=vec[m + nf:])

    def ode_rhs(self, t: float, vec: np.ndarray) -> np.ndarray:
        del t
        xdot, yadot, pdot = vakonomic_rhs(self, self.unpack(vec))
        return np.concatenate([xdot, yadot, pdot])


def _scalar(names, f, chart) -> ScalarFunction:
    if isinstance(f, Expr):
        return ScalarFunction(names, expr=f, params=chart.params)
    return ScalarFunction(names, fn=lambda v: float(f(v)))


def vakonomic_from_spec(spec: SystemSpec) -> VakonomicSystem:
    """Vakonomic system of a parsed document; no block means the whole bundle."""
    chart = chart_from_spec(spec)
    if spec.vakonomic is None:
        constrained: tuple[int, ...] = ()
        psi_exprs: tuple[Expr, ...] = ()
    else:
        constrained = spec.vakonomic.constrained
        psi_exprs = spec.vakonomic.psi
    mapping = {spec.fiber[a]: e for a, e in zip(constrained, psi_exprs)}
    lt = substitute(spec.lagrangian, mapping) if mapping else spec.lagrangian
    return VakonomicSystem(chart, constrained, psi_exprs, lt)


class _PointData:
    """All derivatives of the system at one (x, ya, palpha) point."""

    def __init__(self, sys: VakonomicSystem, x: np.ndarray, ya: np.ndarray,
                 palpha: np.ndarray):
        m, nf, nc = sys.chart.m, sys.n_free, sys.n_constrained
        n = sys.chart.n
        v = np.concatenate([x, ya])
        self.lt_value = sys._lt.value(v)
        g = sys._lt.gradient(v)
        h = sys._lt.hessian(v)
        self.ltx, self.lty = g[:m], g[m:]
        self.ltxy, self.ltyy = h[:m, m:], h[m:, m:]
        self.psi_value = np.array([f.value(v) for f in sys._psi])
        self.psix = np.zeros((nc, m))
        self.psiy = np.zeros((nc, nf))
        self.psixy = np.zeros((nc, m, nf))
        self.psiyy = np.zeros((nc, nf, nf))
        for j, f in enumerate(sys._psi):
            gj = f.gradient(v)
            hj = f.hessian(v)
            self.psix[j] = gj[:m]
            self.psiy[j] = gj[m:]
            self.psixy[j] = hj[:m, m:]
            self.psiyy[j] = hj[m:, m:]

        self.y_full = np.zeros(n)
        self.y_full[list(sys.free)] = ya
        if nc:
            self.y_full[list(sys.constrained)] = self.psi_value

        self.p_full = np.zeros(n)
        self.p_full[list(sys.free)] = self.lty - palpha @ self.psiy
        if nc:
            self.p_full[list(sys.constrained)] = palpha

        # lam_i = d(Ltilde)/dx_i - p_beta dPsi^beta/dx_i drives every momentum
        # equation through the anchor.
        self.lam = self.ltx - palpha @ self.psix if m else np.zeros(0)
        self.R = self.ltyy - np.einsum("b,bij->ij", palpha, self.psiyy) \
            if nc else self.ltyy


def pontryagin_H(sys: VakonomicSystem, x: np.ndarray, p: np.ndarray,
                 ya: np.ndarray) -> float:
    """Pontryagin Hamiltonian on the product bundle, full momentum covector."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    ya = np.asarray(ya, dtype=float)
    d = _PointData(sys, x, ya, p[list(sys.constrained)])
    free_part = float(p[list(sys.free)] @ ya) if sys.n_free else 0.0
    con_part = float(p[list(sys.constrained)] @ d.psi_value) if sys.n_constrained else 0.0
    return free_part + con_part - d.lt_value


def w1_constraints(sys: VakonomicSystem, x: np.ndarray, p: np.ndarray,
                   ya: np.ndarray) -> np.ndarray:
    """phi_a = p_a + p_alpha dPsi/dy^a - dLtilde/dy^a; zero on W_1."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    ya = np.asarray(ya, dtype=float)
    palpha = p[list(sys.constrained)]
    d = _PointData(sys, x, ya, palpha)
    return p[list(sys.free)] + palpha @ d.psiy - d.lty


@dataclass(frozen=True)
class RegularityMatrixReport:
    R: np.ndarray
    det: float
    min_singular_value: float
    regular: bool


def regularity_matrix(sys: VakonomicSystem, x: np.ndarray, ya: np.ndarray,
                      palpha: np.ndarray) -> RegularityMatrixReport:
    """The matrix whose invertibility makes the constrained dynamics explicit."""
    d = _PointData(sys, np.asarray(x, dtype=float), np.asarray(ya, dtype=float),
                   np.asarray(palpha, dtype=float))
    r = d.R
    svals = np.linalg.svd(r, compute_uv=False) if r.size else np.zeros(0)
    smax = float(svals[0]) if svals.size else 0.0
    smin = float(svals[-1]) if svals.size else 0.0
    regular = bool(r.size == 0 or (smax > 0.0 and smin > rank_rtol() * smax))
    return RegularityMatrixReport(R=r, det=float(np.linalg.det(r)) if r.size else 1.0,
                                  min_singular_value=smin, regular=regular)


def momenta(sys: VakonomicSystem, s: VakState) -> np.ndarray:
    """Full momentum covector, dependent components from the constraint."""
    d = _PointData(sys, s.x, s.ya, s.palpha)
    return d.p_full


def h_w1(sys: VakonomicSystem, s: VakState) -> float:
    """Hamiltonian on the primary constraint set, evaluated at a state."""
    return pontryagin_H(sys, s.x, momenta(sys, s), s.ya)


def vakonomic_rhs(sys: VakonomicSystem,
                  s: VakState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Explicit constrained-variational equations at one state.

    Returns (xdot, yadot, palphadot). The free-velocity equation comes from
    expanding the momentum equation for p_a by the chain rule and solving
    against the regularity matrix.
    """
    chart = sys.chart
    d = _PointData(sys, s.x, s.ya, s.palpha)
    rho = chart.rho(s.x)
    cs = chart.structure(s.x)

    xdot = rho @ d.y_full if chart.m else np.zeros(0)
    cterm = np.einsum("bad,d,b->a", cs, d.y_full, d.p_full)

    con = list(sys.constrained)
    free = list(sys.free)
    if con:
        pdot = (d.lam @ rho[:, con] if chart.m else 0.0) - cterm[con]
        pdot = np.asarray(pdot, dtype=float).reshape(len(con))
    else:
        pdot = np.zeros(0)

    rep = regularity_matrix(sys, s.x, s.ya, s.palpha)
    if not rep.regular:
        raise SingularR(
            f"regularity matrix singular (sigma_min={rep.min_singular_value:.3e}); "
            "use the constraint algorithm")

    rhs = -cterm[free]
    if chart.m:
        rhs = rhs + d.lam @ rho[:, free]
        mixed = d.ltxy - np.einsum("b,bia->ia", s.palpha, d.psixy) \
            if con else d.ltxy
        rhs = rhs - xdot @ mixed
    if con:
        rhs = rhs + pdot @ d.psiy
    yadot = np.linalg.solve(d.R, rhs) if free else np.zeros(0)
    return xdot, yadot, pdot


def vakonomic_bracket(chart: AlgebroidChart, F, G, at: DualPoint) -> float:
    """Poisson bracket on the constrained phase space.

    Coordinate-identical to the linear bracket on the dual bundle, so this
    delegates rather than reimplementing.
    """
    return lie_poisson_bracket(chart, F, G, at)


def mu_solve(sys: VakonomicSystem, x: np.ndarray, p: np.ndarray,
             seed: np.ndarray | None = None,
             tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
    """Free velocities solving the primary constraint at fixed (x, p)."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    ya = np.zeros(sys.n_free) if seed is None else np.array(seed, dtype=float)
    palpha = p[list(sys.constrained)]

    def phi(y: np.ndarray) -> np.ndarray:
        return w1_constraints(sys, x, p, y)

    r = phi(ya)
    for _ in range(max_iter):
        if np.max(np.abs(r), initial=0.0) < tol:
            return ya
        d = _PointData(sys, x, ya, palpha)
        try:
            step = np.linalg.solve(-d.R, r)
        except np.linalg.LinAlgError as exc:
            raise MuSolveFailed("regularity matrix singular during velocity solve") from exc
        t = 1.0
        while t > 1e-4:
            cand = ya - t * step
            rc = phi(cand)
            if np.max(np.abs(rc)) < np.max(np.abs(r)) or np.max(np.abs(rc)) < tol:
                ya, r = cand, rc
                break
            t *= 0.5
        else:
            raise MuSolveFailed("velocity solve stalled")
    if np.max(np.abs(r), initial=0.0) < tol:
        return ya
    raise MuSolveFailed(f"velocity solve did not converge, residual {np.max(np.abs(r)):.3e}")


def hamiltonian_section(sys: VakonomicSystem, at: DualPoint,
                        seed: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Components (u, w) of the dynamics section on the constrained phase space.

    u_A are the dual-fiber drives dH/dp_A and w_A the momentum drives; the
    Hamiltonian gradients reduce to partial derivatives at the solved free
    velocity, so no implicit differentiation is needed.
    """
    chart = sys.chart
    ya = mu_solve(sys, at.x, at.p, seed=seed)
    d = _PointData(sys, at.x, ya, at.p[list(sys.constrained)])
    u = d.y_full.copy()
    cs = chart.structure(at.x)
    cp = np.einsum("cab,c->ab", cs, at.p)
    w = -(cp @ u)
    if chart.m:
        w = w + chart.rho(at.x).T @ d.lam
    return u, w


def euler_poincare_residual(sys: VakonomicSystem, times: np.ndarray,
                            ya_series: np.ndarray,
                            palpha_series: np.ndarray) -> float:
    """Largest violation of the reduced variational equations on a trajectory.

    Needs a base-free chart and a constant constraint block. The momentum
    covector combines the free-velocity gradient of the restricted Lagrangian
    with the multipliers; its time derivative is compared with the coadjoint
    drive by centered differences on the given grid.
    """
    if sys.chart.m != 0:
        raise ValueError("reduced-equation residual needs a base-free chart")
    for f in sys._psi:
        if f.expr is not None and variables_of(f.expr) - set(sys.chart.params):
            raise ValueError("constraint block must be constant")
        if f.expr is None and np.max(np.abs(f.gradient(np.zeros(len(f.names)))),
                                     initial=0.0) > 1e-10:
            raise ValueError("constraint block must be constant")
    times = np.asarray(times, dtype=float)
    ya_series = np.atleast_2d(np.asarray(ya_series, dtype=float))
    palpha_series = np.atleast_2d(np.asarray(palpha_series, dtype=float))
    k = times.size
    if k < 3:
        raise ValueError("need at least three samples for the difference stencil")

    n = sys.chart.n
    cs = sys.chart.structure(np.zeros(0))
    gammas = np.zeros((k, n))
    sigmas = np.zeros((k, n))
    for i in range(k):
        d = _PointData(sys, np.zeros(0), ya_series[i], palpha_series[i])
        g = np.zeros(n)
        g[list(sys.free)] = d.lty
        if sys.n_constrained:
            g[list(sys.constrained)] = palpha_series[i]
        gammas[i] = g
        sigmas[i] = d.y_full

    worst = 0.0
    for i in range(1, k - 1):
        dgamma = (gammas[i + 1] - gammas[i - 1]) / (times[i + 1] - times[i - 1])
        coad = np.einsum("cab,a,c->b", cs, sigmas[i], gammas[i])
        worst = max(worst, float(np.max(np.abs(dgamma - coad))))
    return worst
