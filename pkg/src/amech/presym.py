"""Pointwise constraint algorithm for presymplectic systems on algebroids.

A problem bundles the presymplectic matrix field, the forcing covector and
the anchor that maps fiber directions to coordinate tangents. The engine
grows a sequence of constraint levels until the forcing is compatible with
the admissible fiber directions, then solves the restricted dynamical
equation. The Lagrangian and Hamiltonian sides of a concrete system are
wired up by the two problem builders at the bottom.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .algebroid import DualPoint
from .dynamics import EPoint, LagrangianSystem, _el_force_rhs, cartan
from .errors import (AmechError, InconsistentDynamics,
                     LinearSolveResidualTooLarge, MaxLevelsExceeded,
                     NewtonFailed, NotOnFinalManifold)
from .linalg import decide_rank, min_norm_lstsq, null_space, rank_rtol

__all__ = [
    "PresymplecticProblem",
    "ConstraintLevel",
    "ConstraintRun",
    "SodeResult",
    "kernel",
    "perp",
    "consistency_residual",
    "run_constraint_algorithm",
    "solve_on_final",
    "sode_extract",
    "lagrangian_problem",
    "hamiltonian_problem_from_lagrangian",
]

FD_H = 1e-6
# A function counts as absent (value and gradient both noise) below these.
ZERO_VALUE_TOL = 1e-9
ZERO_GRAD_TOL = 1e-7

ScalarField = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class PresymplecticProblem:
    """Presymplectic data over a d-dimensional coordinate space.

    omega(z) is r x r skew, alpha(z) an r-covector, anchor(z) the d x r map
    from fiber vectors to coordinate tangents. constraints are scalar fields
    cutting the level-0 set (empty for a problem posed on the whole space).
    """

    d: int
    r: int
    omega: Callable[[np.ndarray], np.ndarray]
    alpha: Callable[[np.ndarray], np.ndarray]
    anchor: Callable[[np.ndarray], np.ndarray]
    constraints: tuple[ScalarField, ...] = ()


def _fd_gradient(fn: ScalarField, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    g = np.zeros(z.size)
    for j in range(z.size):
        h = FD_H * max(1.0, abs(z[j]))
        zp = z.copy()
        zm = z.copy()
        zp[j] += h
        zm[j] -= h
        g[j] = (fn(zp) - fn(zm)) / (2.0 * h)
    return g


def _constraint_jacobian(constraints: Sequence[ScalarField],
                         z: np.ndarray) -> np.ndarray:
    if not constraints:
        return np.zeros((0, np.asarray(z).size))
    return np.vstack([_fd_gradient(g, z) for g in constraints])


def kernel(omega_matrix: np.ndarray, rtol: float | None = None) -> np.ndarray:
    """Orthonormal basis of the null space of a skew matrix."""
    omega_matrix = np.asarray(omega_matrix, dtype=float)
    skew_defect = np.max(np.abs(omega_matrix + omega_matrix.T), initial=0.0)
    if skew_defect > 1e-10 * (1.0 + np.max(np.abs(omega_matrix), initial=0.0)):
        raise ValueError(f"matrix is not skew (defect {skew_defect:.3e})")
    return null_space(omega_matrix, rtol=rtol)


def perp(omega_matrix: np.ndarray, f_basis: np.ndarray,
         rtol: float | None = None) -> np.ndarray:
    """Orthonormal basis of the omega-orthogonal complement of span(f_basis)."""
    omega_matrix = np.asarray(omega_matrix, dtype=float)
    f_basis = np.asarray(f_basis, dtype=float)
    if f_basis.ndim != 2 or f_basis.shape[0] != omega_matrix.shape[0]:
        raise ValueError("f_basis must be r x k")
    if f_basis.shape[1]:
        svals = np.linalg.svd(f_basis, compute_uv=False)
        if svals[-1] <= rank_rtol() * svals[0]:
            raise ValueError("f_basis is rank-deficient")
    return null_space(f_basis.T @ omega_matrix.T, rtol=rtol)


def _fiber_basis(problem: PresymplecticProblem,
                 constraints: Sequence[ScalarField],
                 z: np.ndarray) -> np.ndarray:
    """Basis of the admissible fiber directions cut out by the constraints."""
    j = _constraint_jacobian(constraints, z)
    a = j @ problem.anchor(z)
    if a.shape[0]:
        decide_rank(a)
    return null_space(a)


@dataclass(frozen=True)
class ConstraintLevel:
    """One level of the algorithm: accumulated constraints cutting Q_k."""

    k: int
    constraints: tuple[ScalarField, ...]
    new_rank: int
    fiber_constraint_rank: int
    probe_residuals: tuple[float, ...]

    def report(self) -> dict:
        return {"k": self.k, "new_constraint_rank": self.new_rank,
                "fiber_constraint_rank": self.fiber_constraint_rank,
                "probe_residuals": list(self.probe_residuals)}


@dataclass(frozen=True)
class ConstraintRun:
    """Outcome of a constraint-algorithm run."""

    problem: PresymplecticProblem
    levels: tuple[ConstraintLevel, ...]
    stabilization_level: int
    probes: tuple[np.ndarray, ...]

    @property
    def final_constraints(self) -> tuple[ScalarField, ...]:
        return self.levels[-1].constraints

    def membership_residual(self, z: np.ndarray) -> float:
        vals = [abs(g(z)) for g in self.final_constraints]
        return max(vals) if vals else 0.0

    def report(self) -> dict:
        return {"levels": [lvl.report() for lvl in self.levels],
                "stabilization_level": self.stabilization_level}


def consistency_residual(problem: PresymplecticProblem, z: np.ndarray,
                         level: ConstraintLevel) -> float:
    """Largest pairing of the forcing with an inadmissible-for-level direction.

    Zero means the dynamical equation is solvable inside the level's fiber
    subspace at z; the value is basis-independent through the max-abs norm.
    """
    z = np.asarray(z, dtype=float)
    e_basis = _fiber_basis(problem, level.constraints, z)
    v = perp(problem.omega(z), e_basis)
    if not v.shape[1]:
        return 0.0
    pair = problem.alpha(z) @ v
    return float(np.max(np.abs(pair)))


def _project_onto(constraints: Sequence[ScalarField], z0: np.ndarray,
                  tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
    """Move a point onto the joint zero set by damped Gauss-Newton."""
    z = np.asarray(z0, dtype=float).copy()
    if not constraints:
        return z

    def vals(zz: np.ndarray) -> np.ndarray:
        return np.array([g(zz) for g in constraints])

    r = vals(z)
    for _ in range(max_iter):
        if np.max(np.abs(r)) < tol:
            return z
        j = _constraint_jacobian(constraints, z)
        step, _ = min_norm_lstsq(j, r)
        t = 1.0
        while t > 1e-4:
            cand = z - t * step
            rc = vals(cand)
            if np.max(np.abs(rc)) < np.max(np.abs(r)) or np.max(np.abs(rc)) < tol:
                z, r = cand, rc
                break
            t *= 0.5
        else:
            raise NewtonFailed("constraint projection stalled")
    if np.max(np.abs(r)) < tol:
        return z
    raise NewtonFailed(f"constraint projection did not converge, residual {np.max(np.abs(r)):.3e}")


def _rank_of(mat: np.ndarray) -> int:
    if mat.size == 0 or not mat.shape[0]:
        return 0
    return decide_rank(mat)


def run_constraint_algorithm(problem: PresymplecticProblem,
                             seeds: Sequence[np.ndarray],
                             max_levels: int = 10,
                             value_tol: float = ZERO_VALUE_TOL) -> ConstraintRun:
    """Grow constraint levels until the forcing is compatible at every probe.

    Probe points are projected onto each new zero set; a level is final when
    no candidate function is nonzero at a probe and none adds rank to the
    accumulated constraint Jacobian.
    """
    if not seeds:
        raise ValueError("need at least one seed point")
    probes = [_project_onto(problem.constraints, np.asarray(s, dtype=float))
              for s in seeds]

    accumulated: list[ScalarField] = list(problem.constraints)
    base_rank = max((_rank_of(_constraint_jacobian(accumulated, z))
                     for z in probes), default=0)
    levels = [ConstraintLevel(
        k=0, constraints=tuple(accumulated), new_rank=base_rank,
        fiber_constraint_rank=problem.r - _fiber_basis(problem, accumulated, probes[0]).shape[1],
        probe_residuals=tuple(max((abs(g(z)) for g in accumulated), default=0.0)
                              for z in probes))]

    for k in range(max_levels):
        candidates: list[ScalarField] = []
        for z in probes:
            e_basis = _fiber_basis(problem, accumulated, z)
            v = perp(problem.omega(z), e_basis)
            for col in range(v.shape[1]):
                e = v[:, col].copy()
                candidates.append(lambda zz, e=e: float(problem.alpha(zz) @ e))

        # Drop candidates that are numerically absent everywhere.
        live: list[ScalarField] = []
        for g in candidates:
            present = False
            for z in probes:
                if abs(g(z)) > value_tol:
                    present = True
                    break
                if np.max(np.abs(_fd_gradient(g, z)), initial=0.0) > ZERO_GRAD_TOL:
                    present = True
                    break
            if present:
                live.append(g)

        nonzero_at_probe = any(abs(g(z)) > value_tol for g in live for z in probes)
        old_rank = max(_rank_of(_constraint_jacobian(accumulated, z)) for z in probes)

        # Keep only candidates that genuinely cut the probe set further.
        new_constraints: list[ScalarField] = []
        for g in live:
            if any(abs(g(z)) > value_tol for z in probes):
                new_constraints.append(g)
                continue
            if any(_rank_of(_constraint_jacobian(accumulated + new_constraints + [g], z))
                   > _rank_of(_constraint_jacobian(accumulated + new_constraints, z))
                   for z in probes):
                new_constraints.append(g)

        if not nonzero_at_probe and not new_constraints:
            return ConstraintRun(problem=problem, levels=tuple(levels),
                                 stabilization_level=k,
                                 probes=tuple(probes))

        accumulated = accumulated + new_constraints
        probes = [_project_onto(accumulated, z) for z in probes]
        new_rank = max(_rank_of(_constraint_jacobian(accumulated, z))
                       for z in probes) - old_rank
        levels.append(ConstraintLevel(
            k=k + 1, constraints=tuple(accumulated), new_rank=new_rank,
            fiber_constraint_rank=problem.r - _fiber_basis(problem, accumulated, probes[0]).shape[1],
            probe_residuals=tuple(max((abs(g(z)) for g in accumulated), default=0.0)
                                  for z in probes)))

    raise MaxLevelsExceeded(f"no stabilization within {max_levels} levels")


@dataclass(frozen=True)
class SolveResult:
    X: np.ndarray
    residual: float
    basis: np.ndarray


def solve_on_final(problem: PresymplecticProblem, z: np.ndarray,
                   run: ConstraintRun | None = None,
                   basis: np.ndarray | None = None,
                   tol: float = 1e-9) -> SolveResult:
    """Minimum-norm fiber solution of the dynamical equation at a final point.

    Solves omega(z) X = alpha(z) over X in the span of the admissible basis;
    a residual above tol means the sequence should not have stopped here.
    """
    z = np.asarray(z, dtype=float)
    if basis is None:
        constraints = run.final_constraints if run is not None else problem.constraints
        basis = _fiber_basis(problem, constraints, z)
    alpha = problem.alpha(z)
    if not basis.shape[1]:
        residual = float(np.max(np.abs(alpha), initial=0.0))
        if residual > tol:
            raise InconsistentDynamics(f"no admissible directions, residual {residual:.3e}")
        return SolveResult(X=np.zeros(problem.r), residual=residual, basis=basis)
    c, residual = min_norm_lstsq(problem.omega(z) @ basis, alpha)
    if residual > tol:
        raise InconsistentDynamics(
            f"restricted dynamical equation inconsistent, residual {residual:.3e}")
    return SolveResult(X=basis @ c, residual=residual, basis=basis)


@dataclass(frozen=True)
class SodeResult:
    """Second-order locus membership and the extracted SODE value."""

    at: EPoint
    on_locus: bool
    defect: np.ndarray
    xi_X: np.ndarray
    xi_V: np.ndarray
    solve_residual: float


def sode_extract(sys: LagrangianSystem, run: ConstraintRun, at: EPoint,
                 tol: float = 1e-8) -> SodeResult:
    """Extract the second-order field on the final constraint set.

    At a final-set point, membership of the second-order locus means the
    minimum-norm solution's X-components equal the velocities; on the locus
    the vertical components come from the force system of the Lagrangian.
    """
    z = np.concatenate([at.x, at.y])
    membership = run.membership_residual(z)
    if membership > 1e-6:
        raise NotOnFinalManifold(f"point violates final constraints by {membership:.3e}")
    solved = solve_on_final(run.problem, z, run=run)
    defect = solved.X[:sys.chart.n] - at.y
    on_locus = bool(np.max(np.abs(defect), initial=0.0) < tol)
    w, b = _el_force_rhs(sys, at)
    xi_v, resid = min_norm_lstsq(w, b)
    if resid > 1e-7:
        raise LinearSolveResidualTooLarge(
            f"force system residual {resid:.3e} at a locus point")
    return SodeResult(at=at, on_locus=on_locus, defect=defect,
                      xi_X=at.y.copy(), xi_V=xi_v, solve_residual=resid)


# ---------------------------------------------------------------------------
# Problem builders for the two sides of a Lagrangian system


def _prolongation_anchor(chart, x: np.ndarray) -> np.ndarray:
    m, n = chart.m, chart.n
    out = np.zeros((m + n, 2 * n))
    if m:
        out[:m, :n] = chart.rho(x)
    out[m:, n:] = np.eye(n)
    return out


def lagrangian_problem(sys: LagrangianSystem) -> PresymplecticProblem:
    """Presymplectic problem of the Cartan section with energy forcing.

    Coordinates are z = (x, y); fiber directions are (X_A, V_A). The forcing
    is the negated energy differential so that solving omega X = alpha gives
    the dynamics rather than its time-reverse.
    """
    chart = sys.chart
    m, n = chart.m, chart.n

    def omega(z: np.ndarray) -> np.ndarray:
        return cartan(sys, EPoint(z[:m], z[m:])).omegaL

    def alpha(z: np.ndarray) -> np.ndarray:
        return -cartan(sys, EPoint(z[:m], z[m:])).dEL

    def anchor(z: np.ndarray) -> np.ndarray:
        return _prolongation_anchor(chart, z[:m])

    return PresymplecticProblem(d=m + n, r=2 * n, omega=omega, alpha=alpha,
                                anchor=anchor)


def _kernel_indices(sys: LagrangianSystem) -> tuple[int, ...]:
    """Indices of a constant, coordinate-aligned kernel of the y-Hessian.

    Sampled at fixed points away from the coordinate origin (degeneracy loci
    of the presets sit at zero). A kernel that moves or tilts across samples
    is out of scope for the Hamiltonian-side builder.
    """
    chart = sys.chart
    rng = np.random.default_rng(12345)
    projector = None
    for _ in range(5):
        x = rng.uniform(0.5, 1.5, size=chart.m)
        y = rng.uniform(-0.5, 0.5, size=chart.n)
        _, w = sys.second_derivatives(EPoint(x, y))
        basis = null_space(w)
        proj = basis @ basis.T
        if projector is None:
            projector = proj
        elif np.max(np.abs(proj - projector)) > 1e-8:
            raise AmechError("kernel of the velocity Hessian varies across sample "
                             "points; Hamiltonian-side construction unavailable")
        projector = proj
    diag = np.diag(projector)
    idx = tuple(int(a) for a in np.flatnonzero(diag > 0.5))
    aligned = np.zeros_like(projector)
    for a in idx:
        aligned[a, a] = 1.0
    if np.max(np.abs(projector - aligned), initial=0.0) > 1e-8:
        raise AmechError("kernel of the velocity Hessian is not coordinate-"
                         "aligned; Hamiltonian-side construction unavailable")
    return idx


class HamiltonianSideData:
    """Hamiltonian function and primary constraints of a possibly singular L.

    The Hamiltonian is the energy composed with a partial Legendre inverse:
    kernel velocities are pinned to zero, transverse ones solved by Newton.
    Gradients use the envelope identities dh/dx = -dL/dx and dh/dp_T = y_T,
    exact at the solved velocity.
    """

    def __init__(self, sys: LagrangianSystem):
        self.sys = sys
        self.kernel_idx = _kernel_indices(sys)
        n = sys.chart.n
        self.transverse_idx = tuple(a for a in range(n) if a not in self.kernel_idx)

    def primary_constraints(self) -> tuple[ScalarField, ...]:
        """phi_A = p_A - dL/dy_A for kernel directions, as fields on (x, p)."""
        sys = self.sys
        m, n = sys.chart.m, sys.chart.n

        def make(a: int) -> ScalarField:
            def phi(z: np.ndarray) -> float:
                x = z[:m]
                # dL/dy along a kernel direction is velocity-independent.
                _, ly = sys.gradients(EPoint(x, np.zeros(n)))
                return float(z[m + a] - ly[a])

            return phi

        return tuple(make(a) for a in self.kernel_idx)

    def _solve_velocity(self, x: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Full velocity with kernel components zero and dL/dy_T = p_T."""
        sys = self.sys
        n = sys.chart.n
        tr = list(self.transverse_idx)

        def residual(yt: np.ndarray) -> np.ndarray:
            yy = np.zeros(n)
            yy[tr] = yt
            _, ly = sys.gradients(EPoint(x, yy))
            return ly[tr] - p[tr]

        yt = p[tr].copy()
        r = residual(yt)
        for _ in range(50):
            if np.max(np.abs(r), initial=0.0) < 1e-12:
                break
            yy = np.zeros(n)
            yy[tr] = yt
            _, w = sys.second_derivatives(EPoint(x, yy))
            try:
                step = np.linalg.solve(w[np.ix_(tr, tr)], r)
            except np.linalg.LinAlgError as exc:
                raise NewtonFailed("transverse velocity block singular") from exc
            t = 1.0
            while t > 1e-4:
                cand = yt - t * step
                rc = residual(cand)
                if np.max(np.abs(rc)) < np.max(np.abs(r)) or np.max(np.abs(rc)) < 1e-12:
                    yt, r = cand, rc
                    break
                t *= 0.5
            else:
                raise NewtonFailed("partial Legendre inverse stalled")
        else:
            if np.max(np.abs(r), initial=0.0) >= 1e-12:
                raise NewtonFailed("partial Legendre inverse did not converge")
        out = np.zeros(n)
        out[tr] = yt
        return out

    def value(self, x: np.ndarray, p: np.ndarray) -> float:
        y = self._solve_velocity(x, p)
        return self.sys.energy(EPoint(x, y))

    def gradients(self, x: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        y = self._solve_velocity(x, p)
        lx, _ = self.sys.gradients(EPoint(x, y))
        hp = np.zeros(self.sys.chart.n)
        hp[list(self.transverse_idx)] = y[list(self.transverse_idx)]
        return -lx, hp


def hamiltonian_problem_from_lagrangian(
        sys: LagrangianSystem) -> tuple[PresymplecticProblem, HamiltonianSideData]:
    """Dual-bundle presymplectic problem of a Lagrangian, on its momentum image.

    Coordinates are z = (x, p); level-0 constraints are the primary ones
    (empty for regular L). The forcing is the negated differential of the
    induced Hamiltonian.
    """
    from .algebroid import omega_E_matrix

    chart = sys.chart
    m, n = chart.m, chart.n
    data = HamiltonianSideData(sys)

    def omega(z: np.ndarray) -> np.ndarray:
        return omega_E_matrix(chart, DualPoint(z[:m], z[m:]))

    def alpha(z: np.ndarray) -> np.ndarray:
        hx, hp = data.gradients(z[:m], z[m:])
        dx_part = chart.rho(z[:m]).T @ hx if m else np.zeros(n)
        return -np.concatenate([dx_part, hp])

    def anchor(z: np.ndarray) -> np.ndarray:
        return _prolongation_anchor(chart, z[:m])

    problem = PresymplecticProblem(d=m + n, r=2 * n, omega=omega, alpha=alpha,
                                   anchor=anchor,
                                   constraints=data.primary_constraints())
    return problem, data
