"""Closed-form initial solution of the rigidity system C = A P T.

Starting from the reference pattern/time (both fixed to identity), unknown
poses are resolved one at a time where an FR has a single unknown, and in
pairs through the robot-world hand-eye form ``Acal X = Z Bcal`` otherwise.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .connectivity import P, T, VariableId, fr_variables
from .errors import InsufficientMotion, NoReferenceObservation, Stuck
from .geometry import Pose, compose, geodesic_distance, inverse, so3_project

log = logging.getLogger(__name__)

DIVERSITY_RAD = 1e-3
_IDENTITY_TOL = 1e-9


@dataclass
class VariablePool:
    """Values of the unknowns; a variable is initialized once it has a value."""

    reference: tuple[int, int]
    variables: set = field(default_factory=set)
    values: dict = field(default_factory=dict)

    @classmethod
    def from_frs(cls, frs, reference) -> "VariablePool":
        variables = set()
        for fr in frs:
            variables.update(fr_variables(fr))
        return cls(tuple(reference), variables)

    @property
    def reference_ids(self) -> tuple[VariableId, VariableId]:
        return P(self.reference[0]), T(self.reference[1])

    def is_initialized(self, v) -> bool:
        return v in self.values

    @property
    def uninitialized(self) -> list[VariableId]:
        return sorted(self.variables - self.values.keys())

    @property
    def initialized(self) -> list[VariableId]:
        return sorted(self.values)

    def __getitem__(self, v) -> Pose:
        return self.values[v]

    def set(self, v, pose: Pose) -> None:
        if v in self.values:
            raise RuntimeError(f"{v} is already initialized")
        self.values[v] = pose

    def copy(self) -> "VariablePool":
        return VariablePool(self.reference, set(self.variables), dict(self.values))


@dataclass(frozen=True)
class ResidualFR:
    fr: object
    unknowns: tuple  # sorted uninitialized variables of the FR


@dataclass(frozen=True)
class SolveTask:
    kind: str  # "single" | "pair"
    variables: tuple
    fr_count: int


def residual_frs(frs, pool: VariablePool) -> list[ResidualFR]:
    """FRs that still involve at least one uninitialized variable."""
    out = []
    for fr in frs:
        unknowns = tuple(v for v in sorted(fr_variables(fr)) if not pool.is_initialized(v))
        if unknowns:
            out.append(ResidualFR(fr, unknowns))
    return out


def seed_reference(pool: VariablePool, frs) -> VariablePool:
    p_ref, t_ref = pool.reference_ids
    seeds = [fr for fr in frs if fr.pattern_id == pool.reference[0] and fr.time_id == pool.reference[1]]
    if not seeds:
        raise NoReferenceObservation(f"no FR observes pattern {pool.reference[0]} at time {pool.reference[1]}")
    pool.set(p_ref, Pose.identity())
    pool.set(t_ref, Pose.identity())
    for fr in seeds:
        # C = A P* T* with P* = T* = I
        pool.set(fr_variables(fr)[0], fr.A)
    return pool


# -- rearrangements ----------------------------------------------------------


def single_equation(fr, unknown: VariableId, pool: VariablePool) -> tuple[Pose, Pose]:
    """Rearrange C = A P T into X Acal = Bcal for the one unknown X."""
    c, p, t = fr_variables(fr)
    A = fr.A
    if unknown == c:
        return Pose.identity(), compose(compose(A, pool[p]), pool[t])
    if unknown == p:
        # A P T = C  ->  P T = A^-1 C
        return pool[t], compose(inverse(A), pool[c])
    if unknown == t:
        return Pose.identity(), compose(compose(inverse(pool[p]), inverse(A)), pool[c])
    raise ValueError(f"{unknown} does not appear in {fr}")


def pair_equation(fr, pool: VariablePool):
    """Rearrange an FR with two unknowns into Acal X = Z Bcal.

    Returns ``(x_var, z_var, z_inverted, Acal, Bcal)``; when ``z_inverted``
    is set the solved Z is the inverse of ``z_var``.
    """
    c, p, t = fr_variables(fr)
    A = fr.A
    unknown = {v for v in (c, p, t) if not pool.is_initialized(v)}
    if unknown == {c, p}:
        # A P = C T^-1
        return p, c, False, A, inverse(pool[t])
    if unknown == {c, t}:
        # (A P) T = C I
        return t, c, False, compose(A, pool[p]), Pose.identity()
    if unknown == {p, t}:
        # I T = P^-1 (A^-1 C)
        return t, p, True, Pose.identity(), compose(inverse(A), pool[c])
    raise ValueError(f"{fr} does not have exactly two unknowns")


# -- closed-form solvers ------------------------------------------------------


def equation_residual(eqs, X: Pose, Z: Pose | None = None) -> float:
    """Frobenius residual of X Acal = Bcal, or of Acal X = Z Bcal when Z is given."""
    total = 0.0
    for Acal, Bcal in eqs:
        if Z is None:
            D = compose(X, Acal).matrix - Bcal.matrix
        else:
            D = compose(Acal, X).matrix - compose(Z, Bcal).matrix
        total += float(np.sum(D**2))
    return float(np.sqrt(total))


def solve_single(eqs) -> Pose:
    """Rigid X minimizing sum ||X Acal_i - Bcal_i||_F^2.

    With the translation eliminated the objective is a Procrustes problem on
    the rotation blocks plus the centered translations; a single equation
    reduces to X = Bcal Acal^-1.
    """
    eqs = list(eqs)
    if not eqs:
        raise ValueError("solve_single needs at least one equation")
    if len(eqs) == 1:
        Acal, Bcal = eqs[0]
        return compose(Bcal, inverse(Acal))
    RA = np.array([a.R for a, _ in eqs])
    RB = np.array([b.R for _, b in eqs])
    tA = np.array([a.t for a, _ in eqs])
    tB = np.array([b.t for _, b in eqs])
    M = np.einsum("nij,nkj->ik", RB, RA)
    M += (tB - tB.mean(axis=0)).T @ (tA - tA.mean(axis=0))
    R = so3_project(M)
    t = np.mean(tB - tA @ R.T, axis=0)
    return Pose(R, t)


def _is_identity(pose: Pose) -> bool:
    return np.linalg.norm(pose.matrix - np.eye(4)) < _IDENTITY_TOL


def _max_spread(rotations) -> float:
    return max((geodesic_distance(a, b) for a, b in combinations(rotations, 2)), default=0.0)


def solve_pair(eqs, diversity: float = DIVERSITY_RAD) -> tuple[Pose, Pose]:
    """Solve Acal_i X = Z Bcal_i for rigid X and Z.

    Rotations come from the dominant singular pair of
    K = sum_i kron(R_Bcal_i, R_Acal_i), which maps vec(R_X) to vec(R_Z);
    translations from the stacked linear system
    R_Acal_i t_X - t_Z = R_Z t_Bcal_i - t_Acal_i.

    Raises InsufficientMotion when the data cannot separate X from Z.
    """
    eqs = list(eqs)
    if not eqs:
        raise ValueError("solve_pair needs at least one equation")
    A_all_identity = all(_is_identity(a) for a, _ in eqs)
    B_all_identity = all(_is_identity(b) for _, b in eqs)
    if A_all_identity or B_all_identity:
        # only the non-identity side's common value is determined
        if B_all_identity:
            relative = solve_single([(Pose.identity(), a) for a, _ in eqs])
        else:
            relative = solve_single([(Pose.identity(), b) for _, b in eqs])
        raise InsufficientMotion("one side of every pair equation is identity; X and Z are not separable",
                                 relative=relative)
    if len(eqs) < 2:
        raise InsufficientMotion("a pair solve needs at least two equations")
    spread_A = _max_spread([a.R for a, _ in eqs])
    spread_B = _max_spread([b.R for _, b in eqs])
    if min(spread_A, spread_B) <= diversity:
        raise InsufficientMotion(
            f"rotation diversity {min(spread_A, spread_B):.3g} rad is below {diversity:.3g} rad")

    K = sum(np.kron(b.R, a.R) for a, b in eqs)
    U, s, Vt = np.linalg.svd(K)
    if s[0] - s[1] <= 1e-9 * s[0]:
        raise InsufficientMotion("rotation axes are parallel; rotation is not unique")
    vx = Vt[0].reshape(3, 3, order="F")
    vz = U[:, 0].reshape(3, 3, order="F")
    if np.linalg.det(vx) < 0:
        vx, vz = -vx, -vz
    RX = so3_project(vx)
    RZ = so3_project(vz)

    n = len(eqs)
    M = np.zeros((3 * n, 6))
    rhs = np.zeros(3 * n)
    for i, (a, b) in enumerate(eqs):
        M[3 * i:3 * i + 3, :3] = a.R
        M[3 * i:3 * i + 3, 3:] = -np.eye(3)
        rhs[3 * i:3 * i + 3] = RZ @ b.t - a.t
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise InsufficientMotion("translation system is rank deficient")
    sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
    return Pose(RX, sol[:3]), Pose(RZ, sol[3:])


# -- scheduling ----------------------------------------------------------------


def choose_next(residual, postponed=frozenset()) -> SolveTask | None:
    """Pick the next solve: singles before pairs, most supporting FRs first.

    Ties go to camera, then pattern, then time, then the smaller index (for
    pairs, compared lexicographically). Returns None when nothing is left.
    """
    residual = list(residual)
    if not residual:
        return None
    singles = Counter(r.unknowns[0] for r in residual if len(r.unknowns) == 1)
    if singles:
        v = min(singles, key=lambda v: (-singles[v], v))
        return SolveTask("single", (v,), singles[v])
    pairs = Counter(r.unknowns for r in residual if len(r.unknowns) == 2 and r.unknowns not in postponed)
    if pairs:
        pair = min(pairs, key=lambda pr: (-pairs[pr], pr))
        return SolveTask("pair", pair, pairs[pair])
    unknowns = sorted({v for r in residual for v in r.unknowns})
    raise Stuck(
        f"{len(residual)} FRs remain but no single or pair solve is available "
        f"(unknowns: {', '.join(map(str, unknowns))}; postponed pairs: "
        f"{', '.join('(%s, %s)' % pr for pr in sorted(postponed)) or 'none'})",
        unknowns=unknowns,
        residual=[r.fr.key for r in residual],
    )


def run_initialization(frs, pool: VariablePool, diversity: float = DIVERSITY_RAD, on_step=None):
    """Solve every variable of ``pool`` from ``frs``; returns the schedule log.

    ``pool`` must already be seeded. ``on_step`` is called with each log
    record as it is produced.
    """
    frs = list(frs)
    schedule = []
    postponed = set()
    while True:
        residual = residual_frs(frs, pool)
        task = choose_next(residual, frozenset(postponed))
        if task is None:
            break
        if task.kind == "single":
            (v,) = task.variables
            eqs = [single_equation(r.fr, v, pool) for r in residual if r.unknowns == (v,)]
            X = solve_single(eqs)
            pool.set(v, X)
            res = equation_residual(eqs, X)
        else:
            supporting = [r.fr for r in residual if r.unknowns == task.variables]
            forms = [pair_equation(fr, pool) for fr in supporting]
            x_var, z_var, z_inverted = forms[0][:3]
            eqs = [(f[3], f[4]) for f in forms]
            try:
                X, Z = solve_pair(eqs, diversity)
            except InsufficientMotion as e:
                log.debug("postponing pair %s, %s: %s", *task.variables, e)
                postponed.add(task.variables)
                continue
            res = equation_residual(eqs, X, Z)
            pool.set(x_var, X)
            pool.set(z_var, inverse(Z) if z_inverted else Z)
        postponed.clear()
        record = {
            "iter": len(schedule),
            "task_kind": task.kind,
            "variables": [str(v) for v in task.variables],
            "fr_count": task.fr_count,
            "residual_fro": res,
        }
        log.debug("init step %d: %s %s from %d FRs, residual %.3g",
                  record["iter"], task.kind, record["variables"], task.fr_count, res)
        schedule.append(record)
        if on_step is not None:
            on_step(record)
    return pool, schedule


def initialize(frs, reference, diversity: float = DIVERSITY_RAD, on_step=None):
    """Seed from ``reference`` and run the full schedule."""
    pool = VariablePool.from_frs(frs, reference)
    seed_reference(pool, frs)
    return run_initialization(frs, pool, diversity, on_step)

