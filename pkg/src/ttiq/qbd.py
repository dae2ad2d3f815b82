"""Exact level-phase Markov chain of the two-duration transmitter.

States: 0 (empty system) and (k, phase) for k >= 1, where k counts every
packet in the system, including one mid-service, and phase 1 means the head
packet is in the second slot of a two-slot transmission.  Transitions
between adjacent levels repeat from level 2 on, giving a quasi-birth-death
structure with 2x2 blocks:

    from (k,0):  down (k-1,0) with (1-lam)*q1*p1
                 stay (k,0)   with (1-lam)*q1*(1-p1) + lam*q1*p1
                 stay (k,1)   with (1-lam)*q2
                 up   (k+1,0) with lam*q1*(1-p1)
                 up   (k+1,1) with lam*q2
    from (k,1):  down (k-1,0) with (1-lam)*p2
                 stay (k,0)   with lam*p2 + (1-lam)*(1-p2)
                 up   (k+1,0) with lam*(1-p2)

The boundary collapses level-0 to the single state 0 (leave with prob lam
to (1,0)); level-1 rows follow the same rules with both level-0 phases
merged into state 0.  Two independent solvers are provided: the
matrix-geometric method (rate matrix R from a fixed-point iteration) and a
truncated direct linear solve used as an oracle for cross-validation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .analytic import mu_refined, transmission_delay
from .errors import (
    ConvergenceError,
    ParameterError,
    TruncationError,
    UnstableQueueError,
)
from .model import ModelParams

_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class QbdBlocks:
    """Boundary rows and repeating 2x2 blocks of the level-phase chain.

    ``a0``/``a1``/``a2`` move one level up / stay / move one level down,
    with phase order ((k,0), (k,1)).  ``b00`` and ``b01`` are the row of
    state 0 (stay, enter level 1); ``b10`` sends level-1 phases down into
    state 0 and equals the row sums of ``a2``.
    """

    params: ModelParams
    a0: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    b00: float
    b01: np.ndarray
    b10: np.ndarray


def build_blocks(params: ModelParams) -> QbdBlocks:
    """Assemble the transition blocks from the per-slot transition rules.

    Every full row of the assembled chain is asserted to sum to 1 within
    1e-12; a violation is a construction bug, not a user error.
    """
    lam, q1, q2, p1, p2 = params.lam, params.q1, params.q2, params.p1, params.p2
    cl, cp1, cp2 = 1.0 - lam, 1.0 - p1, 1.0 - p2

    a0 = np.array([[lam * q1 * cp1, lam * q2],
                   [lam * cp2, 0.0]])
    a1 = np.array([[cl * q1 * cp1 + lam * q1 * p1, cl * q2],
                   [lam * p2 + cl * cp2, 0.0]])
    a2 = np.array([[cl * q1 * p1, 0.0],
                   [cl * p2, 0.0]])

    b00 = cl
    b01 = np.array([lam, 0.0])
    b10 = a2.sum(axis=1)

    for block in (a0, a1, a2):
        if np.any(block < -_ROW_SUM_TOL) or np.any(block > 1.0 + _ROW_SUM_TOL):
            raise AssertionError("transition block entry outside [0, 1]")
    row_sums = (a0 + a1 + a2).sum(axis=1)
    if np.max(np.abs(row_sums - 1.0)) > _ROW_SUM_TOL:
        raise AssertionError(f"repeating rows not stochastic: sums {row_sums}")
    if abs(b00 + b01.sum() - 1.0) > _ROW_SUM_TOL:
        raise AssertionError("state-0 row not stochastic")
    level1 = b10 + a1.sum(axis=1) + a0.sum(axis=1)
    if np.max(np.abs(level1 - 1.0)) > _ROW_SUM_TOL:
        raise AssertionError(f"level-1 rows not stochastic: sums {level1}")
    return QbdBlocks(params=params, a0=a0, a1=a1, a2=a2, b00=b00, b01=b01, b10=b10)


_MAX_ITER = 1_000_000


def _drift_stable(blocks: QbdBlocks) -> bool:
    # Mean-drift condition of the repeating part; algebraically equivalent
    # to lam < mu_refined, but computed from the blocks themselves.
    a = blocks.a0 + blocks.a1 + blocks.a2
    q2 = a[0, 1]
    theta = np.array([1.0, q2]) / (1.0 + q2)
    up = float(theta @ blocks.a0.sum(axis=1))
    down = float(theta @ blocks.a2.sum(axis=1))
    return up < down


def solve_rate_matrix(blocks: QbdBlocks, tol: float = 1e-14) -> np.ndarray:
    """Minimal nonnegative solution R of R = A0 + R*A1 + R^2*A2.

    Fixed-point iteration from R0 = 0, stopping when successive iterates
    differ by less than ``tol`` in max norm.  Raises UnstableQueueError when
    the chain's drift points up (detected from the blocks, and re-checked
    via the spectral radius of the converged R); ConvergenceError after
    1e6 iterations.
    """
    if not _drift_stable(blocks):
        raise UnstableQueueError(
            "chain is not positive recurrent: upward drift >= downward drift "
            f"(lam={blocks.params.lam}, mu_refined={mu_refined(blocks.params)})"
        )
    a0, a1, a2 = blocks.a0, blocks.a1, blocks.a2
    r = np.zeros((2, 2))
    for _ in range(_MAX_ITER):
        r_next = a0 + r @ a1 + r @ r @ a2
        if np.max(np.abs(r_next - r)) < tol:
            r = r_next
            break
        r = r_next
    else:
        raise ConvergenceError(
            f"rate-matrix iteration did not reach tol={tol} in {_MAX_ITER} iterations"
        )
    radius = float(np.max(np.abs(np.linalg.eigvals(r))))
    if radius >= 1.0 - 1e-9:
        raise UnstableQueueError(f"spectral radius of R is {radius}, not < 1")
    return r


@dataclass(frozen=True)
class StationaryDistribution:
    """Stationary probabilities of the level-phase chain.

    ``level_phase[k-1]`` holds (pi(k,0), pi(k,1)) for 1 <= k <= K where K is
    the reported truncation level.  ``rate_matrix`` is present only for the
    matrix-geometric solver, whose geometric tail beyond K carries
    ``tail_mass_bound`` of probability; for the truncated solver the bound
    is the top-level occupancy.
    """

    pi_empty: float
    level_phase: np.ndarray
    tail_mass_bound: float
    rate_matrix: np.ndarray | None = None

    @property
    def truncation_level(self) -> int:
        return self.level_phase.shape[0]

    def level_marginal(self, levels: int | None = None) -> np.ndarray:
        """Probability of k packets in system for k = 0..levels (inclusive)."""
        if levels is None:
            levels = self.truncation_level
        out = np.zeros(levels + 1)
        out[0] = self.pi_empty
        stored = min(levels, self.truncation_level)
        out[1:stored + 1] = self.level_phase[:stored].sum(axis=1)
        if levels > self.truncation_level and self.rate_matrix is not None:
            pi_k = self.level_phase[-1].copy()
            for k in range(self.truncation_level + 1, levels + 1):
                pi_k = pi_k @ self.rate_matrix
                out[k] = pi_k.sum()
        return out

    def mean_system_size(self) -> float:
        """Mean number of packets in system, exact for the matrix-geometric
        form (geometric tail summed in closed form)."""
        if self.rate_matrix is not None:
            pi1 = self.level_phase[0]
            inv = np.linalg.inv(np.eye(2) - self.rate_matrix)
            return float(pi1 @ inv @ inv @ np.ones(2))
        k = np.arange(1, self.truncation_level + 1)
        return float(k @ self.level_phase.sum(axis=1))

    def total_mass(self) -> float:
        """Stored mass plus the geometric tail (matrix-geometric) or the
        tail bound (truncated)."""
        stored = self.pi_empty + float(self.level_phase.sum())
        if self.rate_matrix is not None:
            inv = np.linalg.inv(np.eye(2) - self.rate_matrix)
            tail = float(self.level_phase[-1] @ self.rate_matrix @ inv @ np.ones(2))
            return stored + tail
        return stored

    def iter_csv_rows(self):
        """Yield (level, phase, probability) rows for CSV export."""
        yield (0, 0, self.pi_empty)
        for k in range(1, self.truncation_level + 1):
            for phase in (0, 1):
                yield (k, phase, float(self.level_phase[k - 1, phase]))


def _boundary_vector(blocks: QbdBlocks, r: np.ndarray) -> tuple[float, np.ndarray]:
    # Solve x = x*B for the censored boundary chain on {0, (1,0), (1,1)},
    # where level-1 mass returning from above enters through R*A2.
    b = np.zeros((3, 3))
    b[0, 0] = blocks.b00
    b[0, 1:] = blocks.b01
    b[1:, 0] = blocks.b10
    b[1:, 1:] = blocks.a1 + r @ blocks.a2
    m = b.T - np.eye(3)
    _, singular, vt = np.linalg.svd(m)
    if singular[-2] < 1e-12:
        raise RuntimeError("boundary system has a degenerate null space")
    x = vt[-1]
    if x.sum() < 0:
        x = -x
    if np.any(x < -1e-10):
        raise RuntimeError(f"boundary null vector has negative entries: {x}")
    x = np.clip(x, 0.0, None)
    inv = np.linalg.inv(np.eye(2) - r)
    total = x[0] + float(x[1:] @ inv @ np.ones(2))
    x /= total
    return float(x[0]), x[1:]


def stationary_matrix_geometric(blocks: QbdBlocks, tol: float = 1e-14,
                                levels: int | None = None) -> StationaryDistribution:
    """Stationary distribution via the rate matrix: pi_{k+1} = pi_k * R.

    Boundary probabilities come from the finite boundary balance equations;
    normalization uses the closed-form geometric tail (I - R)^-1.  ``levels``
    caps the stored levels (default: grow until the exact tail mass drops
    below 1e-14, at most 10000).
    """
    lam = blocks.params.lam
    if lam == 0.0:
        level_phase = np.zeros((1, 2))
        return StationaryDistribution(pi_empty=1.0, level_phase=level_phase,
                                      tail_mass_bound=0.0, rate_matrix=np.zeros((2, 2)))
    r = solve_rate_matrix(blocks, tol)
    pi_empty, pi1 = _boundary_vector(blocks, r)

    inv = np.linalg.inv(np.eye(2) - r)
    ones = np.ones(2)
    rows = [pi1]
    if levels is None:
        max_levels = 10_000
        while len(rows) < max_levels:
            tail = float(rows[-1] @ r @ inv @ ones)
            if tail < 1e-14:
                break
            rows.append(rows[-1] @ r)
    else:
        if levels < 1:
            raise ParameterError(f"levels must be >= 1, got {levels!r}")
        for _ in range(levels - 1):
            rows.append(rows[-1] @ r)
    level_phase = np.vstack(rows)
    tail = float(level_phase[-1] @ r @ inv @ ones)
    dist = StationaryDistribution(pi_empty=pi_empty, level_phase=level_phase,
                                  tail_mass_bound=tail, rate_matrix=r)
    if abs(dist.total_mass() - 1.0) > 1e-9:
        raise RuntimeError(f"stationary mass {dist.total_mass()} not within 1e-9 of 1")
    return dist


_TOP_MASS_UNSTABLE = 1e-6


def _truncated_matrix(blocks: QbdBlocks, k_levels: int) -> sp.csr_matrix:
    # States: 0, then (k,0),(k,1) for k = 1..K; the top level folds its
    # upward mass back into itself so rows stay stochastic.
    n = 2 * k_levels + 1
    mat = sp.lil_matrix((n, n))
    mat[0, 0] = blocks.b00
    mat[0, 1:3] = blocks.b01

    def idx(k: int) -> int:
        return 2 * (k - 1) + 1

    for k in range(1, k_levels + 1):
        i = idx(k)
        local = blocks.a1.copy()
        if k == k_levels:
            local = local + blocks.a0
        else:
            mat[i:i + 2, idx(k + 1):idx(k + 1) + 2] = blocks.a0
        mat[i:i + 2, i:i + 2] = local
        if k == 1:
            mat[i:i + 2, 0] = blocks.b10.reshape(2, 1)
        else:
            mat[i:i + 2, idx(k - 1):idx(k - 1) + 2] = blocks.a2
    return mat.tocsr()


def _solve_truncated(blocks: QbdBlocks, k_levels: int) -> StationaryDistribution:
    p = _truncated_matrix(blocks, k_levels)
    n = p.shape[0]
    row_sums = np.asarray(p.sum(axis=1)).ravel()
    if np.max(np.abs(row_sums - 1.0)) > _ROW_SUM_TOL:
        raise AssertionError("truncated chain rows not stochastic")
    a = (p.T - sp.eye(n)).tolil()
    a[n - 1, :] = np.ones(n)
    rhs = np.zeros(n)
    rhs[n - 1] = 1.0
    pi = spla.spsolve(a.tocsc(), rhs)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    level_phase = pi[1:].reshape(k_levels, 2)
    top_mass = float(level_phase[-1].sum())
    return StationaryDistribution(pi_empty=float(pi[0]), level_phase=level_phase,
                                  tail_mass_bound=top_mass, rate_matrix=None)


def stationary_truncated(blocks: QbdBlocks, K: int | None = None,
                         top_mass_tol: float = 1e-9,
                         max_levels: int = 12_800) -> StationaryDistribution:
    """Stationary distribution of the chain truncated at level K, by direct
    linear solve of pi = pi*P with the top level made reflecting.

    With ``K=None`` the truncation starts at 400 levels and doubles until
    the top-level occupancy falls below ``top_mass_tol`` or ``max_levels``
    is reached.  Top-level mass above 1e-6 raises TruncationError
    (truncation too small, or the chain is unstable).
    """
    if K is not None:
        if K < 10:
            raise ParameterError(f"truncation level must be >= 10, got {K!r}")
        dist = _solve_truncated(blocks, K)
        if dist.tail_mass_bound > _TOP_MASS_UNSTABLE:
            raise TruncationError(
                f"top-level mass {dist.tail_mass_bound:.3g} at K={K}: "
                "truncation too small or unstable"
            )
        return dist
    k = 400
    while True:
        dist = _solve_truncated(blocks, k)
        if dist.tail_mass_bound < top_mass_tol:
            return dist
        if k >= max_levels:
            if dist.tail_mass_bound > _TOP_MASS_UNSTABLE:
                raise TruncationError(
                    f"top-level mass {dist.tail_mass_bound:.3g} at K={k}: "
                    "truncation too small or unstable"
                )
            return dist
        k *= 2


@dataclass(frozen=True)
class QbdMetrics:
    """Performance metrics derived from a stationary distribution."""

    empty_prob: float
    mean_level: float
    service_prob_effective: float
    little_delay: float


def metrics_from_stationary(dist: StationaryDistribution,
                            params: ModelParams) -> QbdMetrics:
    """Empty-system probability, mean system size, effective service
    probability (reciprocal mean transmission delay, for comparison) and
    the Little's-law delay mean_level / lam."""
    mean_level = dist.mean_system_size()
    if params.lam > 0.0:
        little = mean_level / params.lam
    else:
        little = 0.0
    s = params.p2 + params.q1 * (params.p1 - params.p2)
    effective = 1.0 / transmission_delay(params) if s > 0.0 else 0.0
    return QbdMetrics(
        empty_prob=dist.pi_empty,
        mean_level=mean_level,
        service_prob_effective=effective,
        little_delay=little,
    )


def tv_distance(a: StationaryDistribution, b: StationaryDistribution,
                levels: int | None = None) -> float:
    """Total-variation distance between two stationary distributions over
    the phase-resolved state space (tails extended where available)."""
    if levels is None:
        levels = max(a.truncation_level, b.truncation_level)

    def padded(dist: StationaryDistribution) -> np.ndarray:
        out = np.zeros((levels, 2))
        stored = min(levels, dist.truncation_level)
        out[:stored] = dist.level_phase[:stored]
        if levels > dist.truncation_level and dist.rate_matrix is not None:
            pi_k = dist.level_phase[-1]
            for k in range(dist.truncation_level, levels):
                pi_k = pi_k @ dist.rate_matrix
                out[k] = pi_k
        return out

    diff = abs(a.pi_empty - b.pi_empty) + np.abs(padded(a) - padded(b)).sum()
    return 0.5 * float(diff)
