"""Synchronous projection-consensus solver for ``(I - Theta) Z = Omega Z_B``.

Each computational agent of a subsystem stores a contiguous block of rows
``A_j Z = b_j``.  It starts from a point satisfying its own rows and then
repeatedly moves toward the average of the other agents' iterates, projected
onto the kernel of ``A_j`` so its own rows stay satisfied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    InfeasibleInitialization,
    MaxIterationsExceeded,
    RankDeficientBlock,
    TooFewRows,
)
from .network import TOPOLOGIES, Subsystem

# blocks with at most this many columns get an explicit dense projector
DENSE_LIMIT = 2000


class Projector:
    """Orthogonal projector ``P = I - A^T (A A^T)^{-1} A`` onto ``ker A``.

    Small blocks keep ``P`` as a dense matrix.  Large sparse blocks apply
    ``P`` implicitly, solving with the Gram matrix ``A A^T`` by
    Jacobi-preconditioned conjugate gradients.  For the desirability system
    ``A = [I - Theta]_j`` is close to a row selection, so the Gram matrix is
    close to the identity and a handful of iterations suffice.
    """

    def __init__(self, a, rtol: float = 1e-14):
        self.n = a.shape[1]
        self.rtol = rtol
        if sp.issparse(a) and self.n > DENSE_LIMIT:
            a = sp.csr_matrix(a)
            self.a = a
            self._at = a.T.tocsr()
            diag = np.asarray(a.multiply(a).sum(axis=1)).ravel()
            if np.any(diag <= 0):
                raise RankDeficientBlock("row block contains an all-zero row")
            m = a.shape[0]
            self._gram = spla.LinearOperator((m, m), matvec=lambda v: a @ (self._at @ v))
            self._prec = spla.LinearOperator((m, m), matvec=lambda v: v / diag)
            self.matrix = None
        else:
            a = a.toarray() if sp.issparse(a) else np.atleast_2d(np.asarray(a, dtype=float))
            gram = a @ a.T
            try:
                c = sla.cho_factor(gram)
            except np.linalg.LinAlgError as exc:
                raise RankDeficientBlock("row block is rank deficient") from exc
            d = np.abs(np.diag(c[0]))
            if d.min() ** 2 <= 1e-13 * d.max() ** 2:
                raise RankDeficientBlock("row block is numerically rank deficient")
            self.a = a
            self._cho = c
            self.matrix = np.eye(self.n) - a.T @ sla.cho_solve(c, a)

    def gram_solve(self, r):
        if self.matrix is not None:
            return sla.cho_solve(self._cho, r)
        if not np.any(r):
            return np.zeros_like(r)
        y, info = spla.cg(self._gram, r, rtol=self.rtol, atol=0.0, maxiter=10 * r.size,
                          M=self._prec)
        if info != 0:
            raise RankDeficientBlock("Gram solve did not converge; block may be rank deficient")
        return y

    def apply(self, v):
        if self.matrix is not None:
            return self.matrix @ v
        return v - self._at @ self.gram_solve(self.a @ v)

    def min_norm_solution(self, b):
        b = np.asarray(b, dtype=float)
        if self.matrix is not None:
            return self.a.T @ sla.cho_solve(self._cho, b)
        return self._at @ self.gram_solve(b)


def build_projection(rows) -> np.ndarray:
    """Dense projector onto the kernel of the row block ``rows``."""
    a = rows.toarray() if sp.issparse(rows) else np.atleast_2d(np.asarray(rows, dtype=float))
    return Projector(a).matrix


@dataclass
class RowPartition:
    a: object
    b: np.ndarray
    slices: list[slice]
    projectors: list[Projector] = field(repr=False)

    @property
    def sizes(self) -> list[int]:
        return [s.stop - s.start for s in self.slices]

    def block(self, j):
        return self.a[self.slices[j]], self.b[self.slices[j]]


def even_sizes(n_rows: int, n_parts: int) -> list[int]:
    if n_rows < n_parts:
        raise TooFewRows(f"{n_rows} rows cannot be split over {n_parts} agents")
    q, r = divmod(n_rows, n_parts)
    return [q + 1 if j < r else q for j in range(n_parts)]


def partition_rows(system, subsystem: Subsystem | int, policy: str = "even",
                   sizes=None) -> RowPartition:
    """Split ``[I - Theta, Omega Z_B]`` into contiguous row blocks.

    ``system`` is either ``(Theta, Omega, z_B)`` or ``(A, b)`` for a generic
    system ``A Z = b``.  With ``policy="even"`` the remainder rows go to the
    earliest members; ``policy="custom"`` takes explicit ``sizes``.
    """
    if len(system) == 3:
        theta, omega, z_b = system
        n = theta.shape[0]
        if sp.issparse(theta):
            a = (sp.identity(n, format="csr") - theta).tocsr()
        else:
            a = np.eye(n) - np.asarray(theta, dtype=float)
        b = np.asarray(omega @ np.asarray(z_b, dtype=float)).ravel()
    else:
        a, b = system
        a = a.tocsr() if sp.issparse(a) else np.atleast_2d(np.asarray(a, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
    n_parts = subsystem.size if isinstance(subsystem, Subsystem) else int(subsystem)

    if policy == "even":
        sizes = even_sizes(a.shape[0], n_parts)
    elif policy == "custom":
        sizes = [int(s) for s in sizes]
        if len(sizes) != n_parts or sum(sizes) != a.shape[0] or min(sizes) < 1:
            raise TooFewRows("custom sizes must be positive and cover every row once")
    else:
        raise ValueError(f"unknown partition policy {policy!r}")

    bounds = np.concatenate([[0], np.cumsum(sizes)])
    slices = [slice(int(bounds[j]), int(bounds[j + 1])) for j in range(n_parts)]
    projectors = [Projector(a[s]) for s in slices]
    return RowPartition(a, b, slices, projectors)


@dataclass
class ConsensusResult:
    z: np.ndarray
    iterates: list[np.ndarray]
    n_iter: int
    history: list[dict]


def consensus_solve(part: RowPartition, z_init=None, tol: float = 1e-10,
                    max_iters: int = 100_000, feas_tol: float = 1e-9) -> ConsensusResult:
    """Run the synchronous projection-consensus iteration.

    The subsystem is treated as fully connected, so every agent averages all
    other agents' iterates.  Agreement and the full-system residual are
    measured relative to the size of the averaged iterate, which keeps the
    stopping rule meaningful when desirabilities are tiny.  ``history``
    records per iteration the largest pairwise disagreement, the spread
    ``sum_j ||Z_j - mean||^2`` (which never increases), the residual and the
    worst own-row feasibility error.
    """
    n_agents = len(part.slices)
    blocks = [part.block(j) for j in range(n_agents)]

    if z_init is None:
        zs = [p.min_norm_solution(bj) for p, (_, bj) in zip(part.projectors, blocks)]
    else:
        zs = [np.asarray(z, dtype=float).copy() for z in z_init]
        for j, (aj, bj) in enumerate(blocks):
            gap = np.max(np.abs(aj @ zs[j] - bj), initial=0.0)
            if gap > feas_tol * max(1.0, np.max(np.abs(bj), initial=0.0)):
                raise InfeasibleInitialization(f"agent {j} violates its rows by {gap:.3e}")

    history = []

    def record(k):
        zbar = np.mean(zs, axis=0)
        scale = max(np.max(np.abs(zbar)), np.finfo(float).tiny)
        dis = 0.0
        for j in range(n_agents):
            for l in range(j + 1, n_agents):
                dis = max(dis, float(np.max(np.abs(zs[j] - zs[l]))))
        spread = float(sum(np.sum((z - zbar) ** 2) for z in zs))
        res = float(np.max(np.abs(part.a @ zbar - part.b)))
        feas = max(float(np.max(np.abs(aj @ zs[j] - bj))) for j, (aj, bj) in enumerate(blocks))
        history.append({"iteration": k, "disagreement": dis, "spread": spread, "residual": res,
                        "feasibility": feas, "scale": scale})
        return zbar, dis / scale, res / scale

    zbar, dis, res = record(0)
    if dis <= tol and res <= tol:
        return ConsensusResult(zbar, zs, 0, history)

    total = np.sum(zs, axis=0)
    for k in range(1, max_iters + 1):
        new = []
        for j in range(n_agents):
            avg = (total - zs[j]) / (n_agents - 1)
            new.append(zs[j] - part.projectors[j].apply(zs[j] - avg))
        zs = new
        total = np.sum(zs, axis=0)
        zbar, dis, res = record(k)
        if dis <= tol and res <= tol:
            return ConsensusResult(zbar, zs, k, history)
    raise MaxIterationsExceeded(f"consensus did not converge in {max_iters} iterations")


def complexity_report(topology: str, n_agents: int, n_interior: int = 24,
                      mode: str = "centralized") -> list[int]:
    """Rows each agent must handle for its subsystem's linear system.

    ``centralized`` counts the full joint interior ``|I|^{|N_i|}``;
    ``parallel`` splits it over the subsystem's members.
    """
    if n_agents < 1:
        raise ValueError("n_agents must be at least 1")
    if topology not in TOPOLOGIES:
        raise ValueError(f"unknown topology {topology!r}; choose from {sorted(TOPOLOGIES)}")
    if mode not in ("centralized", "parallel"):
        raise ValueError(f"unknown mode {mode!r}")
    g = TOPOLOGIES[topology](n_agents)
    out = []
    for i in range(n_agents):
        size = g.degree(i) + 1
        m = n_interior ** size
        out.append(m if mode == "centralized" else math.ceil(m / size))
    return out

