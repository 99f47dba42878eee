"""Functional PCA on the discretised sampling grid.

Curves are flattened to ``channels * length`` vectors. The covariance uses the
population normalisation ``1/N``. When there are fewer records than grid
points the eigenproblem is solved on the ``N x N`` Gram matrix instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, Record, load_dataset, save_dataset

__all__ = ["FpcaBasis", "FpcaError", "jacobi_eigh", "fpca_fit", "fpca_project_reconstruct", "save_basis", "load_basis"]


class FpcaError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FpcaBasis:
    mean_curve: np.ndarray  # (D,)
    components: np.ndarray  # (D, k), orthonormal columns
    eigenvalues: np.ndarray  # (k,), non-increasing
    channels: int
    length: int
    total_variance: float = float("nan")

    @property
    def k(self) -> int:
        return self.components.shape[1]

    def truncate(self, k: int) -> "FpcaBasis":
        if not 1 <= k <= self.k:
            raise FpcaError(f"cannot truncate a {self.k}-component basis to {k}")
        return FpcaBasis(self.mean_curve, self.components[:, :k], self.eigenvalues[:k],
                         self.channels, self.length, self.total_variance)


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Rounds of disjoint index pairs covering every pair once (circle method)."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        if pairs:
            p, q = np.array(pairs).T
            rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits all index pairs in round-robin order so that the
    rotations of one round touch disjoint rows and can be applied together.
    Returns eigenvalues in descending order and matching eigenvector columns.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise FpcaError("jacobi_eigh needs a square matrix")
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    scale = np.linalg.norm(a)
    if scale == 0:
        return np.zeros(n), v
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(a.diagonal()))
        if off <= tol * scale:
            break
        for p, q in rounds:
            apq = a[p, q]
            live = np.abs(apq) > 1e-300
            if not live.any():
                continue
            p, q, apq = p[live], q[live], apq[live]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    w = a.diagonal().copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def _complete_basis(u: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace columns flagged ``~good`` with orthonormal fill from the standard basis."""
    d = u.shape[0]
    out = u.copy()
    basis = [out[:, j] for j in range(out.shape[1]) if good[j]]
    cand = 0
    for j in np.flatnonzero(~good):
        while True:
            e = np.zeros(d)
            e[cand] = 1.0
            cand += 1
            for b in basis:
                e -= (b @ e) * b
            nrm = np.linalg.norm(e)
            if nrm > 1e-6:
                break
        e /= nrm
        out[:, j] = e
        basis.append(e)
    return out


def _fix_signs(u: np.ndarray) -> np.ndarray:
    for j in range(u.shape[1]):
        col = u[:, j]
        big = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())
        if big.size and col[big[0]] < 0:
            u[:, j] = -col
    return u


def fpca_fit(dataset: Dataset, k: int) -> FpcaBasis:
    """Top-``k`` principal curves of the dataset.

    Component signs are fixed so that the first non-negligible entry is
    positive.
    """
    x = dataset.stack().reshape(len(dataset), -1)
    n, d = x.shape
    if not 1 <= k <= min(n, d):
        raise FpcaError(f"k must be within [1, {min(n, d)}] for {n} records of {d} points, got {k}")
    mean = x.mean(axis=0)
    xc = x - mean
    if n < d:
        w, v = jacobi_eigh(xc @ xc.T / n)
        w, v = w[:k], v[:, :k]
        u = xc.T @ v
        norms = np.linalg.norm(u, axis=0)
        good = norms > 1e-9 * max(norms.max(), 1e-300)
        u[:, good] /= norms[good]
        if not good.all():
            u = _complete_basis(u, good)
    else:
        w, v = jacobi_eigh(xc.T @ xc / n)
        w, u = w[:k], v[:, :k]
    total = float(np.sum(xc * xc) / n)
    return FpcaBasis(mean, _fix_signs(u), w, dataset.channels, dataset.length, total)


def fpca_project_reconstruct(basis: FpcaBasis, record: Record) -> tuple[np.ndarray, Record]:
    if (record.channels, record.length) != (basis.channels, basis.length):
        raise FpcaError(
            f"record shape {(record.channels, record.length)} does not match basis {(basis.channels, basis.length)}"
        )
    scores = basis.components.T @ (record.samples.reshape(-1) - basis.mean_curve)
    recon = basis.mean_curve + basis.components @ scores
    return scores, record.with_samples(recon.reshape(record.channels, record.length))


def save_basis(basis: FpcaBasis, path, rate: float = 1.0) -> None:
    """Write the basis in the RawF32 container.

    Records are the mean curve, then one record per component, then a record
    whose first ``k`` values are the eigenvalues. Values are stored as f32.
    """
    shape = (basis.channels, basis.length)
    curves = [basis.mean_curve] + [basis.components[:, j] for j in range(basis.k)]
    ev = np.zeros(basis.channels * basis.length)
    ev[: basis.k] = basis.eigenvalues
    recs = [Record(f"c{j}", c.reshape(shape), rate) for j, c in enumerate(curves + [ev])]
    save_dataset(Dataset(tuple(recs), "fpca"), Path(path), "rawf32")


def load_basis(path) -> FpcaBasis:
    ds = load_dataset(path, "rawf32")
    if len(ds) < 3:
        raise FpcaError(f"{path}: not an FPCA basis file")
    flat = [r.samples.reshape(-1) for r in ds]
    k = len(flat) - 2
    return FpcaBasis(flat[0], np.column_stack(flat[1:-1]), flat[-1][:k].copy(), ds.channels, ds.length)
