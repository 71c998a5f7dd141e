"""Snapshot POD codec and compression metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import SnapshotMatrix
from .errors import RankError, ShapeError, UndefinedMetricError
from .numerics import hermitian_eig, normalize_phase

# Eigenvalues below this fraction of the largest are treated as null
# directions when lifting Gram eigenvectors to spatial modes.
_NULL_RTOL = 1e-12


@dataclass
class PodBasis:
    """Orthonormal spatial modes (columns) ranked by modal energy."""

    modes: np.ndarray
    energies: np.ndarray
    mean: np.ndarray
    total_energy: float = float("nan")

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]

    @property
    def state_size(self) -> int:
        return self.modes.shape[0]


def _as_state_matrix(snaps) -> np.ndarray:
    if isinstance(snaps, SnapshotMatrix):
        return snaps.matrix
    snaps = np.asarray(snaps, dtype=np.float64)
    if snaps.ndim == 1:
        snaps = snaps[:, None]
    if snaps.ndim != 2:
        raise ShapeError(f"expected a state x time matrix, got shape {snaps.shape}")
    return snaps


def _complete_basis(modes: np.ndarray, good: int) -> np.ndarray:
    """Replace columns ``good:`` with an orthonormal complement of the first ``good``."""
    n, k = modes.shape
    if good == k:
        return modes
    kept = modes[:, :good]
    candidates = np.eye(n)
    if good:
        candidates = candidates - kept @ (kept.T @ candidates)
    # pick the coordinate directions least covered by the kept span
    order = np.argsort(-np.linalg.norm(candidates, axis=0), kind="stable")
    Q, _ = np.linalg.qr(np.hstack([kept, candidates[:, order[: k - good]]]))
    extra = normalize_phase(Q[:, good:k])
    return np.hstack([kept, extra])


def pod_fit(train, N: int, subtract_mean: bool = True, method: str = "auto") -> PodBasis:
    """Fit ``N`` POD modes from training snapshots.

    Parameters
    ----------
    train : SnapshotMatrix or ndarray, shape (state, T)
    N : int
        Number of modes to keep, ``1 <= N <= min(state, T)``.
    subtract_mean : bool
        Remove the temporal mean before decomposing.
    method : {"auto", "snapshots", "spatial"}
        ``auto`` uses the T x T Gram matrix when ``T < state``.

    Returns
    -------
    PodBasis
        Energies are eigenvalues of the sample correlation ``X X^T / T``.
    """
    Q = _as_state_matrix(train)
    n, T = Q.shape
    if not 1 <= N <= min(n, T):
        raise RankError(
            f"N={N} exceeds the available rank min(state={n}, snapshots={T}); "
            "POD mode count is bounded by the number of training snapshots"
        )
    mean = Q.mean(axis=1) if subtract_mean else np.zeros(n)
    X = Q - mean[:, None]
    if method == "auto":
        method = "snapshots" if T < n else "spatial"
    if method == "snapshots":
        lam, V = hermitian_eig(X.T @ X / T)
        lam = np.clip(lam[:N], 0.0, None)
        good = int(np.sum(lam > _NULL_RTOL * max(lam[0], np.finfo(float).tiny)))
        modes = np.zeros((n, N))
        modes[:, :good] = X @ V[:, :good] / np.sqrt(lam[:good] * T)
        # small energies lose orthogonality in the lift; QR restores it
        # without mixing a mode into the span of earlier ones
        Qr, R = np.linalg.qr(modes[:, :good])
        modes[:, :good] = normalize_phase(Qr * np.sign(np.diag(R)))
        modes = _complete_basis(modes, good)
        total = float(np.sum(X * X) / T)
    elif method == "spatial":
        lam, modes = hermitian_eig(X @ X.T / T)
        lam = np.clip(lam[:N], 0.0, None)
        modes = modes[:, :N]
        total = float(np.sum(X * X) / T)
    else:
        raise ValueError(f"unknown POD method {method!r}")
    return PodBasis(modes=modes, energies=lam, mean=mean, total_energy=total)


def pod_encode(basis: PodBasis, snaps) -> np.ndarray:
    """Latent coefficients ``a = Phi^T (q - mean)``, shape ``(N, T)``."""
    Q = _as_state_matrix(snaps)
    if Q.shape[0] != basis.state_size:
        raise ShapeError(f"snapshot size {Q.shape[0]} does not match basis size {basis.state_size}")
    return basis.modes.T @ (Q - basis.mean[:, None])


def pod_decode(basis: PodBasis, latent, like: SnapshotMatrix | None = None):
    """Reconstruct ``Phi a + mean``; wrapped as ``like``'s grid when given."""
    a = np.asarray(latent, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] != basis.n_modes:
        raise ShapeError(f"latent has {a.shape[0]} rows, basis has {basis.n_modes} modes")
    Q = basis.modes @ a + basis.mean[:, None]
    return like.like(Q) if like is not None else Q


def root_nmse(truth, approx, reference_mean=None) -> float:
    """``sqrt(sum_t ||approx_t - truth_t||^2 / sum_t ||truth_t||^2)``.

    With ``reference_mean`` the denominator is the fluctuation energy
    ``||truth_t - mean||^2`` instead of the raw energy.
    """
    Q = _as_state_matrix(truth)
    A = _as_state_matrix(approx)
    if Q.shape != A.shape:
        raise ShapeError(f"truth shape {Q.shape} != approx shape {A.shape}")
    ref = Q if reference_mean is None else Q - np.asarray(reference_mean)[:, None]
    denom = np.sum(ref * ref)
    if denom == 0:
        raise UndefinedMetricError("truth has zero energy; root-NMSE undefined")
    diff = A - Q
    return float(np.sqrt(np.sum(diff * diff) / denom))


def _per_snapshot_count(x) -> int:
    if isinstance(x, SnapshotMatrix):
        return x.state_size
    if isinstance(x, PodBasis):
        return x.n_modes
    if isinstance(x, (int, np.integer)):
        return int(x)
    # latent block, N x T
    return int(np.asarray(x).shape[0])


def compression_ratio(original, latent) -> float:
    """Scalars per original snapshot over scalars per latent snapshot.

    Basis storage is excluded (infinite-data limit). Arguments may be
    snapshot sets, latent blocks, a basis, or plain per-snapshot counts.
    """
    return _per_snapshot_count(original) / _per_snapshot_count(latent)


def timing_ratio(measured_seconds: float, baseline_seconds: float) -> float:
    if not baseline_seconds > 0:
        raise ValueError(f"baseline time must be positive, got {baseline_seconds}")
    return measured_seconds / baseline_seconds
