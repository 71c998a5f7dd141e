"""Exact DMD, DMD with control, and ensemble forecast error."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .compression import PodBasis, pod_fit
from .errors import (
    ConjugacyWarning,
    IdentifiabilityError,
    IllConditionedError,
    ShapeError,
    UndefinedMetricError,
)
from .numerics import as_matrix, general_eig, numerical_rank, pseudoinverse, truncated_svd

# Relative size of the smallest singular value allowed inside the retained rank.
SVD_CUTOFF = 1e-13
# Imaginary residue (relative) tolerated when returning real forecasts.
IMAG_TOL = 1e-8
# Relative cutoff of the stacked state/input pseudoinverse for DMDc.
DMDC_CUTOFF = 1e-10


@dataclass
class DmdModel:
    """Exact DMD modes and discrete-time eigenvalues."""

    modes: np.ndarray
    eigenvalues: np.ndarray
    dt: float = 1.0
    real_data: bool = True
    operator: np.ndarray | None = None

    @property
    def rank(self) -> int:
        return self.eigenvalues.size

    @property
    def frequencies(self) -> np.ndarray:
        """Continuous-time frequencies ``log(lambda) / dt`` (principal branch)."""
        with np.errstate(divide="ignore"):
            return np.log(self.eigenvalues.astype(complex)) / self.dt


def dmd_fit(Q1, Q2, N: int, dt: float = 1.0) -> DmdModel:
    """Exact DMD from snapshot pairs ``Q2[:, j] = K Q1[:, j]``.

    The rank-``N`` SVD ``Q1 = U S V^*`` gives ``K~ = U^* Q2 V S^-1``; its
    eigenvectors ``D`` lift to the exact modes ``Phi = Q2 V S^-1 D``.
    """
    Q1 = as_matrix(Q1, "Q1")
    Q2 = as_matrix(Q2, "Q2")
    if Q1.shape != Q2.shape:
        raise ShapeError(f"Q1 {Q1.shape} and Q2 {Q2.shape} differ")
    svd = truncated_svd(Q1, N)
    s = svd.singular_values
    if s[-1] <= SVD_CUTOFF * s[0]:
        raise IllConditionedError(
            f"singular value {N} is {s[-1]:.3e}, below {SVD_CUTOFF:g} * sigma_1; lower N"
        )
    Q2VSinv = (Q2 @ svd.V) / s
    K = svd.U.conj().T @ Q2VSinv
    lam, D = general_eig(K)
    modes = Q2VSinv @ D
    real = not (np.iscomplexobj(Q1) or np.iscomplexobj(Q2))
    return DmdModel(modes=modes, eigenvalues=lam, dt=dt, real_data=real, operator=K)


def dmd_amplitudes(model: DmdModel, q0, window=None) -> np.ndarray:
    """Mode amplitudes ``b = Phi^+ q0``.

    With ``window`` (state x W snapshots, the first being at k=0) the
    amplitudes instead minimize ``sum_k ||Phi Lambda^k b - q_k||``.
    """
    if window is None:
        q0 = np.asarray(q0)
        if q0.shape != (model.modes.shape[0],):
            raise ShapeError(f"q0 has shape {q0.shape}, modes have {model.modes.shape[0]} rows")
        return pseudoinverse(model.modes) @ q0
    W = as_matrix(window, "window")
    if W.shape[0] != model.modes.shape[0]:
        raise ShapeError("window rows do not match mode length")
    k = np.arange(W.shape[1])
    # stacked system: [Phi L^0; Phi L^1; ...] b = [q_0; q_1; ...]
    powers = model.eigenvalues[None, :] ** k[:, None]
    A = (model.modes[None, :, :] * powers[:, None, :]).reshape(-1, model.rank)
    return pseudoinverse(A) @ W.T.reshape(-1)


def dmd_forecast(model: DmdModel, b, steps: int, include_initial: bool = False) -> np.ndarray:
    """``q(k dt) = sum_i phi_i lambda_i^k b_i`` for ``k = 1..steps``.

    Returns a ``state x steps`` array (``steps + 1`` columns starting at
    k=0 with ``include_initial``). Real-data models return the real part
    and warn with :class:`ConjugacyWarning` if the discarded imaginary part
    exceeds ``1e-8`` of the forecast norm.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    k = np.arange(0 if include_initial else 1, steps + 1)
    powers = model.eigenvalues[:, None] ** k[None, :]
    out = model.modes @ (np.asarray(b)[:, None] * powers)
    if not model.real_data:
        return out
    norm = np.linalg.norm(out)
    residue = np.linalg.norm(out.imag)
    if residue > IMAG_TOL * norm:
        warnings.warn(
            f"forecast imaginary residue {residue:.3e} exceeds {IMAG_TOL:g} * ||q|| "
            "(eigenvalues not conjugate-paired?)",
            ConjugacyWarning,
            stacklevel=2,
        )
    return out.real


@dataclass
class DmdcModel:
    """Reduced linear model ``x_{k+1} = K x_k + B u_k`` in POD coordinates."""

    K: np.ndarray
    B: np.ndarray
    basis: PodBasis
    dt: float = 1.0

    @property
    def r(self) -> int:
        return self.K.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]


def dmdc_fit(
    Q1, Q2, U_inputs, r: int, N: int | None = None, basis: PodBasis | None = None, dt: float = 1.0
) -> DmdcModel:
    """Identify ``[K B]`` by least squares in the leading ``r`` POD coordinates.

    The basis is fit (without mean removal) on the columns of ``Q1`` and
    ``Q2`` unless supplied. ``[K B] = X2 [X1; U]^+`` with relative cutoff
    ``1e-10``; ``N`` optionally truncates the stacked SVD further.

    Raises
    ------
    IdentifiabilityError
        If the inputs are not linearly separable from the states, i.e. the
        stacked matrix has lower rank than ``rank(X1) + rank(U)``.
    """
    Q1 = as_matrix(Q1, "Q1")
    Q2 = as_matrix(Q2, "Q2")
    U_inputs = np.atleast_2d(np.asarray(U_inputs, dtype=np.float64))
    if not Q1.shape == Q2.shape or U_inputs.shape[1] != Q1.shape[1]:
        raise ShapeError(
            f"column counts differ: Q1 {Q1.shape}, Q2 {Q2.shape}, inputs {U_inputs.shape}"
        )
    if basis is None:
        basis = pod_fit(np.hstack([Q1, Q2]), r, subtract_mean=False)
    elif basis.n_modes != r:
        raise ShapeError(f"supplied basis has {basis.n_modes} modes, r={r}")
    Phi = basis.modes
    X1 = Phi.T @ Q1
    X2 = Phi.T @ Q2
    stacked = np.vstack([X1, U_inputs])
    rank_x = numerical_rank(X1, DMDC_CUTOFF)
    rank_u = numerical_rank(U_inputs, DMDC_CUTOFF)
    rank_s = numerical_rank(stacked, DMDC_CUTOFF)
    if rank_s < rank_x + rank_u:
        raise IdentifiabilityError(
            f"stacked state/input matrix has rank {rank_s} < rank(X1)={rank_x} + rank(U)={rank_u}; "
            "inputs are not persistently exciting"
        )
    if N is not None:
        svd = truncated_svd(stacked, N)
        pinv = (svd.V / svd.singular_values) @ svd.U.T
    else:
        pinv = pseudoinverse(stacked, DMDC_CUTOFF)
    G = X2 @ pinv
    return DmdcModel(K=G[:, :r], B=G[:, r:], basis=basis, dt=dt)


def dmdc_forecast(model: DmdcModel, q0, inputs) -> np.ndarray:
    """Iterate the reduced model from ``q0``; returns ``state x steps``.

    Column ``k`` holds the lifted state after applying ``inputs[:, k]``.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if inputs.shape[0] != model.n_inputs:
        raise ShapeError(f"inputs have {inputs.shape[0]} rows, model expects {model.n_inputs}")
    q0 = np.asarray(q0, dtype=np.float64)
    if q0.shape != (model.basis.state_size,):
        raise ShapeError(f"q0 has shape {q0.shape}, expected ({model.basis.state_size},)")
    x = model.basis.modes.T @ q0
    steps = inputs.shape[1]
    X = np.empty((model.r, steps))
    for k in range(steps):
        x = model.K @ x + model.B @ inputs[:, k]
        X[:, k] = x
    return model.basis.modes @ X


@dataclass
class ForecastError:
    """Lead-time resolved forecast NMSE."""

    curve: np.ndarray         # ensemble ratio e_k, shape (H,)
    per_sequence: np.ndarray  # shape (S, H)
    mean: np.ndarray          # mean of per-sequence curves
    std: np.ndarray           # population std of per-sequence curves


def forecast_nmse(truth, forecast) -> ForecastError:
    """NMSE per lead time for ensembles shaped ``(sequences, horizon, state)``.

    ``curve[k] = sum_s ||f_sk - q_sk||^2 / sum_s ||q_sk||^2``.
    """
    truth = np.asarray(truth, dtype=np.float64)
    forecast = np.asarray(forecast, dtype=np.float64)
    if truth.ndim == 2:
        truth, forecast = truth[None], forecast[None]
    if truth.shape != forecast.shape or truth.ndim != 3:
        raise ShapeError(f"truth {truth.shape} and forecast {forecast.shape} must match (S, H, state)")
    err = np.sum((forecast - truth) ** 2, axis=2)
    energy = np.sum(truth**2, axis=2)
    if np.any(energy == 0):
        s, k = np.argwhere(energy == 0)[0]
        raise UndefinedMetricError(f"truth has zero energy at sequence {s}, lead time {k + 1}")
    per_seq = err / energy
    return ForecastError(
        curve=err.sum(axis=0) / energy.sum(axis=0),
        per_sequence=per_seq,
        mean=per_seq.mean(axis=0),
        std=per_seq.std(axis=0),
    )
