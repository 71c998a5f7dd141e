"""Gaussian probes, linear stochastic estimation and the sensing pipelines."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .dataio import MetricsFile, SnapshotMatrix
from .errors import ConditioningError, InsufficientHistoryError, ShapeError, UndefinedMetricError
from .spectral import apply_filter, causal_wiener, noncausal_wiener, welch_csd

# Relative amplitude of the white noise assumed on every measurement.
DEFAULT_NOISE_LEVEL = 1e-3
MAX_CONDITION = 1e12

METHODS = ("lse", "wiener_causal", "wiener_noncausal")

# Published NMSE on the withheld wall-sensing challenge data, kept for
# reference only; the synthetic presets do not reproduce them.
REFERENCE_NMSE = {"lse": 0.912, "cnn": 0.239}


@dataclass
class ProbeSpec:
    """Gaussian probes on a structured grid.

    ``centers`` are coordinates in the same units as ``coords`` (grid
    index units by default); ``sigma`` is the Gaussian standard deviation.
    """

    centers: list
    sigma: float
    coords: list | None = None
    channel: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


def probe_weights(space_dims, spec: ProbeSpec) -> np.ndarray:
    """Normalized weights, shape ``(n_probes, *space_dims)``."""
    coords = spec.coords or [np.arange(n, dtype=float) for n in space_dims]
    coords = [np.asarray(c, dtype=float) for c in coords]
    if len(coords) != len(space_dims) or any(c.size != n for c, n in zip(coords, space_dims)):
        raise ShapeError("probe coordinates do not match the grid")
    grids = np.meshgrid(*coords, indexing="ij")
    out = []
    for center in spec.centers:
        center = np.atleast_1d(np.asarray(center, dtype=float))
        if center.size != len(space_dims):
            raise ShapeError(f"probe center {center} has wrong dimension")
        for c, ax in zip(center, coords):
            if not ax.min() <= c <= ax.max():
                raise ValueError(f"probe center {tuple(center)} lies outside the grid")
        r2 = sum((g - c) ** 2 for g, c in zip(grids, center))
        w = np.exp(-0.5 * r2 / spec.sigma**2)
        out.append(w / w.sum())
    return np.asarray(out)


def gaussian_probe(field: SnapshotMatrix, spec: ProbeSpec) -> np.ndarray:
    """Gaussian-weighted spatial averages; returns ``(n_probes, T)``."""
    W = probe_weights(field.space_dims, spec)
    data = field.data[:, spec.channel]
    return W.reshape(W.shape[0], -1) @ data.reshape(data.shape[0], -1).T


@dataclass
class LseModel:
    """Instantaneous estimator ``z = T (y - y_mean) + z_mean``."""

    transfer: np.ndarray
    y_mean: np.ndarray
    z_mean: np.ndarray
    noise_level: float = 0.0


def lse_fit(Y, Z, noise_level: float = 0.0) -> LseModel:
    """``T = C_zy (C_yy + N)^-1`` from mean-removed samples.

    ``N = noise_level**2 * diag(C_yy)``: white noise of relative amplitude
    ``noise_level`` on every measurement channel.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Y.shape[1] != Z.shape[1] or Y.shape[1] < 2:
        raise ShapeError(f"need matching sample counts >= 2, got {Y.shape} and {Z.shape}")
    T = Y.shape[1]
    y_mean = Y.mean(axis=1)
    z_mean = Z.mean(axis=1)
    Yc = Y - y_mean[:, None]
    Zc = Z - z_mean[:, None]
    C_yy = Yc @ Yc.T / T
    C_zy = Zc @ Yc.T / T
    M = C_yy + noise_level**2 * np.diag(np.diag(C_yy))
    if not np.linalg.cond(M) < MAX_CONDITION:
        raise ConditioningError(
            f"regularized measurement correlation is singular (cond={np.linalg.cond(M):.3e})"
        )
    transfer = np.linalg.solve(M.T, C_zy.T).T
    return LseModel(transfer, y_mean, z_mean, noise_level)


def lse_apply(model: LseModel, y) -> np.ndarray:
    """Estimate targets from one measurement vector or a ``(n_y, T)`` block."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != model.y_mean.size:
        raise ShapeError(f"measurement has {y.shape[0]} channels, model expects {model.y_mean.size}")
    if y.ndim == 1:
        return model.transfer @ (y - model.y_mean) + model.z_mean
    return model.transfer @ (y - model.y_mean[:, None]) + model.z_mean[:, None]


def sensing_nmse(truth, estimate, per_target: bool = False):
    """``sum_t ||z~ - z||^2 / sum_t ||z||^2``; per target channel with ``per_target``."""
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    estimate = np.atleast_2d(np.asarray(estimate, dtype=np.float64))
    if truth.shape != estimate.shape:
        raise ShapeError(f"truth {truth.shape} and estimate {estimate.shape} differ")
    err = np.sum((estimate - truth) ** 2, axis=1)
    energy = np.sum(truth**2, axis=1)
    if per_target:
        zero = np.flatnonzero(energy == 0)
        if zero.size:
            raise UndefinedMetricError(f"target channel {zero[0]} has zero energy")
        return err / energy
    if energy.sum() == 0:
        raise UndefinedMetricError("truth has zero energy")
    return float(err.sum() / energy.sum())


@dataclass
class SensingConfig:
    """Pipeline settings; defaults follow the jet sensing protocol."""

    history: int = 200
    noise_level: float = DEFAULT_NOISE_LEVEL
    block: int = 400
    overlap: float = 0.9
    sine_order: int = 6
    dt: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SensingResult:
    estimates: np.ndarray   # (n_z, T_test - history)
    warmup_offset: int
    report: MetricsFile | None = None
    model: object = None
    info: dict = field(default_factory=dict)


def sensing_metrics(truth, estimate) -> dict:
    per = sensing_nmse(truth, estimate, per_target=True)
    return {
        "nmse_per_target": per,
        "nmse_total": sensing_nmse(truth, estimate),
        "nmse_target_mean": float(np.mean(per)),
    }


def run_sensing_pipeline(
    train_y, train_z, test_y, method: str = "wiener_causal", config: SensingConfig | None = None, test_z=None
) -> SensingResult:
    """Train an estimator, apply it to test measurements, and score it.

    Estimates cover test samples ``history .. T-1``; the first ``history``
    samples only feed the filter. With ``test_z`` the returned report holds
    the NMSE over the same window.
    """
    config = config or SensingConfig()
    test_y = np.atleast_2d(np.asarray(test_y, dtype=np.float64))
    L = config.history
    if test_y.shape[1] < L + 1:
        raise InsufficientHistoryError(
            f"test record has {test_y.shape[1]} samples; need more than the {L}-sample history"
        )
    if method == "lse":
        model = lse_fit(train_y, train_z, config.noise_level)
        est = lse_apply(model, test_y[:, L:])
        info = {}
    elif method in ("wiener_causal", "wiener_noncausal"):
        csd = welch_csd(train_y, train_z, config.block, config.overlap, config.sine_order, config.dt)
        build = causal_wiener if method == "wiener_causal" else noncausal_wiener
        model = build(csd, config.noise_level)
        # filters act on fluctuations; the training means are restored afterwards
        y_mean = np.mean(np.atleast_2d(train_y), axis=1)
        z_mean = np.mean(np.atleast_2d(train_z), axis=1)
        reach = L if method == "wiener_causal" else min(L, -int(model.lags.min()))
        est = apply_filter(model, test_y - y_mean[:, None], reach, start=L) + z_mean[:, None]
        info = {"n_blocks": csd.n_blocks}
    else:
        raise ValueError(f"unknown sensing method {method!r}; choose from {METHODS}")
    report = None
    if test_z is not None:
        truth = np.atleast_2d(np.asarray(test_z, dtype=np.float64))[:, L:]
        report = MetricsFile("sensing", sensing_metrics(truth, est), {"method": method, **config.to_dict()})
    return SensingResult(est, L, report, model, info)
