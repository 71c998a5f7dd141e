"""Seeded synthetic datasets with analytic ground truth.

Random streams
--------------
All randomness comes from the Philox-4x64 counter-based generator keyed
by ``(seed, stream)``. Each consumer inside a generator draws from its
own numbered stream, so adding draws to one never shifts another.
Uniforms are ``((u64 >> 11) + 0.5) * 2**-53`` (open interval) and
Gaussians are the inverse normal CDF of those uniforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.signal import lfilter
from scipy.special import ndtri

from .dataio import SnapshotMatrix
from .errors import ConfigError
from .spectral import CsdSet, angular_frequencies

KINDS = ("low_rank_field", "linear_modal", "forced_linear", "ar_process", "causal_fir_pair")


class Stream:
    """Uniform and Gaussian draws from one Philox stream."""

    def __init__(self, seed: int, stream: int = 0):
        if not 0 <= int(seed) < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self._bits = np.random.Philox(key=np.array([int(seed), int(stream)], dtype=np.uint64))

    def raw(self, n: int) -> np.ndarray:
        return self._bits.random_raw(n).astype(np.uint64)

    def uniform(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        u = ((self.raw(n) >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        return u.reshape(shape)

    def normal(self, shape) -> np.ndarray:
        return ndtri(self.uniform(shape))


def random_orthonormal(stream: Stream, n: int, k: int, complement_of=None) -> np.ndarray:
    """``n x k`` orthonormal columns, optionally orthogonal to given vectors."""
    G = stream.normal((n, k))
    if complement_of is not None:
        C, _ = np.linalg.qr(np.atleast_2d(np.asarray(complement_of, dtype=float).T).T)
        G = G - C @ (C.T @ G)
    Q, R = np.linalg.qr(G)
    return Q * np.sign(np.diag(R))


@dataclass
class GeneratorConfig:
    kind: str
    seed: int = 0
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown generator kind {self.kind!r}; valid kinds: {', '.join(KINDS)}")

    def get(self, name, default):
        return self.params.get(name, default)

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorConfig":
        doc = dict(doc)
        if "kind" not in doc:
            raise ConfigError(f"generator config needs a 'kind' (one of: {', '.join(KINDS)})")
        kind = doc.pop("kind")
        seed = int(doc.pop("seed", 0))
        params = doc.pop("params", {})
        params.update(doc)
        return cls(kind, seed, params)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, **self.params}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# -- POD oracle ---------------------------------------------------------------


@dataclass
class LowRankField:
    snapshots: SnapshotMatrix
    basis: np.ndarray
    energies: np.ndarray


def gen_low_rank_field(config: GeneratorConfig) -> LowRankField:
    """``X = sqrt(T) Phi0 diag(sqrt(energies)) R^T`` with zero temporal mean.

    ``R`` has orthonormal columns orthogonal to the ones vector, so the
    sample correlation ``X X^T / T`` has eigenvalues exactly ``energies``
    with or without mean removal.
    """
    space_dims = tuple(config.get("space_dims", [40, 25]))
    n_channels = int(config.get("n_channels", 1))
    T = int(config.get("n_snapshots", 100))
    energies = config.get("energies", None)
    if energies is None:
        rank = int(config.get("rank", 3))
        energies = [float(rank - i) ** 2 for i in range(rank)]
    energies = np.asarray(energies, dtype=np.float64)
    rank = energies.size
    n = int(np.prod(space_dims)) * n_channels
    if rank > min(n, T - 1) or np.any(energies < 0):
        raise ConfigError(f"rank {rank} infeasible for state size {n} and {T} snapshots")
    Phi0 = random_orthonormal(Stream(config.seed, 0), n, rank)
    R = random_orthonormal(Stream(config.seed, 1), T, rank, complement_of=np.ones((T, 1)))
    X = np.sqrt(T) * (Phi0 * np.sqrt(energies)) @ R.T
    snaps = SnapshotMatrix.from_matrix(X, space_dims, n_channels, float(config.get("dt", 1.0)))
    return LowRankField(snaps, Phi0, energies)


# -- DMD oracle ---------------------------------------------------------------


def _parse_eigenvalues(spec) -> np.ndarray:
    vals = []
    for v in spec:
        if isinstance(v, (list, tuple)):
            vals.append(complex(v[0], v[1]))
        else:
            vals.append(complex(v))
    return np.asarray(vals, dtype=complex)


def _conjugate_partner(lam: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    partner = np.full(lam.size, -1)
    for i, v in enumerate(lam):
        if abs(v.imag) <= tol * max(abs(v), 1.0):
            partner[i] = i
            continue
        cands = [j for j in range(lam.size) if j != i and abs(lam[j] - v.conjugate()) <= tol * max(abs(v), 1.0)]
        if not cands:
            raise ConfigError(f"eigenvalue {v} has no complex-conjugate partner; real output impossible")
        partner[i] = cands[0]
    return partner


@dataclass
class LinearModalData:
    trajectory: np.ndarray  # state x (n_pairs + 1)
    eigenvalues: np.ndarray
    modes: np.ndarray
    amplitudes: np.ndarray
    dt: float = 1.0

    @property
    def Q1(self) -> np.ndarray:
        return self.trajectory[:, :-1]

    @property
    def Q2(self) -> np.ndarray:
        return self.trajectory[:, 1:]

    def propagate(self, steps: int, start: int = 0) -> np.ndarray:
        """Ground-truth states ``q_{start+1} .. q_{start+steps}``."""
        k = np.arange(start + 1, start + steps + 1)
        return np.real(self.modes @ (self.amplitudes[:, None] * self.eigenvalues[:, None] ** k))


def modal_eigenvalues(config: GeneratorConfig) -> np.ndarray:
    spec = config.get("eigenvalues", None)
    if spec is None:
        r, th = 0.95, 0.4
        return np.array([r * np.exp(1j * th), r * np.exp(-1j * th), 0.7])
    return _parse_eigenvalues(spec)


def gen_linear_modal(config: GeneratorConfig, stream_offset: int = 0) -> LinearModalData:
    """``q_k = sum_i phi_i lambda_i^k b_i`` with conjugate-paired modes and amplitudes.

    ``stream_offset`` picks independent amplitudes and noise for additional
    sequences of the same system; the modes depend on ``seed`` only.
    """
    lam = modal_eigenvalues(config)
    partner = _conjugate_partner(lam)
    n = int(config.get("n_space", 200))
    n_pairs = int(config.get("n_pairs", 60))
    modes = np.zeros((n, lam.size), dtype=complex)
    G = Stream(config.seed, 0).normal((n, 2 * lam.size))
    A = Stream(config.seed, 1 + 2 * stream_offset).normal((2, lam.size))
    b = np.zeros(lam.size, dtype=complex)
    for i in range(lam.size):
        j = partner[i]
        if j == i:
            modes[:, i] = G[:, 2 * i]
            b[i] = 1.0 + abs(A[0, i])
        elif lam[i].imag > 0:
            modes[:, i] = G[:, 2 * i] + 1j * G[:, 2 * i + 1]
            b[i] = (1.0 + abs(A[0, i])) * np.exp(1j * np.pi * A[1, i])
    for i in range(lam.size):
        j = partner[i]
        if j != i and lam[i].imag < 0:
            modes[:, i] = modes[:, j].conj()
            b[i] = b[j].conj()
    modes /= np.linalg.norm(modes, axis=0)
    k = np.arange(n_pairs + 1)
    traj = np.real(modes @ (b[:, None] * lam[:, None] ** k))
    noise = float(config.get("noise_level", 0.0))
    if noise:
        eps = Stream(config.seed, 2 + 2 * stream_offset).normal(traj.shape)
        traj = traj + noise * np.sqrt(np.mean(traj**2)) * eps
    return LinearModalData(traj, lam, modes, b, float(config.get("dt", 1.0)))


# -- DMDc oracle --------------------------------------------------------------


@dataclass
class ForcedLinearData:
    states: np.ndarray    # state x (n_steps + 1), lifted
    reduced: np.ndarray   # r x (n_steps + 1)
    inputs: np.ndarray    # m x n_steps
    A: np.ndarray
    B: np.ndarray
    embedding: np.ndarray  # state x r, orthonormal

    @property
    def Q1(self):
        return self.states[:, :-1]

    @property
    def Q2(self):
        return self.states[:, 1:]


def _stable_matrix(stream: Stream, r: int, radius: float) -> np.ndarray:
    M = stream.normal((r, r))
    return M * (radius / np.max(np.abs(np.linalg.eigvals(M))))


def forced_system(config: GeneratorConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(A, B, embedding)`` fixed by ``seed``."""
    r = int(config.get("r", 4))
    m = int(config.get("m", 2))
    n = int(config.get("n_space", 100))
    if "A" in config.params:
        A = np.asarray(config.params["A"], dtype=float)
    else:
        A = _stable_matrix(Stream(config.seed, 0), r, float(config.get("spectral_radius", 0.9)))
    if config.get("zero_B", False):
        B = np.zeros((r, m))
    elif "B" in config.params:
        B = np.asarray(config.params["B"], dtype=float)
    else:
        B = Stream(config.seed, 1).normal((r, m))
    E = random_orthonormal(Stream(config.seed, 2), n, r)
    return A, B, E


def _sinusoid(config: GeneratorConfig, stream_offset: int) -> tuple[float, np.ndarray]:
    m = int(config.get("m", 2))
    freq = float(config.get("input_frequency", 0.3))
    return freq, np.pi * Stream(config.seed, 3 + 3 * stream_offset).uniform((m,))


def forced_inputs(config: GeneratorConfig, n_steps: int, stream_offset: int = 0) -> np.ndarray:
    m = int(config.get("m", 2))
    kind = config.get("input", "white")
    if kind == "white":
        return Stream(config.seed, 3 + 3 * stream_offset).normal((m, n_steps))
    if kind == "zero":
        return np.zeros((m, n_steps))
    if kind == "sinusoid":
        freq, phase = _sinusoid(config, stream_offset)
        k = np.arange(n_steps)
        return np.sin(freq * k[None, :] + phase[:, None])
    if kind == "pitching":
        # angle and rate of a harmonic motion, mimicking (alpha, alpha_dot)
        freq = float(config.get("input_frequency", 0.3)) * (1 + 0.5 * Stream(config.seed, 3 + 3 * stream_offset).uniform((1,))[0])
        k = np.arange(n_steps)
        alpha = np.sin(freq * k)
        rate = freq * np.cos(freq * k)
        extra = 0.1 * Stream(config.seed, 4 + 3 * stream_offset).normal((2, n_steps))
        return np.vstack([alpha, rate]) + extra
    raise ConfigError(f"unknown input kind {kind!r} (white, zero, sinusoid, pitching)")


def gen_forced_linear(config: GeneratorConfig, stream_offset: int = 0) -> ForcedLinearData:
    """``x_{k+1} = A x_k + B u_k`` lifted to ``q = E x``.

    For a sinusoidal input the initial state sits on the periodic steady
    state so no transient is present.
    """
    A, B, E = forced_system(config)
    r = A.shape[0]
    n_steps = int(config.get("n_steps", 200))
    U = forced_inputs(config, n_steps, stream_offset)
    if config.get("input", "white") == "sinusoid":
        # u_k = Im(c e^{i f k}) -> x_k = Im((e^{i f} I - A)^{-1} B c e^{i f k})
        freq, phase = _sinusoid(config, stream_offset)
        c = np.exp(1j * phase)
        x0 = np.imag(np.linalg.solve(np.exp(1j * freq) * np.eye(r) - A, B @ c))
    else:
        x0 = Stream(config.seed, 5 + 3 * stream_offset).normal((r,))
    X = np.empty((r, n_steps + 1))
    X[:, 0] = x0
    for k in range(n_steps):
        X[:, k + 1] = A @ X[:, k] + B @ U[:, k]
    return ForcedLinearData(E @ X, X, U, A, B, E)


# -- Wiener oracles -----------------------------------------------------------


def ar1_spectrum(a, sigma, dt, frequencies) -> np.ndarray:
    e = np.exp(-1j * np.asarray(frequencies) * dt)
    return sigma**2 * dt / np.abs(1 - a * e) ** 2


def ar1_factor(a, sigma, dt, frequencies) -> np.ndarray:
    """Minimum-phase factor ``sigma sqrt(dt) / (1 - a e^{-i w dt})``."""
    e = np.exp(-1j * np.asarray(frequencies) * dt)
    return sigma * np.sqrt(dt) / (1 - a * e)


def _ar_filter(eps: np.ndarray, a: float, sigma: float) -> np.ndarray:
    """Stationary AR(1) path; the first standard-normal draw sets the initial state."""
    y = np.empty_like(eps)
    y[0] = eps[0] * sigma / np.sqrt(1 - a * a)
    y[1:] = lfilter([1.0], [1.0, -a], sigma * eps[1:], zi=[a * y[0]])[0]
    return y


@dataclass
class ArProcess:
    y: np.ndarray  # channels x T
    a: np.ndarray
    sigma: float
    dt: float

    def spectrum(self, n_freq: int) -> tuple[np.ndarray, np.ndarray]:
        """Frequencies and diagonal analytic ``S_yy`` stack ``(n_f, c, c)``."""
        w = angular_frequencies(n_freq, self.dt)
        S = np.zeros((n_freq, self.a.size, self.a.size), dtype=complex)
        for i, ai in enumerate(self.a):
            S[:, i, i] = ar1_spectrum(ai, self.sigma, self.dt, w)
        return w, S

    def predictor_csd(self, n_freq: int, lead: int = 1) -> CsdSet:
        """Analytic spectra for targets ``z_k = y_{k+lead}``."""
        w, S = self.spectrum(n_freq)
        shift = np.exp(1j * w * lead * self.dt)[:, None, None]
        return CsdSet(w, S, shift * S, self.dt, S_zz=S.copy())


def gen_ar_process(config: GeneratorConfig) -> ArProcess:
    """Independent AR(1) channels ``y_k = a y_{k-1} + sigma e_k`` started in stationarity."""
    a = np.atleast_1d(np.asarray(config.get("a", 0.8), dtype=float))
    if np.any(np.abs(a) >= 1):
        raise ConfigError(f"AR coefficient must satisfy |a| < 1, got {a}")
    sigma = float(config.get("sigma", 1.0))
    T = int(config.get("n_samples", 10000))
    eps = Stream(config.seed, 0).normal((a.size, T))
    y = np.vstack([_ar_filter(eps[i], a[i], sigma) for i in range(a.size)])
    return ArProcess(y, a, sigma, float(config.get("dt", 1.0)))


@dataclass
class FirPair:
    y: np.ndarray        # measured (with noise), 1 x T
    z: np.ndarray        # targets, n_z x T
    y_clean: np.ndarray
    taps: np.ndarray     # n_z x n_lags, lag = lags[j]
    lags: np.ndarray
    a: float
    sigma: float
    noise_var: float
    dt: float

    def transfer(self, frequencies) -> np.ndarray:
        """True ``H(w) = sum_j h_j e^{-i w lag_j dt}``, shape ``(n_f, n_z, 1)``."""
        e = np.exp(-1j * np.outer(frequencies, self.lags) * self.dt)
        return (e @ self.taps.T)[:, :, None]

    def analytic_csd(self, n_freq: int) -> CsdSet:
        w = angular_frequencies(n_freq, self.dt)
        Sy = ar1_spectrum(self.a, self.sigma, self.dt, w)[:, None, None]
        H = self.transfer(w)
        S_yy = Sy + self.noise_var * self.dt
        S_zy = H * Sy
        S_zz = H @ np.swapaxes(H.conj(), 1, 2) * Sy
        return CsdSet(w, S_yy.astype(complex), S_zy, self.dt, S_zz=S_zz)


def gen_causal_fir_pair(config: GeneratorConfig) -> FirPair:
    """Targets are FIR filters of an AR(1) (white when ``a = 0``) signal.

    ``kernels`` lists one tap vector per target on lags ``0..L0``;
    ``anticausal`` optionally adds taps on lags ``-1, -2, ...`` to
    contaminate the truth with future dependence. ``noise_level`` adds
    white measurement noise of that relative amplitude to ``y`` only.
    """
    kernels = config.get("kernels", [[1.0, 0.5, -0.3, 0.2, 0.1]])
    kernels = [list(map(float, k)) for k in kernels]
    anti = config.get("anticausal", None)
    anti = [list(map(float, k)) for k in anti] if anti else [[] for _ in kernels]
    if len(anti) != len(kernels):
        raise ConfigError("anticausal taps must be given per target")
    n_neg = max(len(k) for k in anti)
    n_pos = max(len(k) for k in kernels)
    lags = np.arange(-n_neg, n_pos)
    taps = np.zeros((len(kernels), lags.size))
    for i, (kp, kn) in enumerate(zip(kernels, anti)):
        taps[i, n_neg : n_neg + len(kp)] = kp
        for j, v in enumerate(kn):
            taps[i, n_neg - 1 - j] = v
    a = float(config.get("a", 0.0))
    if abs(a) >= 1:
        raise ConfigError(f"AR coefficient must satisfy |a| < 1, got {a}")
    sigma = float(config.get("sigma", 1.0))
    T = int(config.get("n_samples", 20000))
    dt = float(config.get("dt", 1.0))
    pad_lo, pad_hi = n_pos, n_neg
    eps = Stream(config.seed, 0).normal((T + pad_lo + pad_hi,))
    y_ext = _ar_filter(eps, a, sigma)
    z = np.zeros((len(kernels), T))
    for j, lag in enumerate(lags):
        seg = y_ext[pad_lo - lag : pad_lo - lag + T]
        z += taps[:, j : j + 1] * seg[None, :]
    y_clean = y_ext[pad_lo : pad_lo + T]
    level = float(config.get("noise_level", 0.0))
    noise_var = (level**2) * sigma**2 / (1 - a * a)
    y = y_clean + np.sqrt(noise_var) * Stream(config.seed, 1).normal((T,))
    return FirPair(y[None, :], z, y_clean[None, :], taps, lags, a, sigma, noise_var, dt)


GENERATORS = {
    "low_rank_field": gen_low_rank_field,
    "linear_modal": gen_linear_modal,
    "forced_linear": gen_forced_linear,
    "ar_process": gen_ar_process,
    "causal_fir_pair": gen_causal_fir_pair,
}


def generate(config: GeneratorConfig):
    return GENERATORS[config.kind](config)
