"""Cross-spectral estimation and Wiener filtering.

Conventions
-----------
* Frequencies are angular, two-sided, in DFT order: ``w_k = 2 pi fftfreq(n, dt)``.
* Spectral densities are two-sided with explicit ``dt`` scaling, so a
  white sequence of variance ``s2`` has density ``s2 * dt``.
* "Causal" means supported on non-negative lags. On an even grid the
  index ``n // 2`` counts as lag ``+n/2``.
* Time-domain kernels satisfy ``z(t) = sum_tau T(tau) y(t - tau) dt``;
  ``taps = T * dt`` is the discrete impulse response.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationError, FactorizationError, RegularizationError, ShapeError, WarmupError
from .numerics import dft

DEFAULT_SINE_ORDER = 6
# Condition number above which S_yy + N counts as singular.
MAX_CONDITION = 1e12


def sine_window(n: int, p: int = DEFAULT_SINE_ORDER) -> np.ndarray:
    """``sin(pi (j + 1/2) / n) ** p``, scaled so the squared weights sum to ``n``."""
    if n < 2 or p < 1:
        raise ValueError(f"sine window needs n >= 2 and p >= 1, got n={n}, p={p}")
    w = np.sin(np.pi * (np.arange(n) + 0.5) / n) ** p
    return w * np.sqrt(n / np.sum(w * w))


def angular_frequencies(n: int, dt: float = 1.0) -> np.ndarray:
    return 2.0 * np.pi * np.fft.fftfreq(n, dt)


def lag_indices(n: int) -> np.ndarray:
    """Lag represented by each DFT index under the causal convention."""
    idx = np.arange(n)
    return np.where(idx <= n // 2, idx, idx - n)


@dataclass
class CsdSet:
    """Welch or analytic spectra on a shared frequency grid."""

    frequencies: np.ndarray
    S_yy: np.ndarray
    S_zy: np.ndarray
    dt: float = 1.0
    S_zz: np.ndarray | None = None
    block_length: int = 0
    overlap_fraction: float = 0.0
    window_tag: str = ""
    n_blocks: int = 0

    @property
    def n_freq(self) -> int:
        return self.frequencies.size


def _window_weights(window, block: int) -> tuple[np.ndarray, str]:
    if window is None:
        return sine_window(block, DEFAULT_SINE_ORDER), f"sine{DEFAULT_SINE_ORDER}"
    if isinstance(window, (int, np.integer)):
        return sine_window(block, int(window)), f"sine{int(window)}"
    if isinstance(window, str):
        if window == "boxcar":
            return np.ones(block), "boxcar"
        if window.startswith("sine"):
            p = int(window[4:] or DEFAULT_SINE_ORDER)
            return sine_window(block, p), f"sine{p}"
        raise ValueError(f"unknown window {window!r}")
    w = np.asarray(window, dtype=np.float64)
    if w.shape != (block,):
        raise ShapeError(f"window length {w.shape} != block {block}")
    return w, "custom"


def block_starts(n_samples: int, block: int, overlap: float) -> np.ndarray:
    step = block - int(round(overlap * block))
    if step < 1:
        raise EstimationError(f"overlap {overlap} leaves no advance between blocks")
    return np.arange(0, n_samples - block + 1, step)


def welch_csd(Y, Z=None, block: int = 400, overlap: float = 0.9, window=None, dt: float = 1.0) -> CsdSet:
    """Welch estimate of ``S_yy``, ``S_zy`` and ``S_zz``.

    Each block has its per-channel mean removed, is multiplied by the
    window and transformed; densities are ``dt / block * a b^H`` averaged
    over blocks.

    Parameters
    ----------
    Y, Z : ndarray, shape (channels, T)
        Measurements and targets. ``Z`` defaults to ``Y``.
    block : int
        Samples per block.
    overlap : float
        Fraction of a block shared with its neighbour, ``0 <= overlap < 1``.
    window : None, int, str or ndarray
        ``None`` is the order-6 sine window, an int ``p`` the order-``p``
        sine window, ``"boxcar"`` no taper.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    Z = Y if Z is None else np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Y.shape[1] != Z.shape[1]:
        raise ShapeError("Y and Z must have the same number of samples")
    T = Y.shape[1]
    if not 0 <= overlap < 1:
        raise ValueError(f"overlap must lie in [0, 1), got {overlap}")
    if not 2 <= block <= T:
        raise EstimationError(f"block length {block} must lie in [2, {T}]")
    w, tag = _window_weights(window, block)
    starts = block_starts(T, block, overlap)
    if starts.size < 2:
        raise EstimationError(f"only {starts.size} Welch block(s) fit in {T} samples")
    ny, nz = Y.shape[0], Z.shape[0]
    S_yy = np.zeros((block, ny, ny), dtype=complex)
    S_zy = np.zeros((block, nz, ny), dtype=complex)
    S_zz = np.zeros((block, nz, nz), dtype=complex)
    same = Z is Y
    for s in starts:
        yb = Y[:, s : s + block]
        yb = (yb - yb.mean(axis=1, keepdims=True)) * w
        yh = dft(yb, axis=1).T  # (block, ny)
        if same:
            zh = yh
        else:
            zb = Z[:, s : s + block]
            zh = dft((zb - zb.mean(axis=1, keepdims=True)) * w, axis=1).T
        S_yy += yh[:, :, None] * yh[:, None, :].conj()
        S_zy += zh[:, :, None] * yh[:, None, :].conj()
        S_zz += zh[:, :, None] * zh[:, None, :].conj()
    scale = dt / (block * starts.size)
    return CsdSet(
        frequencies=angular_frequencies(block, dt),
        S_yy=S_yy * scale,
        S_zy=S_zy * scale,
        S_zz=S_zz * scale,
        dt=dt,
        block_length=block,
        overlap_fraction=overlap,
        window_tag=tag,
        n_blocks=int(starts.size),
    )


def noise_psd(S_yy: np.ndarray, level: float) -> np.ndarray:
    """Flat diagonal noise density: ``level**2`` times each channel's mean power.

    A channel's variance is the bin average of its density divided by
    ``dt``; a white noise of variance ``v`` has density ``v dt``, so the dt
    factors cancel and the noise density is ``level**2 * mean_k S_ii(w_k)``.
    """
    power = np.real(np.mean(np.diagonal(S_yy, axis1=1, axis2=2), axis=0))
    return np.broadcast_to(np.diag(level**2 * power), S_yy.shape).copy()


def _noise_matrix(csd: CsdSet, noise) -> np.ndarray:
    if noise is None:
        return np.zeros_like(csd.S_yy)
    if np.isscalar(noise):
        return noise_psd(csd.S_yy, float(noise))
    N = np.asarray(noise, dtype=complex)
    if N.shape == csd.S_yy.shape[1:]:
        return np.broadcast_to(N, csd.S_yy.shape).copy()
    if N.shape == csd.S_yy.shape:
        return N
    raise ShapeError(f"noise spectrum shape {N.shape} does not match S_yy {csd.S_yy.shape}")


@dataclass
class TransferFunctionSet:
    """Frequency-sampled estimator ``T_hat(w)`` with its lag-domain kernels."""

    frequencies: np.ndarray
    T_hat: np.ndarray
    dt: float = 1.0
    causal: bool = False
    info: dict = field(default_factory=dict)

    @property
    def n_freq(self) -> int:
        return self.frequencies.size

    @property
    def lags(self) -> np.ndarray:
        """Ascending lags ``-(n - 1 - n//2) .. n//2``."""
        return np.sort(lag_indices(self.n_freq))

    @property
    def kernels(self) -> np.ndarray:
        """``T(tau)`` for each entry of :attr:`lags`, shape ``(n_lags, n_z, n_y)``."""
        h = dft(self.T_hat, "inverse", axis=0) / self.dt
        order = np.argsort(lag_indices(self.n_freq))
        return h[order]

    @property
    def taps(self) -> np.ndarray:
        """Discrete impulse response ``T(tau) dt`` on :attr:`lags`."""
        return self.kernels * self.dt

    def tap(self, lag: int) -> np.ndarray:
        return self.taps[int(np.searchsorted(self.lags, lag))]

    @classmethod
    def from_taps(cls, taps: dict, n_freq: int, dt: float = 1.0, causal: bool = False):
        """Build from ``{lag: (n_z, n_y) tap}`` on an ``n_freq`` grid."""
        first = np.atleast_2d(np.asarray(next(iter(taps.values()))))
        h = np.zeros((n_freq, *first.shape), dtype=complex)
        for lag, value in taps.items():
            h[int(lag) % n_freq] += np.atleast_2d(np.asarray(value))
        return cls(angular_frequencies(n_freq, dt), dft(h, axis=0), dt, causal)


def _solve_right(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Batched ``A @ inv(B)``."""
    return np.swapaxes(np.linalg.solve(np.swapaxes(B, 1, 2), np.swapaxes(A, 1, 2)), 1, 2)


def _check_conditioning(M: np.ndarray, frequencies: np.ndarray, what: str) -> None:
    cond = np.linalg.cond(M)
    bad = np.flatnonzero(~(cond < MAX_CONDITION))
    if bad.size:
        k = bad[0]
        raise RegularizationError(
            f"{what} singular at frequency w={frequencies[k]:.6g} (bin {k}, cond={cond[k]:.3e}); "
            "increase the noise level"
        )


def noncausal_wiener(csd: CsdSet, noise=None) -> TransferFunctionSet:
    """``T_hat = S_zy (S_yy + N)^-1`` at every frequency.

    ``noise`` is ``None``, a relative amplitude (see :func:`noise_psd`), a
    constant ``(n_y, n_y)`` density, or a full ``(n_f, n_y, n_y)`` stack.
    """
    M = csd.S_yy + _noise_matrix(csd, noise)
    _check_conditioning(M, csd.frequencies, "S_yy + N")
    T_hat = _solve_right(csd.S_zy, M)
    return TransferFunctionSet(csd.frequencies, T_hat, csd.dt, causal=False)


def causal_part(G: np.ndarray) -> np.ndarray:
    """Additive Wiener-Hopf split: keep lags >= 0 (lag 0 entirely), drop the rest."""
    G = np.asarray(G)
    g = dft(G, "inverse", axis=0)
    g[lag_indices(G.shape[0]) < 0] = 0
    return dft(g, axis=0)


def _scalar_factor(S: np.ndarray) -> np.ndarray:
    # cepstral method: fold the log-spectrum onto non-negative quefrencies
    n = S.shape[0]
    c = dft(np.log(S.real), "inverse")
    c[lag_indices(n) < 0] = 0
    c[0] *= 0.5
    if n % 2 == 0:
        c[n // 2] *= 0.5
    return np.exp(dft(c))


def _lower_lag0(psi: np.ndarray) -> np.ndarray:
    """Rotate ``psi`` on the right so its lag-0 coefficient is lower triangular, positive diagonal."""
    psi0 = dft(psi, "inverse", axis=0)[0]
    Q, R = np.linalg.qr(psi0.conj().T)
    phases = np.diag(R) / np.abs(np.diag(R))
    Q = Q * phases  # now R has a positive real diagonal
    return psi @ Q


@dataclass
class Factorization:
    factor: np.ndarray
    residual: float
    iterations: int
    ridge: float


def factor_residual(factor: np.ndarray, S: np.ndarray) -> float:
    """``max_w ||S+ S+^H - S|| / ||S||`` in Frobenius norm."""
    if factor.ndim == 1:
        recon = np.abs(factor) ** 2
        return float(np.max(np.abs(recon - S) / np.abs(S)))
    recon = factor @ np.swapaxes(factor.conj(), 1, 2)
    num = np.linalg.norm(recon - S, axis=(1, 2))
    den = np.linalg.norm(S, axis=(1, 2))
    return float(np.max(num / den))


def spectral_factorize(
    S, max_iter: int = 500, tol: float = 1e-10, ridge: bool = True, full_output: bool = False
):
    """Minimum-phase factor ``S+`` with ``S = S+ S+^H`` and ``S+`` causal.

    Scalar spectra (shape ``(n_f,)`` or ``(n_f, 1, 1)``) use the cepstral
    method. Matrix spectra use Wilson's fixed-point iteration; the factor is
    normalized so that its lag-0 coefficient is lower triangular with a
    positive diagonal, which makes it unique.

    If the smallest eigenvalue over frequency is below ``1e-8`` times the
    mean of ``trace(S) / n``, that ridge is added to the diagonal first.
    """
    S = np.asarray(S, dtype=complex)
    scalar_input = S.ndim == 1
    M = S[:, None, None] if scalar_input else S
    if M.ndim != 3 or M.shape[1] != M.shape[2]:
        raise ShapeError(f"spectrum must have shape (n_f,) or (n_f, n, n), got {S.shape}")
    n = M.shape[1]
    M = 0.5 * (M + np.swapaxes(M.conj(), 1, 2))
    eps = 1e-8 * float(np.mean(np.real(np.trace(M, axis1=1, axis2=2)))) / n
    added = 0.0
    if ridge and np.min(np.linalg.eigvalsh(M)) < eps:
        M = M + eps * np.eye(n)
        added = eps
    if n == 1:
        psi = _scalar_factor(M[:, 0, 0])[:, None, None]
        it = 0
    else:
        psi, it = _wilson(M, max_iter, tol)
        psi = _lower_lag0(psi)
    residual = factor_residual(psi, M)
    out = psi[:, 0, 0] if scalar_input else psi
    if full_output:
        return Factorization(out, residual, it, added)
    return out


def _wilson(S: np.ndarray, max_iter: int, tol: float) -> tuple[np.ndarray, int]:
    n_f, n, _ = S.shape
    gamma0 = np.real(dft(S, "inverse", axis=0)[0])
    psi = np.broadcast_to(np.linalg.cholesky(0.5 * (gamma0 + gamma0.T)).astype(complex), S.shape).copy()
    eye = np.eye(n)
    step = np.inf
    for it in range(1, max_iter + 1):
        psi_inv = np.linalg.inv(psi)
        g = psi_inv @ S @ np.swapaxes(psi_inv.conj(), 1, 2) + eye
        gl = dft(g, "inverse", axis=0)
        gl[lag_indices(n_f) < 0] = 0
        gl[0] *= 0.5
        new = psi @ dft(gl, axis=0)
        step = np.max(np.abs(new - psi)) / np.max(np.abs(new))
        psi = new
        if step < tol:
            return psi, it
    raise FactorizationError(
        f"Wilson iteration did not converge in {max_iter} steps (last step {step:.3e}, "
        f"residual {factor_residual(psi, S):.3e})"
    )


def causal_wiener(csd: CsdSet, noise=None, **factor_kw) -> TransferFunctionSet:
    """Optimal causal filter ``[S_zy (S+^H)^-1]_+ S+^-1`` with ``S_yy + N = S+ S+^H``."""
    M = csd.S_yy + _noise_matrix(csd, noise)
    _check_conditioning(M, csd.frequencies, "S_yy + N")
    fac = spectral_factorize(M, full_output=True, **factor_kw)
    Sp = fac.factor
    G = _solve_right(csd.S_zy, np.swapaxes(Sp.conj(), 1, 2))
    T_hat = _solve_right(causal_part(G), Sp)
    info = {"factor_residual": fac.residual, "iterations": fac.iterations, "ridge": fac.ridge}
    return TransferFunctionSet(csd.frequencies, T_hat, csd.dt, causal=True, info=info)


def negative_lag_ratio(tf: TransferFunctionSet) -> float:
    """Max-abs of negative-lag kernels relative to the max-abs of all kernels."""
    k = np.abs(tf.kernels)
    neg = k[tf.lags < 0]
    return float(neg.max() / k.max()) if neg.size else 0.0


def apply_filter(tf: TransferFunctionSet, y, L: int, start: int | None = None) -> np.ndarray:
    """Discrete convolution ``z(t) = sum_tau T(tau) y(t - tau) dt`` for ``t >= start``.

    Causal filters use lags ``0..L``; non-causal ones ``-L..L`` with samples
    past the end of ``y`` treated as unavailable (zero contribution).

    Returns
    -------
    ndarray, shape (n_z, T - start)
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    T = y.shape[1]
    start = L if start is None else start
    if start < L:
        raise WarmupError(f"output at t={start} precedes the {L}-sample warm-up window")
    if start > T:
        raise ShapeError(f"start {start} beyond signal length {T}")
    lags = tf.lags
    max_lag = lags.max() if tf.causal else min(lags.max(), -lags.min())
    if L > max_lag:
        raise ValueError(f"history L={L} exceeds available kernel lags ({max_lag})")
    taps = np.real(tf.taps)
    lo = 0 if tf.causal else -L
    n_z = taps.shape[1]
    t = np.arange(start, T)
    z = np.zeros((n_z, t.size))
    for lag in range(lo, L + 1):
        h = taps[np.searchsorted(lags, lag)]
        src = t - lag
        ok = src < T
        z[:, ok] += h @ y[:, src[ok]]
    return z


def analytic_mse(tf: TransferFunctionSet, S_zz, S_zy, S_yy) -> np.ndarray:
    """Per-target MSE ``(1/2pi) int diag(S_zz - T S_zy^H - S_zy T^H + T S_yy T^H) dw``.

    ``S_yy`` must be the density of the measurements the filter sees
    (including noise). Evaluated as a Riemann sum on the filter grid.
    """
    T = tf.T_hat
    TH = np.swapaxes(T.conj(), 1, 2)
    S_yz = np.swapaxes(np.conj(S_zy), 1, 2)
    E = S_zz - T @ S_yz - S_zy @ TH + T @ S_yy @ TH
    return np.real(np.mean(np.diagonal(E, axis1=1, axis2=2), axis=0)) / tf.dt


def one_sided(frequencies, S):
    """Fold a two-sided density onto ``w >= 0`` for display (doubles interior bins)."""
    frequencies = np.asarray(frequencies)
    S = np.asarray(S)
    n = frequencies.size
    keep = np.arange(n // 2 + 1)
    out = S[keep].copy()
    out[1 : (n + 1) // 2] *= 2
    return np.abs(frequencies[keep]), out
