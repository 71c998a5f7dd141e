"""Driver/evaluator workflow: datasets, presets, fit-apply and evaluation.

A dataset container holds the training data, the test inputs a method may
see, and the withheld test truth. ``fit_apply`` reads only the first two
and produces a :class:`ResultsFile`; ``evaluate`` compares results with
the truth and produces a :class:`MetricsFile`.
"""

from __future__ import annotations

import copy
import csv
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import synthetic
from .compression import PodBasis, compression_ratio, pod_decode, pod_encode, pod_fit, root_nmse, timing_ratio
from .dataio import MetricsFile, ResultsFile, read_container, validate_results, write_container
from .errors import ConfigError, EvaluationError, SchemaError
from .forecasting import dmd_amplitudes, dmd_fit, dmd_forecast, dmdc_fit, dmdc_forecast, forecast_nmse
from .sensing import SensingConfig, run_sensing_pipeline, sensing_metrics

CHALLENGE_OF_KIND = {
    "low_rank_field": "compression",
    "linear_modal": "forecasting",
    "forced_linear": "forecasting",
    "ar_process": "sensing",
    "causal_fir_pair": "sensing",
}

METHODS = {
    "pod": "compression",
    "dmd": "forecasting",
    "dmdc": "forecasting",
    "lse": "sensing",
    "wiener_causal": "sensing",
    "wiener_noncausal": "sensing",
}

# Mode count of the timing baseline (capped by the training rank).
TIMING_BASELINE_MODES = 512

DEFAULTS = {
    "pod": {"N": 8, "subtract_mean": True},
    "dmd": {"N": 25, "history": 70, "horizon": 30, "amplitudes": "last"},
    "dmdc": {"r": 20, "N": None, "history": 70, "horizon": 130},
    "lse": {"history": 0, "noise_level": 1e-3},
    "wiener_causal": {"history": 200, "noise_level": 1e-3, "block": 400, "overlap": 0.9, "sine_order": 6},
    "wiener_noncausal": {"history": 200, "noise_level": 1e-3, "block": 400, "overlap": 0.9, "sine_order": 6},
}

# Challenge protocols as data. ``generator`` is the desk-scale synthetic
# stand-in for the withheld challenge data.
PRESETS = {
    "compression-pod": {
        "method": "pod",
        "N": 16,
        "subtract_mean": True,
        "generator": {
            "kind": "low_rank_field", "seed": 11, "space_dims": [48, 24], "n_channels": 3,
            "energies": [2.0 ** -i for i in range(24)], "n_train": 240, "n_test": 60,
        },
    },
    "cavity-70-30": {
        "method": "dmd",
        "N": 25,
        "history": 70,
        "horizon": 30,
        "amplitudes": "last",
        "generator": {
            "kind": "linear_modal", "seed": 21, "n_space": 240, "n_sequences": 32,
            "eigenvalues": [[0.99, 0.12], [0.99, -0.12], [0.97, 0.31], [0.97, -0.31],
                            [0.95, 0.55], [0.95, -0.55], [0.9, 0.0]],
            "noise_level": 1e-3,
        },
    },
    "airfoil-70-130": {
        "method": "dmdc",
        "r": 20,
        "history": 70,
        "horizon": 130,
        "generator": {
            "kind": "forced_linear", "seed": 31, "r": 24, "m": 2, "n_space": 200,
            "input": "pitching", "input_frequency": 0.25, "spectral_radius": 0.95,
            "n_train_sequences": 4, "n_steps": 400, "n_sequences": 8,
        },
    },
    "jet-sensing-200": {
        "method": "wiener_causal",
        "history": 200,
        "noise_level": 1e-3,
        "block": 400,
        "overlap": 0.9,
        "sine_order": 6,
        "generator": {
            "kind": "causal_fir_pair", "seed": 41, "a": 0.7,
            "kernels": [[0.2, 0.5, 0.3], [0.0, 0.0, 0.4, 0.6, 0.2], [1.0], [0.1, -0.4, 0.8, 0.1]],
            "anticausal": [[0.2], [0.0], [0.0], [0.3, 0.1]],
            "n_train": 8000, "n_test": 2000,
        },
    },
    "boundary-layer-lse": {
        "method": "lse",
        "history": 0,
        "noise_level": 1e-3,
        "generator": {
            "kind": "causal_fir_pair", "seed": 51, "a": 0.5,
            "kernels": [[0.8, 0.3], [0.4], [0.1, 0.6]], "n_train": 1000, "n_test": 250,
        },
    },
}


def expand_config(preset: str | None = None, config: dict | None = None, overrides: dict | None = None) -> dict:
    """Merge method defaults, a preset, a config document and flag overrides (last wins)."""
    merged: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {', '.join(PRESETS)}")
        merged.update(copy.deepcopy(PRESETS[preset]))
        merged["preset"] = preset
    for src in (config or {}, {k: v for k, v in (overrides or {}).items() if v is not None}):
        merged.update(copy.deepcopy(src))
    method = merged.get("method")
    if method not in METHODS:
        raise ConfigError(f"unknown or missing method {method!r}; choose from {', '.join(METHODS)}")
    full = dict(DEFAULTS[method])
    full.update(merged)
    full["challenge"] = METHODS[method]
    return full


# -- datasets -----------------------------------------------------------------


def _seq(arrs) -> np.ndarray:
    return np.ascontiguousarray(np.stack(arrs))


def build_dataset(gen: dict) -> tuple[dict, dict]:
    """Arrays and metadata of a dataset container for a generator document."""
    cfg = synthetic.GeneratorConfig.from_dict(copy.deepcopy(gen))
    challenge = CHALLENGE_OF_KIND[cfg.kind]
    p = cfg.params
    arrays: dict[str, np.ndarray] = {}
    if cfg.kind == "low_rank_field":
        n_train = int(p.pop("n_train", 80))
        n_test = int(p.pop("n_test", 20))
        p["n_snapshots"] = n_train + n_test
        field = synthetic.gen_low_rank_field(cfg)
        arrays = {
            "train": field.snapshots.data[:n_train],
            "test": field.snapshots.data[n_train:],
            "dt": np.float64(field.snapshots.dt),
            "true_energies": field.energies,
        }
    elif cfg.kind == "linear_modal":
        n_seq = int(p.pop("n_sequences", 8))
        history = int(p.pop("history", 70))
        horizon = int(p.pop("horizon", 30))
        p["n_pairs"] = history + horizon - 1
        trajs = [synthetic.gen_linear_modal(cfg, s).trajectory.T for s in range(n_seq)]
        arrays = {
            "test_history": _seq([t[:history] for t in trajs]),
            "test_truth": _seq([t[history:] for t in trajs]),
            "dt": np.float64(p.get("dt", 1.0)),
            "true_eigenvalues": synthetic.modal_eigenvalues(cfg),
        }
    elif cfg.kind == "forced_linear":
        n_train = int(p.pop("n_train_sequences", 2))
        n_seq = int(p.pop("n_sequences", 4))
        history = int(p.pop("history", 70))
        horizon = int(p.pop("horizon", 130))
        train = [synthetic.gen_forced_linear(cfg, s) for s in range(n_train)]
        test_cfg = synthetic.GeneratorConfig(cfg.kind, cfg.seed, {**p, "n_steps": history + horizon})
        test = [synthetic.gen_forced_linear(test_cfg, 1000 + s) for s in range(n_seq)]
        arrays = {
            "train_states": _seq([d.states.T for d in train]),
            "train_inputs": _seq([d.inputs for d in train]),
            "test_history": _seq([d.states.T[:history] for d in test]),
            "test_inputs": _seq([d.inputs for d in test]),
            "test_truth": _seq([d.states.T[history : history + horizon] for d in test]),
            "dt": np.float64(p.get("dt", 1.0)),
        }
    elif cfg.kind == "ar_process":
        n_train = int(p.pop("n_train", 8000))
        n_test = int(p.pop("n_test", 2000))
        lead = int(p.pop("lead", 1))
        p["n_samples"] = n_train + n_test + lead
        ar = synthetic.gen_ar_process(cfg)
        y, z = ar.y[:, :-lead], ar.y[:, lead:]
        arrays = _sensing_split(y, z, n_train, ar.dt)
    elif cfg.kind == "causal_fir_pair":
        n_train = int(p.pop("n_train", 8000))
        n_test = int(p.pop("n_test", 2000))
        p["n_samples"] = n_train + n_test
        pair = synthetic.gen_causal_fir_pair(cfg)
        arrays = _sensing_split(pair.y, pair.z, n_train, pair.dt)
        arrays["true_taps"] = pair.taps
        arrays["true_lags"] = pair.lags.astype(np.int64)
    meta = {"kind": "dataset", "challenge_tag": challenge, "generator": gen}
    return arrays, meta


def _sensing_split(y, z, n_train, dt):
    return {
        "train_y": y[:, :n_train],
        "train_z": z[:, :n_train],
        "test_y": y[:, n_train:],
        "test_z": z[:, n_train:],
        "dt": np.float64(dt),
    }


def generate(gen: dict, path) -> None:
    arrays, meta = build_dataset(gen)
    write_container(path, arrays, meta)


def read_dataset(path) -> tuple[dict, dict]:
    arrays, meta = read_container(path, with_meta=True)
    if meta.get("kind") != "dataset":
        raise SchemaError(f"{path} is not a dataset container (kind={meta.get('kind')!r})")
    return arrays, meta


# -- driver -------------------------------------------------------------------


@contextmanager
def single_threaded_blas():
    # parallelism lives at the sequence level only; one BLAS thread per
    # worker keeps every per-sequence result independent of the thread count
    with threadpool_limits(limits=1):
        yield


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def fit_apply(arrays: dict, cfg: dict, threads: int | None = None) -> ResultsFile:
    """Run the configured method on a dataset's training data and test inputs."""
    method = cfg["method"]
    dt = float(arrays.get("dt", 1.0))
    with single_threaded_blas():
        if method == "pod":
            out = _run_pod(arrays, cfg)
        elif method == "dmd":
            out = _run_dmd(arrays, cfg, dt, threads)
        elif method == "dmdc":
            out = _run_dmdc(arrays, cfg, dt, threads)
        else:
            sc = SensingConfig(
                history=int(cfg["history"]),
                noise_level=float(cfg["noise_level"]),
                block=int(cfg.get("block", 400)),
                overlap=float(cfg.get("overlap", 0.9)),
                sine_order=int(cfg.get("sine_order", 6)),
                dt=dt,
            )
            res = run_sensing_pipeline(arrays["train_y"], arrays["train_z"], arrays["test_y"], method, sc)
            out = {"estimates": res.estimates, "warmup_offset": np.int64(res.warmup_offset)}
    results = ResultsFile(METHODS[method], out, method, {k: v for k, v in cfg.items()})
    violations = validate_results(results)
    if violations:
        raise SchemaError("results violate schema: " + "; ".join(violations))
    return results


def _run_pod(arrays, cfg):
    train = np.asarray(arrays["train"])
    test = np.asarray(arrays["test"])
    Qtr = train.reshape(train.shape[0], -1).T
    Qte = test.reshape(test.shape[0], -1).T
    basis = pod_fit(Qtr, int(cfg["N"]), bool(cfg.get("subtract_mean", True)))
    latent, t_enc = _timed(pod_encode, basis, Qte)
    _, t_dec = _timed(pod_decode, basis, latent)
    n_base = min(TIMING_BASELINE_MODES, *Qtr.shape)
    base = pod_fit(Qtr, n_base, bool(cfg.get("subtract_mean", True)))
    base_latent, b_enc = _timed(pod_encode, base, Qte)
    _, b_dec = _timed(pod_decode, base, base_latent)
    return {
        "modes": basis.modes,
        "energies": basis.energies,
        "mean": basis.mean,
        "latent": latent,
        "timings": np.array([t_enc, t_dec, b_enc, b_dec]),
        "timing_baseline_modes": np.int64(n_base),
    }


def _run_dmd(arrays, cfg, dt, threads):
    hist = np.asarray(arrays["test_history"])
    N = int(cfg["N"])
    horizon = int(cfg["horizon"])
    mode = cfg.get("amplitudes", "last")

    def one(s):
        H = hist[s].T
        model = dmd_fit(H[:, :-1], H[:, 1:], N, dt)
        if mode == "last":
            b = dmd_amplitudes(model, H[:, -1])
            return dmd_forecast(model, b, horizon).T
        if mode == "window":
            b = dmd_amplitudes(model, None, window=H)
        elif mode == "first":
            b = dmd_amplitudes(model, H[:, 0])
        else:
            raise ConfigError(f"unknown amplitude mode {mode!r} (last, first, window)")
        M = H.shape[1]
        return dmd_forecast(model, b, M - 1 + horizon)[:, M - 1 :].T

    return {"forecasts": np.stack(_map(one, range(hist.shape[0]), threads))}


def _run_dmdc(arrays, cfg, dt, threads):
    states = np.asarray(arrays["train_states"])
    inputs = np.asarray(arrays["train_inputs"])
    Q1 = np.hstack([s[:-1].T for s in states])
    Q2 = np.hstack([s[1:].T for s in states])
    U = np.hstack([u[:, : s.shape[0] - 1] for s, u in zip(states, inputs)])
    N = cfg.get("N")
    model = dmdc_fit(Q1, Q2, U, int(cfg["r"]), None if N is None else int(N), dt=dt)
    hist = np.asarray(arrays["test_history"])
    test_inputs = np.asarray(arrays["test_inputs"])
    horizon = int(cfg["horizon"])
    M = hist.shape[1]

    def one(s):
        u = test_inputs[s][:, M - 1 : M - 1 + horizon]
        return dmdc_forecast(model, hist[s][-1], u).T

    return {"forecasts": np.stack(_map(one, range(hist.shape[0]), threads))}


# -- evaluator ----------------------------------------------------------------


def evaluate(results: ResultsFile, truth: dict, truth_meta: dict) -> MetricsFile:
    """Challenge metrics from a results file and the withheld truth."""
    tag = results.challenge_tag
    if truth_meta.get("challenge_tag") != tag:
        raise EvaluationError(
            f"results are for {tag!r} but the truth dataset is for {truth_meta.get('challenge_tag')!r}"
        )
    violations = validate_results(results)
    if violations:
        raise SchemaError("results violate schema: " + "; ".join(violations))
    a = results.arrays
    if tag == "compression":
        test = np.asarray(truth["test"])
        Q = test.reshape(test.shape[0], -1).T
        if a["latent"].shape[1] != Q.shape[1] or a["modes"].shape[0] != Q.shape[0]:
            raise EvaluationError("compression results do not match the test snapshot set")
        basis = PodBasis(a["modes"], a["energies"], a["mean"])
        recon = pod_decode(basis, a["latent"])
        t = a.get("timings", np.ones(4))
        metrics = {
            "root_nmse": root_nmse(Q, recon),
            "compression_ratio": compression_ratio(Q.shape[0], basis.n_modes),
            "encode_time_ratio": timing_ratio(t[0], t[2]),
            "decode_time_ratio": timing_ratio(t[1], t[3]),
        }
    elif tag == "forecasting":
        truth_seq = np.asarray(truth["test_truth"])
        fc = a["forecasts"]
        if fc.shape != truth_seq.shape:
            raise EvaluationError(f"forecasts {fc.shape} do not match truth {truth_seq.shape}")
        err = forecast_nmse(truth_seq, fc)
        metrics = {
            "nmse": err.curve,
            "nmse_mean": err.mean,
            "nmse_std": err.std,
            "nmse_per_sequence": err.per_sequence,
        }
    else:
        warm = int(a["warmup_offset"])
        z = np.asarray(truth["test_z"])[:, warm:]
        if a["estimates"].shape != z.shape:
            raise EvaluationError(f"estimates {a['estimates'].shape} do not match truth window {z.shape}")
        metrics = sensing_metrics(z, a["estimates"])
    return MetricsFile(tag, metrics, {"method": results.method_name})


def metrics_rows(report: MetricsFile) -> list[tuple]:
    """Plot-ready rows ``(index, metric, mean, std)``."""
    m = report.metrics
    rows = []
    if report.challenge_tag == "forecasting":
        for k in range(len(m["nmse"])):
            rows.append((k + 1, "nmse", float(m["nmse_mean"][k]), float(m["nmse_std"][k])))
        for k in range(len(m["nmse"])):
            rows.append((k + 1, "nmse_ensemble", float(m["nmse"][k]), 0.0))
    elif report.challenge_tag == "sensing":
        for i, v in enumerate(np.atleast_1d(m["nmse_per_target"])):
            rows.append((i, "nmse", float(v), 0.0))
        rows.append((-1, "nmse_total", float(m["nmse_total"]), 0.0))
    else:
        for name in ("root_nmse", "compression_ratio", "encode_time_ratio", "decode_time_ratio"):
            rows.append((0, name, float(m[name]), 0.0))
    return rows


def write_csv(report: MetricsFile, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "metric", "mean", "std"])
        for row in metrics_rows(report):
            w.writerow([row[0], row[1], repr(row[2]), repr(row[3])])


def evaluate_files(results_path, truth_path, out_path, csv_path=None) -> MetricsFile:
    results = ResultsFile.read(results_path)
    truth, meta = read_dataset(truth_path)
    report = evaluate(results, truth, meta)
    report.write(out_path)
    write_csv(report, csv_path or Path(out_path).with_suffix(".csv"))
    return report
