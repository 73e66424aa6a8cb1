"""Validation instruments: gradient-estimate variance, SGD convergence speed,
and the surrogate-vs-optimal total-variation study.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .sampling import expected_squared_norm

RECORD_FIELDS = ("step", "loss", "sampler", "variance_term", "tv_surrogate", "tv_uniform", "episode_return")


@dataclass
class DiagRecord:
    step: int
    loss: float = None
    sampler: str = None
    variance_term: float = None
    tv_surrogate: float = None  # nu(p_hat, p*) on the large batch
    tv_uniform: float = None  # nu(u_LB, p*) on the large batch
    episode_return: float = None

    def __post_init__(self):
        for name in ("tv_surrogate", "tv_uniform"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 2.0 + 1e-12:
                raise ValueError(f"{name}={v} outside [0, 2]")


def variance_term(p, grad_norms):
    """``E_{i~p}[G_i^T G_i]`` for the importance-weighted gradient ``G_i``."""
    return expected_squared_norm(p, grad_norms)


# -- convergence speed ------------------------------------------------------


@dataclass
class LeastSquares:
    """Per-sample loss ``0.5 * (a_i . theta - b_i)^2``; ``theta_star`` minimizes the mean."""

    A: np.ndarray
    b: np.ndarray
    theta_star: np.ndarray = field(init=False)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.theta_star = np.linalg.lstsq(self.A, self.b, rcond=None)[0]

    @classmethod
    def random(cls, n, d, rng, noise=1.0):
        A = rng.normal(size=(n, d)) * rng.uniform(0.2, 3.0, size=(n, 1))
        b = A @ rng.normal(size=d) + noise * rng.normal(size=n)
        return cls(A, b)

    @property
    def n(self):
        return self.A.shape[0]

    def per_sample_gradients(self, theta):
        return (self.A @ theta - self.b)[:, None] * self.A


@dataclass
class ConvergenceSpeed:
    monte_carlo: float
    analytic: float
    std_error: float


def convergence_speed(problem, p, lr, n_trials, rng, theta=None):
    """Monte Carlo and analytic ``S(p) = -E[||theta_{t+1}-theta*||^2 - ||theta_t-theta*||^2]``.

    One SGD step with a single sample ``i ~ p`` and ``G_i = grad l_i / (N p_i)``.
    The analytic value is ``2 lr (theta - theta*)^T E[G] - lr^2 E[G^T G]``.
    """
    p = np.asarray(p, dtype=np.float64)
    theta = problem.theta_star.copy() if theta is None else np.asarray(theta, dtype=np.float64)
    grads = problem.per_sample_gradients(theta)
    n = problem.n
    G = grads / (n * p)[:, None]
    offset = theta - problem.theta_star
    mean_G = p @ G
    second = float(np.sum(p * np.einsum("ij,ij->i", G, G)))
    analytic = 2 * lr * offset @ mean_G - lr**2 * second
    if lr == 0:
        return ConvergenceSpeed(0.0, 0.0, 0.0)
    idx = rng.choice(n, size=n_trials, p=p)
    before = offset @ offset
    after_offsets = offset - lr * G[idx]
    gains = before - np.einsum("ij,ij->i", after_offsets, after_offsets)
    return ConvergenceSpeed(float(gains.mean()), float(analytic), float(gains.std(ddof=1) / math.sqrt(n_trials)))


# -- total-variation study ----------------------------------------------------


@dataclass
class TVStudyConfig:
    bin_edges: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 2.0, 41))
    window_fraction: float = 0.1
    record_period: int = 1

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=np.float64)
        if self.bin_edges[0] > 0.0 or self.bin_edges[-1] < 2.0 or np.any(np.diff(self.bin_edges) <= 0):
            raise ValueError("bin edges must be increasing and cover [0, 2]")
        if not 0 < self.window_fraction <= 1:
            raise ValueError("window_fraction must be in (0, 1]")


@dataclass
class TVWindow:
    name: str
    surrogate_hist: np.ndarray
    uniform_hist: np.ndarray
    mean_surrogate: float
    mean_uniform: float
    p_value: float
    n: int


@dataclass
class TVStudy:
    bin_edges: np.ndarray
    windows: dict

    def table_rows(self):
        rows = []
        for w in self.windows.values():
            for lo, hi, cs, cu in zip(self.bin_edges[:-1], self.bin_edges[1:], w.surrogate_hist, w.uniform_hist):
                rows.append({"window": w.name, "bin_lo": lo, "bin_hi": hi, "surrogate": int(cs), "uniform": int(cu)})
        return rows


def _window(name, tv_s, tv_u, edges):
    hs, _ = np.histogram(tv_s, bins=edges)
    hu, _ = np.histogram(tv_u, bins=edges)
    if len(tv_s) > 0:
        # one-sided: surrogate TVs are stochastically smaller than uniform TVs
        pval = float(stats.mannwhitneyu(tv_s, tv_u, alternative="less").pvalue)
        ms, mu = float(np.mean(tv_s)), float(np.mean(tv_u))
    else:
        pval, ms, mu = float("nan"), float("nan"), float("nan")
    return TVWindow(name, hs, hu, ms, mu, pval, len(tv_s))


def tv_study(records, config=None):
    """Histogram the recorded TVs over all steps and the first/last windows.

    ``records`` are :class:`DiagRecord` objects from a LaBER run with TV
    recording enabled; records without TV values are skipped.
    """
    config = config or TVStudyConfig()
    rows = [r for r in records if r.tv_surrogate is not None and r.tv_uniform is not None]
    rows = rows[:: config.record_period]
    tv_s = np.array([r.tv_surrogate for r in rows])
    tv_u = np.array([r.tv_uniform for r in rows])
    k = max(1, int(round(config.window_fraction * len(rows)))) if rows else 0
    edges = config.bin_edges
    windows = {
        "all": _window("all", tv_s, tv_u, edges),
        "first": _window("first", tv_s[:k], tv_u[:k], edges),
        "last": _window("last", tv_s[len(rows) - k:], tv_u[len(rows) - k:], edges),
    }
    return TVStudy(edges, windows)


# -- export ------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def export(records, path, fmt="csv"):
    """Write records as CSV (header + one row each) or a JSON array of flat objects."""
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RECORD_FIELDS)
            for r in records:
                writer.writerow([_fmt(getattr(r, f)) for f in RECORD_FIELDS])
    elif fmt == "json":
        with open(path, "w") as fh:
            json.dump([asdict(r) for r in records], fh)
            fh.write("\n")
    else:
        raise ValueError(f"unknown export format {fmt!r}")


def _parse(name, text):
    if text == "":
        return None
    if name == "step":
        return int(text)
    if name == "sampler":
        return text
    return float(text)


def read_records(path, fmt="csv"):
    if fmt == "json":
        with open(path) as fh:
            return [DiagRecord(**row) for row in json.load(fh)]
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [DiagRecord(**{k: _parse(k, v) for k, v in row.items()}) for row in reader]
