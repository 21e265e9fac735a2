"""Least-squares fitting with a small zoo of models used on spin-physics traces.

The optimizer is :func:`scipy.optimize.least_squares` (trust-region
reflective, so parameter bounds are honored). Each model carries a
deterministic initial-guess heuristic, which makes fits without user
guesses reproducible.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import numpy as np
from scipy.optimize import least_squares

from .errors import ConfigError, NoPeakError, PhysicsDomainError

MAX_ITERATIONS = 500
STEP_TOL = 1e-10


@dataclass(frozen=True)
class ModelSpec:
    name: str
    params: tuple
    func: Callable
    guess: Callable
    lower: tuple = ()
    upper: tuple = ()

    def __call__(self, x, *theta):
        return self.func(np.asarray(x, dtype=float), *theta)

    def bounds(self):
        lo = self.lower or (-np.inf,) * len(self.params)
        hi = self.upper or (np.inf,) * len(self.params)
        return np.array(lo, dtype=float), np.array(hi, dtype=float)


@dataclass
class FitResult:
    model: str
    params: dict
    uncertainties: dict
    residual_norm: float
    converged: bool
    iterations: int
    singular: bool = False
    gradient_norm: float = 0.0
    message: str = ""

    def as_record(self) -> dict:
        return {
            "model": self.model,
            "params": dict(self.params),
            "uncertainties": dict(self.uncertainties),
            "residual_norm": self.residual_norm,
            "converged": self.converged,
            "iterations": self.iterations,
            "singular": self.singular,
            "gradient_norm": self.gradient_norm,
            "message": self.message,
        }


# -- frequency extraction ---------------------------------------------------


def periodogram(xs, ys, pad: int = 64, min_size: int = 1 << 18):
    """Hann-windowed, zero-padded magnitude spectrum of the mean-removed signal."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if len(x) < 8 or len(x) != len(y):
        raise ConfigError("need at least 8 samples with matching x and y")
    dx = np.diff(x)
    if np.any(dx <= 0) or np.ptp(dx) > 1e-6 * abs(dx.mean()):
        raise ConfigError("frequency extraction needs a uniform increasing grid")
    n_fft = 1 << max(int(math.ceil(math.log2(pad * len(y)))), int(math.log2(min_size)))
    spec = np.abs(np.fft.rfft((y - y.mean()) * np.hanning(len(y)), n_fft))
    freqs = np.fft.rfftfreq(n_fft, dx.mean())
    return freqs, spec


def extract_frequency(xs, ys) -> float:
    """Dominant frequency of a uniformly sampled trace.

    The tallest local maximum of the periodogram is refined by a parabola
    through its three bins. Resolution is set by the record length;
    the interpolation typically lands well below one unpadded bin.
    Peaks of equal height resolve to the lower frequency.
    """
    y = np.asarray(ys, dtype=float)
    if np.ptp(y) <= 1e-12 * (1.0 + abs(float(np.mean(y)))):
        raise NoPeakError("signal is flat; no oscillation to extract")
    freqs, spec = periodogram(xs, ys)
    k = np.arange(1, len(spec) - 1)
    peaks = k[(spec[k] > spec[k - 1]) & (spec[k] >= spec[k + 1])]
    if len(peaks) == 0:
        raise NoPeakError("periodogram has no interior peak")
    top = spec[peaks].max()
    best = int(peaks[spec[peaks] >= top * (1 - 1e-9)][0])
    a, b, c = spec[best - 1], spec[best], spec[best + 1]
    den = a - 2 * b + c
    shift = 0.5 * (a - c) / den if den != 0 else 0.0
    return float(freqs[best] + shift * (freqs[1] - freqs[0]))


# -- models -------------------------------------------------------------------


def g2_model(tau, N, a, tau1, tau2):
    """Photon autocorrelation with antibunching and bunching terms; g2(0) = 1 - 1/N."""
    t = np.abs(tau)
    return (1.0 - (1.0 + a) * np.exp(-t / tau1) + a * np.exp(-t / tau2)) / N + (N - 1.0) / N


def _g2_guess(x, y):
    ymin = float(np.min(y))
    N = 1.0 / max(1.0 - ymin, 1e-3)
    N = max(N, 1.0)
    t = np.abs(x)
    order = np.argsort(t)
    ys, ts = y[order], t[order]
    level = ymin + (1.0 - ymin) * (1 - 1 / math.e)
    above = np.nonzero(ys >= level)[0]
    tau1 = float(ts[above[0]]) if len(above) else float(ts[-1] / 10)
    tau1 = max(tau1, (ts[1] - ts[0]) if len(ts) > 1 else 1.0)
    bunch = max(float(np.max(y)) - 1.0, 0.0)
    return [N, max(bunch * 2, 0.05), tau1, 10 * tau1]


def damped_cosine(t, A, f, phase, T, offset, p: float = 1.0):
    return offset + A * np.exp(-((np.abs(t) / T) ** p)) * np.cos(2 * np.pi * f * t + phase)


def damped_squared_cosine(t, A, f, phase, T, offset, p: float = 2.0):
    return offset + A * np.exp(-((np.abs(t) / T) ** p)) * np.cos(2 * np.pi * f * t + phase) ** 2


def _phase_fit(x, y, f):
    # linear least squares for offset + a cos + b sin at fixed f
    m = np.column_stack([np.ones_like(x), np.cos(2 * np.pi * f * x), np.sin(2 * np.pi * f * x)])
    coef, *_ = np.linalg.lstsq(m, y, rcond=None)
    amp = math.hypot(coef[1], coef[2])
    return float(coef[0]), amp, math.atan2(-coef[2], coef[1])


def _cosine_guess(x, y, squared=False):
    span = float(x[-1] - x[0]) if len(x) > 1 else 1.0
    try:
        f = extract_frequency(x, y)
    except (NoPeakError, ConfigError):
        f = 1.0 / span
    if squared:
        off, amp, ph = _phase_fit(x, y, f)
        # cos^2(u) = (1 + cos 2u)/2
        return [2 * amp, f / 2, ph / 2, span, off - amp]
    off, amp, ph = _phase_fit(x, y, f)
    return [amp, f, ph, span, off]


def exponential(t, A, T, offset):
    return offset + A * np.exp(-t / T)


def _exp_guess(x, y):
    n = max(len(y) // 10, 1)
    off = float(np.mean(y[-n:]))
    A = float(y[0] - off)
    target = abs(A) / math.e
    below = np.nonzero(np.abs(y - off) <= target)[0]
    T = float(x[below[0]] - x[0]) if len(below) else float(x[-1] - x[0]) / 3
    return [A, max(T, 1e-12), off]


def saturation(x, S, x_sat):
    return S * x / (x + x_sat)


def _saturation_guess(x, y):
    good = (x > 0) & (y > 0)
    if good.sum() >= 2:
        # 1/y = 1/S + (x_sat/S) / x
        slope, icpt = np.polyfit(1.0 / x[good], 1.0 / y[good], 1)
        if icpt > 0 and slope > 0:
            return [1.0 / icpt, slope / icpt]
    S = float(np.max(y)) * 1.5
    return [S, float(np.median(x))]


def double_lorentzian(f, c1, f1, w1, c2, f2, w2, base):
    l1 = c1 * (w1 / 2) ** 2 / ((f - f1) ** 2 + (w1 / 2) ** 2)
    l2 = c2 * (w2 / 2) ** 2 / ((f - f2) ** 2 + (w2 / 2) ** 2)
    return base - l1 - l2


def _dip(x, y, base, mask):
    k = int(np.argmin(np.where(mask, y, np.inf)))
    depth = base - y[k]
    half = base - depth / 2
    lo = k
    while lo > 0 and y[lo] < half:
        lo -= 1
    hi = k
    while hi < len(y) - 1 and y[hi] < half:
        hi += 1
    w = max(float(x[hi] - x[lo]), float(np.mean(np.diff(x))))
    return k, depth, w


def _lorentz_guess(x, y):
    base = float(np.percentile(y, 90))
    mask = np.ones(len(y), dtype=bool)
    k1, c1, w1 = _dip(x, y, base, mask)
    mask &= np.abs(x - x[k1]) > w1
    k2, c2, w2 = _dip(x, y, base, mask) if mask.any() else (k1, c1 / 2, w1)
    dips = sorted([(x[k1], c1, w1), (x[k2], c2, w2)])
    (f1, c1, w1), (f2, c2, w2) = dips
    return [c1, f1, w1, c2, f2, w2, base]


def line(x, slope, intercept):
    return slope * x + intercept


def _line_guess(x, y):
    return list(np.polyfit(x, y, 1))


def _cosine_spec(p: float, squared: bool) -> ModelSpec:
    fn = damped_squared_cosine if squared else damped_cosine
    name = ("damped_squared_cosine" if squared else "damped_cosine") + ("" if p == (2.0 if squared else 1.0) else f"_p{p:g}")

    def func(t, A, f, phase, T, offset):
        return fn(t, A, f, phase, T, offset, p)

    return ModelSpec(name, ("A", "f", "phase", "T", "offset"), func,
                     lambda x, y: _cosine_guess(x, y, squared),
                     (-np.inf, 0.0, -np.inf, 1e-12, -np.inf), (np.inf, np.inf, np.inf, np.inf, np.inf))


MODELS = {
    "g2": ModelSpec("g2", ("N", "a", "tau1", "tau2"), g2_model, _g2_guess,
                    (1.0, 0.0, 1e-12, 1e-12), (np.inf, np.inf, np.inf, np.inf)),
    "damped_cosine": _cosine_spec(1.0, False),
    "damped_cosine_p2": _cosine_spec(2.0, False),
    "damped_squared_cosine": _cosine_spec(2.0, True),
    "exponential": ModelSpec("exponential", ("A", "T", "offset"), exponential, _exp_guess,
                             (-np.inf, 1e-12, -np.inf), (np.inf, np.inf, np.inf)),
    "saturation": ModelSpec("saturation", ("S", "x_sat"), saturation, _saturation_guess,
                            (-np.inf, 1e-12), (np.inf, np.inf)),
    "double_lorentzian": ModelSpec("double_lorentzian", ("c1", "f1", "w1", "c2", "f2", "w2", "base"),
                                   double_lorentzian, _lorentz_guess,
                                   (-np.inf, -np.inf, 1e-12, -np.inf, -np.inf, 1e-12, -np.inf),
                                   (np.inf,) * 7),
    "line": ModelSpec("line", ("slope", "intercept"), line, _line_guess),
}


def get_model(name: str) -> ModelSpec:
    try:
        return MODELS[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None


def evaluate(name: str, x, **params) -> np.ndarray:
    """Evaluate a zoo model by name, rejecting parameters outside its domain."""
    model = get_model(name)
    missing = set(model.params) - set(params)
    if missing or set(params) - set(model.params):
        raise ConfigError(f"{name} takes parameters {model.params}")
    lo, hi = model.bounds()
    theta = np.array([float(params[n]) for n in model.params])
    if np.any(theta < lo) or np.any(theta > hi):
        raise PhysicsDomainError(f"parameters outside the domain of {name}")
    return model(x, *theta)


def initial_guess(model: ModelSpec, xs, ys) -> dict:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    return dict(zip(model.params, (float(v) for v in model.guess(x, y))))


def fit(model, xs, ys, init: Optional[Mapping[str, float]] = None, sigma=None) -> FitResult:
    """Local least-squares fit of ``model`` to (xs, ys).

    ``init`` overrides any subset of the heuristic starting values.
    Non-convergence and rank-deficient Jacobians are reported through
    flags on the result, never raised.
    """
    if isinstance(model, str):
        model = get_model(model)
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ConfigError("xs and ys must be 1-D arrays of equal length")
    k = len(model.params)
    if len(x) < k:
        raise ConfigError(f"{model.name} has {k} parameters but only {len(x)} points were given")
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, dtype=float)

    start = initial_guess(model, x, y)
    if init:
        unknown = set(init) - set(model.params)
        if unknown:
            raise ConfigError(f"unknown parameters for {model.name}: {sorted(unknown)}")
        start.update({kk: float(v) for kk, v in init.items()})
    lo, hi = model.bounds()
    p0 = np.clip(np.array([start[n] for n in model.params]), lo, hi)
    # keep the start strictly inside the bounds
    edge = np.isfinite(lo) & (p0 <= lo)
    p0[edge] = lo[edge] + 1e-9 * np.maximum(1.0, np.abs(lo[edge]))

    def resid(theta):
        return (model.func(x, *theta) - y) * w

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            res = least_squares(resid, p0, bounds=(lo, hi), method="trf", x_scale="jac",
                                xtol=STEP_TOL, ftol=1e-12, gtol=1e-12, max_nfev=MAX_ITERATIONS)
        except ValueError as exc:
            nan = {n: float("nan") for n in model.params}
            return FitResult(model.name, nan, nan, float("nan"), False, 0, True, float("nan"), str(exc))

    theta = res.x
    J = res.jac
    dof = max(len(y) - k, 1)
    s2 = 2.0 * res.cost / dof
    jtj = J.T @ J
    singular = np.linalg.matrix_rank(jtj, tol=1e-12 * max(np.abs(jtj).max(), 1e-300)) < k
    cov = np.linalg.pinv(jtj) * s2
    err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    converged = bool(res.status > 0 and np.all(np.isfinite(theta)))
    return FitResult(
        model.name,
        dict(zip(model.params, map(float, theta))),
        dict(zip(model.params, map(float, err))),
        float(np.linalg.norm(res.fun)),
        converged,
        int(res.nfev),
        bool(singular),
        float(res.optimality),
        res.message,
    )


def lorentzian_to_zfs(f1: float, f2: float) -> tuple:
    """(D, E) from the two zero-field dip centers: midpoint and half-splitting."""
    lo, hi = sorted((f1, f2))
    return 0.5 * (lo + hi), 0.5 * (hi - lo)


def add_noise(y, rel: float, seed: int = 0, scale: Optional[float] = None) -> np.ndarray:
    """Gaussian noise of standard deviation ``rel * scale`` (default scale: peak-to-peak of y)."""
    y = np.asarray(y, dtype=float)
    s = np.ptp(y) if scale is None else scale
    rng = np.random.default_rng(seed)
    return y + rng.normal(0.0, rel * s, size=y.shape)
