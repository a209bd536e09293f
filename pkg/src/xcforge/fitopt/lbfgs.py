"""Limited-memory BFGS with a strong-Wolfe line search, and the functional fit driver."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import line_search

from ..constraints.checks import ProtocolError
from ..xcforms.energy import EnergyModel
from ..xcforms.forms import FunctionalForm
from .dataset import Dataset
from .loss import wrmsd, wrmsd_sq_and_grad


@dataclass(frozen=True)
class FitOptions:
    memory: int = 10
    gtol: float = 1e-8
    ftol: float = 1e-12  # relative loss change
    max_iter: int = 500
    c1: float = 1e-4
    c2: float = 0.9
    ls_maxiter: int = 60
    threads: int = 1

    def __post_init__(self):
        if self.memory < 1 or self.max_iter < 0:
            raise ValueError("memory must be >= 1 and max_iter >= 0")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("line search constants need 0 < c1 < c2 < 1")


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    n_eval: int
    reason: str
    history: list[float] = field(default_factory=list)


def _strong_wolfe(fg, x, d, g, f, f_prev, options: FitOptions) -> float | None:
    """scipy's strong-Wolfe search, retried along a rescaled direction when it fails.

    scipy zooms at most ten times, which cannot reach a step many orders of
    magnitude below the first trial on a stiff direction. The retry scales the
    direction to the secant minimizer estimated from the derivative at the
    failed trial step.
    """
    d0 = float(g @ d)
    scale = 1.0
    for attempt in range(4):
        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", message="The line search algorithm")
            # the previous loss sets the first trial step from the expected decrease
            step, *_ = line_search(lambda z: fg(z)[0], lambda z: fg(z)[1], x, scale * d, g, f,
                                   f_prev if attempt == 0 else None,
                                   c1=options.c1, c2=options.c2, maxiter=options.ls_maxiter)
        if step is not None:
            # scipy can accept a step whose loss is NaN (every comparison with NaN is false)
            ft, gt = fg(x + step * scale * d)
            if np.isfinite(ft) and np.all(np.isfinite(gt)) and ft <= f + options.c1 * step * scale * d0:
                return step * scale
        f1, g1 = fg(x + scale * d)
        d1 = float(g1 @ d)
        if np.isfinite(f1) and np.isfinite(d1) and d1 > d0:
            new = scale * d0 / (d0 - d1)
        else:
            new = scale * 1e-3
        if not new > 0 or abs(new - scale) <= 1e-12 * scale:
            break
        scale = new
    return None


def _approx_wolfe(fg, x, d, f, d0, options: FitOptions, eps: float = 1e-6) -> float | None:
    """Gradient-only search for when loss differences sink below rounding noise.

    Brackets a sign change of the directional derivative and refines it by
    safeguarded secant steps. Accepts a step meeting the curvature condition
    whose loss is within ``eps * |f|`` of the start (approximate Wolfe).
    """
    def slope(a):
        fa, ga = fg(x + a * d)
        return fa, float(ga @ d)

    def ok(fa, da):
        return np.isfinite(fa) and fa <= f + eps * abs(f) and abs(da) <= options.c2 * abs(d0)

    lo, d_lo, hi, d_hi = 0.0, d0, None, None
    a = 1.0
    for _ in range(60):  # bracket
        fa, da = slope(a)
        if not (np.isfinite(fa) and np.isfinite(da)):
            hi, d_hi = a, math.inf
            break
        if ok(fa, da):
            return a
        if da >= 0 or fa > f + eps * abs(f):
            hi, d_hi = a, da
            break
        lo, d_lo = a, da
        a *= 10.0
    if hi is None:
        return None
    for _ in range(options.ls_maxiter):
        if math.isfinite(d_hi) and d_hi > d_lo:
            a = lo + (hi - lo) * (-d_lo) / (d_hi - d_lo)
            if not lo + 0.01 * (hi - lo) < a < hi - 0.01 * (hi - lo):
                a = 0.5 * (lo + hi)
        else:
            a = 0.5 * (lo + hi)
        fa, da = slope(a)
        if ok(fa, da):
            return a
        if not (np.isfinite(fa) and np.isfinite(da)) or da >= 0 or fa > f + eps * abs(f):
            hi, d_hi = a, (da if np.isfinite(da) else math.inf)
        else:
            lo, d_lo = a, da
        if hi - lo <= 1e-16 * hi:
            break
    return None


def minimize_lbfgs(fun: Callable[[np.ndarray], tuple[float, np.ndarray]], x0, options: FitOptions = FitOptions(),
                   callback: Callable[[int, float], None] | None = None) -> MinimizeResult:
    """Minimize a smooth function given as ``fun(x) -> (f, grad)``.

    Also the test hook for arbitrary objectives. A failed line search ends the
    run with reason "line_search" and the best point so far.
    """
    x = np.array(x0, dtype=float)
    cache: dict[bytes, tuple[float, np.ndarray]] = {}
    n_eval = 0

    def fg(z):
        nonlocal n_eval
        key = np.asarray(z, dtype=float).tobytes()
        if key not in cache:
            n_eval += 1
            f, g = fun(np.asarray(z, dtype=float))
            if len(cache) >= 4:
                cache.pop(next(iter(cache)))
            cache[key] = (float(f), np.asarray(g, dtype=float))
        return cache[key]

    f, g = fg(x)
    f_prev = None
    history = [f]
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    reason = "max_iter"
    it = 0
    while True:
        if np.linalg.norm(g) < options.gtol:
            reason = "gtol"
            break
        if it >= options.max_iter:
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(s_hist), reversed(y_hist)):
            rho = 1.0 / (y @ s)
            a = rho * (s @ q)
            q -= a * y
            alphas.append((rho, a))
        if s_hist:
            q *= (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
        else:
            q /= max(1.0, float(np.linalg.norm(g)))
        for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
            q += (a - rho * (y @ q)) * s
        d = -q
        if g @ d >= 0:
            s_hist.clear()
            y_hist.clear()
            d = -g / max(1.0, float(np.linalg.norm(g)))
        step = _strong_wolfe(fg, x, d, g, f, f_prev, options)
        approx = False
        if step is None:
            step = _approx_wolfe(fg, x, d, f, float(g @ d), options)
            approx = step is not None
        if step is None:
            if s_hist:  # retry once along steepest descent with a fresh memory
                s_hist.clear()
                y_hist.clear()
                continue
            reason = "line_search"
            break
        x_new = x + step * d
        f_new, g_new = fg(x_new)
        # secant refinement: exact for quadratics, kept only if it also meets strong Wolfe
        d0, d1 = g @ d, g_new @ d
        if d1 != 0.0 and d1 > d0:
            trial = step * d0 / (d0 - d1)
            if np.isfinite(trial) and trial > 0 and trial != step:
                x_try = x + trial * d
                f_try, g_try = fg(x_try)
                if (f_try < f_new and f_try <= f + options.c1 * trial * d0
                        and abs(g_try @ d) <= options.c2 * abs(d0)):
                    step, x_new, f_new, g_new = trial, x_try, f_try, g_try
        s, y = x_new - x, g_new - g
        if y @ s > 1e-12 * (s @ s):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > options.memory:
                s_hist.pop(0)
                y_hist.pop(0)
        rel = abs(f - f_new) / max(abs(f), abs(f_new), 1e-300)
        f_prev = f
        x, f, g = x_new, f_new, g_new
        it += 1
        history.append(f)
        if callback is not None:
            callback(it, f)
        if rel < options.ftol and not approx:
            reason = "ftol"
            break
    return MinimizeResult(x, f, g, it, n_eval, reason, history)


CONVERGED_REASONS = ("gtol", "ftol")


@dataclass
class FitResult:
    params: np.ndarray  # full parameter vector of the fitted form
    loss_history: list[float]  # training WRMSD per iteration, kcal/mol
    converged: bool
    iterations: int
    gradient_norm: float  # of the squared loss at the returned point
    reason: str
    form: FunctionalForm
    val_wrmsd: float | None = None

    @property
    def train_wrmsd(self) -> float:
        return self.loss_history[-1]


def fit(model: EnergyModel, ds: Dataset, options: FitOptions = FitOptions(),
        callback: Callable[[int, float], None] | None = None) -> FitResult:
    """Fit trainable parameters to minimize the training WRMSD (squared internally)."""
    form = model.form
    if form.n_trainable == 0:
        raise ProtocolError("form has no trainable parameters")
    ds.require_splits("train")
    tidx = form.trainable_indices
    base = np.array(form.params, dtype=float)

    def full(x):
        p = base.copy()
        p[tidx] = x
        return p

    def fun(x):
        return wrmsd_sq_and_grad(model, ds, "train", full(x), options.threads)

    cb = None if callback is None else (lambda i, f: callback(i, math.sqrt(max(f, 0.0))))
    res = minimize_lbfgs(fun, form.trainable_vector(), options, cb)
    fitted = form.with_trainable(res.x)
    m = model.with_form(fitted)
    val = wrmsd(m, ds, "val", threads=options.threads) if ds.split("val") else None
    return FitResult(fitted.params.copy(), [math.sqrt(max(f, 0.0)) for f in res.history],
                     res.reason in CONVERGED_REASONS, res.n_iter, float(np.linalg.norm(res.grad)),
                     res.reason, fitted, val)
