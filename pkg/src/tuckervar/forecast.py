"""Rolling one-step-ahead forecast evaluation.

Origins are 0-based column indices into the panel: at origin ``o`` the model
is trained on columns ``0..o-1`` and forecasts column ``o``.  Only data
before the origin is touched, standardization included, so changing any
value at or after ``o + 1`` cannot change the forecast made at ``o``.
"""
import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import parallel_map
from .estimator import build_design, fit_agd
from .exceptions import DivergenceError, InsufficientDataError, ValidationError
from .tensor import Tensor3

__all__ = ["RollingPlan", "ForecastMetrics", "one_step_forecast", "rolling_evaluate"]


@dataclass(frozen=True)
class RollingPlan:
    first_origin: int
    last_origin: int
    refit_every: int = 1

    def validate(self, t0, t_len):
        if self.refit_every < 0:
            raise ValidationError("refit_every must be >= 0")
        if not t0 < self.first_origin <= self.last_origin < t_len:
            raise ValidationError(
                f"need t0 < first_origin <= last_origin < T, got t0={t0}, "
                f"first_origin={self.first_origin}, last_origin={self.last_origin}, T={t_len}")

    @property
    def origins(self):
        return list(range(self.first_origin, self.last_origin + 1))

    def fit_origin(self, origin):
        """Origin whose fitted model serves the forecast made at ``origin``."""
        if self.refit_every == 0:
            return self.first_origin
        k = (origin - self.first_origin) // self.refit_every
        return self.first_origin + k * self.refit_every


@dataclass
class ForecastMetrics:
    """MSFE is the mean squared error norm, MAFE the mean absolute error sum."""

    msfe: float
    mafe: float
    per_origin_errors: np.ndarray
    origins: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @classmethod
    def from_errors(cls, errors, origins=(), skipped=()):
        errors = np.asarray(errors, dtype=float)
        if errors.size == 0:
            return cls(math.nan, math.nan, np.zeros((0, 0)), list(origins), list(skipped))
        msfe = float(np.mean(np.sum(errors ** 2, axis=1)))
        mafe = float(np.mean(np.sum(np.abs(errors), axis=1)))
        return cls(msfe, mafe, errors, list(origins), list(skipped))

    def to_dict(self):
        return {
            "msfe": self.msfe,
            "mafe": self.mafe,
            "n_origins": len(self.origins),
            "n_skipped": len(self.skipped),
            "origins": list(self.origins),
            "skipped": list(self.skipped),
            "per_origin_errors": self.per_origin_errors.tolist(),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    def to_csv(self, path, **extra):
        row = dict(extra)
        row.update(msfe=repr(self.msfe), mafe=repr(self.mafe),
                   n_origins=len(self.origins), n_skipped=len(self.skipped))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(row))
            writer.writerow(list(row.values()))


def _history(history):
    return history.values if hasattr(history, "values") else np.asarray(history, dtype=float)


def _forecast_from_slices(slices, values, t):
    """``sum_j A_j y_{t-j}`` for a ``(T0, N, N)`` slice stack."""
    t0 = slices.shape[0]
    lags = values[:, t - t0:t][:, ::-1]   # column j-1 holds y_{t-j}
    return np.einsum("jik,kj->i", slices, lags)


def one_step_forecast(f, history, t, t0=None):
    """Predict column ``t`` of ``history`` from columns ``t-1 .. t-T0``.

    ``f`` may be :class:`TuckerFactors` or a coefficient :class:`Tensor3`.
    """
    tensor = f if isinstance(f, Tensor3) else f.reconstruct()
    k = tensor.dims[2]
    if t0 is not None and t0 != k:
        raise ValidationError(f"t0={t0} does not match the model's running order {k}")
    values = _history(history)
    if t < k or values.shape[1] < t:
        raise InsufficientDataError(f"forecast of column {t} needs columns {t - k}..{t - 1}")
    return _forecast_from_slices(tensor.slices(), values, t)


def _fit_window(values, origin, cfg, standardize, init=None):
    """Fit on columns before ``origin``; returns ``(fit, slices, mu, sd)``.

    Constant training series are centred but not scaled.  A window that is
    identically zero after centring carries no signal, so its model is the
    zero tensor and ``fit`` is ``None``.
    """
    train = values[:, :origin]
    n = values.shape[0]
    if standardize:
        mu = train.mean(axis=1)
        sd = train.std(axis=1)
        sd[sd == 0] = 1.0
    else:
        mu = np.zeros(n)
        sd = np.ones(n)
    z = (train - mu[:, None]) / sd[:, None]
    if not np.any(z):
        return None, np.zeros((cfg.t0, n, n)), mu, sd
    fit = fit_agd(build_design(z, cfg.t0), cfg, init=init)
    return fit, fit.tensor().slices(), mu, sd


def rolling_evaluate(data, plan, cfg, standardize=True, original_units=False,
                     warm_start=False, threads=1):
    """One-step-ahead MSFE/MAFE over the origins of ``plan``.

    Each fit is trained on the columns before its origin, standardized with
    that window's means and standard deviations; errors are reported on
    that standardized scale unless ``original_units``.  With ``warm_start``
    every refit starts from the previous fit's factors (sequential);
    otherwise refits are independent and may run on ``threads`` workers.
    Origins whose model diverged are skipped and listed in ``skipped``.
    """
    values = _history(data)
    plan.validate(cfg.t0, values.shape[1])
    fit_origins = sorted({plan.fit_origin(o) for o in plan.origins})

    fits = {}
    if warm_start:
        prev = None
        for o in fit_origins:
            try:
                entry = _fit_window(values, o, cfg, standardize,
                                    None if prev is None else prev.factors)
            except DivergenceError:
                fits[o] = None
                continue
            fits[o] = entry
            prev = entry[0] if entry[0] is not None else prev
    else:
        def job(o):
            try:
                return _fit_window(values, o, cfg, standardize)
            except DivergenceError:
                return None
        fits = dict(zip(fit_origins, parallel_map(job, fit_origins, threads)))

    errors, used, skipped = [], [], []
    for o in plan.origins:
        entry = fits[plan.fit_origin(o)]
        if entry is None:
            skipped.append(o)
            continue
        _, slices, mu, sd = entry
        z = (values[:, o - cfg.t0:o + 1] - mu[:, None]) / sd[:, None]
        pred = _forecast_from_slices(slices, z, cfg.t0)
        err = z[:, cfg.t0] - pred
        if original_units:
            err = err * sd
        errors.append(err)
        used.append(o)
    return ForecastMetrics.from_errors(np.array(errors), used, skipped)
