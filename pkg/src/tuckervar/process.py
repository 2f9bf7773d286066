"""Truncated general linear processes and observed panels.

A :class:`GlpModel` describes

    y_t = sum_i A_i y_{t-i} + eps_t + sum_k M_k eps_{t-k},   eps_t ~ N(0, S)

with finitely many AR matrices ``A_i`` and MA matrices ``M_k``.  Its
VAR(inf) form ``y_t = sum_j A*_j y_{t-j} + eps_t`` and MA(inf) form
``y_t = eps_t + sum_j Psi_j eps_{t-j}`` are available through
:func:`implied_var_coefficients` and :func:`implied_ma_coefficients`.
"""
import csv
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeError, ValidationError

__all__ = [
    "GlpModel",
    "PanelData",
    "ma_to_ar",
    "ar_to_ma",
    "implied_var_coefficients",
    "implied_ma_coefficients",
    "check_stationarity",
    "simulate",
    "truncation_error",
    "haar_orthogonal",
    "DEFAULT_BURN_IN",
]

DEFAULT_BURN_IN = 500
STATIONARITY_MARGIN = 1e-8


def _matrix_list(mats, n, what):
    out = []
    for i, m in enumerate(mats):
        m = np.array(m, dtype=float)
        if m.shape != (n, n):
            raise ShapeError(f"{what}[{i}] has shape {m.shape}, expected {(n, n)}")
        m.setflags(write=False)
        out.append(m)
    return tuple(out)


@dataclass(frozen=True)
class GlpModel:
    """Finite-order VARMA description of a general linear process."""

    n: int
    ar: tuple = ()
    ma: tuple = ()
    noise_cov: np.ndarray = None

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise ValidationError("series dimension must be positive")
        cov = np.eye(n) if self.noise_cov is None else np.array(self.noise_cov, dtype=float)
        if cov.shape != (n, n):
            raise ShapeError(f"noise_cov has shape {cov.shape}, expected {(n, n)}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise ValidationError("noise_cov must be symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ValidationError("noise_cov must be positive definite")
        cov.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "ar", _matrix_list(self.ar, n, "ar"))
        object.__setattr__(self, "ma", _matrix_list(self.ma, n, "ma"))
        object.__setattr__(self, "noise_cov", cov)

    @property
    def p(self):
        return len(self.ar)

    @property
    def q(self):
        return len(self.ma)

    @property
    def is_white_noise(self):
        return not self.ar and not self.ma


@dataclass
class PanelData:
    """An ``N x T`` panel; column ``t`` is ``y_t``.

    ``means`` and ``scales`` record the affine map applied by
    :meth:`standardize`, so that ``raw = values * scales + means`` row-wise.
    """

    values: np.ndarray
    names: list = None
    means: np.ndarray = None
    scales: np.ndarray = None
    standardized: bool = False

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ShapeError("panel values must be an N x T matrix")
        n = self.values.shape[0]
        if self.names is None:
            self.names = [f"y{i + 1}" for i in range(n)]
        self.names = [str(x) for x in self.names]
        if len(self.names) != n:
            raise ShapeError(f"{len(self.names)} names for {n} series")
        self.means = np.zeros(n) if self.means is None else np.asarray(self.means, dtype=float)
        self.scales = np.ones(n) if self.scales is None else np.asarray(self.scales, dtype=float)
        if np.any(self.scales <= 0):
            raise ValidationError("scales must be positive")

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def t_len(self):
        return self.values.shape[1]

    def window(self, stop, start=0):
        """Columns ``start:stop`` as a new panel with the same metadata."""
        return PanelData(self.values[:, start:stop], list(self.names),
                         self.means.copy(), self.scales.copy(), self.standardized)

    def standardize(self):
        """Zero mean, unit variance (ddof=0) per series.

        Idempotent: standardizing twice composes the stored affine maps.
        """
        mu = self.values.mean(axis=1)
        sd = self.values.std(axis=1)
        if np.any(sd == 0):
            bad = [self.names[i] for i in np.flatnonzero(sd == 0)]
            raise ValidationError(f"constant series cannot be standardized: {bad}")
        z = (self.values - mu[:, None]) / sd[:, None]
        return PanelData(z, list(self.names), self.means + self.scales * mu,
                         self.scales * sd, True)

    def destandardize(self):
        raw = self.values * self.scales[:, None] + self.means[:, None]
        return PanelData(raw, list(self.names))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.names)
            for row in self.values.T:
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path):
        """Read a header-plus-rows CSV (one row per time step)."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        rows = [r for r in rows if r]
        if len(rows) < 2:
            raise ValidationError(f"{path}: need a header row and at least one data row")
        names = rows[0]
        data = []
        for lineno, r in enumerate(rows[1:], start=2):
            if len(r) != len(names):
                raise ValidationError(
                    f"{path}:{lineno}: expected {len(names)} fields, got {len(r)}")
            try:
                data.append([float(x) for x in r])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
        values = np.array(data).T
        if not np.all(np.isfinite(values)):
            raise ValidationError(f"{path}: non-finite values")
        return cls(values, names)


def haar_orthogonal(n, rng):
    """Haar-distributed ``n x n`` orthogonal matrix (QR with positive diag(R))."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def _check_horizon(horizon):
    if int(horizon) != horizon or horizon < 1:
        raise ValueError(f"horizon must be a positive integer, got {horizon!r}")
    return int(horizon)


def ma_to_ar(psi, horizon):
    """VAR(inf) matrices ``A_1..A_h`` from MA(inf) matrices ``Psi_1, Psi_2, ...``.

    Uses ``A_j = Psi_j - sum_{k<j} Psi_{j-k} A_k``; ``Psi_j`` past the end of
    ``psi`` count as zero.
    """
    h = _check_horizon(horizon)
    psi = [np.asarray(m, dtype=float) for m in psi]
    if not psi:
        raise ValueError("need at least one MA matrix to infer the dimension")
    q = len(psi)
    a = []
    for j in range(1, h + 1):
        acc = psi[j - 1].copy() if j <= q else np.zeros_like(psi[0])
        for k in range(max(1, j - q), j):
            acc -= psi[j - k - 1] @ a[k - 1]
        a.append(acc)
    return a


def ar_to_ma(a, horizon):
    """MA(inf) matrices ``Psi_1..Psi_h`` from VAR matrices ``A_1, A_2, ...``.

    Uses ``Psi_j = A_j + sum_{k<j} A_k Psi_{j-k}``.
    """
    h = _check_horizon(horizon)
    a = [np.asarray(m, dtype=float) for m in a]
    if not a:
        raise ValueError("need at least one AR matrix to infer the dimension")
    p = len(a)
    psi = []
    for j in range(1, h + 1):
        acc = a[j - 1].copy() if j <= p else np.zeros_like(a[0])
        for k in range(1, min(j, p + 1)):
            acc += a[k - 1] @ psi[j - k - 1]
        psi.append(acc)
    return psi


def implied_ma_coefficients(model, horizon):
    """``Psi_1..Psi_h`` of the model's MA(inf) representation."""
    h = _check_horizon(horizon)
    n = model.n
    psi = []
    for j in range(1, h + 1):
        acc = model.ma[j - 1].copy() if j <= model.q else np.zeros((n, n))
        for i in range(1, min(j, model.p) + 1):
            prev = np.eye(n) if i == j else psi[j - i - 1]
            acc += model.ar[i - 1] @ prev
        psi.append(acc)
    return psi


def implied_var_coefficients(model, horizon):
    """``A*_1..A*_h`` of the model's VAR(inf) representation.

    With AR part ``Phi(z)`` and MA part ``M(z) = I + sum M_k z^k`` the
    VAR(inf) operator is ``M(z)^{-1} Phi(z)``, whose coefficients follow
    ``A_j = Phi_j + M_j - sum_{k=1}^{min(j-1, q)} M_k A_{j-k}``.
    """
    h = _check_horizon(horizon)
    n = model.n
    a = []
    for j in range(1, h + 1):
        acc = model.ar[j - 1].copy() if j <= model.p else np.zeros((n, n))
        if j <= model.q:
            acc += model.ma[j - 1]
        for k in range(1, min(j - 1, model.q) + 1):
            acc -= model.ma[k - 1] @ a[j - k - 1]
        a.append(acc)
    return a


def companion(ar):
    """``NP x NP`` companion matrix of a list of AR matrices."""
    p = len(ar)
    n = ar[0].shape[0]
    c = np.zeros((n * p, n * p))
    c[:n, :] = np.hstack(ar)
    c[n:, :-n] = np.eye(n * (p - 1))
    return c


def check_stationarity(model):
    """Return ``(is_stationary, spectral_radius)`` of the AR companion matrix."""
    if not model.ar:
        return True, 0.0
    radius = float(np.max(np.abs(np.linalg.eigvals(companion(model.ar)))))
    return radius < 1 - STATIONARITY_MARGIN, radius


def simulate(model, t_len, burn_in=DEFAULT_BURN_IN, seed=0, rng=None):
    """Draw ``t_len`` observations after ``burn_in`` steps from a zero start.

    Pass either an integer ``seed`` or a ready ``numpy.random.Generator``.
    """
    if t_len < 1:
        raise ValueError("t_len must be positive")
    if burn_in < 0:
        raise ValueError("burn_in must be nonnegative")
    ok, radius = check_stationarity(model)
    if not ok:
        raise ValidationError(f"model is not stationary (spectral radius {radius:.6g})")
    rng = np.random.default_rng(seed) if rng is None else rng
    n, p, q = model.n, model.p, model.q
    total = t_len + burn_in
    chol = np.linalg.cholesky(model.noise_cov)
    eps = rng.standard_normal((total, n)) @ chol.T
    ar = np.hstack(model.ar) if p else None
    ma = np.hstack(model.ma) if q else None
    y = np.zeros((total, n))
    for t in range(total):
        val = eps[t].copy()
        if p:
            lags = np.zeros(n * p)
            for i in range(1, min(p, t) + 1):
                lags[(i - 1) * n:i * n] = y[t - i]
            val += ar @ lags
        if q:
            lags = np.zeros(n * q)
            for k in range(1, min(q, t) + 1):
                lags[(k - 1) * n:k * n] = eps[t - k]
            val += ma @ lags
        y[t] = val
    return PanelData(y[burn_in:].T)


def _decay_rate(sq_norms):
    """Per-lag geometric decay of Frobenius norms, fitted on the tail."""
    norms = np.sqrt(np.asarray(sq_norms))
    j = np.arange(1, norms.size + 1)
    tail = slice(norms.size // 2, None)
    jj, nn = j[tail], norms[tail]
    live = nn > 1e-300
    if live.sum() < 2:
        return 0.0
    slope = np.polyfit(jj[live], np.log(nn[live]), 1)[0]
    return float(math.exp(slope))


def truncation_error(model, t0, horizon=None):
    """Squared Frobenius mass of VAR(inf) coefficients beyond lag ``t0``.

    Sums ``||A*_j||_F^2`` for ``t0 < j <= horizon`` and adds a geometric
    bound for the remaining tail when the coefficients decay.  The default
    horizon is ``t0 + 60/|log rho|`` with ``rho`` the fitted decay rate.
    """
    t0 = int(t0)
    if t0 < 1:
        raise ValueError("t0 must be positive")
    if model.q == 0:
        # finite VAR: exact
        return float(sum(np.sum(a * a) for a in model.ar[t0:]))
    probe_len = 2 * (model.p + model.q) + 60
    probe = [float(np.sum(a * a)) for a in implied_var_coefficients(model, probe_len)]
    rho = _decay_rate(probe)
    if horizon is None:
        if rho <= 0:
            horizon = max(t0, probe_len)
        elif rho >= 1:
            raise ValidationError("VAR(inf) coefficients do not decay; "
                                  "pass an explicit horizon")
        else:
            horizon = t0 + math.ceil(60 / abs(math.log(rho)))
    horizon = max(int(horizon), t0)
    coefs = implied_var_coefficients(model, max(horizon, 1))
    sq = np.array([np.sum(a * a) for a in coefs])
    total = float(sq[t0:horizon].sum())
    if 0 < rho < 1:
        total += float(sq[horizon - 1] * rho ** 2 / (1 - rho ** 2))
    return total
