"""Low-Tucker-rank, group-sparse VAR sieve estimation.

The coefficient tensor ``A`` (``N x N x T0``, frontal slice ``j`` = lag-``j``
matrix) is parameterized as ``G x_1 U1 x_2 U2`` and fitted by alternating
gradient descent on

    L(A) + a/2 (||U1'U1 - b^2 I||_F^2 + ||U2'U2 - b^2 I||_F^2),
    L(A) = ||Y - A_(1) X||_F^2 / (2 T1),

with a group hard-thresholding (or soft-thresholding) projection of the
reconstructed tensor after every gradient step.

Inside the solver tensors are handled as ``(T0, N, N)`` stacks of frontal
slices so the per-lag products become batched matmuls.
"""
import json
import math
from dataclasses import asdict, dataclass, replace
from functools import cached_property

import numpy as np

from ._parallel import parallel_map
from .exceptions import (DivergenceError, InsufficientDataError, ParameterError,
                         SelectionError, ShapeError)
from .process import haar_orthogonal
from .tensor import (GroupSupport, Tensor3, TuckerFactors, fold,
                     top_groups)

__all__ = [
    "FitConfig",
    "FitResult",
    "DesignMatrices",
    "build_design",
    "loss",
    "penalized_loss",
    "grad_full",
    "grad_factors",
    "init_factors",
    "fit_agd",
    "fit_group_lasso_reference",
    "aic",
    "select_aic",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = "tuckervar-fit-v1"
THRESHOLD_MODES = ("hard", "soft", "none")
DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class FitConfig:
    """Solver settings.

    ``step`` is the absolute step size; when ``None`` it is set to
    ``step_scale / lambda_max(X X' / T1)``.  ``threshold`` picks the
    projection applied after each gradient step: ``"hard"`` keeps ``s``
    lags, ``"soft"`` shrinks every lag by ``lam``, ``"none"`` skips it.
    The warm start lasts ``warm_start_iters`` iterations at most; it ends
    early once the unprojected iterate moves by less than ``tol``.
    """

    t0: int
    r1: int
    r2: int
    s: int = None
    reg_a: float = 1.0
    reg_b: float = 1.0
    step: float = None
    step_scale: float = 1.0
    max_iter: int = 2000
    warm_start_iters: int = 1000
    tol: float = 1e-6
    threshold: str = "hard"
    lam: float = None
    seed: int = 0
    backtrack: bool = True

    def __post_init__(self):
        if self.t0 < 1:
            raise ParameterError("t0 must be positive")
        if self.r1 < 1 or self.r2 < 1:
            raise ParameterError("ranks must be positive")
        if self.threshold not in THRESHOLD_MODES:
            raise ParameterError(f"threshold must be one of {THRESHOLD_MODES}, "
                                 f"got {self.threshold!r}")
        if self.threshold == "hard":
            if self.s is None or not 1 <= self.s <= self.t0:
                raise ParameterError(f"hard thresholding needs 1 <= s <= t0={self.t0}, "
                                     f"got s={self.s}")
        if self.threshold == "soft" and (self.lam is None or self.lam < 0):
            raise ParameterError("soft thresholding needs lam >= 0")
        if self.step is not None and self.step <= 0:
            raise ParameterError("step must be positive")
        if self.step_scale <= 0:
            raise ParameterError("step_scale must be positive")
        if self.tol <= 0:
            raise ParameterError("tol must be positive")
        if self.max_iter < 1:
            raise ParameterError("max_iter must be positive")
        if self.warm_start_iters < 0:
            raise ParameterError("warm_start_iters must be nonnegative")
        if self.reg_a < 0 or self.reg_b <= 0:
            raise ParameterError("need reg_a >= 0 and reg_b > 0")

    def check_dimension(self, n):
        if self.r1 > n or self.r2 > n:
            raise ParameterError(f"ranks ({self.r1}, {self.r2}) exceed N={n}")

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class DesignMatrices:
    """Response ``Y`` (``N x T1``) and lag-stacked predictors ``X`` (``N*T0 x T1``).

    Columns run backwards in time: column 0 is ``y_T`` and its lags.
    """

    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if y.ndim != 2 or x.ndim != 2 or y.shape[1] != x.shape[1]:
            raise ShapeError(f"incompatible Y {y.shape} and X {x.shape}")
        if x.shape[0] % y.shape[0]:
            raise ShapeError("X rows must be a multiple of N")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def t0(self):
        return self.x.shape[0] // self.y.shape[0]

    @property
    def t1(self):
        return self.y.shape[1]

    @cached_property
    def sxx(self):
        return self.x @ self.x.T / self.t1

    @cached_property
    def syx(self):
        return self.y @ self.x.T / self.t1

    @cached_property
    def half_yy(self):
        return float(np.sum(self.y * self.y)) / (2 * self.t1)

    @cached_property
    def lipschitz(self):
        """Largest eigenvalue of ``X X' / T1`` (power iteration, fixed start)."""
        m = self.sxx
        v = np.ones(m.shape[0]) / math.sqrt(m.shape[0])
        lam = 0.0
        for _ in range(500):
            w = m @ v
            nrm = np.linalg.norm(w)
            if nrm == 0:
                return 0.0
            v = w / nrm
            new = float(v @ m @ v)
            if abs(new - lam) <= 1e-10 * new:
                lam = new
                break
            lam = new
        # power iteration approaches from below
        return lam * 1.01


def build_design(data, t0):
    """Stack an ``N x T`` panel into ``(Y, X)`` for running order ``t0``.

    ``Y = (y_T, ..., y_{t0+1})`` and ``X = (x_T, ..., x_{t0+1})`` with
    ``x_t = (y_{t-1}', ..., y_{t-t0}')'``.
    """
    values = data.values if hasattr(data, "values") else np.asarray(data, dtype=float)
    t0 = int(t0)
    n, t_len = values.shape
    if t0 < 1:
        raise ParameterError("t0 must be positive")
    if t_len <= t0:
        raise InsufficientDataError(f"need T > t0, got T={t_len}, t0={t0}")
    y = values[:, t0:][:, ::-1]
    x = np.vstack([values[:, t0 - j:t_len - j][:, ::-1] for j in range(1, t0 + 1)])
    return DesignMatrices(np.ascontiguousarray(y), np.ascontiguousarray(x))


# -- stack helpers -----------------------------------------------------------

def _stack_to_unfold(stack):
    t0, n1, n2 = stack.shape
    return stack.transpose(1, 0, 2).reshape(n1, t0 * n2)


def _unfold_to_stack(mat, t0):
    n1 = mat.shape[0]
    return mat.reshape(n1, t0, -1).transpose(1, 0, 2)


def _recon(u1, g, u2):
    return u1 @ g @ u2.T


def _tensor_stack(t, d):
    arr = t.array if isinstance(t, Tensor3) else np.asarray(t, dtype=float)
    if arr.shape != (d.n, d.n, d.t0):
        raise ShapeError(f"tensor dims {arr.shape} do not match design "
                         f"({d.n}, {d.n}, {d.t0})")
    return np.moveaxis(arr, 2, 0)


class _Objective:
    """Loss and factor gradients for a fixed design, picking the cheaper path.

    The moment path forms the full gradient from ``Sxx`` and ``Syx`` at
    ``O(N^3 T0^2)`` per call; the factored path works with the projected
    predictors ``U2' X_j`` at ``O(N T0 T1 r)`` and never builds the full
    gradient.
    """

    def __init__(self, d, r1, r2):
        self.d = d
        n, t0, t1 = d.n, d.t0, d.t1
        self.use_moments = n * n * t0 < 3 * t1 * max(r1, r2)
        if not self.use_moments:
            # predictors with lags side by side: column block j is X_j
            self.xh = d.x.reshape(t0, n, t1).transpose(1, 0, 2).reshape(n, t0 * t1)

    def __call__(self, u1, g, u2):
        """``(loss, gU1, gU2, gG)`` of the unpenalized loss at ``(U1, G, U2)``."""
        d = self.d
        if self.use_moments:
            a1 = _stack_to_unfold(_recon(u1, g, u2))
            a_s = a1 @ d.sxx
            val = d.half_yy - float(np.sum(a1 * d.syx)) + 0.5 * float(np.sum(a_s * a1))
            dstack = _unfold_to_stack(a_s - d.syx, d.t0)
            return (max(val, 0.0),) + _factor_grads(u1, g, u2, dstack)
        t0, t1 = d.t0, d.t1
        r1, r2 = g.shape[1], g.shape[2]
        # z stacks the projected predictors U2' X_j row-block by lag
        z = (u2.T @ self.xh).reshape(r2, t0, t1).transpose(1, 0, 2).reshape(t0 * r2, t1)
        g1 = g.transpose(1, 0, 2).reshape(r1, t0 * r2)
        h = g1 @ z
        resid = d.y - u1 @ h
        val = float(np.sum(resid * resid)) / (2 * t1)
        w = u1.T @ resid
        gu1 = -(resid @ h.T) / t1
        gg = -(w @ z.T).reshape(r1, t0, r2).transpose(1, 0, 2) / t1
        v = (d.x @ w.T).reshape(t0, -1, r1).transpose(1, 0, 2).reshape(-1, t0 * r1)
        gu2 = -(v @ g.reshape(t0 * r1, r2)) / t1
        return val, gu1, gu2, gg


def _penalty(u, b):
    """``||U'U - b^2 I||_F^2`` and ``U (U'U - b^2 I)``.

    The objective weights the squared norm by ``a / 4`` so that the
    gradient term is exactly ``a U (U'U - b^2 I)``.
    """
    m = u.T @ u - b * b * np.eye(u.shape[1])
    return float(np.sum(m * m)), u @ m


# -- public loss / gradients -------------------------------------------------

def loss(a_tensor, d):
    """``||Y - A_(1) X||_F^2 / (2 T1)`` computed from the residual matrix."""
    stack = _tensor_stack(a_tensor, d)
    resid = d.y - _stack_to_unfold(stack) @ d.x
    return float(np.sum(resid * resid)) / (2 * d.t1)


def grad_full(a_tensor, d):
    """Gradient of :func:`loss` with respect to the full tensor."""
    stack = _tensor_stack(a_tensor, d)
    resid = d.y - _stack_to_unfold(stack) @ d.x
    g1 = -(resid @ d.x.T) / d.t1
    return fold(g1, 1, (d.n, d.n, d.t0))


def penalized_loss(f, d, reg_a=1.0, reg_b=1.0):
    """``loss(reconstruct(f)) + (a/4) sum_i ||U_i'U_i - b^2 I||_F^2``."""
    stack = _recon(f.u1, f.core.slices(), f.u2)
    resid = d.y - _stack_to_unfold(stack) @ d.x
    p1, _ = _penalty(f.u1, reg_b)
    p2, _ = _penalty(f.u2, reg_b)
    return float(np.sum(resid * resid)) / (2 * d.t1) + 0.25 * reg_a * (p1 + p2)


def _factor_grads(u1, g, u2, dstack):
    gu1 = np.sum(dstack @ u2 @ g.transpose(0, 2, 1), axis=0)
    gu2 = np.sum(dstack.transpose(0, 2, 1) @ u1 @ g, axis=0)
    gg = u1.T @ dstack @ u2
    return gu1, gu2, gg


def grad_factors(f, d, reg_a=1.0, reg_b=1.0):
    """Blockwise gradients ``(gU1, gU2, gG)`` of the penalized loss.

    ``gU1 = [grad L]_(1) (I kron U2) G_(1)' + a U1 (U1'U1 - b^2 I)``, ``gU2``
    mirrors it through the mode-2 unfolding and ``gG = grad L x_1 U1' x_2 U2'``.
    """
    full = grad_full(reconstruct_stack(f), d)
    dstack = full.slices()
    g = f.core.slices()
    gu1, gu2, gg = _factor_grads(f.u1, g, f.u2, dstack)
    gu1 = gu1 + reg_a * _penalty(f.u1, reg_b)[1]
    gu2 = gu2 + reg_a * _penalty(f.u2, reg_b)[1]
    return gu1, gu2, Tensor3.from_slices(gg)


def reconstruct_stack(f):
    return Tensor3.from_slices(_recon(f.u1, f.core.slices(), f.u2))


def init_factors(n, r1, r2, t0, reg_b=1.0, seed=0):
    """Zero core; loadings are ``reg_b`` times leading columns of a Haar matrix."""
    if not (1 <= r1 <= n and 1 <= r2 <= n and t0 >= 1):
        raise ParameterError(f"invalid dims n={n}, r1={r1}, r2={r2}, t0={t0}")
    q = haar_orthogonal(n, np.random.default_rng(seed))
    return TuckerFactors(Tensor3.zeros((r1, r2, t0)), reg_b * q[:, :r1], reg_b * q[:, :r2])


# -- results -----------------------------------------------------------------

@dataclass
class FitResult:
    factors: TuckerFactors
    support: GroupSupport
    objective_trace: np.ndarray
    grad_norm_trace: np.ndarray
    converged: bool
    iterations_used: int
    step: float = None
    config: FitConfig = None
    step_halvings: int = 0
    divergence_limit: float = None

    def tensor(self):
        return self.factors.reconstruct()

    def to_dict(self):
        f = self.factors
        return {
            "schema": SCHEMA_VERSION,
            "n": f.n,
            "t0": f.t0,
            "ranks": list(f.ranks),
            "core": f.core.array.transpose(2, 0, 1).tolist(),
            "u1": f.u1.tolist(),
            "u2": f.u2.tolist(),
            "support": list(self.support.active),
            "objective_trace": [float(v) for v in self.objective_trace],
            "grad_norm_trace": [float(v) for v in self.grad_norm_trace],
            "converged": bool(self.converged),
            "iterations_used": int(self.iterations_used),
            "step": None if self.step is None else float(self.step),
            "config": None if self.config is None else asdict(self.config),
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema {doc.get('schema')!r}")
        core = Tensor3.from_slices(np.asarray(doc["core"], dtype=float))
        factors = TuckerFactors(core, np.asarray(doc["u1"]), np.asarray(doc["u2"]))
        cfg = doc.get("config")
        return cls(
            factors=factors,
            support=GroupSupport(tuple(doc["support"])),
            objective_trace=np.asarray(doc["objective_trace"], dtype=float),
            grad_norm_trace=np.asarray(doc["grad_norm_trace"], dtype=float),
            converged=bool(doc["converged"]),
            iterations_used=int(doc["iterations_used"]),
            step=doc.get("step"),
            config=FitConfig(**cfg) if cfg else None,
        )

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# -- solver ------------------------------------------------------------------

def fit_agd(d, cfg, init=None, callback=None, *, _resume=None):
    """Alternating gradient descent with group thresholding.

    Each iteration takes simultaneous gradient steps on ``U1``, ``U2`` and
    ``G`` evaluated at the current iterate, reconstructs the tensor, and
    projects it: hard thresholding keeps the ``s`` lags with the largest
    slice norms by zeroing the other core slices.  Projection is skipped
    during the warm start, which lasts ``cfg.warm_start_iters`` iterations
    or until the unprojected iterate's relative change drops below
    ``cfg.tol``; the stopping rule is only checked after it.

    With ``cfg.backtrack`` the step is halved whenever the gradient step
    alone would raise the penalized objective.

    ``callback(k, tensor)`` is called after every iteration with the
    1-based iteration count and the current :class:`Tensor3`.

    ``_resume`` is internal: ``(step, divergence limit, iterations done,
    halvings)`` of an interrupted run, see :func:`fit_from_warm`.
    """
    cfg.check_dimension(d.n)
    if cfg.t0 != d.t0:
        raise ParameterError(f"config t0={cfg.t0} but design has t0={d.t0}")
    if not np.any(d.x):
        raise InsufficientDataError("predictor matrix X is identically zero")
    if init is None:
        init = init_factors(d.n, cfg.r1, cfg.r2, cfg.t0, cfg.reg_b, cfg.seed)
    if init.ranks != (cfg.r1, cfg.r2) or init.t0 != cfg.t0 or init.n != d.n:
        raise ShapeError("initial factors do not match the configuration")

    a, b = cfg.reg_a, cfg.reg_b
    if _resume is None:
        eta = cfg.step if cfg.step is not None else cfg.step_scale / max(d.lipschitz, 1e-300)
        limit, k0, halvings = None, 0, 0
    else:
        eta, limit, k0, halvings = _resume
    objective = _Objective(d, cfg.r1, cfg.r2)

    u1 = np.array(init.u1)
    u2 = np.array(init.u2)
    g = np.array(init.core.slices())
    stack = _recon(u1, g, u2)
    lval, *lgrads = objective(u1, g, u2)
    p1, m1 = _penalty(u1, b)
    p2, m2 = _penalty(u2, b)
    obj = lval + 0.25 * a * (p1 + p2)
    if limit is None:
        limit = DIVERGENCE_FACTOR * obj if obj > 0 else DIVERGENCE_FACTOR

    objs, gnorms = [], []
    converged = False
    thresholded = False
    warm_end = cfg.warm_start_iters
    k = k0
    for k in range(k0 + 1, k0 + cfg.max_iter + 1):
        gu1, gu2, gg = lgrads
        gu1 = gu1 + a * m1
        gu2 = gu2 + a * m2
        gnorms.append(math.sqrt(float(np.sum(gu1 * gu1) + np.sum(gu2 * gu2) + np.sum(gg * gg))))

        while True:
            nu1 = u1 - eta * gu1
            nu2 = u2 - eta * gu2
            ng = g - eta * gg
            nl, *nd = objective(nu1, ng, nu2)
            np1, nm1 = _penalty(nu1, b)
            np2, nm2 = _penalty(nu2, b)
            nobj = nl + 0.25 * a * (np1 + np2)
            if not cfg.backtrack or not math.isfinite(nobj) or nobj <= obj + 1e-12 * abs(obj):
                break
            if halvings >= 60:
                break
            eta *= 0.5
            halvings += 1
        if not math.isfinite(nobj):
            raise DivergenceError(k)
        nstack = _recon(nu1, ng, nu2)

        project = k > warm_end
        if project and cfg.threshold != "none":
            norms = np.sqrt(np.sum(nstack * nstack, axis=(1, 2)))
            if cfg.threshold == "hard":
                scale = np.zeros(cfg.t0)
                scale[top_groups(norms, cfg.s)] = 1.0
            else:
                scale = np.zeros(cfg.t0)
                live = norms > cfg.lam
                scale[live] = 1.0 - cfg.lam / norms[live]
            ng = ng * scale[:, None, None]
            nstack = nstack * scale[:, None, None]
            nl, *nd = objective(nu1, ng, nu2)
            nobj = nl + 0.25 * a * (np1 + np2)
            thresholded = True

        if not math.isfinite(nobj) or nobj > limit:
            raise DivergenceError(k)

        old_norm = math.sqrt(float(np.sum(stack * stack)))
        diff = nstack - stack
        change = math.sqrt(float(np.sum(diff * diff)))
        u1, u2, g, stack = nu1, nu2, ng, nstack
        lgrads, m1, m2, obj = nd, nm1, nm2, nobj
        objs.append(obj)
        if callback is not None:
            callback(k, Tensor3(np.moveaxis(stack, 0, 2)))

        rel = change / old_norm if old_norm > 0 else (0.0 if change == 0 else math.inf)
        if rel < cfg.tol:
            if k > warm_end or cfg.threshold == "none":
                converged = True
                break
            warm_end = k

    if cfg.threshold == "hard" and not thresholded:
        norms = np.sqrt(np.sum(stack * stack, axis=(1, 2)))
        scale = np.zeros(cfg.t0)
        scale[top_groups(norms, cfg.s)] = 1.0
        g = g * scale[:, None, None]

    factors = TuckerFactors(Tensor3(np.moveaxis(g, 0, 2)), u1, u2)
    tensor = factors.reconstruct()
    return FitResult(
        factors=factors,
        support=GroupSupport.from_tensor(tensor),
        objective_trace=np.asarray(objs),
        grad_norm_trace=np.asarray(gnorms),
        converged=converged,
        iterations_used=k,
        step=eta,
        config=cfg,
        step_halvings=halvings,
        divergence_limit=limit,
    )


def warm_fit(d, cfg, init=None):
    """Run only the unthresholded warm start of ``cfg``.

    The result seeds :func:`fit_from_warm` for every sparsity level or
    threshold sharing ``cfg``'s ranks, step settings and seed.
    """
    n_warm = min(cfg.warm_start_iters, cfg.max_iter)
    if n_warm == 0:
        return None
    warm_cfg = replace(cfg, threshold="none", s=None, lam=None, max_iter=n_warm,
                       warm_start_iters=n_warm)
    return fit_agd(d, warm_cfg, init=init)


def fit_from_warm(d, cfg, warm, init=None):
    """Finish ``cfg`` from a :func:`warm_fit` result.

    Returns the same :class:`FitResult` as ``fit_agd(d, cfg, init)``:
    the continuation reuses the warm run's step, divergence limit and
    iteration count, so the arithmetic is identical.
    """
    if warm is None:
        return fit_agd(d, cfg, init=init)
    remaining = cfg.max_iter - warm.iterations_used
    start = replace(cfg, warm_start_iters=0)
    if remaining <= 0 or (cfg.threshold == "none" and warm.converged):
        factors = warm.factors
        if cfg.threshold == "hard":
            g = np.array(factors.core.slices())
            norms = np.sqrt(np.sum(_recon(factors.u1, g, factors.u2) ** 2, axis=(1, 2)))
            scale = np.zeros(cfg.t0)
            scale[top_groups(norms, cfg.s)] = 1.0
            factors = TuckerFactors(Tensor3(np.moveaxis(g * scale[:, None, None], 0, 2)),
                                    factors.u1, factors.u2)
        return replace(warm, factors=factors, support=GroupSupport.from_tensor(
            factors.reconstruct()), config=cfg)
    rest = fit_agd(d, replace(start, max_iter=remaining), init=warm.factors,
                   _resume=(warm.step, warm.divergence_limit, warm.iterations_used,
                            warm.step_halvings))
    return replace(
        rest,
        objective_trace=np.concatenate([warm.objective_trace, rest.objective_trace]),
        grad_norm_trace=np.concatenate([warm.grad_norm_trace, rest.grad_norm_trace]),
        config=cfg,
    )


def fit_group_lasso_reference(d, lam, r1, r2, base_cfg=None):
    """Soft-thresholded variant of :func:`fit_agd`; returns the fitted tensor.

    The result is an approximate stationary point of the rank-constrained
    group Lasso problem, not a certified optimum.
    """
    if lam <= 0:
        raise ParameterError("lambda must be positive")
    if base_cfg is None:
        base_cfg = FitConfig(t0=d.t0, r1=r1, r2=r2, threshold="soft", lam=lam)
    cfg = replace(base_cfg, t0=d.t0, r1=r1, r2=r2, threshold="soft", lam=lam, s=None)
    return fit_agd(d, cfg).tensor()


def aic(d, tensor, r1, r2, s, c):
    """``log(loss) + c [(r1 + r2) N + log T0] s / T1``."""
    val = loss(tensor, d)
    return math.log(max(val, 1e-300)) + c * ((r1 + r2) * d.n + math.log(d.t0)) * s / d.t1


def _aic_row(d, cfg, warm, c):
    row = {"r1": cfg.r1, "r2": cfg.r2, "s": cfg.s}
    try:
        if isinstance(warm, DivergenceError):
            raise warm
        res = fit_from_warm(d, cfg, warm)
    except DivergenceError as exc:
        row.update(aic=math.nan, loss=math.nan, converged=False, diverged=True,
                   iterations=exc.iteration)
        return row, None
    tensor = res.tensor()
    row.update(aic=aic(d, tensor, cfg.r1, cfg.r2, cfg.s, c), loss=loss(tensor, d),
               converged=res.converged, diverged=False, iterations=res.iterations_used)
    return row, res


def _aic_job(args):
    """All sparsity levels for one rank pair, sharing a single warm start."""
    d, base_cfg, (r1, r2), s_list, c = args
    cfg = replace(base_cfg, t0=d.t0, r1=r1, r2=r2, s=None, lam=None, threshold="none")
    try:
        warm = warm_fit(d, cfg)
    except DivergenceError as exc:
        warm = exc
    return [_aic_row(d, replace(cfg, s=s, threshold="hard"), warm, c) for s in s_list]


def select_aic(d, grid, c, base_cfg, threads=1, return_fits=False):
    """Fit every ``(r1, r2, s)`` in ``grid`` and return the AIC minimizer.

    Ties go to smaller ``s``, then smaller ``r1 + r2``, then grid order.
    Returns ``(best_triple, table)`` where ``table`` is a list of row dicts
    in grid order (plus the list of fits when ``return_fits``).
    """
    grid = [tuple(int(v) for v in triple) for triple in grid]
    if not grid:
        raise ParameterError("empty selection grid")
    if c <= 0:
        raise ParameterError("c must be positive")
    for r1, r2, s in grid:
        if not (1 <= r1 <= d.n and 1 <= r2 <= d.n and 1 <= s <= d.t0):
            raise ParameterError(f"grid point {(r1, r2, s)} invalid for N={d.n}, t0={d.t0}")
    pairs = list(dict.fromkeys((r1, r2) for r1, r2, _ in grid))
    jobs = [(d, base_cfg, pair, [t[2] for t in grid if t[:2] == pair], c) for pair in pairs]
    done = {}
    for pair, results in zip(pairs, parallel_map(_aic_job, jobs, threads)):
        s_list = [t[2] for t in grid if t[:2] == pair]
        done.update({pair + (s,): res for s, res in zip(s_list, results)})
    out = [done[t] for t in grid]
    table = [row for row, _ in out]
    live = [(row["aic"], row["s"], row["r1"] + row["r2"], i)
            for i, row in enumerate(table) if not row["diverged"]]
    if not live:
        raise SelectionError("every fit in the grid diverged")
    best = grid[min(live)[3]]
    if return_fits:
        return best, table, [fit for _, fit in out]
    return best, table
