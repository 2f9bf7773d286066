"""Dense third-order tensors, Tucker factors and group thresholding.

Storage convention
------------------
A :class:`Tensor3` of dims ``(d1, d2, d3)`` keeps its entries in a single
column-major buffer: entry ``(i, j, k)`` (0-based) lives at offset
``k*d1*d2 + j*d1 + i``.  Frontal slice ``k`` is therefore a contiguous
``d1*d2`` block and the mode-1 unfolding ``(B_1, ..., B_d3)`` is a reshape
of the buffer with no copy.

Unfoldings follow the block layout throughout:

* mode 1: ``d1 x (d2*d3)``, column ``k*d2 + j`` holds fibre ``[:, j, k]``;
* mode 2: ``d2 x (d1*d3)``, the transposed frontal slices side by side;
* mode 3: ``d3 x (d1*d2)``, row ``k`` is ``vec`` of frontal slice ``k``.

Lag indices exposed to users (``GroupSupport``) are 1-based, matching the
usual ``A_1, ..., A_T0`` numbering of VAR coefficient matrices.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import ParameterError, ShapeError

__all__ = [
    "Tensor3",
    "TuckerFactors",
    "GroupSupport",
    "matricize",
    "fold",
    "mode_product",
    "reconstruct",
    "group_norms",
    "group_norm_sum",
    "hard_threshold",
    "soft_threshold",
]


def _frozen(arr):
    arr = np.array(arr, dtype=float, order="F", copy=True)
    arr.setflags(write=False)
    return arr


class Tensor3:
    """Immutable dense ``d1 x d2 x d3`` real tensor."""

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=float)
        if arr.ndim != 3:
            raise ShapeError(f"Tensor3 needs a 3-d array, got ndim={arr.ndim}")
        if min(arr.shape) < 1:
            raise ShapeError(f"all dims must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Tensor3 entries must be finite")
        self._data = _frozen(arr)

    @classmethod
    def zeros(cls, dims):
        return cls(np.zeros(dims))

    @classmethod
    def from_linear(cls, data, dims):
        """Build from a flat buffer in the documented column-major layout."""
        data = np.asarray(data, dtype=float).ravel()
        d1, d2, d3 = dims
        if data.size != d1 * d2 * d3:
            raise ShapeError(f"buffer of length {data.size} does not fit dims {dims}")
        return cls(data.reshape((d1, d2, d3), order="F"))

    @classmethod
    def from_slices(cls, slices):
        """Stack frontal slices ``B_1, ..., B_d3`` (each ``d1 x d2``)."""
        stack = np.asarray(slices, dtype=float)
        if stack.ndim != 3:
            raise ShapeError("expected a sequence of equally sized matrices")
        return cls(np.moveaxis(stack, 0, 2))

    @property
    def dims(self):
        return self._data.shape

    @property
    def array(self):
        """Read-only ``(d1, d2, d3)`` view."""
        return self._data

    @property
    def linear(self):
        """Read-only flat buffer in storage order."""
        return self._data.ravel(order="F")

    def slices(self):
        """Read-only ``(d3, d1, d2)`` view of the frontal slices."""
        return np.moveaxis(self._data, 2, 0)

    def slice(self, lag):
        """Frontal slice for a 1-based lag index."""
        if not 1 <= lag <= self.dims[2]:
            raise ParameterError(f"lag {lag} outside 1..{self.dims[2]}")
        return self._data[:, :, lag - 1]

    def norm(self):
        return float(np.linalg.norm(self.linear))

    def __add__(self, other):
        return Tensor3(self._data + _as_array(other))

    def __sub__(self, other):
        return Tensor3(self._data - _as_array(other))

    def __mul__(self, scalar):
        return Tensor3(self._data * float(scalar))

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, Tensor3):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self._data, other._data)

    __hash__ = None

    def __repr__(self):
        return f"Tensor3(dims={self.dims})"


def _as_array(t):
    if isinstance(t, Tensor3):
        return t.array
    arr = np.asarray(t, dtype=float)
    if arr.ndim != 3:
        raise ShapeError(f"expected a 3-d tensor, got ndim={arr.ndim}")
    return arr


@dataclass(frozen=True)
class GroupSupport:
    """Sorted 1-based lag indices of the active frontal slices."""

    active: tuple

    def __post_init__(self):
        active = tuple(int(j) for j in self.active)
        if any(j < 1 for j in active):
            raise ParameterError("lag indices are 1-based")
        if any(b <= a for a, b in zip(active, active[1:])):
            raise ParameterError("support indices must be strictly increasing")
        object.__setattr__(self, "active", active)

    @classmethod
    def from_tensor(cls, t):
        """Lags whose frontal slice is not identically zero."""
        return cls(tuple(int(j) + 1 for j in np.flatnonzero(group_norms(t) > 0)))

    def __len__(self):
        return len(self.active)

    def __contains__(self, lag):
        return lag in self.active

    def __iter__(self):
        return iter(self.active)

    def mask(self, t0):
        m = np.zeros(t0, dtype=bool)
        m[[j - 1 for j in self.active]] = True
        return m


@dataclass(frozen=True)
class TuckerFactors:
    """Core ``(r1, r2, T0)`` and loadings ``u1 (N x r1)``, ``u2 (N x r2)``."""

    core: Tensor3
    u1: np.ndarray
    u2: np.ndarray

    def __post_init__(self):
        core = self.core if isinstance(self.core, Tensor3) else Tensor3(self.core)
        u1 = np.array(self.u1, dtype=float)
        u2 = np.array(self.u2, dtype=float)
        if u1.ndim != 2 or u2.ndim != 2:
            raise ShapeError("factor matrices must be 2-d")
        r1, r2, _ = core.dims
        if u1.shape[1] != r1 or u2.shape[1] != r2:
            raise ShapeError(
                f"core dims {core.dims} do not match u1 {u1.shape} / u2 {u2.shape}")
        if u1.shape[0] != u2.shape[0]:
            raise ShapeError("u1 and u2 must have the same number of rows")
        if r1 > u1.shape[0] or r2 > u2.shape[0]:
            raise ShapeError("ranks cannot exceed the series dimension")
        u1.setflags(write=False)
        u2.setflags(write=False)
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "u1", u1)
        object.__setattr__(self, "u2", u2)

    @property
    def n(self):
        return self.u1.shape[0]

    @property
    def ranks(self):
        return self.u1.shape[1], self.u2.shape[1]

    @property
    def t0(self):
        return self.core.dims[2]

    def reconstruct(self):
        return reconstruct(self)


def matricize(t, mode):
    """Unfold ``t`` along ``mode`` (1, 2 or 3) using the block layout."""
    arr = _as_array(t)
    d1, d2, d3 = arr.shape
    if mode == 1:
        return arr.reshape(d1, d2 * d3, order="F")
    if mode == 2:
        return arr.transpose(1, 0, 2).reshape(d2, d1 * d3, order="F")
    if mode == 3:
        return arr.reshape(d1 * d2, d3, order="F").T
    raise ParameterError(f"mode must be 1, 2 or 3, got {mode!r}")


def fold(mat, mode, dims):
    """Inverse of :func:`matricize`."""
    mat = np.asarray(mat, dtype=float)
    d1, d2, d3 = dims
    expected = {1: (d1, d2 * d3), 2: (d2, d1 * d3), 3: (d3, d1 * d2)}
    if mode not in expected:
        raise ParameterError(f"mode must be 1, 2 or 3, got {mode!r}")
    if mat.shape != expected[mode]:
        raise ShapeError(f"mode-{mode} unfolding of {dims} has shape "
                         f"{expected[mode]}, got {mat.shape}")
    if mode == 1:
        arr = mat.reshape((d1, d2, d3), order="F")
    elif mode == 2:
        arr = mat.reshape((d2, d1, d3), order="F").transpose(1, 0, 2)
    else:
        arr = mat.T.reshape((d1, d2, d3), order="F")
    return Tensor3(arr)


def mode_product(t, m, mode):
    """Mode-``mode`` product ``t x_mode m``; ``m`` has shape ``(p, d_mode)``."""
    arr = _as_array(t)
    m = np.asarray(m, dtype=float)
    if mode not in (1, 2, 3):
        raise ParameterError(f"mode must be 1, 2 or 3, got {mode!r}")
    if m.ndim != 2 or m.shape[1] != arr.shape[mode - 1]:
        raise ShapeError(f"matrix {m.shape} not conformable with mode {mode} "
                         f"of tensor {arr.shape}")
    out = np.moveaxis(np.tensordot(m, arr, axes=(1, mode - 1)), 0, mode - 1)
    return Tensor3(out)


def reconstruct(f):
    """``core x_1 u1 x_2 u2``; frontal slice ``j`` equals ``u1 @ G_j @ u2.T``."""
    g = f.core.slices()
    return Tensor3.from_slices(f.u1 @ g @ f.u2.T)


def group_norms(t):
    """Frobenius norm of every frontal slice, in lag order."""
    arr = _as_array(t)
    d1, d2, d3 = arr.shape
    return np.linalg.norm(arr.reshape(d1 * d2, d3, order="F"), axis=0)


def group_norm_sum(t):
    """The lag-group norm: sum of frontal-slice Frobenius norms."""
    return float(group_norms(t).sum())


def top_groups(norms, s):
    """Indices (0-based, sorted) of the ``s`` largest norms.

    Ties go to the smaller index; comparisons are exact.
    """
    order = np.argsort(-np.asarray(norms), kind="stable")
    return np.sort(order[:s])


def hard_threshold(t, s):
    """Keep the ``s`` frontal slices with largest Frobenius norm, zero the rest.

    Returns the thresholded tensor and the kept lags.  Kept slices are
    copied bit-for-bit.
    """
    arr = _as_array(t)
    d3 = arr.shape[2]
    if not isinstance(s, (int, np.integer)) or not 1 <= s <= d3:
        raise ParameterError(f"s must be an integer in 1..{d3}, got {s!r}")
    keep = top_groups(group_norms(arr), int(s))
    out = np.zeros_like(arr)
    out[:, :, keep] = arr[:, :, keep]
    return Tensor3(out), GroupSupport(tuple(int(j) + 1 for j in keep))


def soft_threshold(t, lam):
    """Group soft-thresholding: slice ``B_j`` becomes ``(1 - lam/||B_j||)_+ B_j``."""
    if lam < 0:
        raise ParameterError(f"lambda must be nonnegative, got {lam}")
    arr = _as_array(t)
    if lam == 0:
        return Tensor3(arr)
    norms = group_norms(arr)
    shrink = np.zeros_like(norms)
    live = norms > lam
    shrink[live] = 1.0 - lam / norms[live]
    return Tensor3(arr * shrink[None, None, :])
