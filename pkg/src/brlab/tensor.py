"""
Dense complex tensors and multipartite operators.

Both wrap a read-only ``numpy`` array. Sites are 1-based in public
signatures. A multipartite operator on sites with dimensions (d_1..d_n) is
stored with shape (d_1..d_n, d_1..d_n): row indices first, then column
indices.
"""

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_TOLERANCES
from .errors import InvalidInputError
from .schemas import TensorData


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=np.complex128)
    if not np.all(np.isfinite(out)):
        raise InvalidInputError("tensor entries must be finite")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """A complex tensor with one axis per site."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data))
        if self.data.ndim == 0:
            raise InvalidInputError("a tensor needs at least one site")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def n_sites(self) -> int:
        return self.data.ndim

    def __sub__(self, other: "DenseTensor") -> "DenseTensor":
        return DenseTensor(self.data - other.data)

    def __add__(self, other: "DenseTensor") -> "DenseTensor":
        return DenseTensor(self.data + other.data)

    def __mul__(self, scalar: complex) -> "DenseTensor":
        return DenseTensor(self.data * scalar)

    __rmul__ = __mul__

    def allclose(self, other: "DenseTensor", atol: float = 1e-10) -> bool:
        return self.shape == other.shape and bool(
            np.max(np.abs(self.data - other.data), initial=0.0) <= atol
        )

    def to_data(self) -> TensorData:
        return array_to_data(self.data)

    @classmethod
    def from_data(cls, data: TensorData) -> "DenseTensor":
        return cls(array_from_data(data))


@dataclass(frozen=True, eq=False)
class MultipartiteOperator:
    """An operator on a tensor product of sites."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data))
        if self.data.ndim % 2 or self.data.shape[: self.n_sites] != self.dims:
            raise InvalidInputError(
                "operator axes must be rows then columns of equal dimensions",
                shape=list(self.data.shape),
            )

    @property
    def n_sites(self) -> int:
        return self.data.ndim // 2

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape[self.data.ndim // 2 :]

    def matrix(self) -> np.ndarray:
        size = math.prod(self.dims)
        return self.data.reshape(size, size)

    def trace(self) -> complex:
        return complex(np.trace(self.matrix()))

    @classmethod
    def from_matrix(
        cls, matrix: np.ndarray, dims: Sequence[int]
    ) -> "MultipartiteOperator":
        dims = tuple(dims)
        return cls(np.asarray(matrix).reshape(dims + dims))

    def to_data(self) -> TensorData:
        return array_to_data(self.data)

    @classmethod
    def from_data(cls, data: TensorData) -> "MultipartiteOperator":
        return cls(array_from_data(data))


def array_to_data(array: np.ndarray) -> TensorData:
    flat = np.asarray(array, dtype=np.complex128).ravel()
    im = flat.imag.tolist() if np.any(flat.imag) else []
    return TensorData(shape=list(np.shape(array)), re=flat.real.tolist(), im=im)


def array_from_data(data: TensorData) -> np.ndarray:
    re = np.asarray(data.re, dtype=np.float64)
    im = np.asarray(data.im, dtype=np.float64) if data.im else np.zeros_like(re)
    return (re + 1j * im).reshape(data.shape)


def frobenius_norm(t: DenseTensor | MultipartiteOperator | np.ndarray) -> float:
    data = t.data if isinstance(t, (DenseTensor, MultipartiteOperator)) else np.asarray(t)
    return float(np.linalg.norm(data.ravel()))


def unfold(t: DenseTensor, left_sites: Iterable[int]) -> np.ndarray:
    """Matricize ``t`` with ``left_sites`` (1-based) as row multi-index."""
    left = sorted(set(left_sites))
    n = t.n_sites
    if not left or len(left) == n or left[0] < 1 or left[-1] > n:
        raise InvalidInputError(
            "unfolding needs a nonempty proper subset of sites", left=left, n=n
        )
    right = [s for s in range(1, n + 1) if s not in left]
    axes = [s - 1 for s in left] + [s - 1 for s in right]
    rows = math.prod(t.shape[s - 1] for s in left)
    return np.transpose(t.data, axes).reshape(rows, -1)


def matrix_rank(m: np.ndarray, tol: float = DEFAULT_TOLERANCES.rank) -> int:
    """Number of singular values above ``tol`` times the largest one."""
    if tol <= 0:
        raise InvalidInputError("rank tolerance must be positive", tol=tol)
    s = np.linalg.svd(np.asarray(m), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def hermitian_part(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    return (m + m.conj().T) / 2


def is_hermitian(m: np.ndarray, tol: float = DEFAULT_TOLERANCES.hermitian) -> bool:
    m = np.asarray(m)
    scale = max(1.0, float(np.linalg.norm(m)))
    return bool(np.max(np.abs(m - m.conj().T), initial=0.0) <= tol * scale)


def min_eigenvalue(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(hermitian_part(m))[0])


def is_psd(m: np.ndarray, tol: float = DEFAULT_TOLERANCES.psd) -> bool:
    """True iff the Hermitian matrix ``m`` has lambda_min >= -tol * max(1, |m|)."""
    m = np.asarray(m)
    if not is_hermitian(m):
        return False
    scale = max(1.0, float(np.linalg.norm(m)))
    return min_eigenvalue(m) >= -tol * scale


def lambda_max(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(hermitian_part(m))[-1])


def diag_embed(t: DenseTensor) -> MultipartiteOperator:
    """The multipartite matrix with ``t`` on its diagonal and zeros elsewhere."""
    dims = t.shape
    return MultipartiteOperator.from_matrix(np.diag(t.data.ravel()), dims)


def read_diagonal(rho: MultipartiteOperator) -> DenseTensor:
    """Inverse of :func:`diag_embed` on the diagonal entries."""
    return DenseTensor(np.diagonal(rho.matrix()).reshape(rho.dims))


def product_tensor(vectors: Sequence[np.ndarray]) -> DenseTensor:
    """The elementary tensor v_1 x ... x v_n."""
    out = np.ones((), dtype=np.complex128)
    for v in vectors:
        out = np.multiply.outer(out, np.asarray(v))
    return DenseTensor(out)


def basis_tensor(dims: Sequence[int], index: Sequence[int]) -> DenseTensor:
    out = np.zeros(tuple(dims), dtype=np.complex128)
    out[tuple(index)] = 1.0
    return DenseTensor(out)
