from dataclasses import dataclass
import numpy as np
from app.services.exceptions import DimensionMismatch, InvalidSystem
from app.services.logging import logger
from app.services.mdp_sim import check_stochastic

"""
Tensor Service for the Normalized Projections Application.

Dense order-3 tensors and the products used to write the Normalized TD(0) fixed point in
closed form:

    mode transforming    B(i1, i2, ·) = A(i1, i2, ·) T(i1, i2)        (one matrix per fiber)
    slice transforming   B(i1) = A(i1) T(i1)                          (A ⨯̈ T)
    slice contraction    b(i1) = A(i1) t(i1)                          (A ⋊̈ t)
    mode-p product       Kolda–Bader A ×_p M

Modes are numbered 1..3 in the public API, as in the formulas.
"""


@dataclass(frozen=True, eq=False)
class Tensor3:
    """
    Dense order-3 tensor in row-major (i1, i2, i3) order.

    Fields:
        data (np.ndarray): Array of shape (I1, I2, I3) with finite entries.
    """
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 3:
            raise InvalidSystem(f"Tensor3 needs 3 modes, got {data.ndim}")
        if not np.all(np.isfinite(data)):
            raise InvalidSystem("Tensor3 has non-finite entries")
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def slice(self, i1: int) -> np.ndarray:
        """Frontal slice A(i1) as an I2×I3 matrix."""
        return self.data[i1]


@dataclass(frozen=True)
class IndexPermutation:
    """
    Mode permutation written as a product of transpositions.

    Fields:
        transpositions (tuple[tuple[int, int], ...]): Mode swaps over {1, 2, 3}, applied left to right.
    """
    transpositions: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        for pair in self.transpositions:
            a, b = pair
            if a == b or not {a, b} <= {1, 2, 3}:
                raise InvalidSystem(f"invalid transposition {pair}")

    def axes(self) -> list[int]:
        order = [0, 1, 2]
        for a, b in self.transpositions:
            order[a - 1], order[b - 1] = order[b - 1], order[a - 1]
        return order

    def inverse(self) -> "IndexPermutation":
        return IndexPermutation(tuple(reversed(self.transpositions)))


TRANSPOSE = IndexPermutation(((2, 3),))


def _mismatch(message: str):
    logger.error(f"Tensor dimension mismatch: {message}")
    raise DimensionMismatch(message)


def mode_transform_product(A: Tensor3, T: np.ndarray) -> Tensor3 | np.ndarray:
    """
    Mode transforming product: each mode-3 fiber of A times its own matrix.

    Args:
        A (Tensor3): Tensor of dims (I1, I2, I3).
        T (np.ndarray): Matrix family of shape (I1, I2, I3, J), one I3×J matrix per fiber.
    Returns:
        Tensor3 | np.ndarray: Dims (I1, I2, J); for J = 1 the I1×I2 matrix of fiber dot products.
    Raises:
        DimensionMismatch: If T does not hold an I3-row matrix for every fiber.
    """
    T = np.asarray(T, dtype=float)
    if T.ndim != 4 or T.shape[:3] != A.dims:
        _mismatch(f"transformer of shape {T.shape} for tensor of dims {A.dims}")
    out = np.einsum("abk,abkj->abj", A.data, T)
    return out[:, :, 0] if T.shape[3] == 1 else Tensor3(out)


def slice_transform_product(A: Tensor3, T: Tensor3) -> Tensor3:
    """
    Slice transforming product A ⨯̈ T, slice i1 of the result being A(i1) T(i1).

    Args:
        A (Tensor3): Dims (I1, I2, I3).
        T (Tensor3): Dims (I1, I3, J).
    Returns:
        Tensor3: Dims (I1, I2, J).
    Raises:
        DimensionMismatch: If slice counts or inner dimensions differ.
    """
    if T.dims[0] != A.dims[0] or T.dims[1] != A.dims[2]:
        _mismatch(f"slice product of {A.dims} with {T.dims}")
    return Tensor3(np.einsum("aik,akj->aij", A.data, T.data))


def slice_contract_product(A: Tensor3, t: np.ndarray) -> np.ndarray:
    """
    Slice contraction A ⋊̈ t, row i1 of the result being A(i1) t(i1, ·).

    Args:
        A (Tensor3): Dims (I1, I2, I3).
        t (np.ndarray): I1×I3 matrix, one vector per slice.
    Returns:
        np.ndarray: I1×I2 matrix.
    Raises:
        DimensionMismatch: If t is not I1×I3.
    """
    t = np.asarray(t, dtype=float)
    if t.shape != (A.dims[0], A.dims[2]):
        _mismatch(f"contraction of {A.dims} with vectors of shape {t.shape}")
    return np.einsum("aik,ak->ai", A.data, t)


def mode_p_multiply(A: Tensor3 | np.ndarray, M: np.ndarray, p: int) -> Tensor3 | np.ndarray:
    """
    Kolda–Bader mode-p product A ×_p M.

    Args:
        A (Tensor3 | np.ndarray): Order-3 tensor or matrix.
        M (np.ndarray): J×I_p matrix.
        p (int): Mode, 1-based.
    Returns:
        Tensor3 | np.ndarray: Same order as A with mode p resized to J.
    Raises:
        DimensionMismatch: If M's column count differs from the cardinality of mode p.
    """
    data = A.data if isinstance(A, Tensor3) else np.asarray(A, dtype=float)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not 1 <= p <= data.ndim:
        _mismatch(f"mode {p} of an order-{data.ndim} tensor")
    if M.shape[1] != data.shape[p - 1]:
        _mismatch(f"mode-{p} product of shape {data.shape} with matrix {M.shape}")
    out = np.moveaxis(np.tensordot(M, data, axes=(1, p - 1)), 0, p - 1)
    return Tensor3(out) if isinstance(A, Tensor3) else out


def permute(A: Tensor3, perm: IndexPermutation) -> Tensor3:
    """Relocate entries of A by a mode permutation."""
    return Tensor3(np.transpose(A.data, perm.axes()))


def transpose(A: Tensor3) -> Tensor3:
    """Aᵀ, swapping the last two modes."""
    return permute(A, TRANSPOSE)


def build_probability_tensor(P: np.ndarray) -> Tensor3:
    """
    Tensor 𝒫 whose slice s is diag(P_s).

    Args:
        P (np.ndarray): Row-stochastic m×m matrix.
    Returns:
        Tensor3: Dims (m, m, m).
    Raises:
        NotStochastic: If P has a negative entry or a row not summing to 1.
    """
    P = check_stochastic(P)
    m = P.shape[0]
    data = np.zeros((m, m, m))
    idx = np.arange(m)
    data[:, idx, idx] = P
    return Tensor3(data)
