from dataclasses import dataclass, field
import numpy as np
from scipy import linalg
from app.config import settings
from app.services.exceptions import InvalidSystem, SingularSystem
from app.services.logging import logger

"""
Linear Model Service for the Normalized Projections Application.

This module holds the overdetermined system Φw = V with positive row weights d and
the two criteria it can be solved under:

    least squares       Σ d_i (φ_iᵀw − V_i)²
    scale invariant     G(w) = Σ d_i (φ_iᵀw − V_i)²/‖φ_i‖²

together with their closed-form minimizers. Weights are stored normalized to sum 1, so
G carries no extra constant factors.
"""

WeightVector = np.ndarray


def as_weight_vector(w, n: int) -> WeightVector:
    """
    Validate and coerce a weight vector.

    Args:
        w: Array-like of length n.
        n (int): Expected number of features.
    Returns:
        WeightVector: Float copy of w.
    Raises:
        InvalidSystem: If w has the wrong length or non-finite entries.
    """
    w = np.array(w, dtype=float).reshape(-1)
    if w.shape != (n,):
        raise InvalidSystem(f"weight vector has length {w.shape[0]}, expected {n}")
    if not np.all(np.isfinite(w)):
        raise InvalidSystem("weight vector has non-finite entries")
    return w


@dataclass(frozen=True, eq=False)
class OverdeterminedSystem:
    """
    Linear system Φw = V with positive row weights.

    Fields:
        Phi (np.ndarray): m×n feature matrix, row i is φ_iᵀ.
        V (np.ndarray): Targets, length m.
        d (np.ndarray, optional): Positive row weights, normalized to sum 1 on construction.
            Uniform when omitted.
    """
    Phi: np.ndarray
    V: np.ndarray
    d: np.ndarray | None = None
    row_norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Phi = np.array(self.Phi, dtype=float)
        if Phi.ndim == 1:
            Phi = Phi.reshape(-1, 1)
        V = np.array(self.V, dtype=float).reshape(-1)
        if Phi.ndim != 2:
            raise InvalidSystem("Phi must be a matrix")
        m, n = Phi.shape
        if not m >= n >= 1:
            raise InvalidSystem(f"need m >= n >= 1, got m={m}, n={n}")
        if V.shape != (m,):
            raise InvalidSystem(f"V has length {V.shape[0]}, expected {m}")
        if not (np.all(np.isfinite(Phi)) and np.all(np.isfinite(V))):
            raise InvalidSystem("system has non-finite entries")
        norms = np.linalg.norm(Phi, axis=1)
        if np.any(norms == 0.0):
            raise InvalidSystem(f"zero feature row at {np.flatnonzero(norms == 0.0).tolist()}")
        d = np.full(m, 1.0 / m) if self.d is None else np.array(self.d, dtype=float).reshape(-1)
        if d.shape != (m,) or not np.all(np.isfinite(d)) or np.any(d <= 0.0):
            raise InvalidSystem("row weights must be m positive finite numbers")
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "d", d / d.sum())
        object.__setattr__(self, "row_norms", norms)

    @property
    def m(self) -> int:
        return self.Phi.shape[0]

    @property
    def n(self) -> int:
        return self.Phi.shape[1]

    def with_row_scaled(self, i: int, c: float) -> "OverdeterminedSystem":
        """Return the system with equation i replaced by (c·φ_i, c·V_i)."""
        Phi, V = self.Phi.copy(), self.V.copy()
        Phi[i] *= c
        V[i] *= c
        return OverdeterminedSystem(Phi, V, self.d)


@dataclass(frozen=True, eq=False)
class NormalizationMatrix:
    """
    Diagonal N with N_ii = 1/‖φ_i‖₂, stored as its diagonal.

    Fields:
        diag (np.ndarray): The m diagonal entries.
    """
    diag: np.ndarray

    @classmethod
    def of(cls, sys: OverdeterminedSystem) -> "NormalizationMatrix":
        return cls(1.0 / sys.row_norms)

    def dense(self) -> np.ndarray:
        return np.diag(self.diag)


def solve_guarded(A: np.ndarray, b: np.ndarray, what: str = "linear system") -> np.ndarray:
    """
    Solve A x = b by LU factorization, refusing ill-conditioned matrices.

    Args:
        A (np.ndarray): Square matrix.
        b (np.ndarray): Right-hand side.
        what (str): Name used in the error message.
    Returns:
        np.ndarray: The solution x.
    Raises:
        SingularSystem: If A is singular or its condition number exceeds settings.CONDITION_LIMIT.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > settings.CONDITION_LIMIT:
        logger.error(f"Refusing to solve {what}: condition number {cond:.3e}")
        raise SingularSystem(f"{what} is singular or ill-conditioned (cond={cond:.3e})")
    try:
        return linalg.lu_solve(linalg.lu_factor(A), np.asarray(b, dtype=float))
    except (linalg.LinAlgError, ValueError) as e:
        logger.error(f"Error solving {what}: {str(e)}")
        raise SingularSystem(str(e)) from e


def _require_full_rank(sys: OverdeterminedSystem):
    rank = np.linalg.matrix_rank(sys.Phi)
    if rank < sys.n:
        logger.error(f"Feature matrix has rank {rank} < n={sys.n}")
        raise SingularSystem(f"rank(Phi) = {rank} < n = {sys.n}")


def hyperplane_distance(sys: OverdeterminedSystem, w: WeightVector, i: int) -> float:
    """
    Signed distance from w to the hyperplane of equation i.

    Args:
        sys (OverdeterminedSystem): The system.
        w (WeightVector): Point.
        i (int): Row index, 0 <= i < m.
    Returns:
        float: (φ_iᵀw − V_i)/‖φ_i‖₂.
    """
    if not 0 <= i < sys.m:
        raise IndexError(f"row {i} out of range for m={sys.m}")
    return float((sys.Phi[i] @ w - sys.V[i]) / sys.row_norms[i])


def hyperplane_distances(sys: OverdeterminedSystem, w: WeightVector) -> np.ndarray:
    """Vector of all signed hyperplane distances δ_i(w)."""
    return (sys.Phi @ w - sys.V) / sys.row_norms


def normalized_error(sys: OverdeterminedSystem, w: WeightVector) -> float:
    """G(w) = Σ d_i δ_i(w)²."""
    return float(sys.d @ hyperplane_distances(sys, w) ** 2)


def least_squares_error(sys: OverdeterminedSystem, w: WeightVector) -> float:
    """Weighted sum of squared residuals Σ d_i (φ_iᵀw − V_i)²."""
    return float(sys.d @ (sys.Phi @ w - sys.V) ** 2)


def least_squares_solution(sys: OverdeterminedSystem) -> WeightVector:
    """
    Weighted least-squares minimizer w^L = (ΦᵀDΦ)⁻¹ΦᵀDV.

    Args:
        sys (OverdeterminedSystem): System of full column rank.
    Returns:
        WeightVector: w^L.
    Raises:
        SingularSystem: If Φ is rank deficient or ΦᵀDΦ is ill-conditioned.
    """
    _require_full_rank(sys)
    weighted = sys.Phi.T * sys.d
    return solve_guarded(weighted @ sys.Phi, weighted @ sys.V, "least-squares normal equations")


def scale_invariant_solution(sys: OverdeterminedSystem) -> WeightVector:
    """
    Minimizer of G: w^M = (ΦᵀNDNΦ)⁻¹ΦᵀNDN V.

    This is the weighted least-squares solution of the row-normalized system
    (NΦ)w = NV, so rescaling any equation by c ≠ 0 leaves it unchanged.

    Args:
        sys (OverdeterminedSystem): System of full column rank.
    Returns:
        WeightVector: w^M.
    Raises:
        SingularSystem: If ΦᵀNDNΦ is singular or ill-conditioned.
    """
    _require_full_rank(sys)
    N = NormalizationMatrix.of(sys).diag
    unit_rows = sys.Phi * N[:, None]
    weighted = unit_rows.T * sys.d
    return solve_guarded(weighted @ unit_rows, weighted @ (sys.V * N), "normalized normal equations")


def normalized_hessian(sys: OverdeterminedSystem) -> np.ndarray:
    """
    H = Σ d_i φ_iφ_iᵀ/‖φ_i‖², half the Hessian of G.

    The batch TP update equals H(w − w*) = ½∇G(w). Eigenvalues of H lie in [0, 1].
    """
    unit_rows = sys.Phi / sys.row_norms[:, None]
    return (unit_rows.T * sys.d) @ unit_rows


def contraction_rate(sys: OverdeterminedSystem) -> float:
    """
    Per-step bound on (G(w_{k+1}) − G(w*))/(G(w_k) − G(w*)) for batch steps with α = 1.

    With e = w − w* a step maps e to (I − H)e, H = normalized_hessian(sys), so each eigendirection of H
    shrinks G − G* by (1 − λ)²; the worst case is the smallest eigenvalue.

    Returns:
        float: (1 − λ_min)², with λ_min the smallest eigenvalue of H.
    """
    lam_min = float(linalg.eigvalsh(normalized_hessian(sys))[0])
    return (1.0 - lam_min) ** 2
