"""
Matrix Lie group kernel.

Concrete compact groups realised inside SO(m) with the Hilbert--Schmidt
geometry <A, B> = tr(A^T B): SO(n) for 2 <= n <= 8 and SU(2) through its real
4x4 embedding (left multiplication by unit quaternions). All elements are
orthogonal matrices, so inverses are transposes throughout.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from itertools import combinations
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from app.config import settings
from app.core.errors import ArgumentError, DomainError

logger = logging.getLogger(__name__)


class GroupFamily(str, Enum):
    SO = "SO"
    SU2 = "SU(2)"


# Left multiplication by 1, i, j, k on H = R^4 in the basis (1, i, j, k).
_QUATERNION_LEFT = np.array([
    np.eye(4),
    [[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]],
    [[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0]],
    [[0, 0, 0, -1], [0, 0, -1, 0], [0, 1, 0, 0], [1, 0, 0, 0]],
], dtype=float)

# Right multiplication by i, j, k; the SU(2) embedding is exactly the
# orthogonal matrices commuting with these.
_QUATERNION_RIGHT = np.array([
    [[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]],
    [[0, 0, -1, 0], [0, 0, 0, -1], [1, 0, 0, 0], [0, 1, 0, 0]],
    [[0, 0, 0, -1], [0, 0, 1, 0], [0, -1, 0, 0], [1, 0, 0, 0]],
], dtype=float)

_SPEC_PATTERN = re.compile(r"^\s*(SO|SU)\s*\(?\s*(\d+)\s*\)?\s*$", re.IGNORECASE)


def _so_basis(n: int) -> np.ndarray:
    """HS-orthonormal basis of so(n), planes (i, j) in lexicographic order.

    The generator for plane (i, j) rotates e_i towards e_j, so for SO(3) the
    first element generates positive rotations about the third axis.
    """
    basis = []
    for i, j in combinations(range(n), 2):
        b = np.zeros((n, n))
        b[j, i] = 1.0
        b[i, j] = -1.0
        basis.append(b / np.sqrt(2.0))
    return np.array(basis)


@dataclass(frozen=True, eq=False)
class LieContext:
    """A concrete compact matrix group with an orthonormal algebra basis."""
    family: GroupFamily
    n: int
    basis: np.ndarray
    tol: float = settings.TOL
    log_radius: float = settings.LOG_RADIUS
    commutant: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0)))

    @classmethod
    def special_orthogonal(cls, n: int, tol: Optional[float] = None,
                           log_radius: Optional[float] = None) -> "LieContext":
        if not 2 <= n <= 8:
            raise ArgumentError(f"SO(n) is supported for 2 <= n <= 8, got n={n}")
        return cls(
            family=GroupFamily.SO,
            n=n,
            basis=_so_basis(n),
            tol=settings.TOL if tol is None else tol,
            log_radius=settings.LOG_RADIUS if log_radius is None else log_radius,
            commutant=np.zeros((0, n, n)),
        )

    @classmethod
    def special_unitary_2(cls, tol: Optional[float] = None,
                          log_radius: Optional[float] = None) -> "LieContext":
        return cls(
            family=GroupFamily.SU2,
            n=2,
            basis=_QUATERNION_LEFT[1:] / 2.0,
            tol=settings.TOL if tol is None else tol,
            log_radius=settings.LOG_RADIUS if log_radius is None else log_radius,
            commutant=_QUATERNION_RIGHT.copy(),
        )

    @classmethod
    def from_spec(cls, spec: str, tol: Optional[float] = None) -> "LieContext":
        """Parse a group spec such as "SO(3)", "so4" or "SU(2)"."""
        match = _SPEC_PATTERN.match(spec or "")
        if not match:
            raise ArgumentError(f"Unrecognised group spec: {spec!r}")
        family, n = match.group(1).upper(), int(match.group(2))
        if family == "SU":
            if n != 2:
                raise ArgumentError(f"Only SU(2) is supported, got SU({n})")
            return cls.special_unitary_2(tol=tol)
        return cls.special_orthogonal(n, tol=tol)

    @property
    def label(self) -> str:
        return "SU(2)" if self.family == GroupFamily.SU2 else f"SO({self.n})"

    @property
    def matrix_size(self) -> int:
        return self.basis.shape[1]

    @property
    def algebra_dim(self) -> int:
        return self.basis.shape[0]

    @cached_property
    def identity(self) -> np.ndarray:
        return np.eye(self.matrix_size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LieContext):
            return NotImplemented
        return self.family == other.family and self.n == other.n

    def __hash__(self) -> int:
        return hash((self.family, self.n))

    def __repr__(self) -> str:
        return f"LieContext({self.label}, d={self.algebra_dim})"

    # Coordinates <-> matrices

    def to_matrix(self, coords) -> np.ndarray:
        return np.einsum("...k,kij->...ij", np.asarray(coords, dtype=float), self.basis)

    def to_coords(self, matrices) -> np.ndarray:
        return np.einsum("...ij,kij->...k", np.asarray(matrices, dtype=float), self.basis)

    def gram(self) -> np.ndarray:
        return np.einsum("aij,bij->ab", self.basis, self.basis)

    # Membership predicates

    def membership_defect(self, g) -> np.ndarray:
        """Largest violation of the group constraints (orthogonality,
        determinant one, commutation with the SU(2) right structure)."""
        g = np.asarray(g, dtype=float)
        gram = np.swapaxes(g, -1, -2) @ g
        defect = np.linalg.norm(gram - self.identity, axis=(-2, -1))
        defect = np.maximum(defect, np.abs(np.linalg.det(g) - 1.0))
        for r in self.commutant:
            defect = np.maximum(defect, np.linalg.norm(g @ r - r @ g, axis=(-2, -1)))
        return defect

    def is_member(self, g, tol: Optional[float] = None) -> bool:
        tol = self.tol if tol is None else tol
        return bool(np.all(self.membership_defect(g) <= tol))

    def is_algebra_member(self, x, tol: Optional[float] = None) -> bool:
        tol = self.tol if tol is None else tol
        x = np.asarray(x, dtype=float)
        ok = np.linalg.norm(x + np.swapaxes(x, -1, -2), axis=(-2, -1)) <= tol
        for r in self.commutant:
            ok &= np.linalg.norm(x @ r - r @ x, axis=(-2, -1)) <= tol
        return bool(np.all(ok))

    def is_orthonormal(self, tol: Optional[float] = None) -> bool:
        tol = self.tol if tol is None else tol
        return bool(np.max(np.abs(self.gram() - np.eye(self.algebra_dim))) <= tol)

    def project_to_group(self, g) -> np.ndarray:
        """Nearest group element; used to repair drift in long products."""
        g = np.asarray(g, dtype=float)
        if self.family == GroupFamily.SU2:
            quat = np.einsum("kij,...ij->...k", _QUATERNION_LEFT, g) / 4.0
            quat /= np.linalg.norm(quat, axis=-1, keepdims=True)
            return np.einsum("...k,kij->...ij", quat, _QUATERNION_LEFT)
        u, _, vt = np.linalg.svd(g)
        return u @ vt


@dataclass(frozen=True, eq=False)
class AlgebraElement:
    """Coordinates of an element of the Lie algebra in the context basis."""
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))

    @classmethod
    def zero(cls, ctx: LieContext) -> "AlgebraElement":
        return cls(np.zeros(ctx.algebra_dim))

    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))

    def matrix(self, ctx: LieContext) -> np.ndarray:
        return ctx.to_matrix(self.coords)

    def __add__(self, other: "AlgebraElement") -> "AlgebraElement":
        return AlgebraElement(self.coords + other.coords)

    def __sub__(self, other: "AlgebraElement") -> "AlgebraElement":
        return AlgebraElement(self.coords - other.coords)

    def __neg__(self) -> "AlgebraElement":
        return AlgebraElement(-self.coords)

    def __mul__(self, scalar: float) -> "AlgebraElement":
        return AlgebraElement(self.coords * float(scalar))

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class GroupElement:
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=float))

    @classmethod
    def identity(cls, ctx: LieContext) -> "GroupElement":
        return cls(ctx.identity.copy())

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        return GroupElement(self.matrix @ other.matrix)

    def inverse(self) -> "GroupElement":
        return GroupElement(self.matrix.T.copy())

    def is_member(self, ctx: LieContext, tol: Optional[float] = None) -> bool:
        return ctx.is_member(self.matrix, tol)


# Batched kernels

def exp_batch(ctx: LieContext, coords) -> np.ndarray:
    """exp of a stack of algebra coordinates (..., d) -> (..., m, m).

    scipy's expm is scaling-and-squaring with a Pade approximant and accepts
    stacked input.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        return linalg.expm(ctx.to_matrix(coords))
    flat = ctx.to_matrix(coords.reshape(-1, ctx.algebra_dim))
    out = linalg.expm(flat) if len(flat) else flat
    return out.reshape(coords.shape[:-1] + (ctx.matrix_size, ctx.matrix_size))


def log_batch(ctx: LieContext, matrices) -> np.ndarray:
    """Principal logarithm of a stack of group elements (..., m, m) -> (..., d).

    For an orthogonal g = exp(X) whose rotation angles are all below pi/2,
    the skew part (g - g^T)/2 is sin(X) in the functional calculus, so X is
    recovered from a Hermitian eigendecomposition. The log radius keeps every
    angle below pi/2.
    """
    g = np.asarray(matrices, dtype=float)
    dist = np.linalg.norm(g - ctx.identity, axis=(-2, -1))
    if np.any(dist >= ctx.log_radius):
        worst = float(np.max(dist))
        raise DomainError(
            f"Group element at HS distance {worst:.4f} from identity is outside "
            f"the principal-log radius {ctx.log_radius}"
        )
    skew = 0.5 * (g - np.swapaxes(g, -1, -2))
    w, v = np.linalg.eigh(1j * skew)
    theta = np.arcsin(np.clip(w, -1.0, 1.0))
    x = -1j * np.einsum("...ik,...k,...jk->...ij", v, theta, v.conj())
    return ctx.to_coords(x.real)


def adjoint_matrices(ctx: LieContext, g) -> np.ndarray:
    """Matrix of Ad_g in the orthonormal basis, for a stack (..., m, m)."""
    g = np.asarray(g, dtype=float)
    d = ctx.algebra_dim
    conj = np.einsum("...ik,bkl,...jl->...bij", g, ctx.basis, g, optimize=True)
    ad_mats = np.einsum("aij,...bij->...ab", ctx.basis, conj, optimize=True)
    exact = np.all(g == ctx.identity, axis=(-2, -1))
    if ad_mats.ndim == 2:
        return np.eye(d) if exact else ad_mats
    ad_mats[exact] = np.eye(d)
    return ad_mats


def haar_batch(ctx: LieContext, rng: np.random.Generator, size: int) -> np.ndarray:
    """`size` independent Haar-distributed elements, shape (size, m, m)."""
    if ctx.family == GroupFamily.SU2:
        quat = rng.standard_normal((size, 4))
        quat /= np.linalg.norm(quat, axis=1, keepdims=True)
        return np.einsum("mk,kij->mij", quat, _QUATERNION_LEFT)

    n = ctx.n
    z = rng.standard_normal((size, n, n))
    q, r = np.linalg.qr(z)
    signs = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    signs[signs == 0] = 1.0
    q = q * signs[:, None, :]
    # Haar on O(n) -> Haar on SO(n): flip one column of the det = -1 half.
    flip = np.linalg.det(q) < 0
    q[flip, :, 0] *= -1.0
    return q


# Single-element operations

def exp_alg(ctx: LieContext, x: AlgebraElement) -> GroupElement:
    return GroupElement(linalg.expm(ctx.to_matrix(x.coords)))


def log_group(ctx: LieContext, g: GroupElement) -> AlgebraElement:
    """Principal logarithm by inverse scaling-and-squaring (scipy.linalg.logm)."""
    dist = float(np.linalg.norm(g.matrix - ctx.identity))
    if dist >= ctx.log_radius:
        raise DomainError(
            f"log_group: ||g - I||_HS = {dist:.4f} exceeds log radius {ctx.log_radius}"
        )
    if np.array_equal(g.matrix, ctx.identity):
        return AlgebraElement.zero(ctx)
    x = np.real(linalg.logm(g.matrix))
    return AlgebraElement(ctx.to_coords(x))


def ad(ctx: LieContext, g: GroupElement, x: AlgebraElement) -> AlgebraElement:
    if np.array_equal(g.matrix, ctx.identity):
        return AlgebraElement(x.coords.copy())
    conj = g.matrix @ ctx.to_matrix(x.coords) @ g.matrix.T
    return AlgebraElement(ctx.to_coords(conj))


def bracket(ctx: LieContext, x: AlgebraElement, y: AlgebraElement) -> AlgebraElement:
    a, b = ctx.to_matrix(x.coords), ctx.to_matrix(y.coords)
    return AlgebraElement(ctx.to_coords(a @ b - b @ a))


def haar_sample(ctx: LieContext, rng: np.random.Generator) -> GroupElement:
    return GroupElement(haar_batch(ctx, rng, 1)[0])


def random_algebra(ctx: LieContext, rng: np.random.Generator, norm: float) -> AlgebraElement:
    """Uniform on the sphere of radius `norm` in coordinate space."""
    if norm < 0:
        raise ArgumentError(f"norm must be non-negative, got {norm}")
    if norm == 0:
        return AlgebraElement.zero(ctx)
    v = rng.standard_normal(ctx.algebra_dim)
    return AlgebraElement(v * (norm / np.linalg.norm(v)))


def non_commuting_partner(ctx: LieContext, y: AlgebraElement,
                          candidates: Optional[Sequence[int]] = None) -> AlgebraElement:
    """First basis element whose bracket with y is non-negligible."""
    indices = range(ctx.algebra_dim) if candidates is None else candidates
    for k in indices:
        z = AlgebraElement(np.eye(ctx.algebra_dim)[k])
        if bracket(ctx, z, y).norm() > ctx.tol:
            return z
    raise ArgumentError(f"{y.coords} is central in the Lie algebra of {ctx.label}")
