"""The Euclidean space of real symmetric matrices with inner product tr(AB).

Provides the two coordinate systems on that space (flat entry coordinates and
the orthonormal rescaling with sqrt(2) on off-diagonal entries), exact samplers
for the orthogonally invariant Gaussian ensembles, density evaluation for the
GOE case, and a covariance audit that checks every second moment of a sampler
against its analytic value.

Conventions: GOE(m, v) has independent entries with diagonal variance 2v and
off-diagonal variance v.  The two-parameter family (u, v) adds u to every
diagonal-diagonal covariance and is admissible iff v > 0 and m*u + 2v > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from mehtalab.estimation import map_chunks

__all__ = [
    "SymMatrix",
    "EnsembleParams",
    "pair_indices",
    "sym_dim",
    "ell_coords",
    "omega_coords",
    "ell_coords_batch",
    "omega_coords_batch",
    "inner_product",
    "sample_goe",
    "sample_goe_batch",
    "sample_suv",
    "sample_suv_batch",
    "goe_log_density",
    "covariance_reference",
    "covariance_audit",
    "CovarianceAudit",
    "read_matrix",
    "read_matrices",
    "write_matrix",
]

FILE_SYMMETRY_TOL = 1e-9


def sym_dim(m: int) -> int:
    return m * (m + 1) // 2


@lru_cache(maxsize=64)
def pair_indices(m: int) -> tuple[tuple[int, int], ...]:
    """Upper-triangle index pairs (i, j), i <= j, in row-major order."""
    return tuple((i, j) for i in range(m) for j in range(i, m))


@lru_cache(maxsize=64)
def _pair_arrays(m: int):
    pairs = pair_indices(m)
    ii = np.array([p[0] for p in pairs])
    jj = np.array([p[1] for p in pairs])
    return ii, jj


class SymMatrix:
    """Real symmetric m x m matrix with packed upper-triangle storage.

    Symmetry is structural: entries (i, j) and (j, i) read the same stored
    value, so no bug downstream can produce an asymmetric SymMatrix.
    Instances are immutable.
    """

    __slots__ = ("_m", "_packed")

    def __init__(self, m: int, packed):
        packed = np.array(packed, dtype=float)
        if packed.shape != (sym_dim(m),):
            raise ValueError(f"packed storage for m={m} must have length {sym_dim(m)}")
        self._m = int(m)
        self._packed = packed
        self._packed.flags.writeable = False

    @classmethod
    def from_full(cls, a, symmetry_tol: float | None = None) -> "SymMatrix":
        """Build from a full (m, m) array, averaging the two triangles.

        With ``symmetry_tol`` set, reject inputs whose asymmetry exceeds it.
        """
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("expected a square 2-d array")
        if symmetry_tol is not None:
            gap = float(np.max(np.abs(a - a.T))) if a.size else 0.0
            if gap > symmetry_tol:
                raise ValueError(f"matrix is not symmetric: max |a_ij - a_ji| = {gap:.3e}")
        m = a.shape[0]
        sym = 0.5 * (a + a.T)
        ii, jj = _pair_arrays(m)
        return cls(m, sym[ii, jj])

    @classmethod
    def from_diagonal(cls, values) -> "SymMatrix":
        return cls.from_full(np.diag(np.asarray(values, dtype=float)))

    @classmethod
    def identity(cls, m: int) -> "SymMatrix":
        return cls.from_diagonal(np.ones(m))

    @classmethod
    def zeros(cls, m: int) -> "SymMatrix":
        return cls(m, np.zeros(sym_dim(m)))

    @property
    def m(self) -> int:
        return self._m

    @property
    def packed(self) -> np.ndarray:
        return self._packed

    def __getitem__(self, ij) -> float:
        i, j = ij
        if i > j:
            i, j = j, i
        if not (0 <= i <= j < self._m):
            raise IndexError(ij)
        # offset of row i in the row-major upper triangle
        base = i * self._m - i * (i - 1) // 2
        return float(self._packed[base + (j - i)])

    def to_full(self) -> np.ndarray:
        a = np.zeros((self._m, self._m))
        ii, jj = _pair_arrays(self._m)
        a[ii, jj] = self._packed
        a[jj, ii] = self._packed
        return a

    def shifted(self, c: float) -> "SymMatrix":
        """A - c * identity."""
        a = self.to_full()
        a[np.arange(self._m), np.arange(self._m)] -= c
        return SymMatrix.from_full(a)

    def trace(self) -> float:
        ii, jj = _pair_arrays(self._m)
        return float(self._packed[ii == jj].sum())

    def frobenius_sq(self) -> float:
        """tr(A^2), computed from the packed entries."""
        ii, jj = _pair_arrays(self._m)
        w = np.where(ii == jj, 1.0, 2.0)
        return float(np.sum(w * self._packed * self._packed))

    def __repr__(self):
        return f"SymMatrix(m={self._m})"

    def __eq__(self, other):
        return (
            isinstance(other, SymMatrix)
            and self._m == other._m
            and np.array_equal(self._packed, other._packed)
        )

    def __hash__(self):
        return hash((self._m, self._packed.tobytes()))


def ell_coords(a: SymMatrix) -> np.ndarray:
    """Flat coordinates: the entries a_ij for i <= j, row-major."""
    return a.packed.copy()


def omega_coords(a: SymMatrix) -> np.ndarray:
    """Orthonormal coordinates: a_ii on the diagonal, sqrt(2) a_ij off it."""
    ii, jj = _pair_arrays(a.m)
    scale = np.where(ii == jj, 1.0, math.sqrt(2.0))
    return scale * a.packed


def ell_coords_batch(mats: np.ndarray) -> np.ndarray:
    """Flat coordinates of a stack of full symmetric matrices, shape (n, p)."""
    mats = np.asarray(mats, dtype=float)
    ii, jj = _pair_arrays(mats.shape[-1])
    return mats[..., ii, jj]


def omega_coords_batch(mats: np.ndarray) -> np.ndarray:
    mats = np.asarray(mats, dtype=float)
    ii, jj = _pair_arrays(mats.shape[-1])
    scale = np.where(ii == jj, 1.0, math.sqrt(2.0))
    return scale * mats[..., ii, jj]


def inner_product(a: SymMatrix, b: SymMatrix) -> float:
    """tr(AB) via the coordinate sum; exact up to machine rounding."""
    if a.m != b.m:
        raise ValueError("dimension mismatch")
    ii, jj = _pair_arrays(a.m)
    w = np.where(ii == jj, 1.0, 2.0)
    return float(np.sum(w * a.packed * b.packed))


@dataclass(frozen=True)
class EnsembleParams:
    """Parameters (m, u, v) of an invariant Gaussian ensemble; GOE has u = 0."""

    m: int
    u: float = 0.0
    v: float = 1.0

    def __post_init__(self):
        if int(self.m) < 1 or self.m != int(self.m):
            raise ValueError("m must be a positive integer")
        if not (self.v > 0.0):
            raise ValueError(f"admissibility requires v > 0, got v={self.v}")
        if not (self.m * self.u + 2.0 * self.v > 0.0):
            raise ValueError(
                f"admissibility requires m*u + 2v > 0, got {self.m * self.u + 2.0 * self.v}"
            )

    @property
    def is_goe(self) -> bool:
        return self.u == 0.0


def sample_goe_batch(m: int, v: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """n independent GOE(m, v) draws as a stack of full matrices, shape (n, m, m).

    Draw order is fixed (diagonal block first, then off-diagonal block) so a
    given stream state always produces the same matrices.
    """
    if not v > 0.0:
        raise ValueError("v must be positive")
    a = np.zeros((n, m, m))
    d = np.arange(m)
    a[:, d, d] = rng.normal(scale=math.sqrt(2.0 * v), size=(n, m))
    if m > 1:
        iu, ju = np.triu_indices(m, 1)
        off = rng.normal(scale=math.sqrt(v), size=(n, iu.size))
        a[:, iu, ju] = off
        a[:, ju, iu] = off
    return a


def sample_goe(params: EnsembleParams, rng: np.random.Generator) -> SymMatrix:
    """One draw from GOE(m, v); requires u = 0."""
    if params.u != 0.0:
        raise ValueError("sample_goe requires u = 0")
    return SymMatrix.from_full(sample_goe_batch(params.m, params.v, 1, rng)[0])


def sample_suv_batch(params: EnsembleParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """n draws from the (u, v) ensemble as full matrices, shape (n, m, m).

    For u >= 0 this is GOE(m, v) plus an independent N(0, u) multiple of the
    identity.  For u < 0 the identity-shift description breaks down, so the
    diagonal block is drawn from its exact covariance u*J + 2v*I through the
    spectral split of J (eigenvalue m*u + 2v on the constant vector, 2v on
    its orthocomplement), which is positive definite exactly on the admissible
    range.
    """
    m, u, v = params.m, params.u, params.v
    if u >= 0.0:
        a = sample_goe_batch(m, v, n, rng)
        shift = rng.normal(scale=math.sqrt(u), size=n)
        d = np.arange(m)
        a[:, d, d] += shift[:, None]
        return a

    a = np.zeros((n, m, m))
    g = rng.normal(size=(n, m))
    gbar = g.mean(axis=1, keepdims=True)
    diag = math.sqrt(2.0 * v) * (g - gbar) + math.sqrt(m * u + 2.0 * v) * gbar
    d = np.arange(m)
    a[:, d, d] = diag
    if m > 1:
        iu, ju = np.triu_indices(m, 1)
        off = rng.normal(scale=math.sqrt(v), size=(n, iu.size))
        a[:, iu, ju] = off
        a[:, ju, iu] = off
    return a


def sample_suv(params: EnsembleParams, rng: np.random.Generator) -> SymMatrix:
    """One draw from the invariant ensemble with parameters (m, u, v)."""
    return SymMatrix.from_full(sample_suv_batch(params, 1, rng)[0])


def goe_log_density(a: SymMatrix, v: float) -> float:
    """Log density of GOE(m, v) at A, relative to the orthonormal volume."""
    if not v > 0.0:
        raise ValueError("v must be positive")
    m = a.m
    return -(m * (m + 1) / 4.0) * math.log(4.0 * math.pi * v) - a.frobenius_sq() / (4.0 * v)


def covariance_reference(params: EnsembleParams) -> np.ndarray:
    """Analytic second moments E[l_a l_b] of the flat coordinates, shape (p, p)."""
    pairs = pair_indices(params.m)
    p = len(pairs)
    ref = np.zeros((p, p))
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            val = params.u * (i == j) * (k == l)
            val += params.v * ((i == k) * (j == l) + (i == l) * (j == k))
            ref[a, b] = val
    return ref


@dataclass
class CovarianceAudit:
    """Result of checking every empirical second moment against its target."""

    params: EnsembleParams
    n_samples: int
    seed: int
    z_matrix: np.ndarray
    second_moments: np.ndarray
    reference: np.ndarray

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z_matrix)))

    @property
    def passed(self) -> bool:
        return self.max_abs_z <= 4.0

    def to_dict(self) -> dict:
        return {
            "m": self.params.m,
            "u": self.params.u,
            "v": self.params.v,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "max_abs_z": self.max_abs_z,
            "n_moments": int(self.z_matrix.size),
            "pass": self.passed,
        }


def covariance_audit(
    params: EnsembleParams, n_samples: int, seed: int = 0, workers: int = 1
) -> CovarianceAudit:
    """Audit all p x p second moments of the flat coordinates at 4 SE each."""

    def chunk(rng, size):
        mats = sample_suv_batch(params, size, rng)
        coords = ell_coords_batch(mats)
        sq = coords * coords
        return (
            size,
            np.einsum("na,nb->ab", coords, coords),
            np.einsum("na,nb->ab", sq, sq),
        )

    parts = map_chunks(chunk, n_samples, seed, workers)
    n = float(sum(p[0] for p in parts))
    s2 = np.sum([p[1] for p in parts], axis=0)
    s4 = np.sum([p[2] for p in parts], axis=0)
    m2 = s2 / n
    var = np.maximum(s4 - n * m2 * m2, 0.0) / max(n - 1.0, 1.0)
    se = np.sqrt(var / n)
    ref = covariance_reference(params)
    z = np.where(se > 0.0, (m2 - ref) / np.where(se > 0.0, se, 1.0), 0.0)
    return CovarianceAudit(
        params=params,
        n_samples=int(n),
        seed=seed,
        z_matrix=z,
        second_moments=m2,
        reference=ref,
    )


def write_matrix(a: SymMatrix, path_or_file) -> None:
    """Write the plain-text interchange format: first line m, then m rows."""
    if hasattr(path_or_file, "write"):
        fh = path_or_file
        close = False
    else:
        fh = open(path_or_file, "w")
        close = True
    try:
        fh.write(f"{a.m}\n")
        full = a.to_full()
        for row in full:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")
    finally:
        if close:
            fh.close()


def _read_one(lines, pos) -> tuple[SymMatrix, int]:
    while pos < len(lines) and not lines[pos].strip():
        pos += 1
    if pos >= len(lines):
        raise ValueError("no matrix found")
    try:
        m = int(lines[pos].strip())
    except ValueError as exc:
        raise ValueError(f"expected a dimension on line {pos + 1}") from exc
    if m < 1:
        raise ValueError("matrix dimension must be positive")
    rows = []
    for r in range(m):
        if pos + 1 + r >= len(lines):
            raise ValueError("truncated matrix file")
        row = [float(tok) for tok in lines[pos + 1 + r].split()]
        if len(row) != m:
            raise ValueError(f"row {r} has {len(row)} entries, expected {m}")
        rows.append(row)
    a = np.array(rows)
    return SymMatrix.from_full(a, symmetry_tol=FILE_SYMMETRY_TOL), pos + 1 + m


def read_matrix(path_or_file) -> SymMatrix:
    """Read one matrix in the interchange format; rejects asymmetry above 1e-9."""
    if hasattr(path_or_file, "read"):
        text = path_or_file.read()
    else:
        with open(path_or_file) as fh:
            text = fh.read()
    mat, _ = _read_one(text.splitlines(), 0)
    return mat


def read_matrices(path_or_file) -> list[SymMatrix]:
    """Read every matrix block in a file."""
    if hasattr(path_or_file, "read"):
        text = path_or_file.read()
    else:
        with open(path_or_file) as fh:
            text = fh.read()
    lines = text.splitlines()
    out = []
    pos = 0
    while True:
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            break
        mat, pos = _read_one(lines, pos)
        out.append(mat)
    return out
