"""Hermitian eigenproblem utilities shared by the expansion and box layers.

Everything routes through a dense LAPACK path below a dimension threshold;
that dense path doubles as the oracle the iterative paths are tested against.
Above the threshold the smallest eigenpairs come from shift-inverted Lanczos
with a direct factorization, and counting falls back to an explicit spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grids import SparseHermitian

DENSE_LIMIT = 2000
RESIDUAL_TOL = 1e-9
ORTHO_TOL = 1e-10
BOUNDARY_TOL = 1e-12


class SpectralError(RuntimeError):
    """Raised when an eigenvalue or solve request cannot be certified."""


class BoundaryAmbiguousError(SpectralError):
    """Counting threshold within rounding distance of an eigenvalue."""

    def __init__(self, energy, nearest):
        super().__init__(f"count threshold {energy} within {BOUNDARY_TOL} of an eigenvalue")
        self.energy = energy
        self.nearest = nearest


@dataclass(frozen=True)
class EigenPair:
    """Eigenvalue with its certified eigenvector and residual."""

    value: float
    vector: np.ndarray
    residual: float


def _as_matrix(a):
    if isinstance(a, SparseHermitian):
        return a.matrix
    return sp.csr_matrix(a)


def _scale(m) -> float:
    return float(abs(m).max()) if m.nnz else 1.0


def smallest_eigenpairs(a, k: int = 1, method: str = "auto") -> list[EigenPair]:
    """The ``k`` lowest eigenpairs, sorted, with orthonormality certified.

    ``method`` is ``"auto"`` (dense below the threshold), ``"dense"`` or
    ``"lanczos"``.  Residual norms are checked against
    ``RESIDUAL_TOL * (1 + |value|) * scale``.
    """
    m = _as_matrix(a)
    n = m.shape[0]
    if k < 1 or k > n:
        raise SpectralError(f"need 1 <= k <= {n}, got {k}")
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "lanczos"
    if method == "dense":
        vals, vecs = np.linalg.eigh(m.toarray())
        vals, vecs = vals[:k], vecs[:, :k]
    elif method == "lanczos":
        vals, vecs = _lanczos_smallest(m, k)
    else:
        raise SpectralError(f"unknown method {method!r}")
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    gram = vecs.conj().T @ vecs
    if np.abs(gram - np.eye(k)).max() > ORTHO_TOL:
        raise SpectralError("eigenvector block lost orthonormality")
    scale = max(_scale(m), 1.0)
    pairs = []
    for i in range(k):
        r = float(np.linalg.norm(m @ vecs[:, i] - vals[i] * vecs[:, i]))
        if r > RESIDUAL_TOL * (1.0 + abs(vals[i])) * scale:
            raise SpectralError(f"eigen residual {r:.3e} too large")
        pairs.append(EigenPair(float(vals[i]), vecs[:, i].copy(), r))
    return pairs


def _lanczos_smallest(m, k):
    n = m.shape[0]
    ncv = min(n - 1, max(4 * k + 10, 30))
    try:
        sigma = float(spla.eigsh(m, k=1, which="SA", ncv=ncv,
                                 return_eigenvectors=False, tol=1e-8)[0]) - 1.0
        vals, vecs = spla.eigsh(m, k=k, sigma=sigma, which="LM", ncv=ncv)
    except Exception:
        vals, vecs = spla.eigsh(m, k=k, which="SA", ncv=ncv, maxiter=5000)
    return vals, vecs


def full_spectrum(a) -> np.ndarray:
    """All eigenvalues, ascending; dense workhorse for desk-scale operators."""
    m = _as_matrix(a)
    return np.linalg.eigvalsh(m.toarray())


def count_eigenvalues_leq(a, energy: float) -> int:
    """Number of eigenvalues <= ``energy``.

    Raises :class:`BoundaryAmbiguousError` when ``energy`` sits within
    rounding distance of the spectrum, where the count is mesh-noise.
    """
    vals = full_spectrum(a)
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    gap = np.abs(vals - energy)
    nearest = float(vals[np.argmin(gap)])
    if gap.min(initial=np.inf) <= BOUNDARY_TOL * scale:
        raise BoundaryAmbiguousError(energy, nearest)
    return int(np.searchsorted(vals, energy, side="right"))


def solve_reduced(a, lam0: float, psi0: np.ndarray, rhs: np.ndarray,
                  tol: float = 1e-11) -> np.ndarray:
    """Solve (A - lam0) u = P rhs on the orthogonal complement of ``psi0``.

    ``P`` projects out the ``psi0`` component of the right-hand side, so the
    singular direction never enters; the returned ``u`` satisfies
    (u, psi0) = 0 to rounding.  Solved through the bordered system
    [[A - lam0, psi0], [psi0^*, 0]], which is regular exactly when ``lam0``
    is a simple eigenvalue with eigenvector ``psi0``.
    """
    m = _as_matrix(a)
    n = m.shape[0]
    psi0 = np.asarray(psi0)
    nrm = np.linalg.norm(psi0)
    if nrm == 0:
        raise SpectralError("psi0 must be nonzero")
    q = psi0 / nrm
    r = rhs - q * np.vdot(q, rhs)
    dtype = np.promote_types(m.dtype, r.dtype)
    if n <= DENSE_LIMIT:
        kkt = np.zeros((n + 1, n + 1), dtype=np.promote_types(dtype, q.dtype))
        kkt[:n, :n] = m.toarray() - lam0 * np.eye(n)
        kkt[:n, n] = q
        kkt[n, :n] = q.conj()
        b = np.zeros(n + 1, dtype=kkt.dtype)
        b[:n] = r
        sol = np.linalg.solve(kkt, b)
        u = sol[:n]
    else:
        shifted = (m - lam0 * sp.identity(n, dtype=dtype, format="csr")).tocsc()
        border = sp.bmat([[shifted, q[:, None]], [q.conj()[None, :], None]], format="csc")
        b = np.concatenate([r, [0.0]]).astype(np.promote_types(dtype, q.dtype))
        u = spla.spsolve(border, b)[:n]
    u = u - q * np.vdot(q, u)
    res = np.linalg.norm(m @ u - lam0 * u - r)
    scale = max(1.0, float(np.linalg.norm(r)))
    if res > max(tol, 1e3 * RESIDUAL_TOL) * scale * max(_scale(m), 1.0):
        raise SpectralError(f"reduced solve residual {res:.3e} too large")
    return u


def resolvent_block_norm(a, energy: float, rows: np.ndarray, cols: np.ndarray,
                         margin: float = 1e-10, rtol: float = 1e-6,
                         spectrum: np.ndarray | None = None) -> float:
    """Operator norm of the (rows, cols) block of (A - energy)^{-1}.

    ``rows``/``cols`` are flat node index arrays.  The energy must be
    separated from the spectrum by ``margin``.  Computed by power iteration
    on the block composed with direct solves; at dense scale the solve is a
    cached factorization, which is also what the oracle tests compare to.
    """
    m = _as_matrix(a)
    vals = spectrum if spectrum is not None else full_spectrum(m)
    dist = float(np.abs(vals - energy).min())
    if dist <= margin:
        raise SpectralError(f"energy within {dist:.3e} of the spectrum")
    n = m.shape[0]
    shifted = m - energy * sp.identity(n, dtype=m.dtype, format="csr")
    if n <= DENSE_LIMIT:
        import scipy.linalg as dla
        fac = dla.lu_factor(shifted.toarray())
        solve = lambda b: dla.lu_solve(fac, b)
    else:
        lu = spla.splu(shifted.tocsc())
        solve = lu.solve
    rows = np.asarray(rows, dtype=int)
    cols = np.asarray(cols, dtype=int)
    rng = np.random.default_rng(7)
    v = rng.standard_normal(len(cols))
    v /= np.linalg.norm(v)
    prev = 0.0
    dtype = np.promote_types(m.dtype, float)
    for _ in range(200):
        x = np.zeros(n, dtype=dtype)
        x[cols] = v
        y = solve(x)[rows]                      # B v
        x2 = np.zeros(n, dtype=dtype)
        x2[rows] = y
        # the shifted resolvent is Hermitian, so B^* is the transposed block
        w = solve(x2)[cols]                     # B^* B v
        s = np.linalg.norm(w)
        if s == 0.0:
            return 0.0
        v = w / s
        est = float(np.sqrt(s))
        if abs(est - prev) <= rtol * max(est, 1e-300):
            return est
        prev = est
    return est
