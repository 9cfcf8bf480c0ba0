"""Spectral post-processing: overlap model, eigensolvers, and metrics.

The generalized problem H C = S C diag(eps) is reduced with the symmetric
inverse square root X = S^(-1/2) and solved with an in-house Jacobi
eigensolver. Jacobi sweeps follow a round-robin schedule: each round rotates
a set of disjoint planes, applied jointly as one orthogonal congruence, and a
sweep visits every index pair exactly once. Rotations in disjoint planes do
not interact, so each round zeroes its pivots exactly, and the batched form
keeps large sweeps inside BLAS.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import ANGSTROM_TO_BOHR, DEFAULT_BASIS, HARTREE_TO_EV, OrbitalBasisSpec
from .errors import (
    DimensionMismatch,
    NoConvergence,
    NonFiniteCoordinate,
    NotPositiveDefinite,
    NotSymmetric,
    NoVirtualOrbital,
    OddElectronCount,
)

_SYMMETRY_TOL = 1e-12
_RIDGE = 1e-10
MAX_SWEEPS = 100


@dataclass(frozen=True)
class SpectralResult:
    eigenvalues: np.ndarray   # ascending, Hartree
    coefficients: np.ndarray  # columns are orbitals, S-orthonormal
    n_occupied: int
    homo_index: int
    lumo_index: int
    homo: float
    lumo: float
    gap_ev: float


def _check_square_symmetric(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got {a.shape}")
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asym > _SYMMETRY_TOL:
        raise NotSymmetric(f"{name} asymmetry {asym:.3e} exceeds {_SYMMETRY_TOL:.0e}")
    return a


def _round_robin_schedule(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Rounds of disjoint index pairs covering every (i, j) once per sweep."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        left = players[:m // 2]
        right = players[m // 2:][::-1]
        pairs = [(p, q) for p, q in zip(left, right) if p < n and q < n]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs]
        rounds.append((np.asarray([p for p, _ in pairs], dtype=np.intp),
                       np.asarray([q for _, q in pairs], dtype=np.intp)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _offdiag_max(a: np.ndarray) -> float:
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    return float(np.max(np.abs(off)))


def jacobi_eigh(a: np.ndarray, max_sweeps: int = MAX_SWEEPS) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix."""
    a = _check_square_symmetric(a, "matrix")
    n = a.shape[0]
    if n == 1:
        return a.diagonal().copy(), np.ones((1, 1))

    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        return np.zeros(n), np.eye(n)

    work = 0.5 * (a + a.T)
    vecs = np.eye(n)
    stop = 1e-13 * scale
    skip = 0.01 * stop
    schedule = _round_robin_schedule(n)

    for _ in range(max_sweeps):
        if _offdiag_max(work) <= stop:
            break
        for p_arr, q_arr in schedule:
            apq = work[p_arr, q_arr]
            mask = np.abs(apq) > skip
            if not mask.any():
                continue
            app = work[p_arr, p_arr]
            aqq = work[q_arr, q_arr]
            theta = np.where(mask, (aqq - app) / np.where(mask, 2.0 * apq, 1.0), 0.0)
            t = np.where(mask,
                         np.where(theta >= 0.0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0)),
                         0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            g = np.eye(n)
            g[p_arr, p_arr] = c
            g[q_arr, q_arr] = c
            g[p_arr, q_arr] = s
            g[q_arr, p_arr] = -s
            work = g.T @ work @ g
            work = 0.5 * (work + work.T)
            vecs = vecs @ g
    else:
        raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps "
                            f"(off-diagonal max {_offdiag_max(work):.3e})")

    eigenvalues = work.diagonal().copy()
    order = np.argsort(eigenvalues, kind="stable")
    return eigenvalues[order], np.ascontiguousarray(vecs[:, order])


def lowdin_inv_sqrt(s: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root of a positive-definite matrix."""
    s = _check_square_symmetric(s, "overlap")
    w, v = jacobi_eigh(s)
    if w.min() <= _RIDGE:
        raise NotPositiveDefinite(f"overlap eigenvalue {w.min():.3e} at or below ridge {_RIDGE:.0e}")
    x = (v / np.sqrt(w)) @ v.T
    return 0.5 * (x + x.T)


def solve_gev(h: np.ndarray, s: np.ndarray, n_electrons: int) -> SpectralResult:
    """Solve H C = S C diag(eps) by symmetric orthogonalization.

    Requires an even electron count (closed shell); occupation is
    n_electrons / 2 lowest orbitals.
    """
    h = _check_square_symmetric(h, "hamiltonian")
    s = _check_square_symmetric(s, "overlap")
    if h.shape != s.shape:
        raise DimensionMismatch(f"H is {h.shape} but S is {s.shape}")
    if n_electrons <= 0 or n_electrons % 2 != 0:
        raise OddElectronCount(f"need a positive even electron count, got {n_electrons}")
    n_occ = n_electrons // 2
    x = lowdin_inv_sqrt(s)
    h_ortho = x @ h @ x
    h_ortho = 0.5 * (h_ortho + h_ortho.T)
    eigenvalues, v = jacobi_eigh(h_ortho)
    coeff = x @ v
    if n_occ >= h.shape[0]:
        raise NoVirtualOrbital(
            f"{n_occ} occupied orbitals fill all {h.shape[0]} basis functions; no gap exists")
    homo = float(eigenvalues[n_occ - 1])
    lumo = float(eigenvalues[n_occ])
    return SpectralResult(
        eigenvalues=eigenvalues,
        coefficients=coeff,
        n_occupied=n_occ,
        homo_index=n_occ - 1,
        lumo_index=n_occ,
        homo=homo,
        lumo=lumo,
        gap_ev=(lumo - homo) * HARTREE_TO_EV,
    )


# --- overlap model ---

def toy_overlap(elements: list[str] | tuple[str, ...], coords: np.ndarray,
                basis: OrbitalBasisSpec = DEFAULT_BASIS) -> np.ndarray:
    """Gram matrix of one normalized Gaussian per orbital.

    S_uv = (2 sqrt(a_u a_v) / (a_u + a_v))^(3/2) * exp(-(a_u a_v/(a_u + a_v)) r_uv^2)
    with exponents in bohr^-2 and center distances converted from angstrom.
    Same-orbital entries are exactly 1; distinct Gaussians make S positive
    definite.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 3 or coords.shape[0] != len(elements):
        raise NonFiniteCoordinate(f"expected ({len(elements)}, 3) coordinates, got {coords.shape}")
    if not np.isfinite(coords).all():
        raise NonFiniteCoordinate("coordinates contain non-finite values")

    alphas: list[float] = []
    centers: list[int] = []
    for i, elem in enumerate(elements):
        for orb in basis.orbitals_for(elem):
            alphas.append(orb.exponent)
            centers.append(i)
    al = np.asarray(alphas)
    ctr = np.asarray(centers)

    bohr = coords * ANGSTROM_TO_BOHR
    diff = bohr[ctr][:, None, :] - bohr[ctr][None, :, :]
    r2 = (diff * diff).sum(axis=-1)
    asum = al[:, None] + al[None, :]
    aprod = al[:, None] * al[None, :]
    prefactor = (2.0 * np.sqrt(aprod) / asum) ** 1.5
    s = prefactor * np.exp(-(aprod / asum) * r2)
    np.fill_diagonal(s, 1.0)
    return 0.5 * (s + s.T)


# --- evaluation metrics ---

def orbital_similarity(c_pred: np.ndarray, c_true: np.ndarray,
                       eps_pred: np.ndarray, eps_true: np.ndarray,
                       n_occ: int) -> float:
    """Mean |cosine| between occupied orbital coefficients paired by energy rank.

    Columns arrive energy-sorted, so rank pairing is positional; the absolute
    value removes the arbitrary sign of each orbital.
    """
    if c_pred.shape != c_true.shape:
        raise DimensionMismatch(f"coefficient shapes differ: {c_pred.shape} vs {c_true.shape}")
    if n_occ < 1 or n_occ > c_pred.shape[1]:
        raise DimensionMismatch(f"occupation {n_occ} out of range for {c_pred.shape[1]} orbitals")
    order_p = np.argsort(eps_pred, kind="stable")[:n_occ]
    order_t = np.argsort(eps_true, kind="stable")[:n_occ]
    total = 0.0
    for cp, ct in zip(order_p, order_t):
        a = c_pred[:, cp]
        b = c_true[:, ct]
        total += abs(float(a @ b) / (float(np.linalg.norm(a)) * float(np.linalg.norm(b))))
    return total / n_occ


def mae_blocks(h_pred: np.ndarray, h_true: np.ndarray,
               lay) -> tuple[float, float, float]:
    """(diagonal-block MAE, off-diagonal-block MAE, full MAE) in Hartree."""
    if h_pred.shape != h_true.shape:
        raise DimensionMismatch(f"matrix shapes differ: {h_pred.shape} vs {h_true.shape}")
    if h_pred.shape[0] != lay.n_orb:
        raise DimensionMismatch(f"matrices of {h_pred.shape[0]} orbitals vs layout of {lay.n_orb}")
    atom = lay.atom_of_orbital()
    same = atom[:, None] == atom[None, :]
    err = np.abs(h_pred - h_true)
    return (float(err[same].mean()), float(err[~same].mean()) if (~same).any() else 0.0,
            float(err.mean()))


def mae_energies(eps_pred: np.ndarray, eps_true: np.ndarray, n_occ: int) -> float:
    """MAE over the occupied orbital energies, Hartree."""
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    eps_true = np.asarray(eps_true, dtype=np.float64)
    if eps_pred.shape != eps_true.shape:
        raise DimensionMismatch(f"spectra differ in shape: {eps_pred.shape} vs {eps_true.shape}")
    if n_occ < 1 or n_occ > eps_pred.size:
        raise DimensionMismatch(f"occupation {n_occ} out of range for {eps_pred.size} energies")
    return float(np.abs(np.sort(eps_pred)[:n_occ] - np.sort(eps_true)[:n_occ]).mean())
