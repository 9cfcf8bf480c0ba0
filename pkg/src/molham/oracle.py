"""Deterministic ground-truth generator.

Coordinates come from a seeded spring-energy descent on the expanded
molecule (bond length target 1.5 angstrom, non-bonded repulsion floor
2.2 angstrom). Labels follow the classic distance-dependent semi-empirical
recipe: onsite energies on the diagonal and K * S_uv * (e_u + e_v) / 2 off
the diagonal with K = 1.75, on top of the Gaussian overlap model. Both steps
depend on interatomic distances only, so labels are invariant to rigid
motions of the coordinates.
"""

from __future__ import annotations

import numpy as np

from .basis import DEFAULT_BASIS, OrbitalBasisSpec
from .errors import EmbedFailure
from .smiles import ExpandedMol
from .spectral import toy_overlap

WOLFSBERG_HELMHOLZ_K = 1.75
BOND_TARGET = 1.5      # angstrom
REPULSION_FLOOR = 2.2  # angstrom
MIN_DISTANCE = 0.7     # angstrom
_DESCENT_STEPS = 400
_DESCENT_RATE = 0.05
_RESEEDS = 3

# instrumentation for path audits: counts every coordinate-generation call
EMBED_CALLS = 0


def embed_3d(xmol: ExpandedMol, seed: int) -> np.ndarray:
    """Deterministic 3D coordinates (angstrom) for an expanded molecule.

    Same (molecule, seed) always yields bit-identical coordinates. Raises
    EmbedFailure if the minimum-distance constraint is still violated after
    the reseed budget.
    """
    global EMBED_CALLS
    EMBED_CALLS += 1
    n = xmol.n_atoms
    bonded = np.zeros((n, n), dtype=bool)
    for i, j in xmol.bonds:
        bonded[i, j] = bonded[j, i] = True
    np.fill_diagonal(bonded, True)  # excludes self-pairs from repulsion

    for attempt in range(_RESEEDS):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, attempt])))
        coords = _initial_sphere(rng, n)
        if n == 1:
            return coords
        for _ in range(_DESCENT_STEPS):
            coords -= _DESCENT_RATE * _spring_gradient(coords, bonded)
        dist = _pairwise(coords)
        np.fill_diagonal(dist, np.inf)
        if float(dist.min()) >= MIN_DISTANCE:
            return coords
    raise EmbedFailure(f"no embedding met the {MIN_DISTANCE} A floor after {_RESEEDS} seeds")


def _initial_sphere(rng: np.random.Generator, n: int) -> np.ndarray:
    radius = 1.2 * n ** (1.0 / 3.0) + 0.8
    raw = rng.standard_normal((n, 3))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    shells = radius * (0.5 + 0.5 * rng.random((n, 1)))
    return raw / norms * shells


def _pairwise(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def _spring_gradient(coords: np.ndarray, bonded: np.ndarray) -> np.ndarray:
    n = coords.shape[0]
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    np.fill_diagonal(dist, 1.0)
    unit = diff / dist[:, :, None]

    coeff = np.zeros((n, n))
    bonds = bonded.copy()
    np.fill_diagonal(bonds, False)
    coeff[bonds] = 2.0 * (dist[bonds] - BOND_TARGET)
    close = (~bonded) & (dist < REPULSION_FLOOR)
    coeff[close] = -2.0 * (REPULSION_FLOOR - dist[close])
    return (coeff[:, :, None] * unit).sum(axis=1)


def huckel_labels(xmol: ExpandedMol, coords: np.ndarray,
                  basis: OrbitalBasisSpec = DEFAULT_BASIS) -> tuple[np.ndarray, np.ndarray]:
    """(H, S) label pair for an expanded molecule at the given coordinates."""
    s = toy_overlap(xmol.elements, coords, basis)
    onsite = np.asarray([orb.onsite for e in xmol.elements for orb in basis.orbitals_for(e)])
    esum = 0.5 * (onsite[:, None] + onsite[None, :])
    h = WOLFSBERG_HELMHOLZ_K * s * esum
    np.fill_diagonal(h, onsite)
    return 0.5 * (h + h.T), s
