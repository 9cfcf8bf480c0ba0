"""Symmetric Hamiltonian prediction over the toy orbital basis.

The matrix is assembled block-wise: same-atom blocks from a per-atom network
and cross-atom blocks from a pair network fed with the order-invariant
combination (t_i + t_j, |t_i - t_j|). Each block is emitted as three values
(s-s, s-p, p-p), so swapping the two atoms of a pair leaves its block
unchanged. Only diagonal and strict-upper entries are generated; the lower
triangle is the mirrored upper triangle, making the output symmetric
bit-exactly, and atom relabeling permutes it block-wise.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .basis import DEFAULT_BASIS, OrbitalBasisSpec
from .errors import CorruptFile, DimensionMismatch, ShapeMismatch
from .nn import Mlp

# value-column layout of the 3-wide head outputs for a 2-orbital block:
# column 0 -> (s, s), column 1 -> (s, p) and (p, s), column 2 -> (p, p)
_DIAG_COLS = {(0, 0): 0, (1, 1): 2}
_PAIR_COLS = {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 2}
HEAD_VALUES = 3


@dataclass(frozen=True)
class BlockLayout:
    """Orbital bookkeeping for one molecule."""

    elements: tuple[str, ...]
    offsets: tuple[int, ...]
    counts: tuple[int, ...]

    @property
    def n_orb(self) -> int:
        return self.offsets[-1] + self.counts[-1]

    @property
    def n_atoms(self) -> int:
        return len(self.elements)

    def atom_of_orbital(self) -> np.ndarray:
        out = np.empty(self.n_orb, dtype=np.intp)
        for a, (off, cnt) in enumerate(zip(self.offsets, self.counts)):
            out[off:off + cnt] = a
        return out


def layout(elements: list[str] | tuple[str, ...],
           basis: OrbitalBasisSpec = DEFAULT_BASIS) -> BlockLayout:
    counts = tuple(len(basis.orbitals_for(e)) for e in elements)
    offsets = []
    total = 0
    for c in counts:
        offsets.append(total)
        total += c
    return BlockLayout(tuple(elements), tuple(offsets), counts)


@dataclass
class PairNet:
    """Pair block network on the symmetric feature pair (sum, |difference|)."""

    w_sum: Tensor  # d x hidden
    w_gap: Tensor  # d x hidden
    b1: Tensor     # 1 x hidden
    w2: Tensor     # hidden x 3
    b2: Tensor     # 1 x 3

    def __call__(self, ti: Tensor, tj: Tensor) -> Tensor:
        hidden = ad.tanh((ti + tj) @ self.w_sum + ad.abs_(ti - tj) @ self.w_gap + self.b1)
        return hidden @ self.w2 + self.b2


@dataclass
class HeadParams:
    diag: Mlp      # d -> 3 block values per atom
    pair: PairNet  # per unordered atom pair

    @property
    def width(self) -> int:
        return self.diag.w1.data.shape[0]


@dataclass(frozen=True)
class _ScatterPlan:
    """Index arrays mapping flat head values into matrix entries.

    Diagonal entries and same-atom cross entries index the per-atom value
    vector; cross-atom entries index the per-pair value vector.
    """

    pairs_i: np.ndarray
    pairs_j: np.ndarray
    diag_idx: np.ndarray
    diag_rows: np.ndarray
    diag_cols: np.ndarray
    same_idx: np.ndarray
    same_rows: np.ndarray
    same_cols: np.ndarray
    cross_idx: np.ndarray
    cross_rows: np.ndarray
    cross_cols: np.ndarray


_PLAN_CACHE: dict[tuple[str, ...], _ScatterPlan] = {}


def _scatter_plan(lay: BlockLayout) -> _ScatterPlan:
    cached = _PLAN_CACHE.get(lay.elements)
    if cached is not None:
        return cached

    n = lay.n_atoms
    d_idx, d_rows, d_cols = [], [], []
    s_idx, s_rows, s_cols = [], [], []
    for a, (off, cnt) in enumerate(zip(lay.offsets, lay.counts)):
        for oi in range(cnt):
            for oj in range(oi, cnt):
                if oi == oj:
                    d_idx.append(a * HEAD_VALUES + _DIAG_COLS[(oi, oj)])
                    d_rows.append(off + oi)
                    d_cols.append(off + oj)
                else:
                    s_idx.append(a * HEAD_VALUES + 1)  # same-atom s-p entry
                    s_rows.append(off + oi)
                    s_cols.append(off + oj)

    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    c_idx, c_rows, c_cols = [], [], []
    for p, (i, j) in enumerate(pairs):
        for oi in range(lay.counts[i]):
            for oj in range(lay.counts[j]):
                c_idx.append(p * HEAD_VALUES + _PAIR_COLS[(oi, oj)])
                c_rows.append(lay.offsets[i] + oi)
                c_cols.append(lay.offsets[j] + oj)

    def arr(x):
        return np.asarray(x, dtype=np.intp)

    plan = _ScatterPlan(
        pairs_i=arr([i for i, _ in pairs]), pairs_j=arr([j for _, j in pairs]),
        diag_idx=arr(d_idx), diag_rows=arr(d_rows), diag_cols=arr(d_cols),
        same_idx=arr(s_idx), same_rows=arr(s_rows), same_cols=arr(s_cols),
        cross_idx=arr(c_idx), cross_rows=arr(c_rows), cross_cols=arr(c_cols),
    )
    _PLAN_CACHE[lay.elements] = plan
    return plan


def predict_hamiltonian(emb: Tensor, lay: BlockLayout, params: HeadParams) -> Tensor:
    """Assemble the symmetric Hamiltonian from per-atom embeddings."""
    n = lay.n_atoms
    if emb.shape[0] != n:
        raise ShapeMismatch(f"{emb.shape[0]} embedding rows for {n} layout atoms")
    plan = _scatter_plan(lay)
    dim = lay.n_orb

    atom_vals = ad.reshape(params.diag(emb), (n * HEAD_VALUES,))
    diag_part = ad.scatter_matrix(atom_vals, plan.diag_idx, plan.diag_rows, plan.diag_cols,
                                  (dim, dim))
    upper = ad.scatter_matrix(atom_vals, plan.same_idx, plan.same_rows, plan.same_cols,
                              (dim, dim))
    if len(plan.pairs_i):
        ti = ad.gather_rows(emb, plan.pairs_i)
        tj = ad.gather_rows(emb, plan.pairs_j)
        pair_vals = ad.reshape(params.pair(ti, tj), (len(plan.pairs_i) * HEAD_VALUES,))
        upper = upper + ad.scatter_matrix(pair_vals, plan.cross_idx, plan.cross_rows,
                                          plan.cross_cols, (dim, dim))
    return diag_part + upper + ad.transpose(upper)


def fuse_modalities(t: Tensor, v: Tensor) -> Tensor:
    """Elementwise sum used by the string+geometry inference configuration."""
    if t.shape != v.shape:
        raise ShapeMismatch(f"cannot fuse shapes {t.shape} and {v.shape}")
    return t + v


def finetune_loss(h_star: Tensor, h: Tensor, h_masked: Tensor, lambda2: float) -> Tensor:
    """Entry-mean MAE+MSE against the target, for full and masked predictions.

    lambda2 weights the full-string branch; (1 - lambda2) weights the branch
    predicted from the fragment-masked string.
    """
    if not 0.0 <= lambda2 <= 1.0:
        raise ValueError(f"lambda2 must lie in [0, 1], got {lambda2}")
    if h.shape != h_star.shape or h_masked.shape != h_star.shape:
        raise ShapeMismatch(
            f"matrix shapes differ: target {h_star.shape}, full {h.shape}, masked {h_masked.shape}")
    n = h_star.data.size

    def term(pred: Tensor) -> Tensor:
        diff = pred - h_star
        return ad.sum_(ad.abs_(diff) + ad.square(diff)) * (1.0 / n)

    return lambda2 * term(h) + (1.0 - lambda2) * term(h_masked)


# --- serialization: dimension + upper triangle, little-endian float64 ---

_MAGIC = b"MHAM0001"


def upper_triangle(h: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(h.shape[0])
    return np.ascontiguousarray(h[iu], dtype=np.float64)


def from_upper_triangle(vals: np.ndarray, n: int) -> np.ndarray:
    h = np.zeros((n, n), dtype=np.float64)
    h[np.triu_indices(n)] = vals
    return h + h.T - np.diag(np.diag(h))


def save_hamiltonian(path: str | Path, h: np.ndarray, lay: BlockLayout) -> None:
    path = Path(path)
    n = h.shape[0]
    if h.shape != (n, n) or n != lay.n_orb:
        raise DimensionMismatch(f"matrix {h.shape} does not match layout of {lay.n_orb} orbitals")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", n))
        fh.write(upper_triangle(h).astype("<f8").tobytes())
    sidecar = {"dimension": n, "elements": list(lay.elements),
               "offsets": list(lay.offsets), "counts": list(lay.counts)}
    Path(str(path) + ".layout.json").write_text(json.dumps(sidecar, indent=1) + "\n")


def load_hamiltonian(path: str | Path) -> tuple[np.ndarray, BlockLayout]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(_MAGIC) + 8 or raw[:len(_MAGIC)] != _MAGIC:
        raise CorruptFile(f"{path} is not a Hamiltonian matrix file")
    n = struct.unpack("<Q", raw[len(_MAGIC):len(_MAGIC) + 8])[0]
    expect = n * (n + 1) // 2
    body = raw[len(_MAGIC) + 8:]
    if len(body) != expect * 8:
        raise CorruptFile(f"{path}: expected {expect} values, found {len(body) // 8}")
    vals = np.frombuffer(body, dtype="<f8")
    side = json.loads(Path(str(path) + ".layout.json").read_text())
    lay = BlockLayout(tuple(side["elements"]), tuple(side["offsets"]), tuple(side["counts"]))
    return from_upper_triangle(vals, n), lay
