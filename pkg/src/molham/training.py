"""Training loops, optimizer, checkpoints, and evaluation.

Both stages are deterministic for a given seed: batch order, fragment-mask
draws, and gradient accumulation all derive from seeded generators and a
fixed reduction order, so runs on one machine reproduce bit-for-bit.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tape, constant
from .dataset import Dataset, DatasetRecord
from .errors import CorruptFile, TrainingAborted, VersionMismatch
from .hamhead import BlockLayout, finetune_loss, layout
from .model import Model, ModelConfig, check_compatible
from .smiles import expand_hydrogens, fragment, mask_tokens, parse_smiles, tokenize
from .spectral import mae_blocks, mae_energies, orbital_similarity, solve_gev

CHECKPOINT_VERSION = 1
_CKPT_MAGIC = b"MHCK0001"


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "pretrain"            # pretrain | finetune
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda1: float = 0.5               # weight of the auxiliary discrepancy term
    lambda2: float = 0.8               # weight of the full-string prediction term
    mask_keep_prob: float = 0.85       # per-fragment keep probability
    seed: int = 0
    fusion: bool = False               # string+geometry inference path
    encoder_lr_scale: float = 1.0      # fine-tune rate multiplier for encoder groups

    def __post_init__(self):
        if self.stage not in ("pretrain", "finetune"):
            raise ValueError(f"stage must be pretrain or finetune, got {self.stage!r}")
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be non-negative")
        if not 0.0 <= self.lambda2 <= 1.0:
            raise ValueError("lambda2 must lie in [0, 1]")
        if not 0.0 <= self.mask_keep_prob <= 1.0:
            raise ValueError("mask keep probability must lie in [0, 1]")
        if self.encoder_lr_scale < 0:
            raise ValueError("encoder lr scale must be non-negative")


class Adam:
    """Adam with deterministic parameter iteration order.

    `rate_scales` maps name prefixes to learning-rate multipliers, applied to
    the first matching prefix (used for slower fine-tuning of pretrained
    encoder groups).
    """

    def __init__(self, lr: float, beta1: float, beta2: float, eps: float,
                 rate_scales: dict[str, float] | None = None):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.rate_scales = rate_scales or {}
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def _rate(self, name: str) -> float:
        for prefix, scale in self.rate_scales.items():
            if name.startswith(prefix):
                return self.lr * scale
        return self.lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None]) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for name, arr in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(arr)
                self.v[name] = np.zeros_like(arr)
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            arr -= self._rate(name) * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


@dataclass
class Prepared:
    """Per-record structures computed once and reused across epochs."""

    record: DatasetRecord
    tokens: list
    mol: object
    xmol: object
    fragments: list
    lay: BlockLayout


def prepare(dataset: Dataset) -> list[Prepared]:
    out = []
    for rec in dataset.records:
        tokens = tokenize(rec.smiles)
        mol = parse_smiles(rec.smiles)
        xmol = expand_hydrogens(mol)
        out.append(Prepared(rec, tokens, mol, xmol, fragment(mol), layout(xmol.elements)))
    return out


@dataclass
class TraceRow:
    step: int
    epoch: int
    parts: dict[str, float]

    def values(self) -> list[float]:
        return [v for _, v in sorted(self.parts.items())]


def write_trace(path: str | Path, rows: list[TraceRow]) -> None:
    if not rows:
        Path(path).write_text("step,epoch\n")
        return
    cols = sorted(rows[0].parts)
    with open(path, "w") as fh:
        fh.write("step,epoch," + ",".join(cols) + "\n")
        for r in rows:
            fh.write(f"{r.step},{r.epoch}," + ",".join(repr(r.parts[c]) for c in cols) + "\n")


def _batches(order: np.ndarray, size: int) -> list[list[int]]:
    return [list(map(int, order[i:i + size])) for i in range(0, len(order), size)]


def _check_finite(value: float, what: str, index: int | None) -> None:
    if not np.isfinite(value):
        raise TrainingAborted(f"non-finite {what}" +
                              (f" at record {index}" if index is not None else ""), index)


def pretrain(model: Model, dataset: Dataset, config: TrainConfig) -> tuple[list[TraceRow], dict]:
    """Both-modality pre-training; returns the loss trace and final RNG state."""
    prepared = prepare(dataset)
    coords = [dataset.get_coords(i) for i in range(len(dataset))]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 11])))
    opt = Adam(config.lr, config.beta1, config.beta2, config.adam_eps)
    rows: list[TraceRow] = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(prepared))
        for batch in _batches(order, config.batch_size):
            tape = Tape()
            leaves = model.leaves(tape)
            molecules = [{"tokens": prepared[i].tokens, "mol": prepared[i].mol,
                          "xmol": prepared[i].xmol, "fragments": prepared[i].fragments,
                          "coords": coords[i]} for i in batch]
            total, part_d, part_l = model.pretrain_batch_loss(leaves, molecules, config.lambda1)
            _check_finite(total.item(), "pre-training loss", batch[0])
            tape.backward(total)
            opt.step(model.params, model.grads(tape, leaves))
            rows.append(TraceRow(step, epoch, {
                "loss_total": total.item(),
                "loss_discrepancy": part_d.item(),
                "loss_contrastive": part_l.item(),
            }))
            step += 1
    return rows, rng.bit_generator.state


def _mask_vectors(prepared: list[Prepared], rng: np.random.Generator,
                  keep_prob: float) -> list[list[int]]:
    return [[1 if rng.random() < keep_prob else 0 for _ in p.fragments] for p in prepared]


def finetune(model: Model, dataset: Dataset, config: TrainConfig) -> tuple[list[TraceRow], dict]:
    """Masked weakly-supervised fine-tuning on strings (plus geometry if fused).

    The string-only path never touches coordinates; with fusion enabled the
    token encoder group is frozen and the geometry encoder keeps training.
    """
    prepared = prepare(dataset)
    coords = [dataset.get_coords(i) for i in range(len(dataset))] if config.fusion else None
    targets = [p.record.h for p in prepared]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 13])))
    scales = None
    if config.encoder_lr_scale != 1.0:
        scales = {"token.": config.encoder_lr_scale, "geom.": config.encoder_lr_scale}
    opt = Adam(config.lr, config.beta1, config.beta2, config.adam_eps, rate_scales=scales)
    frozen = ("token.",) if config.fusion else ()
    rows: list[TraceRow] = []
    step = 0
    for epoch in range(config.epochs):
        masks = _mask_vectors(prepared, rng, config.mask_keep_prob)
        order = rng.permutation(len(prepared))
        for batch in _batches(order, config.batch_size):
            tape = Tape()
            leaves = model.leaves(tape, frozen_prefixes=frozen)
            total = None
            for i in batch:
                p = prepared[i]
                masked = mask_tokens(p.tokens, p.fragments, masks[i])
                if config.fusion:
                    h_full = model.hamiltonian_fused(leaves, p.tokens, p.xmol, p.lay, coords[i])
                    h_mask = model.hamiltonian_fused(leaves, masked, p.xmol, p.lay, coords[i])
                else:
                    h_full = model.hamiltonian_from_tokens(leaves, p.tokens, p.xmol, p.lay)
                    h_mask = model.hamiltonian_from_tokens(leaves, masked, p.xmol, p.lay)
                term = finetune_loss(constant(targets[i]), h_full, h_mask, config.lambda2)
                _check_finite(term.item(), "fine-tuning loss", i)
                total = term if total is None else total + term
            total = total * (1.0 / len(batch))
            tape.backward(total)
            opt.step(model.params, model.grads(tape, leaves))
            rows.append(TraceRow(step, epoch, {"loss_total": total.item()}))
            step += 1
    return rows, rng.bit_generator.state


# --- checkpoints ---

def save_checkpoint(path: str | Path, model: Model, train_config: TrainConfig | None,
                    rng_state: dict | None) -> None:
    names = list(model.params)
    blob = b"".join(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes() for n in names)
    entries = []
    offset = 0
    for n in names:
        size = model.params[n].size * 8
        entries.append({"name": n, "shape": list(model.params[n].shape), "offset": offset})
        offset += size
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model.config_dict(),
        "train_config": None if train_config is None else asdict(train_config),
        "params": entries,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "rng_state": _jsonable_rng(rng_state),
    }
    payload = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(blob)


def _jsonable_rng(state: dict | None):
    if state is None:
        return None
    out = dict(state)
    if isinstance(out.get("state"), dict):
        out["state"] = {k: int(v) if isinstance(v, (int, np.integer)) else v
                        for k, v in out["state"].items()}
    return out


def load_checkpoint(path: str | Path,
                    expect: ModelConfig | None = None) -> tuple[Model, dict | None, dict | None]:
    raw = Path(path).read_bytes()
    if len(raw) < len(_CKPT_MAGIC) + 8 or raw[:len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise CorruptFile(f"{path} is not a checkpoint file")
    n = struct.unpack("<Q", raw[len(_CKPT_MAGIC):len(_CKPT_MAGIC) + 8])[0]
    head_end = len(_CKPT_MAGIC) + 8 + n
    if len(raw) < head_end:
        raise CorruptFile(f"{path} is truncated inside the manifest")
    manifest = json.loads(raw[len(_CKPT_MAGIC) + 8:head_end])
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"checkpoint format {manifest.get('format_version')} != {CHECKPOINT_VERSION}")
    blob = raw[head_end:]
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise CorruptFile(f"{path} failed its content checksum")
    config = ModelConfig(**manifest["model_config"])
    params: dict[str, np.ndarray] = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob[start:start + size * 8], dtype="<f8").reshape(shape).copy()
        params[entry["name"]] = arr
    if expect is not None:
        shapes = {e["name"]: tuple(e["shape"]) for e in manifest["params"]}
        check_compatible(expect, config, shapes)
    return Model(config, params), manifest.get("train_config"), manifest.get("rng_state")


# --- evaluation ---

def evaluate(model: Model, dataset: Dataset, fusion: bool = False) -> dict:
    """Block MAEs, occupied-energy MAE, and orbital similarity over a dataset.

    Predictions use the string path (optionally fused with geometry); the
    overlap matrix comes from each record's stored oracle geometry.
    """
    prepared = prepare(dataset)
    leaves = model.leaves(None)
    sums = {"mae_diag": 0.0, "mae_offdiag": 0.0, "mae_all": 0.0,
            "mae_eps_occ": 0.0, "psi_occ": 0.0}
    for i, p in enumerate(prepared):
        if fusion:
            h_pred = model.hamiltonian_fused(leaves, p.tokens, p.xmol, p.lay,
                                             dataset.get_coords(i)).data
        else:
            h_pred = model.hamiltonian_from_tokens(leaves, p.tokens, p.xmol, p.lay).data
        rec = p.record
        res_pred = solve_gev(h_pred, rec.s, rec.n_electrons)
        res_true = solve_gev(rec.h, rec.s, rec.n_electrons)
        d, o, a = mae_blocks(h_pred, rec.h, p.lay)
        sums["mae_diag"] += d
        sums["mae_offdiag"] += o
        sums["mae_all"] += a
        sums["mae_eps_occ"] += mae_energies(res_pred.eigenvalues, res_true.eigenvalues,
                                            res_true.n_occupied)
        sums["psi_occ"] += orbital_similarity(res_pred.coefficients, res_true.coefficients,
                                              res_pred.eigenvalues, res_true.eigenvalues,
                                              res_true.n_occupied)
    count = max(1, len(prepared))
    out = {k: v / count for k, v in sums.items()}
    out["count"] = len(prepared)
    return out


def gap_predictions(model: Model, dataset: Dataset, fusion: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """(predicted, true) gap vectors in eV for a dataset."""
    prepared = prepare(dataset)
    leaves = model.leaves(None)
    pred, true = [], []
    for i, p in enumerate(prepared):
        if fusion:
            h_pred = model.hamiltonian_fused(leaves, p.tokens, p.xmol, p.lay,
                                             dataset.get_coords(i)).data
        else:
            h_pred = model.hamiltonian_from_tokens(leaves, p.tokens, p.xmol, p.lay).data
        rec = p.record
        pred.append(solve_gev(h_pred, rec.s, rec.n_electrons).gap_ev)
        true.append(rec.gap_ev)
    return np.asarray(pred), np.asarray(true)
