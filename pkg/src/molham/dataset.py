"""Dataset records, split protocols, generation, and line-oriented storage.

Records are JSON Lines with upper-triangle matrices; the manifest captures
seed, split configuration, corpus hash, and per-record skips so a dataset is
reproducible bit-for-bit from (corpus, seed, config).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import DEFAULT_BASIS, OrbitalBasisSpec, electron_count
from .corpus import corpus_sha256
from .errors import EmptySplit, MolhamError
from .hamhead import from_upper_triangle, upper_triangle
from .oracle import embed_3d, huckel_labels
from .smiles import expand_hydrogens, parse_smiles
from .spectral import solve_gev

SPLIT_MODES = ("random-id", "size-ood", "element-ood")
SIZE_TRAIN_BELOW = 20   # train molecules have fewer atoms than this
SIZE_TEST_ABOVE = 23    # test molecules have more atoms than this
OOD_ELEMENTS = ("S", "P")


@dataclass(frozen=True)
class SplitConfig:
    mode: str = "random-id"
    seed: int = 0
    train_fraction: float = 0.8

    def __post_init__(self):
        if self.mode not in SPLIT_MODES:
            raise ValueError(f"split mode must be one of {SPLIT_MODES}, got {self.mode!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train fraction must lie in (0, 1), got {self.train_fraction}")


@dataclass
class DatasetRecord:
    smiles: str
    elements: list[str]
    coords: np.ndarray      # n_atoms x 3, angstrom
    h: np.ndarray           # n_orb x n_orb, Hartree
    s: np.ndarray
    n_electrons: int
    gap_ev: float
    split: str

    def to_json(self) -> str:
        return json.dumps({
            "smiles": self.smiles,
            "elements": self.elements,
            "coords": [[float(x) for x in row] for row in self.coords],
            "h_upper": [float(x) for x in upper_triangle(self.h)],
            "s_upper": [float(x) for x in upper_triangle(self.s)],
            "n_electrons": self.n_electrons,
            "gap_ev": self.gap_ev,
            "split": self.split,
        })

    @classmethod
    def from_json(cls, line: str) -> "DatasetRecord":
        raw = json.loads(line)
        n_orb = _dim_from_upper(len(raw["h_upper"]))
        return cls(
            smiles=raw["smiles"],
            elements=list(raw["elements"]),
            coords=np.asarray(raw["coords"], dtype=np.float64),
            h=from_upper_triangle(np.asarray(raw["h_upper"]), n_orb),
            s=from_upper_triangle(np.asarray(raw["s_upper"]), n_orb),
            n_electrons=int(raw["n_electrons"]),
            gap_ev=float(raw["gap_ev"]),
            split=raw["split"],
        )


def _dim_from_upper(n_vals: int) -> int:
    n = int((np.sqrt(8 * n_vals + 1) - 1) / 2)
    if n * (n + 1) // 2 != n_vals:
        raise MolhamError(f"{n_vals} values is not an upper triangle")
    return n


class Dataset:
    """Record list with an instrumented coordinate accessor.

    String-only training paths must never request coordinates; the
    `coords_reads` counter makes that auditable.
    """

    def __init__(self, records: list[DatasetRecord]):
        self.records = records
        self.coords_reads = 0

    def __len__(self) -> int:
        return len(self.records)

    def record(self, idx: int) -> DatasetRecord:
        return self.records[idx]

    def get_coords(self, idx: int) -> np.ndarray:
        self.coords_reads += 1
        return self.records[idx].coords


@dataclass
class GenReport:
    records: list[DatasetRecord] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)


def _record_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def _generate_one(task: tuple[int, str, int, OrbitalBasisSpec]) -> DatasetRecord | dict:
    idx, smiles, seed, basis = task
    try:
        mol = parse_smiles(smiles)
        xmol = expand_hydrogens(mol)
        coords = embed_3d(xmol, _record_seed(seed, idx))
        h, s = huckel_labels(xmol, coords, basis)
        n_elec = electron_count(xmol.elements, basis)
        result = solve_gev(h, s, n_elec)
        return DatasetRecord(
            smiles=smiles,
            elements=list(xmol.elements),
            coords=coords,
            h=h,
            s=s,
            n_electrons=n_elec,
            gap_ev=result.gap_ev,
            split="",
        )
    except MolhamError as err:
        return {"index": idx, "smiles": smiles,
                "error": type(err).__name__, "detail": str(err)}


def generate_records(corpus: list[str], seed: int,
                     basis: OrbitalBasisSpec = DEFAULT_BASIS,
                     jobs: int = 1) -> GenReport:
    """Embed, label, and solve every corpus entry; failures are recorded.

    Per-record work is deterministic given (corpus index, seed), so worker
    parallelism cannot change the output; results are collected in corpus
    order either way.
    """
    tasks = [(idx, smiles, seed, basis) for idx, smiles in enumerate(corpus)]
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_generate_one, tasks))
    else:
        results = [_generate_one(t) for t in tasks]
    report = GenReport()
    for res in results:
        if isinstance(res, DatasetRecord):
            report.records.append(res)
        else:
            report.skipped.append(res)
    return report


def assign_split(records: list[DatasetRecord], config: SplitConfig) -> tuple[list[int], list[int]]:
    """Train/test index lists under the requested protocol."""
    if config.mode == "random-id":
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 1])))
        order = rng.permutation(len(records))
        n_train = int(round(config.train_fraction * len(records)))
        train = sorted(int(i) for i in order[:n_train])
        test = sorted(int(i) for i in order[n_train:])
    elif config.mode == "size-ood":
        train = [i for i, r in enumerate(records) if len(r.elements) < SIZE_TRAIN_BELOW]
        test = [i for i, r in enumerate(records) if len(r.elements) > SIZE_TEST_ABOVE]
    else:  # element-ood
        def has_ood(r: DatasetRecord) -> bool:
            return any(e in OOD_ELEMENTS for e in r.elements)
        train = [i for i, r in enumerate(records) if not has_ood(r)]
        test = [i for i, r in enumerate(records) if has_ood(r)]
    if not train or not test:
        raise EmptySplit(f"{config.mode} split left train={len(train)}, test={len(test)}")
    return train, test


def gen_dataset(corpus: list[str], config: SplitConfig, out_dir: str | Path,
                basis: OrbitalBasisSpec = DEFAULT_BASIS, jobs: int = 1) -> dict:
    """Write train.jsonl, test.jsonl, and manifest.json; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = generate_records(corpus, config.seed, basis, jobs=jobs)
    train_idx, test_idx = assign_split(report.records, config)

    for name, idxs in (("train", train_idx), ("test", test_idx)):
        with open(out / f"{name}.jsonl", "w") as fh:
            for i in idxs:
                report.records[i].split = name
                fh.write(report.records[i].to_json() + "\n")

    manifest = {
        "seed": config.seed,
        "split": {"mode": config.mode, "train_fraction": config.train_fraction,
                  "size_train_below": SIZE_TRAIN_BELOW, "size_test_above": SIZE_TEST_ABOVE,
                  "ood_elements": list(OOD_ELEMENTS)},
        "corpus_sha256": corpus_sha256(corpus),
        "n_corpus": len(corpus),
        "n_generated": len(report.records),
        "n_train": len(train_idx),
        "n_test": len(test_idx),
        "n_skipped": len(report.skipped),
        "skipped": report.skipped,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest


def load_split(out_dir: str | Path) -> tuple[Dataset, Dataset, dict]:
    out = Path(out_dir)
    sets = []
    for name in ("train", "test"):
        with open(out / f"{name}.jsonl") as fh:
            sets.append(Dataset([DatasetRecord.from_json(line) for line in fh if line.strip()]))
    manifest = json.loads((out / "manifest.json").read_text())
    return sets[0], sets[1], manifest
