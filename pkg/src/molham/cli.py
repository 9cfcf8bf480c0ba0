"""Command-line entry point.

Subcommands: gen-data, pretrain, finetune, predict, eval, screen, bench,
selftest. Options can come from a JSON config file (--config) with explicit
flags taking precedence. Every run writes a run-manifest JSON with the fully
resolved configuration, seed, version, and input hashes next to its outputs.

Exit codes: 0 success, 1 usage error, 2 data or numeric error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .basis import electron_count
from .corpus import build_corpus, corpus_sha256
from .dataset import SplitConfig, gen_dataset, load_split
from .errors import EmptyThresholds, MolhamError
from .hamhead import layout, save_hamiltonian
from .model import Model, ModelConfig
from .oracle import embed_3d, huckel_labels
from .screening import (bench_pipelines, classify_by_gap, default_thresholds,
                        report_to_csv, report_to_json)
from .smiles import expand_hydrogens, parse_smiles, tokenize
from .spectral import solve_gev
from .training import (TrainConfig, evaluate, finetune, gap_predictions,
                       load_checkpoint, pretrain, save_checkpoint, write_trace)

USAGE_EXIT = 1
DATA_EXIT = 2


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 on usage errors."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(USAGE_EXIT)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, resolved: dict, inputs: dict[str, str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "version": __version__,
        "config": resolved,
        "inputs": inputs,
    }
    (out_dir / "run-manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _merge(defaults: dict, config_file: dict, args: argparse.Namespace, keys: list[str]) -> dict:
    """defaults < config file < explicit flags."""
    out = dict(defaults)
    for k in keys:
        if k in config_file:
            out[k] = config_file[k]
    for k in keys:
        v = getattr(args, k.replace("-", "_"), None)
        if v is not None:
            out[k] = v
    return out


def _model_config(resolved: dict) -> ModelConfig:
    return ModelConfig(
        width=resolved["width"], token_layers=resolved["token_layers"],
        geom_rounds=resolved["geom_rounds"], cutoff=resolved["cutoff"],
        n_rbf=resolved["n_rbf"], n_shear=resolved["n_shear"],
        head_hidden=resolved["head_hidden"], compensation=resolved["compensation"],
        loss_form=resolved["loss_form"],
    )


_MODEL_KEYS = ["width", "token_layers", "geom_rounds", "cutoff", "n_rbf", "n_shear",
               "head_hidden", "compensation", "loss_form"]
_MODEL_DEFAULTS = {k: getattr(ModelConfig(), k) for k in _MODEL_KEYS}
_TRAIN_KEYS = ["epochs", "batch_size", "lr", "lambda1", "lambda2", "mask_keep_prob",
               "seed", "fusion", "encoder_lr_scale"]


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--width", type=int)
    p.add_argument("--token-layers", type=int, dest="token_layers")
    p.add_argument("--geom-rounds", type=int, dest="geom_rounds")
    p.add_argument("--cutoff", type=float)
    p.add_argument("--n-rbf", type=int, dest="n_rbf")
    p.add_argument("--n-shear", type=int, dest="n_shear")
    p.add_argument("--head-hidden", type=int, dest="head_hidden")
    p.add_argument("--compensation", type=_bool_flag)
    p.add_argument("--loss-form", dest="loss_form", choices=["log_sigmoid", "literal"])


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--mask-keep-prob", type=float, dest="mask_keep_prob")
    p.add_argument("--seed", type=int)
    p.add_argument("--fusion", type=_bool_flag)
    p.add_argument("--encoder-lr-scale", type=float, dest="encoder_lr_scale")


def _bool_flag(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> _Parser:
    parser = _Parser(prog="molham", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-data", help="generate a labeled dataset from a SMILES corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--corpus", help="path to a SMILES list; default is the bundled corpus")
    p.add_argument("--split", choices=["random-id", "size-ood", "element-ood"])
    p.add_argument("--seed", type=int)
    p.add_argument("--train-fraction", type=float, dest="train_fraction")
    p.add_argument("--limit", type=int, help="use only the first N corpus entries")
    p.add_argument("--max-heavy-atoms", type=int, dest="max_heavy_atoms")
    p.add_argument("--jobs", type=int, default=1, help="parallel generation workers")

    p = sub.add_parser("pretrain", help="both-modality pre-training")
    p.add_argument("--data", required=True, help="dataset directory from gen-data")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    _add_model_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("finetune", help="masked weakly-supervised fine-tuning")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="checkpoint to start from (omit for a fresh model)")
    p.add_argument("--config")
    _add_model_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("predict", help="predict a Hamiltonian for one SMILES string")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--smiles", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="seed for geometry when --fusion")
    p.add_argument("--fusion", type=_bool_flag, default=False)
    p.add_argument("--config")

    p = sub.add_parser("eval", help="metrics on a dataset's test half")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fusion", type=_bool_flag, default=False)
    p.add_argument("--config")

    p = sub.add_parser("screen", help="gap-threshold screening report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--thresholds", help="comma-separated eV thresholds")
    p.add_argument("--fusion", type=_bool_flag, default=False)
    p.add_argument("--config")

    p = sub.add_parser("bench", help="wall-clock comparison of the inference routes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--limit", type=int)
    p.add_argument("--config")

    p = sub.add_parser("selftest", help="run the built-in invariant suite")
    p.add_argument("--out")

    return parser


# --- subcommand bodies ---

def _cmd_gen_data(args: argparse.Namespace) -> int:
    cfg_file = _load_config_file(args.config)
    resolved = _merge({"split": "random-id", "seed": 0, "train_fraction": 0.8,
                       "limit": None, "max_heavy_atoms": None, "corpus": None, "jobs": 1},
                      cfg_file, args,
                      ["split", "seed", "train_fraction", "limit", "max_heavy_atoms",
                       "corpus", "jobs"])
    inputs = {}
    if resolved["corpus"]:
        corpus = [line.strip() for line in Path(resolved["corpus"]).read_text().splitlines()
                  if line.strip()]
        inputs[resolved["corpus"]] = _sha256(Path(resolved["corpus"]))
    else:
        corpus = build_corpus()
        inputs["<bundled corpus>"] = corpus_sha256(corpus)
    if resolved["max_heavy_atoms"]:
        corpus = [s for s in corpus
                  if parse_smiles(s).n_atoms <= resolved["max_heavy_atoms"]]
    if resolved["limit"]:
        corpus = corpus[:resolved["limit"]]
    split = SplitConfig(mode=resolved["split"], seed=resolved["seed"],
                        train_fraction=resolved["train_fraction"])
    out = Path(args.out)
    manifest = gen_dataset(corpus, split, out, jobs=resolved["jobs"])
    _write_manifest(out, "gen-data", resolved, inputs)
    print(json.dumps({k: manifest[k] for k in
                      ("n_generated", "n_train", "n_test", "n_skipped")}))
    return 0


def _train_common(args: argparse.Namespace, stage: str) -> int:
    cfg_file = _load_config_file(args.config)
    defaults = dict(_MODEL_DEFAULTS)
    defaults.update({"epochs": 10, "batch_size": 16, "lr": 1e-3, "lambda1": 0.5,
                     "lambda2": 0.8, "mask_keep_prob": 0.85, "seed": 0, "fusion": False,
                     "encoder_lr_scale": 1.0})
    resolved = _merge(defaults, cfg_file, args, _MODEL_KEYS + _TRAIN_KEYS)
    out = Path(args.out)
    data_dir = Path(args.data)
    train_set, _, _ = load_split(data_dir)

    train_cfg = TrainConfig(stage=stage, epochs=resolved["epochs"],
                            batch_size=resolved["batch_size"], lr=resolved["lr"],
                            lambda1=resolved["lambda1"], lambda2=resolved["lambda2"],
                            mask_keep_prob=resolved["mask_keep_prob"],
                            seed=resolved["seed"], fusion=resolved["fusion"],
                            encoder_lr_scale=resolved["encoder_lr_scale"])
    model_cfg = _model_config(resolved)

    init_path = getattr(args, "init", None)
    if stage == "finetune" and init_path:
        model, _, _ = load_checkpoint(init_path, expect=model_cfg)
        inputs = {init_path: _sha256(Path(init_path))}
    else:
        model = Model.init(model_cfg, resolved["seed"])
        inputs = {}
    for name in ("train.jsonl", "test.jsonl"):
        inputs[str(data_dir / name)] = _sha256(data_dir / name)

    run = pretrain if stage == "pretrain" else finetune
    rows, rng_state = run(model, train_set, train_cfg)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.mh", model, train_cfg, rng_state)
    write_trace(out / "trace.csv", rows)
    _write_manifest(out, stage, resolved, inputs)
    if stage == "finetune":
        assert train_cfg.fusion or train_set.coords_reads == 0, \
            "string-only fine-tuning read coordinates"
    print(json.dumps({"steps": len(rows),
                      "final_loss": rows[-1].parts["loss_total"] if rows else None}))
    return 0


def _cmd_predict(args: argparse.Namespace) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    tokens = tokenize(args.smiles)
    xmol = expand_hydrogens(parse_smiles(args.smiles))
    lay = layout(xmol.elements)
    leaves = model.leaves(None)
    coords = embed_3d(xmol, args.seed)  # evaluation-time overlap geometry
    if args.fusion:
        h = model.hamiltonian_fused(leaves, tokens, xmol, lay, coords).data
    else:
        h = model.hamiltonian_from_tokens(leaves, tokens, xmol, lay).data
    _, s = huckel_labels(xmol, coords)
    result = solve_gev(h, s, electron_count(xmol.elements))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_hamiltonian(out / "hamiltonian.bin", h, lay)
    summary = {"smiles": args.smiles, "n_orbitals": lay.n_orb,
               "homo_hartree": result.homo, "lumo_hartree": result.lumo,
               "gap_ev": result.gap_ev}
    (out / "prediction.json").write_text(json.dumps(summary, indent=1) + "\n")
    _write_manifest(out, "predict",
                    {"smiles": args.smiles, "fusion": args.fusion, "seed": args.seed},
                    {args.checkpoint: _sha256(Path(args.checkpoint))})
    print(json.dumps(summary))
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    _, test_set, _ = load_split(Path(args.data))
    metrics = evaluate(model, test_set, fusion=args.fusion)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    _write_manifest(out, "eval", {"fusion": args.fusion},
                    {args.checkpoint: _sha256(Path(args.checkpoint)),
                     str(Path(args.data) / "test.jsonl"): _sha256(Path(args.data) / "test.jsonl")})
    print(json.dumps(metrics, sort_keys=True))
    return 0


def _cmd_screen(args: argparse.Namespace) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    _, test_set, _ = load_split(Path(args.data))
    if args.thresholds is not None:
        thresholds = [float(x) for x in args.thresholds.split(",") if x.strip()]
        if not thresholds:
            raise EmptyThresholds("threshold override is empty")
    else:
        thresholds = default_thresholds()
    pred, true = gap_predictions(model, test_set, fusion=args.fusion)
    rows = classify_by_gap(pred, true, thresholds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "screen.csv").write_text(report_to_csv(rows))
    (out / "screen.json").write_text(report_to_json(rows, {"thresholds": thresholds}))
    _write_manifest(out, "screen", {"thresholds": thresholds, "fusion": args.fusion},
                    {args.checkpoint: _sha256(Path(args.checkpoint))})
    print(report_to_csv(rows).strip())
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    _, test_set, _ = load_split(Path(args.data))
    report = bench_pipelines(model, test_set, repeat=args.repeat, limit=args.limit)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.json").write_text(report.to_json())
    _write_manifest(out, "bench", {"repeat": args.repeat, "limit": args.limit},
                    {args.checkpoint: _sha256(Path(args.checkpoint))})
    print(report.to_json().strip())
    return 0


def _cmd_selftest(args: argparse.Namespace) -> int:
    from .selftest import run_selftest
    ok = run_selftest()
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _write_manifest(Path(args.out), "selftest", {}, {})
    return 0 if ok else DATA_EXIT


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {
        "gen-data": _cmd_gen_data,
        "pretrain": lambda a: _train_common(a, "pretrain"),
        "finetune": lambda a: _train_common(a, "finetune"),
        "predict": _cmd_predict,
        "eval": _cmd_eval,
        "screen": _cmd_screen,
        "bench": _cmd_bench,
        "selftest": _cmd_selftest,
    }
    try:
        return handlers[args.subcommand](args)
    except MolhamError as err:
        sys.stderr.write(f"error: {err}\n")
        return DATA_EXIT
    except FileNotFoundError as err:
        sys.stderr.write(f"error: {err}\n")
        return DATA_EXIT
    except (ValueError, json.JSONDecodeError) as err:
        sys.stderr.write(f"error: {err}\n")
        return DATA_EXIT


if __name__ == "__main__":
    raise SystemExit(main())
