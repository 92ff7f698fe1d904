"""Command-line entry points.

Four subcommands: ``deidentify`` runs the optimization on input images and
writes PNGs plus trajectory logs; ``evaluate`` scores original/edited
directory pairs (or recomputes the overall score from published column
means); ``ablate`` sweeps one pipeline parameter and merges the per-cell
reports; ``trajectory`` fits the PCA pool over latent snapshots and writes
projected coordinates.  All outputs are deterministic for a fixed seed, so
reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import torch
from sklearn.base import clone
from sklearn.model_selection import ParameterGrid

from .backends import ToyDenoiser
from .config import (
    RunConfig,
    config_to_mapping,
    dump_config_text,
    resolve_config,
)
from .estimator import FaceDeidentifier
from .exceptions import ConfigError, LatentDeidError
from .imgio import load_image, save_image
from .losses import LossWeights
from .metrics import (
    TABLE_HEADER,
    aggregate,
    evaluate_pair,
    fit_pca,
    overall_from_columns,
)
from .optimizer import OptimizationConfig, optimize
from .providers import make_providers
from .schedule import EditWindow, NoiseSchedule

log = logging.getLogger("latentdeid")

#: ablate sweep name -> FaceDeidentifier parameter
SWEEP_PARAMS = {
    "lr": "lr",
    "lambda": "strength",
    "n_opt": "n_opt",
    "denoise_steps": "n_denoise",
    "weight_identity": "weight_identity",
    "weight_attribute": "weight_attribute",
    "weight_mask": "weight_mask",
}

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def _optimization_config(cfg: RunConfig) -> OptimizationConfig:
    return OptimizationConfig(
        mode=cfg.mode,
        lr=cfg.lr,
        strength=cfg.strength,
        n_opt=cfg.n_opt,
        init_norm=cfg.init_norm,
        seed=cfg.seed,
        weights=LossWeights(cfg.weight_identity, cfg.weight_attribute, cfg.weight_mask),
        window=EditWindow(cfg.t0, cfg.t_edit, cfg.t_boost, cfg.n_denoise),
        bernoulli_attr=cfg.bernoulli_attr,
        use_checkpoint=cfg.use_checkpoint,
        attribute_targets=dict(cfg.attribute_targets),
    )


def _parse_fix_attrs(pairs: list[str] | None) -> dict[str, float] | None:
    if not pairs:
        return None
    out: dict[str, float] = {}
    for item in pairs:
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--fix-attr expects 'Name=prob', got {item!r}")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"--fix-attr probability is not a number: {item!r}") from None
    return out


def _flag_overrides(args: argparse.Namespace) -> dict:
    fields = (
        "mode", "lr", "strength", "n_opt", "init_norm", "seed",
        "t0", "t_edit", "t_boost", "n_denoise", "total_steps",
        "weight_identity", "weight_attribute", "weight_mask",
        "bernoulli_attr", "use_checkpoint", "providers", "workers",
        "record_latents",
    )
    overrides = {f: getattr(args, f, None) for f in fields}
    overrides["attribute_targets"] = _parse_fix_attrs(getattr(args, "fix_attr", None))
    return overrides


def _deidentify_one(path: Path, cfg: RunConfig, out_dir: Path) -> None:
    x = load_image(path)
    backend = ToyDenoiser(image_size=tuple(x.shape[:2]))
    providers = make_providers(cfg.providers)
    schedule = NoiseSchedule.linear(total_steps=cfg.total_steps)
    x_hat, _, traj = optimize(
        x,
        _optimization_config(cfg),
        backend,
        providers,
        schedule=schedule,
        record_latents=cfg.record_latents,
    )
    save_image(x_hat, out_dir / path.name)
    (out_dir / f"{path.stem}_trajectory.csv").write_text(traj.to_csv())
    if cfg.record_latents:
        np.save(out_dir / f"{path.stem}_latents.npy", traj.snapshot_array())
    log.info("de-identified %s (%d steps)", path.name, len(traj.records))


def cmd_deidentify(args: argparse.Namespace) -> int:
    cfg = resolve_config(args.config, _flag_overrides(args))
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = [Path(p) for p in args.inputs]

    failures: list[tuple[Path, Exception]] = []

    def run(path: Path) -> None:
        try:
            _deidentify_one(path, cfg, out_dir)
        except Exception as e:  # noqa: BLE001 - collected and reported
            failures.append((path, e))

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            list(pool.map(run, inputs))
    else:
        for path in inputs:
            run(path)

    (out_dir / "config.txt").write_text(dump_config_text(config_to_mapping(cfg)))
    if failures:
        for path, e in failures:
            print(f"FAILED {path}: {e}", file=sys.stderr)
        return 1
    return 0


def _image_files(directory: Path) -> dict[str, Path]:
    return {
        p.name: p
        for p in sorted(directory.iterdir())
        if p.suffix.lower() in IMAGE_SUFFIXES
    }


def cmd_evaluate(args: argparse.Namespace) -> int:
    if args.from_means:
        values = [float(v) for v in args.from_means.split(",")]
        if len(values) != 6:
            raise ConfigError(
                "--from-means expects six comma-separated values "
                "(sid,detect,emotion,gender,pose,gaze)"
            )
        hm_attr, overall = overall_from_columns(*values)
        print("\t".join(TABLE_HEADER))
        print("\t".join([f"{v:.3f}" for v in values] + [f"{overall:.3f}"]))
        print(f"hm_attr\t{hm_attr:.5f}")
        print(f"overall\t{overall:.5f}")
        return 0

    if not args.originals or not args.edited:
        raise ConfigError("evaluate needs --originals and --edited (or --from-means)")
    cfg = resolve_config(args.config, {"providers": args.providers})
    originals = _image_files(Path(args.originals))
    edited = _image_files(Path(args.edited))
    shared = sorted(set(originals) & set(edited))
    skipped = sorted(set(originals) ^ set(edited))
    if skipped:
        print(f"skipping {len(skipped)} unmatched file(s): {', '.join(skipped)}",
              file=sys.stderr)
    if not shared:
        print("no filenames are present in both directories", file=sys.stderr)
        return 2

    providers = make_providers(cfg.providers)
    pairs = [
        evaluate_pair(
            load_image(originals[name]), load_image(edited[name]),
            providers.evaluators, name=name,
        )
        for name in shared
    ]
    report = aggregate(pairs)
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n")
    print("\t".join(TABLE_HEADER))
    print(report.table_row())
    return 0


def _parse_values(raw: str) -> list[float]:
    items = [v for v in (s.strip() for s in raw.split(",")) if v]
    if not items:
        raise ConfigError("--values list is empty")
    return [float(v) for v in items]


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args.config, _flag_overrides(args))
    values = _parse_values(args.values)
    est_param = SWEEP_PARAMS[args.param]
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    X = np.stack([load_image(p).numpy() for p in args.inputs])
    base = FaceDeidentifier(
        mode=cfg.mode, lr=cfg.lr, strength=cfg.strength, n_opt=cfg.n_opt,
        init_norm=cfg.init_norm, seed=cfg.seed, t0=cfg.t0, t_edit=cfg.t_edit,
        t_boost=cfg.t_boost, n_denoise=cfg.n_denoise, total_steps=cfg.total_steps,
        weight_identity=cfg.weight_identity, weight_attribute=cfg.weight_attribute,
        weight_mask=cfg.weight_mask, bernoulli_attr=cfg.bernoulli_attr,
        use_checkpoint=cfg.use_checkpoint, attribute_targets=cfg.attribute_targets,
        providers=cfg.providers,
    )
    evaluators = make_providers(cfg.providers).evaluators

    merged_rows = []
    for cell in ParameterGrid({est_param: values}):
        value = cell[est_param]
        est = clone(base).set_params(**cell)
        X_hat = est.fit_transform(X)
        pairs = [
            evaluate_pair(_as_tensor(x), _as_tensor(x_hat), evaluators, name=Path(p).name)
            for x, x_hat, p in zip(X, X_hat, args.inputs)
        ]
        report = aggregate(pairs)
        cell_path = out_dir / f"ablate_{args.param}_{value:g}.json"
        cell_path.write_text(report.to_json() + "\n")
        merged_rows.append(report.table_row(label=f"{value:g}"))
        log.info("ablate %s=%s -> %s", args.param, value, cell_path.name)

    table = "\t".join((args.param,) + TABLE_HEADER) + "\n" + "\n".join(merged_rows) + "\n"
    merged_path = out_dir / f"ablate_{args.param}.tsv"
    merged_path.write_text(table)
    print(table, end="")
    return 0


def _as_tensor(arr) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(arr))


def cmd_trajectory(args: argparse.Namespace) -> int:
    paths = [Path(p) for p in args.snapshots]
    for p in paths:
        if not p.exists():
            raise ConfigError(f"snapshot file not found: {p}")
    arrays = [np.load(p) for p in paths]
    pool = np.vstack(arrays)
    basis = fit_pca(pool, k=args.k)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for p, arr in zip(paths, arrays):
        coords = basis.project(arr)
        header = "step," + ",".join(f"pc{i + 1}" for i in range(args.k))
        lines = [header] + [
            f"{i}," + ",".join(repr(float(c)) for c in row)
            for i, row in enumerate(coords)
        ]
        (out_dir / f"{p.stem}_pca.csv").write_text("\n".join(lines) + "\n")
    evr = ", ".join(f"{v:.4f}" for v in basis.explained_variance_ratio)
    print(f"pool size {pool.shape[0]}, explained variance ratio: {evr}")
    return 0


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file path (default: $LATENTDEID_CONFIG)")
    p.add_argument("--mode", choices=("linear", "tangent"))
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda", dest="strength", type=float,
                   help="linear edit strength")
    p.add_argument("--n-opt", dest="n_opt", type=int)
    p.add_argument("--init-norm", dest="init_norm", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--t0", type=int)
    p.add_argument("--t-edit", dest="t_edit", type=int)
    p.add_argument("--t-boost", dest="t_boost", type=int)
    p.add_argument("--denoise-steps", dest="n_denoise", type=int)
    p.add_argument("--total-steps", dest="total_steps", type=int)
    p.add_argument("--weight-identity", dest="weight_identity", type=float)
    p.add_argument("--weight-attribute", dest="weight_attribute", type=float)
    p.add_argument("--weight-mask", dest="weight_mask", type=float)
    p.add_argument("--bernoulli-attr", dest="bernoulli_attr",
                   action="store_true", default=None)
    p.add_argument("--checkpoint", dest="use_checkpoint",
                   action="store_true", default=None)
    p.add_argument("--providers")
    p.add_argument("--workers", type=int)
    p.add_argument("--record-latents", dest="record_latents",
                   action="store_true", default=None)
    p.add_argument("--fix-attr", dest="fix_attr", action="append",
                   metavar="NAME=PROB",
                   help="pin an attribute target, e.g. --fix-attr 'Smile=0.9'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentdeid",
        description="Training-free face de-identification via latent direction optimization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("deidentify", help="optimize and write de-identified images")
    p.add_argument("inputs", nargs="+", help="input image files")
    p.add_argument("-o", "--output-dir", default="out")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_deidentify)

    p = sub.add_parser("evaluate", help="score original/edited pairs")
    p.add_argument("--originals", help="directory of source images")
    p.add_argument("--edited", help="directory of de-identified images")
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--from-means", dest="from_means",
                   help="six comma-separated column means (report-only mode)")
    p.add_argument("--providers")
    p.add_argument("--config")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="sweep one parameter and merge reports")
    p.add_argument("inputs", nargs="+", help="input image files")
    p.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    p.add_argument("--values", required=True,
                   help="comma-separated sweep values")
    p.add_argument("-o", "--output-dir", default="out")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("trajectory", help="PCA-project latent snapshots")
    p.add_argument("snapshots", nargs="+", help=".npy snapshot files")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("-o", "--output-dir", default="out")
    p.set_defaults(func=cmd_trajectory)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LatentDeidError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
