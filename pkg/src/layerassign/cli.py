"""Command line entry point: ``las <subcommand> ...``.

Exit status: 0 success, 1 usage error (bad flag, missing file, bad config),
2 runtime failure (e.g. training divergence).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, DataSource, RunConfig, load_config
from .data import DataFormatError, generate_synthetic_task, save_dataset
from .nn.network import SpecError
from .nn.training import DivergenceError
from .oracle import (
    ArchitectureDataset,
    SurrogateLandscape,
    build_architecture_dataset,
    compare_search_to_oracle,
    dataset_from_landscape,
    surrogate_search_adapter,
    verify_nir,
)
from .report import COMPARE_COLUMNS, compare_table, read_csv, write_csv, write_report
from .search import SearchTrace, run_search

log = logging.getLogger("layerassign")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _depth_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split("..")
        return int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO..HI, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="las", description="Layer assignment search with inherited sampling.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("search", help="run the inherited-sampling search")
    s.add_argument("--config", type=Path)
    s.add_argument("--data", type=Path, help="LASD or CSV dataset (overrides the config's data source)")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--surrogate", choices=["planted", "random", "adversarial", "constant"],
                   help="score candidates with a synthetic landscape instead of training")

    o = sub.add_parser("oracle", help="build the brute-force architecture dataset")
    o.add_argument("--config", type=Path)
    o.add_argument("--data", type=Path)
    o.add_argument("--out", type=Path, required=True)
    o.add_argument("--seed", type=int)
    o.add_argument("--depths", type=_depth_range, help="depth range LO..HI")
    o.add_argument("--workers", type=int)
    o.add_argument("--family", choices=["plain", "residual", "both"])
    o.add_argument("--repeats", type=int, help="seeds averaged per assignment")
    o.add_argument("--surrogate", choices=["planted", "random", "adversarial", "constant"],
                   help="fill the dataset from a synthetic landscape instead of training")

    v = sub.add_parser("verify-nir", help="check the inheritance relation on an oracle dataset")
    v.add_argument("--dataset", type=Path, required=True)
    v.add_argument("--topk", type=int, default=1)
    v.add_argument("--family")
    v.add_argument("--out", type=Path)

    c = sub.add_parser("compare", help="score a search trace against the oracle")
    c.add_argument("--trace", type=Path, required=True)
    c.add_argument("--dataset", type=Path, required=True)
    c.add_argument("--retrain", action="store_true", help="retrain each winner from scratch")
    c.add_argument("--config", type=Path, help="run config supplying the retrain schedule and data")
    c.add_argument("--data", type=Path)
    c.add_argument("--family")
    c.add_argument("--out", type=Path)

    r = sub.add_parser("report", help="emit plot-data CSVs and figures")
    r.add_argument("--dataset", type=Path)
    r.add_argument("--trace", type=Path)
    r.add_argument("--compare", type=Path)
    r.add_argument("--topk", type=int, default=4)
    r.add_argument("--no-figures", action="store_true")
    r.add_argument("--out", type=Path, required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset file")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--classes", type=int, default=8)
    g.add_argument("--samples-per-class", type=int, default=250)
    g.add_argument("--size", type=int, default=32)
    g.add_argument("--noise", type=float, default=1.2)
    g.add_argument("--format", choices=["lasd", "csv"])
    return p


# -- helpers ------------------------------------------------------------------

def _require(path: Path | None, what: str) -> Path:
    if path is None or not path.exists():
        raise UsageError(f"{what} not found: {path}")
    return path


def _run_config(args) -> RunConfig:
    cfg = load_config(_require(args.config, "config file")) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "data", None) is not None:
        cfg.data = DataSource(path=str(_require(args.data, "dataset file")))
    return cfg


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _finish(out: Path, files: list[Path], command: str, params: dict) -> None:
    """Record ``files`` with their digests in ``out/manifest.json``."""
    out.mkdir(parents=True, exist_ok=True)
    mpath = out / "manifest.json"
    manifest = json.loads(mpath.read_text()) if mpath.exists() else {"files": {}, "runs": []}
    for f in files:
        manifest["files"][str(Path(f).relative_to(out))] = _sha256(Path(f))
    manifest["runs"].append({"command": command, "params": params})
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _snapshot(out: Path, cfg: RunConfig) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.resolved.json"
    d = cfg.to_dict()
    d["digest"] = cfg.digest()
    path.write_text(json.dumps(d, indent=2, sort_keys=True))
    return path


def _landscape(cfg: RunConfig, kind: str) -> SurrogateLandscape:
    s = cfg.surrogate
    return SurrogateLandscape(kind, cfg.spec.n, seed=s.seed,
                              max_depth=max(cfg.spec.target_depth, cfg.oracle.depth_hi), trap_depth=s.trap_depth)


def _jsonable(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}


# -- subcommands ----------------------------------------------------------------

def cmd_search(args) -> int:
    cfg = _run_config(args)
    scfg = cfg.search_config()
    out = args.out
    if args.surrogate:
        cfg.surrogate = dataclasses.replace(cfg.surrogate, kind=args.surrogate)
    snap = _snapshot(out, cfg)
    if args.surrogate:
        trace = run_search(scfg, evaluator=surrogate_search_adapter(_landscape(cfg, args.surrogate)))
    else:
        trace = run_search(scfg, cfg.data.load(cfg.spec))
    tpath = out / "search_trace.json"
    trace.save(tpath)
    _finish(out, [snap, tpath], "search", _jsonable(args))
    print(f"chain: {' '.join(str(a) for a in trace.chain)}")
    print(f"budget: {trace.budget} candidate trainings")
    if trace.error:
        print(f"search failed: {trace.error}", file=sys.stderr)
        return 2
    return 0


def cmd_oracle(args) -> int:
    cfg = _run_config(args)
    lo, hi = args.depths or (cfg.oracle.depth_lo, cfg.oracle.depth_hi)
    workers = args.workers if args.workers is not None else cfg.oracle.workers
    if os.environ.get("LAS_WORKERS"):
        workers = int(os.environ["LAS_WORKERS"])
    repeats = args.repeats or cfg.oracle.repeats
    families = ["plain", "residual"] if args.family == "both" else [args.family or cfg.spec.cell_kind]
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    snap = _snapshot(out, cfg)
    path = out / "oracle.csv"
    merged = ArchitectureDataset()
    if args.surrogate:
        ls = _landscape(cfg, args.surrogate)
        for fam in families:
            for rec in dataset_from_landscape(ls, lo, hi, family=fam).sorted_records():
                merged.add(rec)
    else:
        data = cfg.data.load(cfg.spec)
        for fam in families:
            spec = dataclasses.replace(cfg.spec, cell_kind=fam)
            ds = build_architecture_dataset(spec, lo, hi, cfg.train, data, workers=workers,
                                            run_seed=cfg.seed, repeats=repeats, path=path)
            for rec in ds.sorted_records():
                merged.add(rec)
    merged.to_csv(path)
    _finish(out, [snap, path], "oracle", _jsonable(args) | {"workers": workers})
    for fam in families:
        print(f"{fam}: {sum(1 for f, _ in merged.records if f == fam)} records")
    return 0


def cmd_verify_nir(args) -> int:
    ds = ArchitectureDataset.from_csv(_require(args.dataset, "dataset"))
    report = verify_nir(ds, args.topk, args.family)
    out = args.out or args.dataset.parent
    out.mkdir(parents=True, exist_ok=True)
    path = out / "nir_report.json"
    path.write_text(json.dumps(report, indent=2))
    _finish(out, [path], "verify-nir", _jsonable(args))
    print(f"inherited fraction (top-{args.topk}): {report['fraction']:.3f}")
    return 0


def cmd_compare(args) -> int:
    trace = SearchTrace.load(_require(args.trace, "trace"))
    ds = ArchitectureDataset.from_csv(_require(args.dataset, "dataset"))
    if args.retrain:
        cfg = _run_config(args)
        family = ds.resolve_family(args.family)
        spec = dataclasses.replace(cfg.spec, cell_kind=family) if family in ("plain", "residual") else cfg.spec
        rows = compare_search_to_oracle(trace, ds, cfg.train, spec=spec, data=cfg.data.load(spec),
                                        family=family, run_seed=cfg.seed, repeats=cfg.oracle.repeats)
    else:
        rows = compare_search_to_oracle(trace, ds, family=args.family)
    out = args.out or args.trace.parent
    out.mkdir(parents=True, exist_ok=True)
    path = out / "compare.csv"
    write_csv(compare_table(rows), path, COMPARE_COLUMNS)
    _finish(out, [path], "compare", _jsonable(args))
    for r in rows:
        print(f"depth {r.depth}: searched {r.searched_assignment} {r.searched_acc:.4f}  "
              f"best {r.best_assignment} {r.best_acc:.4f}  gap {r.gap:.4f}")
    return 0


def cmd_report(args) -> int:
    ds = ArchitectureDataset.from_csv(_require(args.dataset, "dataset")) if args.dataset else None
    trace = SearchTrace.load(_require(args.trace, "trace")) if args.trace else None
    compare = read_csv(_require(args.compare, "compare table")) if args.compare else None
    if ds is None and trace is None:
        raise UsageError("report needs --dataset and/or --trace")
    files = write_report(args.out, ds, trace, compare, args.topk, figures=not args.no_figures)
    _finish(args.out, files, "report", _jsonable(args))
    for f in files:
        print(f)
    return 0


def cmd_gen_data(args) -> int:
    split = generate_synthetic_task(args.seed, args.classes, args.samples_per_class, (3, args.size, args.size),
                                    args.noise)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(split, args.out, args.format)
    print(f"{args.out}: {len(split.train_x)} train / {len(split.val_x)} val, digest {split.digest()[:16]}")
    return 0


COMMANDS = {
    "search": cmd_search,
    "oracle": cmd_oracle,
    "verify-nir": cmd_verify_nir,
    "compare": cmd_compare,
    "report": cmd_report,
    "gen-data": cmd_gen_data,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"las: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, FileNotFoundError, SpecError, DataFormatError) as exc:
        print(f"las: error: {exc}", file=sys.stderr)
        return 1
    except (DivergenceError, ValueError, KeyError) as exc:
        print(f"las: failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
