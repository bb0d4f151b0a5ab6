"""Command-line front end: ``gaussunmix {synth,pgt,train,eval,trials}``.

Every command writes into ``--out`` and leaves exactly one ``run_manifest.json``
there. The manifest is the only file carrying timestamps or timings; all other
outputs are byte-identical across runs with the same seed and config.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import subprocess
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .hsi import (DataError, HsiCube, check_abundances, cube_to_matrix, load_abundances, load_cube,
                  load_endmembers, matrix_to_cube, save_abundances, save_cube, save_endmembers)
from .metrics import METRIC_NAMES, EvalReport, evaluate
from .networks import build_model, estimate_abundances, extract_endmembers, load_model, save_model
from .nn import NumericalError
from .pgt import kmeans_pseudo_gt, load_external_pgt
from .synth import SynthConfig, bundled_library, load_library_csv, make_scene
from .trainer import (STRATEGIES, TrainConfig, TrainReport, train_blind, train_gauss,
                      train_gauss_extended, train_prime, write_report)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST = "run_manifest.json"
CONFIG_SECTIONS = ("synth", "train", "library")

# labels for child seeds; all randomness derives from --seed
_SEED_LABELS = {"synth": 1, "pgt": 2, "model": 3, "train": 4}


class UsageError(Exception):
    """Invalid combination of arguments or configuration."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def child_seed(seed: int, label: str) -> int:
    return int(np.random.SeedSequence([seed, _SEED_LABELS[label]]).generate_state(1)[0])


# ---------------------------------------------------------------- config

def load_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: top level must be an object")
    unknown = set(cfg) - set(CONFIG_SECTIONS)
    if unknown:
        raise UsageError(f"{path}: unknown sections {sorted(unknown)}; allowed {CONFIG_SECTIONS}")
    for section in ("synth", "train"):
        if "seed" in cfg.get(section, {}):
            raise UsageError(f"{path}: seeds come from --seed only, remove {section}.seed")
    return cfg


def _dataclass_from(cls, values: dict, **overrides):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise UsageError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**{**values, **overrides})
    except TypeError as exc:
        raise UsageError(str(exc)) from exc


def synth_config(cfg: dict, seed: int) -> SynthConfig:
    sc = _dataclass_from(SynthConfig, cfg.get("synth", {}), seed=child_seed(seed, "synth"))
    try:
        sc.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return sc


def train_config(cfg: dict, seed: int, strategy: str | None = None) -> TrainConfig:
    values = dict(cfg.get("train", {}))
    if strategy is not None:
        values["strategy"] = strategy
    tc = _dataclass_from(TrainConfig, values, seed=child_seed(seed, "train"))
    try:
        tc.validate(require_pgt_path=False)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return tc


def _library(cfg: dict):
    paths = cfg.get("library")
    if paths is None:
        return bundled_library()
    return [load_library_csv(p) for p in paths]


# ---------------------------------------------------------------- output helpers

def write_pgm(path, image: np.ndarray) -> None:
    """Binary portable graymap (P5) from a 2-D uint8 array."""
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError("PGM image must be a 2-D uint8 array")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes(order="C"))


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5" or parts[3] != b"255":
        raise DataError(f"{path}: not an 8-bit binary PGM")
    w, h = int(parts[1]), int(parts[2])
    data = parts[4]
    if len(data) != w * h:
        raise DataError(f"{path}: expected {w * h} pixels, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def abundance_image(row: np.ndarray, width: int, height: int) -> np.ndarray:
    """Linear 0..1 -> 0..255; only an abundance of exactly 1 maps to 255."""
    scaled = np.floor(np.clip(row, 0.0, 1.0) * 255.0)
    return scaled.reshape(height, width).astype(np.uint8)


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return f"unknown ({__version__})"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else f"unknown ({__version__})"


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_manifest(out: Path, args, inputs: dict, outputs: list[str], started: float, wall: float) -> None:
    stamp = lambda t: _dt.datetime.fromtimestamp(t, _dt.timezone.utc).isoformat()  # noqa: E731
    _write_json(out / MANIFEST, {
        "command": args.command,
        "config": str(args.config) if args.config else None,
        "seed": args.seed,
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "outputs": sorted(outputs),
        "build": _git_describe(),
        "started": stamp(started),
        "finished": stamp(started + wall),
        "wall_time_s": wall,
    })


# ---------------------------------------------------------------- commands

def cmd_synth(args, cfg: dict, out: Path) -> dict:
    sc = synth_config(cfg, args.seed)
    scene = make_scene(sc, _library(cfg))
    cube = matrix_to_cube(scene.Y.astype(np.float32), scene.width, scene.height)
    save_cube(cube, out / "cube.hsi")
    save_abundances(scene.S, out / "abundances.csv")
    save_endmembers(scene.A, out / "endmembers.csv")
    np.savetxt(out / "wavelengths.csv", scene.wavelengths, header="wavelength_nm", comments="", fmt="%.17g")
    _write_json(out / "synth_config.json", asdict(sc))
    return {}


def cmd_pgt(args, cfg: dict, out: Path) -> dict:
    cube = load_cube(args.cube)
    if args.sources < 2:
        raise UsageError("--sources must be >= 2")
    if args.sources > cube.n_pixels:
        raise UsageError(f"--sources {args.sources} exceeds pixel count {cube.n_pixels}")
    pgt = kmeans_pseudo_gt(cube_to_matrix(cube).astype(np.float64), args.sources, seed=child_seed(args.seed, "pgt"))
    save_abundances(pgt, out / "pgt.csv")
    return {"cube": args.cube}


def _run_strategy(model, cube: HsiCube, tc: TrainConfig, seed: int, pgt_path=None,
                  library_path=None) -> TrainReport:
    """Train ``model`` (fresh for gauss*, pre-trained for blind/prime) with ``tc.strategy``."""
    K, N = model.sources, cube.n_pixels
    if tc.strategy in ("gauss", "gauss_extended"):
        if pgt_path is not None:
            pgt = load_abundances(pgt_path)
            if pgt.shape != (K, N):
                raise DataError(f"{pgt_path}: expected shape {(K, N)}, got {pgt.shape}")
        else:
            pgt = kmeans_pseudo_gt(cube_to_matrix(cube).astype(np.float64), K, seed=child_seed(seed, "pgt"))
        fn = train_gauss if tc.strategy == "gauss" else train_gauss_extended
        return fn(model, cube, pgt, tc)
    if not model.pretrained:
        raise UsageError(f"strategy {tc.strategy!r} needs a GAUSS checkpoint (--init)")
    if tc.strategy == "blind":
        return train_blind(model, cube, tc)
    path = pgt_path or tc.prime_pgt_path
    if path is None:
        raise UsageError("strategy 'prime' needs an external pseudo-ground truth (--pgt or train.prime_pgt_path)")
    library = load_endmembers(library_path) if library_path is not None else None
    return train_prime(model, cube, load_external_pgt(path, K, N), tc, library=library)


def cmd_train(args, cfg: dict, out: Path) -> dict:
    tc = train_config(cfg, args.seed, args.strategy)
    cube = load_cube(args.cube)
    if args.init is not None:
        if tc.strategy in ("gauss", "gauss_extended"):
            raise UsageError("--init is only used by the blind and prime strategies")
        model = load_model(args.init)
        if model.bands != cube.bands:
            raise DataError(f"checkpoint expects {model.bands} bands, cube has {cube.bands}")
    else:
        if tc.strategy in ("blind", "prime"):
            raise UsageError(f"strategy {tc.strategy!r} needs a GAUSS checkpoint (--init)")
        if args.sources is None:
            raise UsageError("--sources is required when training from scratch")
        model = build_model(cube.bands, args.sources, seed=child_seed(args.seed, "model"))
    report = _run_strategy(model, cube, tc, args.seed, args.pgt, args.library)
    save_model(model, out)
    write_report(report, out / "train_report.csv", out / "train_report.json")
    _write_json(out / "train_config.json", asdict(tc))
    return {"cube": args.cube, "init": args.init, "pgt": args.pgt, "library": args.library}


def evaluate_model(model, cube: HsiCube, S: np.ndarray, A: np.ndarray) -> tuple[EvalReport, np.ndarray, np.ndarray]:
    """Metrics plus the estimates permuted into ground-truth source order."""
    if S.shape != (model.sources, cube.n_pixels):
        raise DataError(f"ground-truth abundances have shape {S.shape}, expected {(model.sources, cube.n_pixels)}")
    if A.shape != (cube.bands, model.sources):
        raise DataError(f"ground-truth endmembers have shape {A.shape}, expected {(cube.bands, model.sources)}")
    Shat = estimate_abundances(model, cube)
    Ahat = extract_endmembers(model)
    report = evaluate(S, Shat, A, Ahat)
    perm = report.permutation
    return report, Shat[perm], Ahat[:, perm]


def cmd_eval(args, cfg: dict, out: Path) -> dict:
    model = load_model(args.checkpoint)
    cube = load_cube(args.cube)
    if model.bands != cube.bands:
        raise DataError(f"checkpoint expects {model.bands} bands, cube has {cube.bands}")
    report, Shat, Ahat = evaluate_model(model, cube, load_abundances(args.abundances),
                                        load_endmembers(args.endmembers))
    (out / "eval.json").write_text(report.to_json())
    (out / "eval.csv").write_text(report.csv_header() + "\n" + report.csv_row() + "\n")
    save_endmembers(Ahat, out / "endmembers_est.csv")
    save_abundances(check_abundances(Shat), out / "abundances_est.csv")
    for k in range(model.sources):
        write_pgm(out / f"abundance_{k}.pgm", abundance_image(Shat[k], cube.width, cube.height))
    return {"checkpoint": args.checkpoint, "cube": args.cube,
            "abundances": args.abundances, "endmembers": args.endmembers}


def trials_table(rows: list[EvalReport]) -> tuple[list[str], np.ndarray]:
    values = np.array([[getattr(r, m) for m in METRIC_NAMES] for r in rows])
    return list(METRIC_NAMES), values.var(axis=0)


def cmd_trials(args, cfg: dict, out: Path) -> dict:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    cube = load_cube(args.cube)
    S, A = load_abundances(args.abundances), load_endmembers(args.endmembers)
    K = S.shape[0]
    strategy = args.strategy or cfg.get("train", {}).get("strategy", "gauss")
    reports = []
    for i in range(args.n):
        seed = args.seed + i
        model = build_model(cube.bands, K, seed=child_seed(seed, "model"))
        if strategy in ("blind", "prime"):
            _run_strategy(model, cube, train_config(cfg, seed, "gauss"), seed)
        _run_strategy(model, cube, train_config(cfg, seed, strategy), seed, args.pgt)
        reports.append(evaluate_model(model, cube, S, A)[0])
    names, var = trials_table(reports)
    lines = ["trial,seed," + ",".join(names)]
    for i, r in enumerate(reports):
        lines.append(f"{i},{args.seed + i}," + ",".join(repr(float(getattr(r, m))) for m in names))
    lines.append("variance,," + ",".join(repr(float(v)) for v in var))
    (out / "trials.csv").write_text("\n".join(lines) + "\n")
    return {"cube": args.cube, "abundances": args.abundances, "endmembers": args.endmembers, "pgt": args.pgt}


COMMANDS = {"synth": cmd_synth, "pgt": cmd_pgt, "train": cmd_train, "eval": cmd_eval, "trials": cmd_trials}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed for every random stream")
    common.add_argument("--config", type=Path, default=None, help="JSON file with synth/train/library sections")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")

    ap = _Parser(prog="gaussunmix", description="Neighborhood-smoothed autoencoder unmixing.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("synth", parents=[common], help="generate a simulated scene")

    p = sub.add_parser("pgt", parents=[common], help="k-means pseudo-ground truth")
    p.add_argument("--cube", type=Path, required=True)
    p.add_argument("--sources", type=int, required=True)

    p = sub.add_parser("train", parents=[common], help="train with one of the four strategies")
    p.add_argument("--cube", type=Path, required=True)
    p.add_argument("--strategy", choices=STRATEGIES, default=None)
    p.add_argument("--sources", type=int, default=None, help="number of sources (fresh models)")
    p.add_argument("--init", type=Path, default=None, help="GAUSS checkpoint directory (blind, prime)")
    p.add_argument("--pgt", type=Path, default=None, help="pseudo-ground-truth CSV")
    p.add_argument("--library", type=Path, default=None, help="endmember CSV ordered like the prime pGT rows")

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint against ground truth")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--cube", type=Path, required=True)
    p.add_argument("--abundances", type=Path, required=True)
    p.add_argument("--endmembers", type=Path, required=True)

    p = sub.add_parser("trials", parents=[common], help="repeat train+eval with incremented seeds")
    p.add_argument("--cube", type=Path, required=True)
    p.add_argument("--abundances", type=Path, required=True)
    p.add_argument("--endmembers", type=Path, required=True)
    p.add_argument("--strategy", choices=STRATEGIES, default=None)
    p.add_argument("--pgt", type=Path, default=None, help="external pseudo-ground truth for prime")
    p.add_argument("--n", type=int, default=5)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started, t0 = time.time(), time.perf_counter()
    try:
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        inputs = COMMANDS[args.command](args, cfg, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, RuntimeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    written = [p.name for p in out.iterdir() if p.name != MANIFEST]
    write_manifest(out, args, inputs, written, started, time.perf_counter() - t0)
    return EXIT_OK


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
