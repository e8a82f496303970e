"""Command-line surface: construct, sweep, fit, optimize, report.

One TOML file configures a run; the only environment overrides are the
output root (QECBO_OUT_ROOT) and the worker count (QECBO_WORKERS).  Every
run directory is self-describing: manifest (config, seed, package
version, fingerprint), append-only NDJSON trace, and report tables as
comma-separated files with full round-trip precision.

Exit codes: 0 success, 2 invalid configuration, 3 invalid code,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .autodiff import NonFiniteError
from .codes import (
    BbParams,
    CssCode,
    HgpParams,
    bb_from_bits,
    check_invariants,
    hgp,
    to_record,
)
from .decoding import DecoderConfig, DepolarizingChannel
from .embedding import EmbeddingConfig
from .evaluate import (
    EvalRecord,
    ObjectiveConfig,
    PseudoModelError,
    estimate_ler,
    f2,
    fit_pseudo_model,
    lerpq,
    objective,
    pseudo_t,
)
from .gf2 import BitMatrix, BitVector
from .optimizer import (
    BoConfig,
    CodeEvaluator,
    EaConfig,
    RsConfig,
    RunTrace,
    SearchSpace,
    bo_run,
    derive_seed,
    ea_run,
    rs_run,
)
from .surrogate import Dataset, FactorizationError, FitDivergenceError, Surrogate, metrics

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVALID_CODE = 3
EXIT_NUMERICAL = 4

# Stream tag for seeds of standalone (non-driver) evaluations.
_TAG_CLI = 3

REPORT_COLUMNS = (
    "label", "n", "k", "R", "p", "p_L", "std_error",
    "p_PQ", "t_hat", "t_hat_over_n", "F",
)


class ConfigError(Exception):
    """The configuration file or flags are invalid for the command."""


class InvalidCodeError(Exception):
    """The configured bits or matrices do not yield a valid code."""


def fmt(x) -> str:
    """Full round-trip text for one cell: 17 significant digits."""
    if x is None:
        return "nan"
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([cell if isinstance(cell, str) else fmt(cell) for cell in row])


# -- configuration ---------------------------------------------------------


def load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"config parse error in {path}: {err}") from err


def _section(cfg: dict, name: str) -> dict:
    if name not in cfg or not isinstance(cfg[name], dict):
        raise ConfigError(f"config is missing the [{name}] section")
    return cfg[name]


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"[{where}] is missing required key {key!r}")
    return section[key]


def resolve_seed(cfg: dict, override: Optional[int]) -> int:
    if override is not None:
        return int(override)
    if "seed" not in cfg:
        raise ConfigError("config must set a top-level seed (or pass --seed)")
    return int(cfg["seed"])


def resolve_out(flag: Optional[str], cfg: dict, default: str) -> Path:
    out = flag if flag is not None else cfg.get("output", default)
    root = os.environ.get("QECBO_OUT_ROOT")
    path = Path(out)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def resolve_workers(flag: Optional[int]) -> int:
    if flag is not None:
        return max(1, int(flag))
    env = os.environ.get("QECBO_WORKERS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as err:
            raise ConfigError(f"QECBO_WORKERS must be an integer, got {env!r}") from err
    return 1


def build_code(code_cfg: dict) -> CssCode:
    kind = code_cfg.get("type", "bb")
    if kind == "bb":
        ell = int(_require(code_cfg, "ell", "code"))
        em = int(_require(code_cfg, "em", "code"))
        bits_text = _require(code_cfg, "bits", "code")
        expect = 2 * (ell + em - 1)
        if len(bits_text) != expect or set(bits_text) - {"0", "1"}:
            raise ConfigError(
                f"code.bits must be {expect} characters of 0/1 for "
                f"(ell, em) = ({ell}, {em})"
            )
        code = bb_from_bits(BbParams(ell, em, BitVector.from_text(bits_text)))
    elif kind == "hgp":
        rows1 = _require(code_cfg, "h1", "code")
        rows2 = _require(code_cfg, "h2", "code")
        try:
            h1 = BitMatrix.from_vectors([BitVector.from_text(r) for r in rows1])
            h2 = BitMatrix.from_vectors([BitVector.from_text(r) for r in rows2])
        except ValueError as err:
            raise ConfigError(f"bad HGP matrix rows: {err}") from err
        code = hgp(HgpParams(h1, h2))
    else:
        raise ConfigError(f"unknown code.type {kind!r} (expected 'bb' or 'hgp')")
    if code is None:
        raise InvalidCodeError("configured code has k = 0")
    return code


def embedding_from_config(cfg: dict) -> tuple[EmbeddingConfig, float]:
    sur = cfg.get("surrogate", {})
    emb = EmbeddingConfig(
        d_hidden=int(sur.get("d_hidden", 32)),
        d_f=int(sur.get("d_f", 16)),
        layers_per_view=int(sur.get("layers_per_view", 2)),
        aggregation=sur.get("aggregation", "sum"),
        variant=sur.get("variant", "three-view"),
    )
    return emb, float(sur.get("smoothness", 2.5))


def decoder_from_config(cfg: dict, p: float) -> Optional[DecoderConfig]:
    dec = cfg.get("decoder")
    if not dec:
        return None
    channel = DepolarizingChannel(p)
    return DecoderConfig(
        prior_flip_probability=channel.marginal_flip_probability,
        max_iterations=int(dec.get("max_iterations", 50)),
        postprocess_order=int(dec.get("postprocess_order", 0)),
        damping=float(dec.get("damping", 0.0)),
    )


def config_fingerprint(cfg: dict, seed: int) -> str:
    payload = json.dumps(
        {"config": cfg, "seed": seed, "version": __version__}, sort_keys=True
    )
    return hashlib.sha256(payload.encode()).hexdigest()


# -- commands --------------------------------------------------------------


def cmd_construct(args) -> int:
    cfg = load_config(args.config)
    code = build_code(_section(cfg, "code"))
    checks = check_invariants(code)
    out = resolve_out(args.out, cfg, "runs/construct")
    with open(out / "code.json", "w") as fh:
        json.dump(to_record(code), fh, sort_keys=True)
        fh.write("\n")
    rate = code.k / code.n
    print(f"origin: {code.origin}")
    print(f"n: {code.n}")
    print(f"k: {code.k}")
    print(f"R: {fmt(rate)}")
    for name, ok in sorted(checks.items()):
        print(f"check {name}: {'ok' if ok else 'FAIL'}")
    print(f"wrote {out / 'code.json'}")
    if not all(checks.values()):
        raise InvalidCodeError("constructed code failed invariant checks")
    return EXIT_OK


def _sweep_row(code: CssCode, label: str, p: float, shots: int, lam: float,
               seed: int, workers: int, decoder_cfg) -> dict:
    if p == 0.0:
        return {
            "label": label, "n": code.n, "k": code.k, "R": code.k / code.n,
            "p": 0.0, "p_L": 0.0, "std_error": 0.0, "p_PQ": 0.0,
            "t_hat": None, "t_hat_over_n": None, "F": None,
        }
    est = estimate_ler(
        code, DepolarizingChannel(p), shots, seed,
        decoder_cfg=decoder_cfg, workers=workers,
    )
    model = fit_pseudo_model(code.n, p)
    p_eff = est.p_l if est.p_l > 0.0 else 0.5 / shots
    t_val = pseudo_t(model, p_eff)
    return {
        "label": label, "n": code.n, "k": code.k, "R": code.k / code.n,
        "p": p, "p_L": est.p_l, "std_error": est.std_error,
        "p_PQ": lerpq(est.p_l, code.k), "t_hat": t_val.t_hat,
        "t_hat_over_n": t_val.t_hat / code.n,
        "F": objective(code.n, code.k, t_val.t_hat, lam),
    }


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(cfg, args.seed)
    workers = resolve_workers(args.workers)
    code = build_code(_section(cfg, "code"))
    channel = _section(cfg, "channel")
    grid = _require(channel, "p_grid", "channel")
    if not isinstance(grid, list) or not grid:
        raise ConfigError("channel.p_grid must be a nonempty list")
    evaluation = _section(cfg, "evaluation")
    shots = int(_require(evaluation, "shots", "evaluation"))
    lam = float(evaluation.get("lam", 1.0))
    label = cfg.get("label", code.origin)

    out = resolve_out(args.out, cfg, "runs/sweep")
    rows = []
    with open(out / "sweep.ndjson", "w") as trace:
        for i, p in enumerate(grid):
            decoder_cfg = decoder_from_config(cfg, float(p)) if p else None
            row = _sweep_row(
                code, label, float(p), shots, lam,
                derive_seed(seed, _TAG_CLI, i), workers, decoder_cfg,
            )
            rows.append([row[c] for c in REPORT_COLUMNS])
            trace.write(json.dumps(row, sort_keys=True) + "\n")
            trace.flush()
    write_csv(out / "sweep.csv", REPORT_COLUMNS, rows)
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} rows)")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(cfg, args.seed)
    workers = resolve_workers(args.workers)
    code_cfg = _section(cfg, "code")
    space = SearchSpace(
        int(_require(code_cfg, "ell", "code")), int(_require(code_cfg, "em", "code"))
    )
    p = float(_require(_section(cfg, "channel"), "p", "channel"))
    evaluation = _section(cfg, "evaluation")
    shots = int(_require(evaluation, "shots", "evaluation"))
    fit_cfg = cfg.get("fit", {})
    count = int(fit_cfg.get("count", 100))
    splits = int(fit_cfg.get("splits", 5))
    test_fraction = float(fit_cfg.get("test_fraction", 0.2))
    if count < 5 or not 0.0 < test_fraction < 1.0:
        raise ConfigError("fit needs count >= 5 and test_fraction in (0, 1)")
    emb, smoothness = embedding_from_config(cfg)

    evaluator = CodeEvaluator(
        space,
        ObjectiveConfig(lam=float(evaluation.get("lam", 1.0)), physical_p=p, shots=shots),
        embedding_cfg=emb, smoothness=smoothness, workers=workers,
        decoder_cfg=decoder_from_config(cfg, p),
    )
    rng = np.random.default_rng([seed, _TAG_CLI])
    out = resolve_out(args.out, cfg, "runs/fit")

    seen = set()
    records = []
    with open(out / "corpus.ndjson", "w") as trace:
        while len(records) < count:
            bits = space.random_valid(rng)
            if bits.bits in seen:
                continue
            seen.add(bits.bits)
            rec = evaluator.evaluate(
                bits, len(records), derive_seed(seed, _TAG_CLI, len(records))
            )
            records.append(rec)
            trace.write(rec.to_json() + "\n")
            trace.flush()

    codes = [space.construct(BitVector.from_text(r.bits)) for r in records]
    targets = np.array([
        math.log(0.5 / r.shots if r.floored else r.p_l) for r in records
    ])

    rows = []
    r2s, nlls = [], []
    for s in range(splits):
        split_rng = np.random.default_rng([seed, _TAG_CLI, 1, s])
        perm = split_rng.permutation(count)
        n_test = max(1, int(round(test_fraction * count)))
        test_idx, train_idx = perm[:n_test], perm[n_test:]
        train = Dataset.from_raw(
            [codes[i] for i in train_idx], targets[train_idx]
        )
        model = Surrogate(emb, smoothness=smoothness, seed=derive_seed(seed, _TAG_CLI, 100 + s))
        model.fit(train, warm=False)
        mus, vars_ = [], []
        for i in test_idx:
            mu, var = model.predict_raw(codes[i], include_noise=True)
            mus.append(mu)
            vars_.append(var)
        m = metrics(np.array(mus), np.array(vars_), targets[test_idx])
        rows.append([f"split{s}", m.mse, m.r2, m.avg_nll])
        r2s.append(m.r2)
        nlls.append(m.avg_nll)
    rows.append(["mean", float(np.mean([r[1] for r in rows])), float(np.mean(r2s)), float(np.mean(nlls))])
    write_csv(out / "fit.csv", ("split", "mse", "r2", "avg_nll"), rows)
    print(f"wrote {out / 'fit.csv'}: mean r2 {fmt(float(np.mean(r2s)))}, "
          f"mean avg_nll {fmt(float(np.mean(nlls)))}")
    return EXIT_OK


def _load_trace(path: Path) -> list[EvalRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(EvalRecord.from_json(line))
    return records


def cmd_optimize(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(cfg, args.seed)
    workers = resolve_workers(args.workers)
    code_cfg = _section(cfg, "code")
    space = SearchSpace(
        int(_require(code_cfg, "ell", "code")), int(_require(code_cfg, "em", "code"))
    )
    p = float(_require(_section(cfg, "channel"), "p", "channel"))
    evaluation = _section(cfg, "evaluation")
    shots = int(_require(evaluation, "shots", "evaluation"))
    lam = float(evaluation.get("lam", 1.0))
    opt = _section(cfg, "optimizer")
    method = _require(opt, "method", "optimizer")
    if method not in ("bo", "ea", "rs"):
        raise ConfigError(f"optimizer.method must be bo, ea, or rs, got {method!r}")
    emb, smoothness = embedding_from_config(cfg)

    out = resolve_out(args.out, cfg, f"runs/{method}-seed{seed}")
    manifest_path = out / "manifest.json"
    trace_path = out / "trace.ndjson"
    fingerprint = config_fingerprint(cfg, seed)

    replay: list[EvalRecord] = []
    if args.resume:
        if not manifest_path.exists():
            raise ConfigError(f"cannot resume: no manifest in {out}")
        stored = json.loads(manifest_path.read_text())
        if stored.get("fingerprint") != fingerprint:
            raise ConfigError(
                "cannot resume: config fingerprint mismatch "
                f"(stored {stored.get('fingerprint')}, current {fingerprint})"
            )
        if trace_path.exists():
            replay = _load_trace(trace_path)
    else:
        if manifest_path.exists():
            raise ConfigError(
                f"{out} already contains a run; pass --resume or use a new directory"
            )
        manifest_path.write_text(json.dumps({
            "config": cfg, "seed": seed, "method": method,
            "version": __version__, "fingerprint": fingerprint,
        }, sort_keys=True, indent=2) + "\n")

    evaluator = CodeEvaluator(
        space, ObjectiveConfig(lam=lam, physical_p=p, shots=shots),
        embedding_cfg=emb, smoothness=smoothness, workers=workers,
        decoder_cfg=decoder_from_config(cfg, p),
    )

    nu0 = int(opt.get("nu0", 10))
    iterations = int(opt.get("T", 20))
    with open(trace_path, "a") as trace_file:
        def sink(rec: EvalRecord) -> None:
            trace_file.write(rec.to_json() + "\n")
            trace_file.flush()

        if method == "bo":
            run_cfg = BoConfig(
                nu0=nu0, iterations=iterations,
                restarts=int(opt.get("restarts", 3)), seed=seed,
            )
            trace = bo_run(evaluator, run_cfg, sink=sink, replay=replay)
        elif method == "ea":
            run_cfg = EaConfig(
                budget=int(opt.get("budget", nu0 + iterations)), seed=seed,
                population=int(opt.get("population", 20)),
                truncation=float(opt.get("truncation", 0.25)),
                mutation_rate=opt.get("mutation_rate"),
                crossover_probability=float(opt.get("crossover_probability", 0.5)),
                elites=int(opt.get("elites", 2)),
            )
            trace = ea_run(evaluator, run_cfg, sink=sink, replay=replay)
        else:
            run_cfg = RsConfig(
                budget=int(opt.get("budget", nu0 + iterations)), seed=seed
            )
            trace = rs_run(evaluator, run_cfg, sink=sink, replay=replay)

    best = trace.best
    best_payload = {"record": json.loads(best.to_json())}
    if best.valid:
        code = space.construct(BitVector.from_text(best.bits))
        best_payload["code"] = to_record(code)
    (out / "best.json").write_text(
        json.dumps(best_payload, sort_keys=True, indent=2) + "\n"
    )
    if trace.surrogate is not None:
        trace.surrogate.save(out / "checkpoint.npz")
    print(f"{method} run complete: {len(trace)} evaluations, "
          f"best F {fmt(best.objective_value)} at {best.bits}")
    print(f"run directory: {out}")
    return EXIT_OK


def _report_record_row(label: str, rec: EvalRecord) -> list:
    p_eff = (0.5 / rec.shots) if rec.floored else rec.p_l
    return [
        label, rec.n, rec.k, rec.k / rec.n, rec.physical_p, rec.p_l,
        rec.std_error, lerpq(rec.p_l, rec.k), rec.t_hat,
        rec.t_hat / rec.n, rec.objective_value,
    ]


def cmd_report(args) -> int:
    out = resolve_out(args.out, {}, "runs/report")
    runs = []
    sweep_rows = []
    for dir_name in args.run_dirs:
        run_dir = Path(dir_name)
        trace_path = run_dir / "trace.ndjson"
        sweep_path = run_dir / "sweep.ndjson"
        if sweep_path.exists():
            with open(sweep_path) as fh:
                for line in fh:
                    if line.strip():
                        row = json.loads(line)
                        sweep_rows.append([row[c] for c in REPORT_COLUMNS])
        if not trace_path.exists():
            if not sweep_path.exists():
                print(f"diagnostic: {run_dir} has no trace.ndjson, skipped",
                      file=sys.stderr)
            continue
        records = _load_trace(trace_path)
        if not records:
            print(f"diagnostic: {run_dir} trace is empty, skipped", file=sys.stderr)
            continue
        manifest = {}
        manifest_path = run_dir / "manifest.json"
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text())
        method = manifest.get("method", "run")
        seed = manifest.get("seed", "x")
        runs.append((f"{method}-seed{seed}", method, records))

    if not runs and not sweep_rows:
        raise ConfigError("no usable run directories given to report")

    if runs:
        series = {}
        for label, method, records in runs:
            best = -math.inf
            vals = []
            for rec in records:
                best = max(best, rec.objective_value)
                vals.append(best)
            series[label] = (method, vals)
        length = min(len(v) for _, v in series.values())
        columns = ["index"] + list(series.keys())
        methods = sorted({m for m, _ in series.values()})
        for m in methods:
            columns += [f"{m}_mean", f"{m}_sigma"]
        rows = []
        for i in range(length):
            row = [i] + [series[label][1][i] for label in series]
            for m in methods:
                group = np.array(
                    [v[i] for mm, v in series.values() if mm == m]
                )
                row.append(float(group.mean()))
                row.append(float(group.std(ddof=1)) if group.size > 1 else 0.0)
            rows.append(row)
        write_csv(out / "best_so_far.csv", columns, rows)

        op_rows = []
        for label, _, records in runs:
            best = max(records, key=lambda r: r.objective_value)
            if best.valid and best.p_l is not None:
                op_rows.append(_report_record_row(label, best))
        write_csv(out / "operating_points.csv", REPORT_COLUMNS, op_rows)

        frontier_rows = []
        for n in sorted({row[1] for row in op_rows}):
            for t in range(n + 1):
                rate = 1.0 - f2(n, t)
                frontier_rows.append([n, t, t / n, rate])
                if rate < 0.0:
                    break
        write_csv(out / "frontier.csv", ("n", "t", "t_over_n", "R"), frontier_rows)

    if sweep_rows:
        write_csv(out / "lerpq.csv", REPORT_COLUMNS, sweep_rows)

    print(f"report written to {out}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qecbo",
        description="CSS code discovery: construct, sweep, fit, optimize, report.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        if config_required:
            p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--workers", type=int, default=None, help="worker threads")

    common(sub.add_parser("construct", help="build and validate one code"))
    common(sub.add_parser("sweep", help="estimate LER over a p grid"))
    common(sub.add_parser("fit", help="train/eval the surrogate on random codes"))
    opt = sub.add_parser("optimize", help="run a BO/EA/RS search")
    common(opt)
    opt.add_argument("--resume", action="store_true",
                     help="continue a previous run in the same directory")
    rep = sub.add_parser("report", help="emit tables from run directories")
    rep.add_argument("run_dirs", nargs="+", help="run directories to summarize")
    common(rep, config_required=False)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "construct": cmd_construct,
        "sweep": cmd_sweep,
        "fit": cmd_fit,
        "optimize": cmd_optimize,
        "report": cmd_report,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidCodeError as err:
        print(f"invalid code: {err}", file=sys.stderr)
        return EXIT_INVALID_CODE
    except (FitDivergenceError, FactorizationError, PseudoModelError,
            NonFiniteError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
