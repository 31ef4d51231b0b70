"""``arm-lab run|resume|report`` command-line front end.

Exit codes: 0 success, 2 configuration or consistency error, 3 resource error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import mc
from .config import Config, parse_config
from .errors import ConfigError, InsufficientDataError, ResourceError
from .loopsoup import BUILD_ID

log = logging.getLogger("arm_lab")

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE = 0, 2, 3
SUMMARY_COLUMNS = ("event", "kappa", "eps", "r", "trials", "successes", "censored", "p_hat", "lo", "hi")


# ---------------------------------------------------------------- shards

def _shard_bounds(cfg: Config):
    n, step = cfg.spec.trials, cfg.shard_size
    return [(a, min(a + step, n)) for a in range(0, n, step)]


def _shard_path(out: Path, a, b):
    return out / "shards" / f"shard_{a:09d}_{b:09d}.jsonl"


def _shard_header(cfg: Config, a, b):
    return {"kind": "header", "build": BUILD_ID, "config_sha": cfg.sha, "seed": cfg.spec.seed,
            "trials": [a, b], "events": list(cfg.spec.events),
            "ladder": [list(p) for p in cfg.spec.ladder]}


def write_shard(path: Path, cfg: Config, batch: mc.TrialBatch):
    a, b = batch.trial_range
    lines = [json.dumps(_shard_header(cfg, a, b))]
    for i, ev in enumerate(batch.events):
        for j, (e, r) in enumerate(batch.ladder):
            lines.append(json.dumps({"kind": "agg", "event": ev, "eps": e, "r": r,
                                     "trials": int(batch.trials[i, j]),
                                     "successes": int(batch.successes[i, j]),
                                     "censored": int(batch.censored[i, j])}))
    lines.append(json.dumps({"kind": "complete", "trials": [a, b]}))
    _atomic_write(path, "\n".join(lines) + "\n")


def _atomic_write(path: Path, text: str):
    tmp = path.with_suffix(".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def read_shard(path: Path, cfg: Config, a, b):
    """Batch stored in a shard, ``None`` if incomplete; ``ConfigError`` on header mismatch."""
    lines = path.read_text(encoding="utf-8").splitlines()
    try:
        recs = [json.loads(ln) for ln in lines if ln.strip()]
    except json.JSONDecodeError:
        return None
    if not recs or recs[0].get("kind") != "header":
        raise ConfigError(f"{path.name}: missing shard header")
    if recs[0] != _shard_header(cfg, a, b):
        raise ConfigError(f"{path.name}: shard header does not match the configuration "
                          f"(seed, build or spec drift)")
    if recs[-1].get("kind") != "complete":
        return None
    batch = mc.TrialBatch.empty(cfg.spec.events, cfg.spec.ladder, cfg.spec.seed, (a, b))
    for rec in recs[1:-1]:
        i = batch.events.index(rec["event"])
        j = batch.ladder.index((rec["eps"], rec["r"]))
        batch.trials[i, j] = rec["trials"]
        batch.successes[i, j] = rec["successes"]
        batch.censored[i, j] = rec["censored"]
    return batch


def summary_csv(cfg: Config, batch: mc.TrialBatch) -> str:
    buf = io.StringIO()
    buf.write(f"# arm-lab build={BUILD_ID} seed={cfg.spec.seed} config_sha={cfg.sha} "
              f"model={cfg.spec.model.value} mode={cfg.spec.mode} purpose={cfg.purpose} "
              f"label={cfg.name}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in batch.summary_rows(cfg.spec.kappa):
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return "nan" if v != v else f"{v:.10g}"
    return str(v)


def _work(args):
    cfg_text, a, b = args
    cfg = parse_config(cfg_text)
    return mc.run_trials(cfg.spec, a, b)


def _complete(out: Path, cfg: Config, threads: int):
    """Produce every missing shard, then the summary; returns the merged batch."""
    (out / "shards").mkdir(parents=True, exist_ok=True)
    done, missing = [], []
    for a, b in _shard_bounds(cfg):
        p = _shard_path(out, a, b)
        batch = read_shard(p, cfg, a, b) if p.exists() else None
        (done if batch is not None else missing).append(batch if batch is not None else (a, b))
    known = {_shard_path(out, a, b).name for a, b in _shard_bounds(cfg)}
    for p in (out / "shards").glob("shard_*.jsonl"):
        if p.name not in known:
            raise ConfigError(f"{p.name}: shard does not belong to this configuration")
    log.info("%d shards present, %d to run", len(done), len(missing))
    text = cfg.canonical_text()
    try:
        if threads > 1 and len(missing) > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=threads) as pool:
                for (a, b), batch in zip(missing, pool.map(_work, [(text, a, b) for a, b in missing])):
                    write_shard(_shard_path(out, a, b), cfg, batch)
                    done.append(batch)
        else:
            for a, b in missing:
                batch = mc.run_trials(cfg.spec, a, b)
                write_shard(_shard_path(out, a, b), cfg, batch)
                done.append(batch)
                log.info("shard %d-%d written", a, b)
    except ResourceError as exc:
        raise ResourceError(str(exc), f"{len(done)} of {len(_shard_bounds(cfg))} shards complete") from None
    if done:
        total = mc.merge(done)
    else:
        total = mc.TrialBatch.empty(cfg.spec.events, cfg.spec.ladder, cfg.spec.seed)
    (out / "summary.csv").write_text(summary_csv(cfg, total), encoding="utf-8")
    return total


def cmd_run(config_path, out=None, threads=1) -> int:
    try:
        cfg = parse_config(Path(config_path).read_text(encoding="utf-8"))
    except OSError as exc:
        return _fail(EXIT_CONFIG, f"cannot read config: {exc}")
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, f"config error: {exc}")
    out = Path(out) if out else Path(config_path).with_suffix("")
    out.mkdir(parents=True, exist_ok=True)
    stored = out / "config.txt"
    if stored.exists() and stored.read_text(encoding="utf-8") != cfg.canonical_text():
        return _fail(EXIT_CONFIG, f"{out} holds a different configuration")
    _atomic_write(stored, cfg.canonical_text())
    return _guarded(out, cfg, threads)


def cmd_resume(out, threads=1) -> int:
    out = Path(out)
    try:
        cfg = parse_config((out / "config.txt").read_text(encoding="utf-8"))
    except OSError as exc:
        return _fail(EXIT_CONFIG, f"cannot read stored config: {exc}")
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, f"config error: {exc}")
    return _guarded(out, cfg, threads)


def _guarded(out, cfg, threads):
    try:
        _complete(out, cfg, threads)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except ResourceError as exc:
        return _fail(EXIT_RESOURCE, f"resource error: {exc}")
    return EXIT_OK


def _fail(code, msg):
    print(f"arm-lab: {msg}", file=sys.stderr)
    return code


# ---------------------------------------------------------------- report

def load_experiment(path):
    """``(Config, TrialBatch)`` of a completed output directory."""
    path = Path(path)
    cfg = parse_config((path / "config.txt").read_text(encoding="utf-8"))
    batches = []
    for a, b in _shard_bounds(cfg):
        p = _shard_path(path, a, b)
        batch = read_shard(p, cfg, a, b) if p.exists() else None
        if batch is None:
            raise ConfigError(f"{path}: shard {a}-{b} missing; run resume first")
        batches.append(batch)
    if not batches:
        return cfg, mc.TrialBatch.empty(cfg.spec.events, cfg.spec.ladder, cfg.spec.seed)
    return cfg, mc.merge(batches)


RATIO_PAIRS = (
    ("E1_contour", "E2_cluster", False),
    ("E1_raw", "E2_raw", False),
    ("E2G2", "E2_cluster", True),
    ("E2_trunc", "E2_cluster", True),
    ("E2_local", "E2_cluster", False),
    ("hit_cons", "hit_opt", True),
    ("W4b_cons", "W4b_opt", True),
    ("W4i_cons", "W4i_opt", True),
)


def build_report(dirs, out: Path):
    from . import plotting

    exps = [load_experiment(d) for d in dirs]
    main = [(c, b) for c, b in exps if c.purpose == "main"]
    local = [(c, b) for c, b in exps if c.purpose == "local"]
    if not main:
        raise ConfigError("no main experiment among the given directories")
    ladders = {c.spec.ladder for c, _ in main}
    if len(ladders) > 1:
        raise ConfigError("inconsistent scale ladders across experiments")
    out.mkdir(parents=True, exist_ok=True)
    seeds = ",".join(str(c.spec.seed) for c, _ in exps)
    head = f"# arm-lab build={BUILD_ID} seeds={seeds}"

    fits = io.StringIO()
    fits.write(head + "\n")
    fw = csv.writer(fits, lineterminator="\n")
    fw.writerow(("experiment", "event", "mode", "kappa", "fitted", "stderr", "predicted", "residual",
                 "scales_used", "scales_dropped", "chi2", "dof"))
    series_all = []
    for cfg, batch in main:
        series = []
        for ev in cfg.spec.events:
            k, n, _ = batch.row(ev)
            eps = [e for e, _ in batch.ladder]
            p = [a / b if b else float("nan") for a, b in zip(k, n)]
            ci = [mc.wilson_interval(a, b) if b else (float("nan"),) * 2 for a, b in zip(k, n)]
            pred = mc.predicted_for(ev, cfg.spec.mode, cfg.spec.kappa)
            entry = {"label": f"{cfg.name}:{ev}", "eps": eps, "p": p, "lo": [c[0] for c in ci],
                     "hi": [c[1] for c in ci], "predicted": pred}
            try:
                f = mc.fit_exponent(batch, ev)
                entry.update(slope=f.slope, intercept=f.intercept)
                row = (cfg.name, ev, cfg.spec.mode, cfg.spec.kappa, f.slope, f.slope_stderr, pred,
                       None if pred is None else f.slope - pred, ";".join(f"{e:g}" for e in f.scales),
                       ";".join(f"{e:g}" for e in f.dropped), f.goodness, f.dof)
            except InsufficientDataError:
                row = (cfg.name, ev, cfg.spec.mode, cfg.spec.kappa, None, None, pred, None, "", "", None, None)
            fw.writerow(["" if v is None else _fmt(v) for v in row])
            series.append(entry)
        series_all.extend(series)
        plotting.loglog_figure(out / f"loglog_{cfg.name}.png", series, cfg.name)
    (out / "fits.csv").write_text(fits.getvalue(), encoding="utf-8")

    ratios = io.StringIO()
    ratios.write(head + "\n")
    rw = csv.writer(ratios, lineterminator="\n")
    rw.writerow(("experiment", "numerator", "denominator", "eps", "r", "ratio", "lo", "hi", "flag"))
    tables = {}
    for cfg, batch in main:
        for a, b, nested in RATIO_PAIRS:
            if a in batch.events and b in batch.events:
                rs = mc.ratio_diag(batch, batch, a, b, nested=nested)
                for (e, r), x in zip(batch.ladder, rs):
                    rw.writerow([cfg.name, a, b, _fmt(e), _fmt(r), _fmt(x.value), _fmt(x.lo), _fmt(x.hi), x.flag])
                tables[f"{cfg.name}:{a}/{b}"] = ([e for e, _ in batch.ladder], [x.value for x in rs],
                                                 [x.lo for x in rs], [x.hi for x in rs])
    for lcfg, lbatch in local:
        for cfg, batch in main:
            for row in quasi_mult_rows(cfg, batch, lcfg, lbatch):
                rw.writerow(row)
    (out / "ratios.csv").write_text(ratios.getvalue(), encoding="utf-8")
    if tables:
        plotting.ratio_figure(out / "ratios.png", tables)
    (out / "plot.gp").write_text(plotting.gnuplot_script(series_all, head.lstrip("# ")), encoding="utf-8")


def quasi_mult_rows(cfg, batch, lcfg, lbatch, event="E2_cluster"):
    """Quasi-multiplicativity ratios for every admissible triple covered by the two experiments."""
    rows = []
    if event not in batch.events or event not in lbatch.events or cfg.spec.kappa != lcfg.spec.kappa:
        return rows
    main_counts = {s: (int(batch.row(event)[0][j]), int(batch.row(event)[1][j]))
                   for j, s in enumerate(batch.ladder)}
    local_counts = {s: (int(lbatch.row(event)[0][j]), int(lbatch.row(event)[1][j]))
                    for j, s in enumerate(lbatch.ladder)}
    for (r1, r2), c12 in local_counts.items():
        for (e3, r3), c13 in main_counts.items():
            if e3 != r1 or (4 * r2, r3) not in main_counts or not (0 < r1 <= r2 / 2 <= r3 / 16):
                continue
            try:
                q = mc.quasi_mult_diag(c13, c12, main_counts[(4 * r2, r3)])
                rows.append([f"{cfg.name}+{lcfg.name}", f"{event}({r1:g},{r3:g})",
                             f"{event}({r1:g},{r2:g})*{event}({4 * r2:g},{r3:g})", _fmt(r1), _fmt(r3),
                             _fmt(q.value), _fmt(q.lo), _fmt(q.hi), f"triple={r1:g}:{r2:g}:{r3:g}"])
            except InsufficientDataError as exc:
                rows.append([f"{cfg.name}+{lcfg.name}", event, event, _fmt(r1), _fmt(r3), "nan", "nan", "nan",
                             f"triple={r1:g}:{r2:g}:{r3:g} {exc}"])
    return rows


def cmd_report(dirs, out=None) -> int:
    if not dirs:
        return _fail(EXIT_CONFIG, "report needs at least one experiment directory")
    out = Path(out) if out else Path(dirs[0]) / "report"
    try:
        build_report(dirs, out)
    except (ConfigError, OSError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def _threads(arg):
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("ARM_LAB_THREADS")
    return max(1, int(env)) if env else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="arm-lab", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=("run", "resume", "report"))
    parser.add_argument("dirs", nargs="*", help="experiment directories (report)")
    parser.add_argument("--config", help="configuration file (run)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--threads", type=int, help="worker processes (or ARM_LAB_THREADS)")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    threads = _threads(args.threads)
    if args.command == "run":
        if not args.config:
            return _fail(EXIT_CONFIG, "run needs --config")
        return cmd_run(args.config, args.out, threads)
    if args.command == "resume":
        target = args.out or (args.dirs[0] if args.dirs else None)
        if not target:
            return _fail(EXIT_CONFIG, "resume needs --out DIR")
        return cmd_resume(target, threads)
    return cmd_report(args.dirs, args.out)


if __name__ == "__main__":
    sys.exit(main())
