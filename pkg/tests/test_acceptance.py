"""Acceptance criteria 1-8.

Criteria 3-7 read the long experiment directories under ``acceptance_runs/``
(configurations in ``acceptance/configs/``); missing shards are produced by
resuming the run, so a fresh checkout recomputes them.
"""

import math
import os
import signal
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from arm_lab import cli, mc, rng
from arm_lab.clusters import AnnulusSpec, analyze, build_clusters, contour_text, crossing_count
from arm_lab.events import (ExcursionPair, LoopConfiguration, LoopProxy, delta_separated, detect_E1,
                            detect_E2, detect_G2, is_admissible)
from arm_lab.loopsoup import (STEP_LETTERS, LatticeDomain, LoopSoup, loop_mass, sample_bridge,
                              sample_soup)
from arm_lab.sle import loewner_trace, sample_driver

from . import oracles as O

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "acceptance" / "configs"
RUNS = ROOT / "acceptance_runs"


def _experiment(name):
    out = RUNS / name
    code = cli.cmd_run(CONFIGS / f"{name}.cfg", out, threads=int(os.environ.get("ARM_LAB_THREADS", "1")))
    assert code == 0, f"{name}: run/resume exited {code}"
    return cli.load_experiment(out)


def _cols(batch, event, eps_set):
    k, n, _ = batch.row(event)
    idx = [j for j, (e, _) in enumerate(batch.ladder) if e in eps_set]
    eps = np.array([batch.ladder[j][0] for j in idx])
    return eps, k[idx], n[idx]


def _fmt_counts(eps, k, n):
    return " ".join(f"{e:g}:{a}/{b}" for e, a, b in zip(eps, k, n))


# ---------------------------------------------------------------- 1. sampler


def test_c1_sampler_matches_loop_masses(criterion):
    t0 = time.time()
    d = LatticeDomain(16, 16)
    n_soups = 10_000
    counts = np.zeros((3, 16, 16))
    for s in range(n_soups):
        soup = sample_soup(d, 0.5, seed=s, stream=1)
        for j, L in enumerate((2, 4, 6)):
            sel = soup.lengths == L
            np.add.at(counts[j], (soup.roots[sel, 1], soup.roots[sel, 0]), 1)
    # expected kept mass per (vertex, length) by enumeration of closed walks
    expected = np.zeros((3, 16, 16))
    for j, half in enumerate((1, 2, 3)):
        walks = O.closed_walks(2 * half)
        w = loop_mass(half, 0.5) / len(walks)
        for x in range(16):
            for y in range(16):
                kept = sum(all(0 <= px < 16 and 0 <= py < 16 for px, py in O.walk_vertices((x, y), wd))
                           for wd in walks)
                expected[j, y, x] = kept * w
    z = (counts - n_soups * expected) / np.sqrt(n_soups * expected)
    totals = (counts.sum(axis=(1, 2)) - n_soups * expected.sum(axis=(1, 2))) / np.sqrt(
        n_soups * expected.sum(axis=(1, 2)))
    # per-cell bound: family-wise 3 sigma (two-sided p = 0.0027) over all 768 cells
    cell_bound = stats.norm.isf(0.0027 / 2 / z.size)
    ok_cells = np.abs(z).max() <= cell_bound
    ok_totals = np.all(np.abs(totals) <= 3)
    chi = []
    for half in (1, 2):
        walks = O.closed_walks(2 * half)
        codes = sample_bridge(half, rng.root_key(77, half), 500 * len(walks))
        seen = {}
        for row in codes:
            wd = "".join(STEP_LETTERS[c] for c in row)
            seen[wd] = seen.get(wd, 0) + 1
        obs = np.array([seen.get(wd, 0) for wd in walks])
        chi.append(float(stats.chisquare(obs).pvalue) if set(seen) <= set(walks) else 0.0)
    ok_chi = all(p > 0.01 for p in chi)
    dt = time.time() - t0
    ok = ok_cells and ok_totals and ok_chi and dt < 120
    criterion("1 sampler oracle", ok,
              f"length totals z={np.round(totals, 2).tolist()}, max cell |z|={np.abs(z).max():.2f} "
              f"(bound {cell_bound:.2f}), bridge chi2 p={[round(p, 3) for p in chi]}, {dt:.0f}s")
    assert ok


# ---------------------------------------------------------------- 2. detectors

S, EPS = 8, 2
ETA1 = tuple([(x, 0) for x in range(-8, 0)] + [(-1, y) for y in range(1, 8)])
ETA2 = tuple([(x, 0) for x in range(8, 0, -1)] + [(1, y) for y in range(-1, -8, -1)])
BOX = LatticeDomain.centered(41)
SCALES = ((1, 4), (2, 6))


def _g2_expected(csets, walks, w, r):
    c1, c2 = (r, 0), (-r, 0)
    rr = (r / 10) ** 2

    def region(pts, own, other):
        return all((x * x + y * y <= r * r or (x - own[0]) ** 2 + (y - own[1]) ** 2 <= rr)
                   and (x - other[0]) ** 2 + (y - other[1]) ** 2 > rr for x, y in pts)

    A, B = csets[w[0]], csets[w[1]]
    placed = (region(A, c1, c2) and region(B, c2, c1)) or (region(A, c2, c1) and region(B, c1, c2))
    return placed and all(O.diameter(set(v)) < r / 40 for v in walks
                          if not (set(v) <= A or set(v) <= B))


def _check_soup(loops):
    soup = LoopSoup.from_loops(BOX, loops)
    walks = [O.walk_vertices(r, w) for r, w in loops]
    vsets = [set(w) for w in walks]
    groups, csets, fills, outer = O.soup_structure(vsets, BOX.corner[0], BOX.corner[1], BOX.width, BOX.height)
    bad = []
    cs = build_clusters(soup)
    if [sorted(c.loop_ids) for c in cs] != groups:
        bad.append("clusters")
    for eps, r in SCALES:
        a = AnnulusSpec((0, 0), eps, r)
        cr = [O.crossing_subarcs(w, (0, 0), eps, r) for w in walks]
        if [crossing_count(lp, a) for lp in soup.loops] != cr:
            bad.append("crossing_count")
        if detect_E1(soup, a, LoopProxy.RAW_LOOP).occurred != any(c >= 4 for c in cr):
            bad.append("E1")
        crossing_outer = [k for k in outer if O.crosses(csets[k], (0, 0), eps, r)]
        e1c = any(O.crossing_subarcs(O.trace_contour(fills[k])[1], (0, 0), eps, r) >= 4
                  for k in crossing_outer)
        if detect_E1(soup, a, LoopProxy.OUTER_CONTOUR).occurred != e1c:
            bad.append("E1_contour")
        e2 = detect_E2(soup, a)
        if e2.occurred != (len(crossing_outer) >= 2):
            bad.append("E2")
        if detect_E2(soup, a, LoopProxy.RAW_LOOP).occurred != (sum(O.crosses(v, (0, 0), eps, r)
                                                                   for v in vsets) >= 2):
            bad.append("E2_raw")
        if e2.occurred and detect_G2(soup, a, e2.witness).occurred != _g2_expected(
                csets, walks, e2.witness, r):
            bad.append("G2")
    inside = [v for v in vsets if all(x * x + y * y <= S * S for x, y in v)]
    conf = LoopConfiguration(inside)
    pair = ExcursionPair(ETA1, ETA2, S, EPS)
    cl = O.clusters_by_closure(inside)
    csi = [set().union(*(inside[i] for i in g)) for g in cl]
    h1, h2 = O.hull(ETA1, csi), O.hull(ETA2, csi)
    adm = (any(x * x + y * y <= EPS * EPS for x, y in h1) and any(x * x + y * y <= EPS * EPS for x, y in h2)
           and not (h1 & h2))
    if is_admissible(pair, conf) != adm:
        bad.append("admissible")
    elif adm:
        for delta in (0.0, 0.1, 0.25):
            side1 = set(ETA1) | O.ball(ETA1[0], delta * S) | O.ball(ETA1[-1], delta * S)
            side2 = set(ETA2) | O.ball(ETA2[0], delta * S) | O.ball(ETA2[-1], delta * S)
            if delta_separated(pair, conf, delta) != (not (O.hull(side1, csi) & side2)):
                bad.append("delta_separated")
    return bad


def test_c2_detectors_match_oracles(criterion):
    t0 = time.time()
    rs = np.random.default_rng(2024)
    failures = {}
    n_soups = 10_000
    for i in range(n_soups):
        loops = O.random_loops(rs, int(rs.integers(1, 13)), 6, 12)
        for b in _check_soup(loops):
            failures[b] = failures.get(b, 0) + 1
    # constructed separation configurations where G2 holds
    r = 80
    box = LatticeDomain.centered(401)
    left = ((-82, 0), "E" * 81 + "W" * 81)
    right = ((82, 0), "W" * 81 + "E" * 81)
    for extra, expect in (([], True), ([((5, 5), "NS")], True), ([((0, 30), "EEEWWW")], False)):
        soup = LoopSoup.from_loops(box, [left, right] + extra)
        e2 = detect_E2(soup, AnnulusSpec((0, 0), 2, r))
        if detect_G2(soup, AnnulusSpec((0, 0), 2, r), e2.witness).occurred != expect:
            failures["G2_constructed"] = failures.get("G2_constructed", 0) + 1
    dt = time.time() - t0
    ok = not failures and dt < 300
    criterion("2 detector oracles", ok, f"{n_soups} soups, mismatches={failures or 0}, {dt:.0f}s")
    assert ok


# ---------------------------------------------------------------- 3-5. loop-soup exponents and ratios

FIT_EPS = {8.0, 4.0, 2.0, 1.0}
RATIO_EPS = {8.0, 4.0, 2.0}


@pytest.fixture(scope="module")
def soup_main():
    return _experiment("soup_main")


@pytest.fixture(scope="module")
def soup_local():
    return _experiment("soup_local")


def test_c3_two_arm_exponent(soup_main, criterion):
    cfg, batch = soup_main
    eps, k, n = _cols(batch, "A2", FIT_EPS)
    fit = mc.fit_exponent(eps=eps / 32.0, successes=k, trials=n)
    ok = (abs(fit.slope - 0.5) <= 0.15 and cfg.spec.box_side >= 192 and n.min() >= 100_000
          and len(fit.scales) == 4)
    criterion("3 two-arm exponent", ok,
              f"slope {fit.slope:.3f} +- {fit.slope_stderr:.3f} (target 0.5 +- 0.15), "
              f"counts {_fmt_counts(eps, k, n)}")
    assert ok


def test_c4_four_arm_bracket(soup_main, criterion):
    _, batch = soup_main
    eps, k, n = _cols(batch, "E2_cluster", FIT_EPS)
    usable = k >= mc.MIN_SUCCESSES
    if usable.sum() >= 2:
        fit = mc.fit_exponent(eps=eps / 32.0, successes=k, trials=n)
        ok = 1.2 <= fit.slope <= 2.8
        detail = f"slope {fit.slope:.3f} +- {fit.slope_stderr:.3f} over eps {fit.scales} (bracket [1.2, 2.8])"
    else:
        order = np.argsort(-eps)
        p = k[order] / n[order]
        ci = [mc.wilson_interval(a, b) for a, b in zip(k[order], n[order])]
        ok = bool(np.all(np.diff(p) < 0) and ci[-1][1] < ci[0][0])
        detail = "degraded check: strictly decreasing with separated extreme CIs"
    criterion("4 four-arm bracket", ok, f"{detail}; counts {_fmt_counts(eps, k, n)}")
    assert ok


def _ratio_row(batch, a, b, nested):
    eps, ka, na = _cols(batch, a, RATIO_EPS)
    _, kb, nb = _cols(batch, b, RATIO_EPS)
    return eps, mc.ratio_diag((ka, na), (kb, nb), nested=nested)


def _trend_free(eps, ratios):
    try:
        t = mc.trend_test(eps, ratios)
    except Exception as exc:  # insufficient data is a failure here
        return False, f"trend test impossible ({exc})"
    return t.trend_free, f"trend slope {t.slope:.3f} +- {t.stderr:.3f}, p={t.p_value:.3f}"


def test_c5a_E1_E2_ratio(soup_main, criterion):
    _, batch = soup_main
    eps, rs = _ratio_row(batch, "E1_contour", "E2_cluster", False)
    vals = [r.value for r in rs]
    band = all(np.isfinite(v) and 0.1 <= v <= 10 for v in vals)
    tf, tdetail = _trend_free(eps, rs)
    ok = band and tf
    criterion("5a E1/E2 ratio", ok, f"ratios {[round(v, 3) for v in vals]} at eps {eps.tolist()}; {tdetail}")
    assert ok


def test_c5b_separation_ratio(soup_main, criterion):
    _, batch = soup_main
    eps, rs = _ratio_row(batch, "E2G2", "E2_cluster", True)
    vals = [r.value for r in rs]
    floor = all(np.isfinite(v) and v >= 0.005 for v in vals)
    tf, tdetail = _trend_free(eps, rs)
    ok = floor and tf
    criterion("5b (E2 and G2)/E2 ratio", ok, f"ratios {vals} at eps {eps.tolist()}; {tdetail}")
    assert ok


def test_c5c_truncated_ratio(soup_main, criterion):
    _, batch = soup_main
    eps, rs = _ratio_row(batch, "E2_trunc", "E2_cluster", True)
    vals = [r.value for r in rs]
    ok = all(np.isfinite(v) and v >= 0.1 for v in vals)
    criterion("5c truncated/plain ratio", ok, f"ratios {[round(v, 4) for v in vals]} at eps {eps.tolist()}")
    assert ok


def test_c5d_quasi_multiplicativity(soup_main, soup_local, criterion):
    cfg, batch = soup_main
    lcfg, lbatch = soup_local
    rows = cli.quasi_mult_rows(cfg, batch, lcfg, lbatch)
    vals = [float(r[5]) for r in rows]
    finite = len(vals) >= 2 and all(np.isfinite(v) and v > 0 for v in vals)
    spread = max(vals) / min(vals) if finite else float("inf")
    ok = finite and spread <= 3
    criterion("5d quasi-multiplicativity", ok,
              f"triples {[r[8] for r in rows]} ratios {[round(v, 3) for v in vals]}, spread {spread:.2f}")
    assert ok


# ---------------------------------------------------------------- 6-7. SLE


@pytest.fixture(scope="module")
def sle_boundary():
    return _experiment("sle_boundary")


def test_c6_sle_engine(sle_boundary, criterion):
    d = sample_driver(0.0, 1.0, 1e-3)
    tr = loewner_trace(d)
    t = d.times[1:]
    rel = np.max(np.abs(tr.points[1:] - 2j * np.sqrt(t)) / (2 * np.sqrt(t)))
    kappa, T, n = 4.0, 1.0, 10_000
    finals = np.array([sample_driver(kappa, T, 0.01, seed=s, stream=6).values[-1] for s in range(n)])
    var = finals.var(ddof=1)
    sigma = kappa * T * math.sqrt(2.0 / (n - 1))
    ok_var = abs(var - kappa * T) <= 3 * sigma
    _, batch = sle_boundary
    eps, k, nn = _cols(batch, "hit", {0.04, 0.02, 0.01})
    fit = mc.fit_exponent(eps=eps, successes=k, trials=nn)
    ok_fit = abs(fit.slope - 1.0) <= 0.2 and nn.min() >= 100_000
    ok = rel < 1e-6 and ok_var and ok_fit
    criterion("6 SLE engine", ok,
              f"zero-driver rel err {rel:.1e}; Var(W_T)={var:.4f} vs {kappa * T} (3 sigma {3 * sigma:.4f}); "
              f"hit slope {fit.slope:.3f} +- {fit.slope_stderr:.3f}, counts {_fmt_counts(eps, k, nn)}")
    assert ok


def test_c7_four_arm_boundary_decay(sle_boundary, criterion):
    _, batch = sle_boundary
    kc, _, _ = batch.row("W4b_cons")
    kn, nn, _ = batch.row("W4b")
    ko, _, _ = batch.row("W4b_opt")
    bracket = bool(np.all(kc <= kn) and np.all(kn <= ko))
    eps = np.array([e for e, _ in batch.ladder])
    order = np.argsort(-eps)
    p = (kn / nn)[order]
    decreasing = bool(np.all(np.diff(p) <= 0))
    big = mc.wilson_interval(int(kn[order[0]]), int(nn[order[0]]))
    small = mc.wilson_interval(int(kn[order[-1]]), int(nn[order[-1]]))
    separated = small[1] < big[0]
    ok = bracket and decreasing and separated
    criterion("7 W4+ decay", ok,
              f"cons/nominal/opt counts {kc.tolist()}/{kn.tolist()}/{ko.tolist()} over eps {eps.tolist()}; "
              f"CI at eps {eps[order[0]]:g} {np.round(big, 5).tolist()} vs eps {eps[order[-1]]:g} "
              f"{np.round(small, 5).tolist()}")
    assert ok


# ---------------------------------------------------------------- 8. determinism and persistence

SMALL = """model=LoopSoup
events=A2,E1_raw,E2_cluster,E2_trunc
kappa=4
ladder=4:12,2:12,1:12
trials=240
seed=808
box=73
shard_size=20
"""


def _cli(*args):
    return subprocess.Popen([sys.executable, "-m", "arm_lab.cli", *args],
                            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)


def _snapshot(out):
    files = sorted((out / "shards").glob("*.jsonl")) + [out / "summary.csv"]
    return {p.name: p.read_bytes() for p in files}


def test_c8_determinism_and_resume(tmp_path, criterion):
    d = LatticeDomain.centered(65)
    s1, s2 = sample_soup(d, 0.5, seed=31), sample_soup(d, 0.5, seed=31)
    f1, f2 = analyze(s1), analyze(s2)
    same_soup = (s1.to_text() == s2.to_text()
                 and contour_text([f1.contour(c) for c in range(f1.n_clusters)])
                 == contour_text([f2.contour(c) for c in range(f2.n_clusters)]))
    cfg = tmp_path / "small.cfg"
    cfg.write_text(SMALL)
    t0 = time.time()
    assert _cli("run", "--config", str(cfg), "--out", str(tmp_path / "full")).wait() == 0
    full_time = time.time() - t0
    assert _cli("run", "--config", str(cfg), "--out", str(tmp_path / "again")).wait() == 0
    same_run = _snapshot(tmp_path / "full") == _snapshot(tmp_path / "again")
    # kill at a random point, then resume
    delay = float(np.random.default_rng(int(time.time())).uniform(0.3, 0.9)) * full_time
    proc = _cli("run", "--config", str(cfg), "--out", str(tmp_path / "killed"))
    time.sleep(delay)
    killed = proc.poll() is None
    if killed:
        proc.send_signal(signal.SIGKILL)
    proc.wait()
    partial = len(list((tmp_path / "killed" / "shards").glob("*.jsonl")))
    # a kill during interpreter start-up leaves nothing to resume, so the restart is a plain rerun
    started = (tmp_path / "killed" / "config.txt").exists()
    restart = ("resume",) if started else ("run", "--config", str(cfg))
    assert _cli(*restart, "--out", str(tmp_path / "killed")).wait() == 0
    same_resume = _snapshot(tmp_path / "full") == _snapshot(tmp_path / "killed")
    ok = same_soup and same_run and same_resume
    criterion("8 determinism and resume", ok,
              f"soup/contour bytes equal={same_soup}, rerun equal={same_run}, "
              f"killed after {delay:.1f}s of {full_time:.1f}s ({'killed' if killed else 'finished first'}, "
              f"{partial}/12 shards on disk, restart via {restart[0]}), resumed outputs equal={same_resume}")
    assert ok
