"""Scenario execution and CSV output.

Every scenario gets its own generator, derived from its 64-bit seed through
``numpy.random.SeedSequence`` and split per random draw, so results do not
depend on worker count or scheduling.  CSV floats are written with 17
significant digits and LF line endings.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import impulse_control as ic
from .. import inverse_source, observation, stabilizer
from ..spectral_core import SubdomainMask, spectral_problem
from .config import Scenario

log = logging.getLogger(__name__)

SUMMARY_NAME = "summary.csv"


@dataclass
class RunReport:
    scenario: str
    task: str
    passed: int = 0
    failed: int = 0
    wall_time: float = 0.0
    artifacts: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    error: str | None = None

    @property
    def total(self) -> int:
        return self.passed + self.failed

    @property
    def ok(self) -> bool:
        return self.failed == 0 and self.error is None


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path: Path, rows, columns) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
    return path


def _rng(seed: int, n: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _setup(sc: Scenario):
    decomp = spectral_problem(sc.n, sc.length, sc.potential)
    masks = {k: SubdomainMask(a, b, decomp.grid, k) for k, (a, b) in sorted(sc.masks.items())}
    return decomp, masks


def _random_span(decomp, rng, d):
    c = np.zeros(decomp.n)
    c[:d] = rng.standard_normal(d)
    return decomp.synthesize(c)


def _angle(u, v):
    """Angle between u and -v, computed stably for nearly antiparallel vectors."""
    s = np.linalg.norm(u / np.linalg.norm(u) + v / np.linalg.norm(v))
    return 2 * math.asin(min(s / 2, 1.0))


def task_stabilize(sc: Scenario, out: Path):
    decomp, masks = _setup(sc)
    p = sc.params
    F = stabilizer.build_feedback(decomp, masks["w1"], masks["w2"], p["gamma"], p["T"])
    traj_rows, decay_rows, checks = [], [], []
    for i, rng in enumerate(_rng(sc.seed, p["n_initial"])):
        y0 = rng.standard_normal(decomp.n)
        cfg = stabilizer.ClosedLoopConfig(p["gamma"], p["T"], masks["w1"], masks["w2"], y0, p["n_periods"], p["extra_samples"])
        traj = stabilizer.simulate_closed_loop(decomp, F, cfg)
        rep = stabilizer.decay_report(traj)
        for r in traj.rows():
            traj_rows.append({"y0": i, **r})
        for r in rep.period_rows:
            decay_rows.append({"y0": i, **r, "ledger_pass": r["tilde_pass"] and r["hat_pass"] and r["bar_pass"]})
        jumps = traj.jump_defects()
        checks += [
            (f"y0[{i}] contraction", rep.contraction_ok),
            (f"y0[{i}] period ledger", rep.ledger_ok),
            (f"y0[{i}] envelope", rep.envelope_ok),
            (f"y0[{i}] jump identity", bool(jumps.size == 0 or jumps.max() <= 1e-12)),
        ]
    checks.append(("closing identities", rep.closing_ok))
    checks.append(("op_norm <= product bound", F.op_norm <= F.product_bound() * (1 + 1e-12)))
    files = [
        write_csv(out / f"{sc.name}.csv", traj_rows, ["y0", "t", "label", "norm", "event_flag", "control_norm"]),
        write_csv(out / f"{sc.name}_decay.csv", decay_rows,
                  ["y0", "n", "ratio", "bound", "tilde", "tilde_bound", "hat", "hat_bound",
                   "bar", "bar_bound", "split_defect", "ledger_pass", "pass"]),
    ]
    return checks, files


def task_min_norm(sc: Scenario, out: Path):
    decomp, masks = _setup(sc)
    p = sc.params
    T1, T2, T3 = p["times"]
    d = p["dim_trunc"]
    rows, checks = [], []
    for i, rng in enumerate(_rng(sc.seed, p["n_instances"])):
        z = _random_span(decomp, rng, d)
        prob = ic.ImpulseProblem(T1, T2, T3, masks["w1"], z, p["eps"], d)
        res = ic.solve_min_norm(decomp, prob)
        pen = ic.solve_penalized(decomp, prob)
        row = {"instance": i, "mode": res.mode, "z_norm": res.z_norm, "f_norm": res.f_norm,
               "terminal_norm": res.terminal_norm, "mu": res.mu, "el_residual": res.el_residual,
               "angle": 0.0, "penalized_f_norm": pen.f_norm, "penalized_admissible": pen.terminal_norm <= p["eps"] * pen.z_norm * (1 + 1e-9),
               "penalized_energy": pen.energy}
        ok = res.admissible
        if res.mode == "active":
            row["angle"] = _angle(res.terminal, res.w)
            scale = res.free_terminal_norm
            target = p["eps"] * res.z_norm
            ok = (ok and res.el_residual <= 1e-8 * scale
                  and abs(res.terminal_norm - target) <= 1e-8 * target and row["angle"] <= 1e-6)
        if row["penalized_admissible"]:
            ok = ok and res.f_norm <= pen.f_norm * (1 + 1e-9)
        ok = ok and pen.energy <= pen.z_norm**2 * (1 + 1e-10)
        row["pass"] = bool(ok)
        rows.append(row)
        checks.append((f"instance {i}", row["pass"]))
    cols = ["instance", "mode", "z_norm", "f_norm", "terminal_norm", "mu", "el_residual", "angle",
            "penalized_f_norm", "penalized_admissible", "penalized_energy", "pass"]
    return checks, [write_csv(out / f"{sc.name}.csv", rows, cols)]


def task_duality(sc: Scenario, out: Path):
    decomp, masks = _setup(sc)
    p = sc.params
    T1, T2, T3 = p["times"]
    d, eps, w1 = p["dim_trunc"], p["eps"], masks["w1"]
    vr = ic.value_N(decomp, w1, T1, T2, T3, eps, d, seed=sc.seed % 2**32, n_random=p["n_random"])
    er = observation.eps_constant(decomp, w1, T1, T2, T3, eps, d, seed=sc.seed % 2**32)
    N, E = vr.value, er.measured_constant
    samples = [decomp.synthesize(np.r_[u, np.zeros(decomp.n - d)])
               for u in (r.standard_normal(d) for r in _rng(sc.seed, p["n_samples"]))]
    samples = [z / (np.sqrt(decomp.h) * np.linalg.norm(z)) for z in samples]
    qc = ic.verify_QC(decomp, w1, (T1, T2, T3), eps, N * (1 + 1e-3), samples, d, N, E)
    zmax = decomp.synthesize(np.r_[vr.maximizer, np.zeros(decomp.n - d)])
    qc_half = ic.verify_QC(decomp, w1, (T1, T2, T3), eps, N / 2, [zmax], d) if N > 0 else None
    rows = [{"kind": "value_N", "index": -1, "value": N, "lhs": 0.0, "pass": True},
            {"kind": "eps_constant", "index": -1, "value": E, "lhs": 0.0,
             "pass": abs(N - E) <= 1e-3 * max(1.0, N)}]
    rows += [{"kind": "QC", "index": r["sample"], "value": r["f_norm"], "lhs": r["lhs"], "pass": r["pass"]} for r in qc.rows]
    if qc_half is not None:
        r = qc_half.rows[0]
        rows.append({"kind": "QC_half_maximizer", "index": 0, "value": r["f_norm"], "lhs": r["lhs"], "pass": not r["pass"]})
    checks = [("|value_N - eps_constant|", rows[1]["pass"]),
              ("(Q_C) at C = N(1+1e-3)", qc.all_samples_pass),
              ("equivalences consistent", qc.equivalence_consistent)]
    if qc_half is not None:
        checks.append(("maximizer violates (Q_C) at C = N/2", rows[-1]["pass"]))
    return checks, [write_csv(out / f"{sc.name}.csv", rows, ["kind", "index", "value", "lhs", "pass"])]


def task_observation_chain(sc: Scenario, out: Path):
    decomp, masks = _setup(sc)
    p = sc.params
    rep = observation.verify_implication_chain(
        decomp, masks["w1"], p["lambda_cut"], tuple(p["t_values"]), tuple(p["theta_values"]),
        p["beta"], tuple(p["eps_values"]), seed=sc.seed % 2**32)
    rows = [{"arrow": r["arrow"], "params": ";".join(f"{k}={_fmt(v)}" for k, v in sorted(r["params"].items())),
             "measured": r["measured"], "propagated": r["propagated"], "pass": r["pass"]} for r in rep.rows]
    checks = [(f"{r['arrow']} [{r['params']}]", r["pass"]) for r in rows]
    return checks, [write_csv(out / f"{sc.name}.csv", rows, ["arrow", "params", "measured", "propagated", "pass"])]


def task_inverse_source(sc: Scenario, out: Path):
    decomp, masks = _setup(sc)
    p = sc.params
    T1, T2, T3 = p["times"]
    phi = _random_span(decomp, _rng(sc.seed, 1)[0], p["phi_modes"])
    rep = inverse_source.reconstruct(decomp, masks["w1"], phi, T1, T2, T3, p["eps"], p["K"])
    rows = list(rep.rows())
    checks = [(f"mode {r['mode']} error bound", r["status"] != "fail") for r in rows]
    checks += [(f"mode {r['mode']} duality identity", r["duality_defect"] <= 1e-10) for r in rows]
    return checks, [write_csv(out / f"{sc.name}.csv", rows, ["mode", "a", "a_hat", "error", "bound", "status", "duality_defect"])]


TASKS = {
    "stabilize": task_stabilize,
    "min_norm": task_min_norm,
    "duality": task_duality,
    "observation_chain": task_observation_chain,
    "inverse_source": task_inverse_source,
}


def run_scenario(sc: Scenario, out: Path) -> RunReport:
    rep = RunReport(sc.name, sc.task)
    t0 = time.perf_counter()
    try:
        checks, files = TASKS[sc.task](sc, out)
        rep.checks = [(name, bool(ok)) for name, ok in checks]
        rep.passed = sum(ok for _, ok in rep.checks)
        rep.failed = len(rep.checks) - rep.passed
        rep.artifacts = [str(f) for f in files]
    except Exception as exc:  # isolate: one broken scenario must not take down the others
        log.exception("scenario %s failed", sc.name)
        rep.error = f"{type(exc).__name__}: {exc}"
        rep.failed = 1
    rep.wall_time = time.perf_counter() - t0
    return rep


def run(scenarios, output_dir, workers: int = 1) -> list[RunReport]:
    """Run scenarios concurrently, then write ``summary.csv`` after all finish.

    The summary holds no timings so that reruns are byte-identical.
    """
    out = Path(output_dir)
    scenarios = list(scenarios)
    if not scenarios:
        return []
    out.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        reports = list(pool.map(lambda s: run_scenario(s, out), scenarios))
    rows = [{"scenario": r.scenario, "task": r.task, "checks": r.total, "passed": r.passed, "failed": r.failed,
             "status": "pass" if r.ok else ("error" if r.error else "fail"),
             "detail": r.error or "; ".join(n for n, ok in r.checks if not ok)} for r in reports]
    write_csv(out / SUMMARY_NAME, rows, ["scenario", "task", "checks", "passed", "failed", "status", "detail"])
    return reports
