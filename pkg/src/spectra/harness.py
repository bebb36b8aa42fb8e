"""Experiment orchestration: mode dispatch, reports and the artifact manifest."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import statistics
from dataclasses import dataclass, field

import numpy as np

from . import asymptotics as asy
from . import refsolver as rs
from . import sturm1d as s1
from .config import RunConfig
from .errors import (ConfigError, NoMatchError, ParameterError, SmallDenominatorError, SpectraError)
from .lattice import (CLASSIFICATION_COLUMNS, AsymptoticParams, BoxGeometry, LatticeVector, classification_rows,
                      classify, estimate_measure_ratio, shell_orbits)
from .potential import MatrixFourierPotential, directional_part, off_ray_part

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_GUARD, EXIT_NO_MATCH = 0, 1, 2, 3, 4
BINDING_TOL = 1e-6
PARSEVAL_TOL = 1e-6


# -- small utilities ----------------------------------------------------------

def fmt(x) -> str:
    """17 significant digits, locale-free; integers and text pass through."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if x is None:
        return ""
    if isinstance(x, (tuple, list)):
        return " ".join(fmt(v) for v in x)
    return str(x)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def _plain(x):
    if dataclasses.is_dataclass(x) and not isinstance(x, type):
        return _plain(dataclasses.asdict(x))
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def json_text(doc) -> str:
    return json.dumps(_plain(doc), indent=1, sort_keys=True) + "\n"


def fit_slope(x, y) -> dict:
    """Least-squares slope of ``log y`` against ``log x`` with a 95% normal interval."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    x, y = np.log(x[ok]), np.log(y[ok])
    if len(x) < 3:
        raise ParameterError(f"slope fit needs at least 3 positive points, got {len(x)}")
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = len(x) - 2
    s2 = float(resid @ resid) / dof if dof else 0.0
    se = math.sqrt(s2 / float(((x - x.mean()) ** 2).sum()))
    return {"slope": float(coef[0]), "intercept": float(coef[1]), "stderr": se,
            "ci95": [float(coef[0] - 1.96 * se), float(coef[0] + 1.96 * se)], "residuals": resid.tolist()}


class ArtifactWriter:
    def __init__(self, root: str):
        self.root = root
        self.entries: dict[str, str] = {}
        os.makedirs(root, exist_ok=True)

    def write(self, name: str, text: str) -> str:
        path = os.path.join(self.root, name)
        data = text.encode()
        with open(path, "wb") as fh:
            fh.write(data)
        self.entries[name] = hashlib.sha256(data).hexdigest()
        return path

    def manifest(self, cfg: RunConfig, status: str, exit_code: int, errors: list) -> str:
        doc = {"mode": cfg.mode, "config": cfg.materialized(), "status": status, "exit_code": exit_code,
               "errors": errors, "artifacts": [{"path": k, "sha256": v} for k, v in sorted(self.entries.items())]}
        path = os.path.join(self.root, "manifest.json")
        with open(path, "w") as fh:
            fh.write(json_text(doc))
        return path


# -- stages ---------------------------------------------------------------------

def classify_shell(geometry: BoxGeometry, params: AsymptoticParams):
    gammas = [LatticeVector(tuple(i), geometry) for i in shell_orbits(geometry, params).tolist()]
    classes = [classify(g, params, geometry) for g in gammas]
    return gammas, classes


def single_resonance_points(geometry: BoxGeometry, params: AsymptoticParams, axes) -> list[tuple[LatticeVector, object]]:
    gammas, classes = classify_shell(geometry, params)
    return [(g, c) for g, c in zip(gammas, classes) if c.is_single and c.axis in axes]


def solve_directions(V: MatrixFourierPotential, cfg: RunConfig) -> dict[int, s1.EigenpairSet]:
    return {axis: s1.solve(directional_part(V, axis), int(cfg.p["n_trunc_1d"]), cfg.p["tol"])
            for axis in cfg.directions}


def decay_rows(V: MatrixFourierPotential, pairs: s1.EigenpairSet, cfg: RunConfig) -> list[dict]:
    P = directional_part(V, pairs.axis)
    rows = []
    for rho in cfg.rho_grid:
        prm = cfg.params(rho).for_direction(V.geometry, pairs.axis)
        rep = s1.decay_report(pairs, prm, prm.r1, P=P)
        rows.append({"axis": pairs.axis, "rho": rho, "r1": prm.r1, "coefficient_max": rep.coefficient_max,
                     "tail_max": rep.tail_max,
                     "coefficient_scale": prm.rho ** (-(prm.l - 1) * prm.alpha),
                     "tail_scale": prm.rho ** (-(prm.l - 2) * prm.alpha)})
    return rows


def decay_summary(rows: list[dict]) -> dict:
    """Single constant ``K`` fitted to both decay laws, and monotonicity in ``rho``."""
    k_coef = max(r["coefficient_max"] / r["coefficient_scale"] for r in rows)
    k_tail = max(r["tail_max"] / r["tail_scale"] for r in rows)
    K = max(k_coef, k_tail)
    coef = [r["coefficient_max"] for r in rows]
    tail = [r["tail_max"] for r in rows]
    return {"K": K, "coefficient_below": all(r["coefficient_max"] <= K * r["coefficient_scale"] for r in rows),
            "tail_below": all(r["tail_max"] <= K * r["tail_scale"] for r in rows),
            "coefficient_nonincreasing": all(b <= a for a, b in zip(coef, coef[1:])),
            "tail_nonincreasing": all(b <= a for a, b in zip(tail, tail[1:]))}


@dataclass
class Oracle:
    full: rs.FullSpectrum
    off_ray: dict  # axis -> Galerkin matrix of V - P
    cutoff: float


def build_oracle(V: MatrixFourierPotential, cfg: RunConfig) -> Oracle:
    cutoff = cfg.p["cutoff"]
    if cutoff is None:
        cutoff = rs.largest_cutoff(V.geometry, V.m, int(cfg.p["max_dim"]))
    full = rs.eigen_full(V, float(cutoff), cfg.p["tol"], int(cfg.p["max_dim"]), keep_matrix=True)
    off = {axis: rs.assemble_potential(off_ray_part(V, axis), full.basis) for axis in cfg.directions}
    return Oracle(full, off, float(cutoff))


def chi_overlaps(full: rs.FullSpectrum, N: int, ctx: asy.ExpansionContext, betas) -> dict:
    """``<psi_N, chi_{col, beta}>`` for every comparison column and each ``beta``."""
    m, n_rows = ctx.m, ctx.n_rows
    psi = full.vectors[:, N]
    out = {}
    for beta in betas:
        idx = np.tile(np.array(beta), (n_rows, 1))
        idx[:, ctx.axis] = np.arange(n_rows)
        pos = full.basis.position(idx)
        vec = np.zeros((n_rows, m))
        ok = pos >= 0
        for i in range(m):
            vec[ok, i] = psi[pos[ok] * m + i]
        out[beta] = ctx.phi.T @ vec.reshape(-1)
    return out


def expansion_row(ctx: asy.ExpansionContext, base: asy.State, cfg: RunConfig) -> dict:
    order = int(cfg.p["order"])
    row = {"lambda_base": ctx.energy(base)}
    try:
        st = asy.e_iterate(ctx, base, order, int(cfg.p["k_max"]), cfg.p["bound_constant"])
    except SmallDenominatorError as exc:
        row.update(guard_ok=False, guard_message=str(exc), guard_state=exc.state, guard_denominator=exc.denominator)
        return row
    row.update(guard_ok=True, min_denominator=st.min_denominator, states_visited=st.states_visited,
               E_bound_ok=st.bound_ok, k_max=st.k_max)
    rho, a2 = ctx.params.rho, ctx.params.alpha2
    for s in range(1, order + 1):
        pred, budget = asy.predict(st, s, rho, a2, cfg.p["budget_constant"])
        row[f"E_{s - 1}"] = st.E[s - 1]
        row[f"Lambda_pred_{s}"] = pred
        row[f"budget_{s}"] = budget
    row["E_final"] = st.E[-1]
    return row


@dataclass
class ComparisonReport:
    rows: list[dict]
    summary: dict
    skipped: list[dict] = field(default_factory=list)


def compare_point(ctx, pairs, oracle: Oracle, V, gamma, cls, slot, cfg, prm) -> dict:
    full = oracle.full
    base = asy.State(int(cls.j), slot, tuple(int(b) for b in cls.beta))
    row = {"rho": prm.rho, "axis": ctx.axis, "gamma": gamma.index, "j": base.j, "slot": slot, "beta": base.beta}
    mode = rs.embed_comparison(pairs, base.j, slot, base.beta, full.basis)
    ov = rs.overlaps(full, mode, full.matrix, oracle.off_ray[ctx.axis])
    binding = ov.binding_residual
    M = V.sup_norm_bound()
    row.update(parseval=ov.parseval, parseval_ok=abs(ov.parseval - 1) <= PARSEVAL_TOL,
               binding_max=float(binding.max()), tail=ov.tail,
               binding_ok=bool(np.all(binding <= BINDING_TOL + ov.tail)), chi_dropped=mode.dropped, M=M)
    try:
        mt = rs.match(ov, M, prm.rho, prm.q, prm.alpha)
    except NoMatchError as exc:
        row.update(matched=False, match_message=str(exc))
        return row
    row.update(matched=True, N=mt.N, Lambda_oracle=mt.Lambda, c=mt.c, gap=mt.gap, c_threshold=mt.threshold,
               within_2M=abs(mt.gap) < 2 * M, degenerate=list(mt.degenerate))
    row.update(expansion_row(ctx, base, cfg))
    order = int(cfg.p["order"])
    if row["guard_ok"]:
        for s in range(1, order + 1):
            row[f"abs_err_{s}"] = abs(mt.Lambda - row[f"Lambda_pred_{s}"])
        row["order_flags"] = sum(row[f"abs_err_{s}"] > row[f"abs_err_{s - 1}"] for s in range(2, order + 1))
    row["a_sum"] = asy.a_sum(ctx, base)
    k_max = int(cfg.p["k_max"])
    betas = asy.reachable_betas(ctx, base.beta, k_max + 1)
    overl = chi_overlaps(full, mt.N, ctx, betas)
    hs = asy.h_functions(ctx, base)
    checks = [asy.selection_check(mt.c, h, overl, prm.p2) for h in hs]
    row["h_norms"] = [h.norm for h in hs]
    row["selection_ok"] = all(c is None or bool(c[0]) for c in checks)
    resid = asy.residual_path_sum(ctx, base, mt.Lambda, k_max, overl)
    bound = cfg.p["residual_constant"] * prm.rho ** (-(k_max // 2) * prm.alpha2)
    row.update(C_residual=resid, C_bound=bound, C_ok=abs(resid) <= bound)
    return row


def _median(vals):
    return statistics.median(vals) if vals else None


def summarize(rows: list[dict], rho_grid, order: int) -> dict:
    per_rho = {}
    for rho in rho_grid:
        rr = [r for r in rows if r["rho"] == rho]
        matched = [r for r in rr if r.get("matched")]
        guarded = [r for r in matched if r.get("guard_ok")]
        entry = {"rows": len(rr), "matched": len(matched), "guard_ok": len(guarded),
                 "median_gap": _median([abs(r["gap"]) for r in matched])}
        for s in range(1, order + 1):
            errs = [r[f"abs_err_{s}"] for r in guarded]
            entry[f"abs_err_{s}_quantiles"] = (np.quantile(errs, [0.1, 0.5, 0.9]).tolist() if errs else None)
            entry[f"median_abs_err_{s}"] = _median(errs)
        if order >= 2 and matched:
            improved = sum(1 for r in guarded if r["abs_err_2"] < r["abs_err_1"])
            entry["improved_fraction"] = improved / len(matched)
        entry["order_flags"] = sum(r.get("order_flags", 0) > 0 for r in guarded)
        entry["order_flag_fraction"] = entry["order_flags"] / len(guarded) if guarded else None
        entry["max_a_sum"] = max((r["a_sum"] for r in matched), default=None)
        per_rho[fmt(rho)] = entry
    out = {"per_rho": per_rho}
    gaps = [per_rho[fmt(r)]["median_gap"] for r in rho_grid]
    if len(rho_grid) >= 3 and all(g for g in gaps):
        out["gap_slope"] = fit_slope(rho_grid, gaps)
        out["median_gap_decreasing"] = all(b < a for a, b in zip(gaps, gaps[1:]))
        for s in range(1, order + 1):
            med = [per_rho[fmt(r)][f"median_abs_err_{s}"] for r in rho_grid]
            if all(m for m in med):
                out[f"order_{s}_slope"] = fit_slope(rho_grid, med)
    sums = [per_rho[fmt(r)]["max_a_sum"] for r in rho_grid]
    if all(sums):
        out["a_sum_ratio"] = max(sums) / min(sums)
    out["guard_violations"] = sum(1 for r in rows if r.get("matched") and not r.get("guard_ok"))
    out["no_match"] = sum(1 for r in rows if not r.get("matched"))
    return out


def compare(V: MatrixFourierPotential, cfg: RunConfig, oracle: Oracle | None = None,
            pairs: dict | None = None) -> ComparisonReport:
    geometry = V.geometry
    oracle = oracle or build_oracle(V, cfg)
    pairs = pairs or solve_directions(V, cfg)
    margin = cfg.p["containment_margin"]
    rows, skipped = [], []
    for rho in cfg.rho_grid:
        prm = cfg.params(rho)
        contexts = {axis: asy.build_context(V, axis, prm, pairs[axis], gap_floor=cfg.p["gap_floor"],
                                            denominator_factor=cfg.p["denominator_factor"],
                                            gap_factor=cfg.p["gap_factor"]) for axis in cfg.directions}
        for gamma, cls in single_resonance_points(geometry, prm, cfg.directions):
            reach = gamma.norm + prm.truncation_radius + V.support_radius + margin
            if reach > oracle.cutoff:
                skipped.append({"rho": rho, "gamma": gamma.index, "reason": f"needs cutoff {reach:.4g}"})
                continue
            for slot in range(V.m):
                ctx = contexts[cls.axis]
                rows.append(compare_point(ctx, pairs[cls.axis], oracle, V, gamma, cls, slot, cfg, ctx.params))
    return ComparisonReport(rows, summarize(rows, cfg.rho_grid, int(cfg.p["order"])), skipped)


def predict_rows(V: MatrixFourierPotential, cfg: RunConfig, pairs: dict | None = None) -> list[dict]:
    pairs = pairs or solve_directions(V, cfg)
    rows = []
    for rho in cfg.rho_grid:
        prm = cfg.params(rho)
        contexts = {axis: asy.build_context(V, axis, prm, pairs[axis], gap_floor=cfg.p["gap_floor"],
                                            denominator_factor=cfg.p["denominator_factor"],
                                            gap_factor=cfg.p["gap_factor"]) for axis in cfg.directions}
        for gamma, cls in single_resonance_points(V.geometry, prm, cfg.directions):
            for slot in range(V.m):
                base = asy.State(int(cls.j), slot, tuple(cls.beta))
                row = {"rho": rho, "axis": cls.axis, "gamma": gamma.index, "j": base.j, "slot": slot,
                       "beta": base.beta}
                row.update(expansion_row(contexts[cls.axis], base, cfg))
                rows.append(row)
    return rows


def convergence_study(cfg: RunConfig, report: ComparisonReport | None = None,
                      V: MatrixFourierPotential | None = None) -> dict:
    """Per-order slopes of log median error against log rho."""
    if len(cfg.rho_grid) < 3:
        raise ParameterError("convergence study needs at least 3 rho values")
    if report is None:
        report = compare(V or cfg.potential(), cfg)
    order = int(cfg.p["order"])
    table = {}
    for s in range(1, order + 1):
        med = [report.summary["per_rho"][fmt(r)][f"median_abs_err_{s}"] for r in cfg.rho_grid]
        if any(m is None for m in med):
            table[s] = {"status": "no data"}
        elif max(med) < 1e-13:
            table[s] = {"status": "degenerate: below noise floor", "medians": med}
        else:
            table[s] = {"status": "ok", "medians": med, **fit_slope(cfg.rho_grid, med)}
    return table


def measure(cfg: RunConfig) -> list:
    geometry = cfg.geometry()
    mc = cfg.doc["measure"]
    return [estimate_measure_ratio(int(mc["axis"]), cfg.params(rho).for_direction(geometry, int(mc["axis"])),
                                   geometry, int(mc["samples"]), int(mc["seed"])) for rho in cfg.rho_grid]


# -- mode dispatch ---------------------------------------------------------------

ROW_COLUMNS = ("rho", "axis", "gamma", "j", "slot", "beta", "lambda_base", "N", "Lambda_oracle", "gap", "c",
               "c_threshold", "within_2M", "parseval", "binding_max", "tail", "binding_ok", "guard_ok",
               "min_denominator")


def _row_columns(order: int) -> tuple:
    extra = []
    for s in range(1, order + 1):
        extra += [f"Lambda_pred_{s}", f"abs_err_{s}"]
    return ROW_COLUMNS + tuple(extra) + ("a_sum", "selection_ok", "C_residual", "C_bound", "C_ok")


def _run_mode(cfg: RunConfig, out: ArtifactWriter) -> tuple[int, list]:
    mode, problems = cfg.mode, []
    geometry = cfg.geometry()
    if mode == "classify":
        for rho in cfg.rho_grid:
            gammas, classes = classify_shell(geometry, cfg.params(rho))
            out.write(f"classification_rho{fmt(rho)}.csv",
                      csv_text(CLASSIFICATION_COLUMNS, classification_rows(gammas, classes)))
        return EXIT_OK, problems
    if mode == "measure":
        rows = [{"rho": e.rho, "ratio": e.ratio, "stderr": e.stderr, "accepted": e.accepted, "samples": e.samples}
                for e in measure(cfg)]
        out.write("measure.csv", csv_text(("rho", "ratio", "stderr", "accepted", "samples"), rows))
        return EXIT_OK, problems

    V = cfg.potential()
    if mode == "solve1d":
        rows, fits = [], {}
        for axis, pairs in solve_directions(V, cfg).items():
            out.write(f"spectrum_axis{axis}.json", json_text(pairs.to_json()))
            fit = s1.window_fit(pairs, directional_part(V, axis))
            fits[axis] = {"window_ok": fit.window_ok, "slope": fit.slope, "sup_P": pairs.sup_P,
                          "gram_deviation": pairs.gram_deviation()}
            rows += decay_rows(V, pairs, cfg)
        out.write("decay.csv", csv_text(("axis", "rho", "r1", "coefficient_max", "tail_max", "coefficient_scale",
                                         "tail_scale"), rows))
        out.write("solve1d.json", json_text({"window": fits, "decay": decay_summary(rows)}))
        return EXIT_OK, problems
    if mode == "solvefull":
        oracle = build_oracle(V, cfg)
        out.write("full_spectrum.json", json_text(oracle.full.to_json()))
        return EXIT_OK, problems
    order = int(cfg.p["order"])
    if mode == "predict":
        rows = predict_rows(V, cfg)
        out.write("predictions.json", json_text(rows))
        cols = ("rho", "axis", "gamma", "j", "slot", "beta", "lambda_base", "guard_ok", "min_denominator") + \
            tuple(f"Lambda_pred_{s}" for s in range(1, order + 1))
        out.write("predictions.csv", csv_text(cols, rows))
        bad = [r for r in rows if not r["guard_ok"]]
        problems += [{"rho": r["rho"], "gamma": r["gamma"], "slot": r["slot"], "error": r["guard_message"]} for r in bad]
        return (EXIT_GUARD if bad and cfg.doc["fail_on_guard"] else EXIT_OK), problems
    if mode == "compare":
        report = compare(V, cfg)
        out.write("comparison.csv", csv_text(_row_columns(order), report.rows))
        out.write("comparison.json", json_text({"rows": report.rows, "summary": report.summary,
                                                "skipped": report.skipped}))
        if len(cfg.rho_grid) >= 3:
            out.write("convergence.json", json_text(convergence_study(cfg, report)))
        for r in report.rows:
            if not r.get("matched"):
                problems.append({"rho": r["rho"], "gamma": r["gamma"], "slot": r["slot"], "error": r["match_message"]})
            elif not r.get("guard_ok"):
                problems.append({"rho": r["rho"], "gamma": r["gamma"], "slot": r["slot"], "error": r["guard_message"]})
        if report.summary["no_match"]:
            return EXIT_NO_MATCH, problems
        if report.summary["guard_violations"] and cfg.doc["fail_on_guard"]:
            return EXIT_GUARD, problems
        return EXIT_OK, problems
    raise ConfigError(f"unknown mode {mode!r}")


def run(cfg: RunConfig) -> int:
    out = ArtifactWriter(cfg.output)
    try:
        code, problems = _run_mode(cfg, out)
        status = "complete"
    except (ConfigError, ParameterError) as exc:
        code, problems, status = EXIT_CONFIG, [{"error": str(exc)}], "incomplete"
    except SmallDenominatorError as exc:
        code, problems, status = EXIT_GUARD, [{"error": str(exc)}], "incomplete"
    except NoMatchError as exc:
        code, problems, status = EXIT_NO_MATCH, [{"error": str(exc)}], "incomplete"
    except SpectraError as exc:
        code, problems, status = EXIT_FAILURE, [{"error": f"{type(exc).__name__}: {exc}"}], "incomplete"
    except Exception as exc:  # surfaced in the manifest rather than lost
        log.exception("unexpected failure")
        code, problems, status = EXIT_FAILURE, [{"error": f"{type(exc).__name__}: {exc}"}], "incomplete"
    for p in problems:
        log.warning("%s", p)
    out.manifest(cfg, status, code, problems)
    return code
