"""Experiment orchestration: config parsing, pipeline verbs, report emission.

Usage: obext <verb> --config <path> [--set key=value]...

Verbs: cphi, ahlfors, whitney, reflect, norm, extend, ratio, hsplit,
cutoff, probe, suite.  Exit code 0 on success, 2 on invariant violation,
1 on usage error.  Reports are deterministic for a fixed config (runtime
is reported as workload counters, never wall clock).
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import extension, geometry, orlicz_norms, reflection, whitney, young
from .errors import InvariantViolation, ObextError, UsageError

VERBS = ("cphi", "ahlfors", "whitney", "reflect", "norm", "extend", "ratio",
         "hsplit", "cutoff", "probe", "suite")

DEFAULTS = {
    "domain": "disk:1",
    "h": "0.02",
    "margin": "auto",
    "truncation": "auto",
    "phi": "power:3",
    "phis": "power:2.5|power:3|power:4|power:6|power:2|powerlog:2,2|powerlog:3,1|"
            "powerexp:3,1,0.5|powerexp:4,1,1|exptaylor:1,0.5|exptaylor:1,1",
    "epsilon": "0.25",
    "seed": "0",
    "workers": "2",
    "out": "out",
    "u": "ramp_x",
    "alpha": "auto",
    "n_centers": "100",
    "n_radii": "20",
    "kmax": "3",
    "cutoffs": "auto",
    "scales": "0.4,0.2,0.1",
    "probe_points": "0,0,1",
    "pou_samples": "10000",
    "base_radius": "6",
    "dump_grid": "0",
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    @staticmethod
    def load(path=None, overrides=()):
        vals = dict(DEFAULTS)
        if path is not None:
            for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
                k, _, v = line.partition("=")
                vals[k.strip()] = v.strip()
        for ov in overrides:
            if "=" not in ov:
                raise UsageError(f"--set needs key=value, got {ov!r}")
            k, _, v = ov.partition("=")
            vals[k.strip()] = v.strip()
        unknown = set(vals) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return ExperimentConfig(vals)

    def get(self, key):
        return self.values[key]

    def get_float(self, key):
        try:
            return float(self.values[key])
        except ValueError as exc:
            raise UsageError(f"config key {key} must be a number, got {self.values[key]!r}") from exc

    def get_int(self, key):
        try:
            return int(self.values[key])
        except ValueError as exc:
            raise UsageError(f"config key {key} must be an integer, got {self.values[key]!r}") from exc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, float) and math.isnan(obj):
        return "nan"
    return obj


def _write_report(out_dir, name, report):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}_report.json"
    with open(path, "w") as fh:
        json.dump(_jsonable(report), fh, sort_keys=True, indent=1)
        fh.write("\n")
    return path


def _write_csv(out_dir, name, header, rows):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    return path


# -- pipeline assembly ---------------------------------------------------------


@dataclass
class Pipeline:
    grid: object
    cover: object = None
    pou: object = None
    rmap: object = None
    shell_index: object = None
    ctx: object = None
    constants: dict = field(default_factory=dict)


def make_grid(cfg, enforce_margin=True):
    spec = geometry.parse_domain(cfg.get("domain"))
    h = cfg.get_float("h")
    margin = cfg.get("margin")
    if margin == "auto":
        d = spec.diameter()
        margin = 2.0 * d if math.isfinite(d) else 4.0
    else:
        margin = float(margin)
    return geometry.rasterize(spec, h, margin, enforce_margin=enforce_margin)


def build_pipeline(cfg, grid=None, need=("cover", "reflect")):
    pipe = Pipeline(grid=grid if grid is not None else make_grid(cfg))
    g = pipe.grid
    pipe.constants["cells"] = int(g.nx * g.ny)
    pipe.constants["cells_domain"] = int(np.count_nonzero(g.indicator))
    if "cover" in need or "reflect" in need:
        trunc = cfg.get("truncation")
        pipe.cover = whitney.decompose(g, None if trunc == "auto" else float(trunc))
        pipe.pou = whitney.PartitionOfUnity(pipe.cover)
        pipe.constants["gamma0"] = pipe.cover.gamma0
        pipe.constants["cubes"] = len(pipe.cover.cubes)
    if "reflect" in need:
        eps_cfg = cfg.get("epsilon")
        d = g.diam()
        eps0_val = None
        if math.isfinite(d):
            plan = geometry.SamplingPlan(cfg.get_int("n_centers"), cfg.get_int("n_radii"),
                                         seed=cfg.get_int("seed"))
            ahl = geometry.ahlfors_constant(g, plan)
            pipe.constants["C_A"] = ahl.c_inf
            eps0_val = reflection.epsilon0(ahl.c_inf, pipe.cover.gamma0)
            pipe.constants["epsilon0"] = eps0_val
        eps = eps0_val if eps_cfg == "auto" else float(eps_cfg)
        if eps is None:
            raise UsageError("epsilon=auto needs a bounded domain")
        pipe.rmap = reflection.build_reflections(pipe.cover, g, eps, eps0=eps0_val)
        pipe.shell_index = reflection.shells(pipe.cover, pipe.rmap, cfg.get_int("kmax"))
        pipe.constants["epsilon"] = eps
        pipe.constants["gamma1"] = pipe.rmap.gamma1
        pipe.constants["gamma2"] = pipe.rmap.gamma2
        pipe.constants["epsilon_override_above_epsilon0"] = pipe.rmap.override_exceeds_eps0
        pipe.ctx = extension.build_context(g, pipe.cover, pipe.pou, pipe.rmap, pipe.shell_index)
    return pipe


def named_function(name, grid):
    if name.startswith("battery:"):
        idx = int(name.split(":", 1)[1])
        return extension.battery(grid)[idx][1]
    table = dict(extension.battery(grid))
    if name in table:
        return table[name]
    if name.startswith("const:"):
        return orlicz_norms.GridFunction.constant(grid, float(name.split(":", 1)[1]))
    raise UsageError(f"unknown function {name!r}; battery names: {extension.BATTERY_NAMES}")


def _grid_block(g):
    return {"h": g.h, "box": list(g.box), "nx": g.nx, "ny": g.ny,
            "cells_domain": int(np.count_nonzero(g.indicator)),
            "area_domain": g.omega_area(), "analytic_distance": g.analytic_dist}


# -- verbs ----------------------------------------------------------------------


def run_cphi(cfg):
    n = 2
    rows = {}
    for spec in cfg.get("phis").split("|"):
        phi = young.parse_young(spec.strip(), n=n)
        res = young.compute_cphi(phi)
        sub = young.check_subexponential(phi)
        rows[phi.label()] = {"C_phi": res.as_json(), "subexponential": sub.as_json()}
    return {"phis": rows}


def run_ahlfors(cfg, pipe=None):
    g = pipe.grid if pipe else make_grid(cfg)
    plan = geometry.SamplingPlan(cfg.get_int("n_centers"), cfg.get_int("n_radii"),
                                 seed=cfg.get_int("seed"))
    res = geometry.ahlfors_constant(g, plan)
    _write_csv(cfg.get("out"), "ahlfors.csv", "x,y,r,measure,ratio", res.rows)
    return {
        "c_inf": res.c_inf,
        "argmin": {"x": list(res.arg_x), "r": res.arg_r},
        "plan": {"centers": res.n_centers_used, "radii": plan.n_radii,
                 "coverage_note": "sampled scan: one-sided certificate"},
        "grid": _grid_block(g),
    }


def run_whitney(cfg, pipe=None):
    pipe = pipe or build_pipeline(cfg, need=("cover",))
    cov, pou = pipe.cover, pipe.pou
    _write_csv(cfg.get("out"), "cover.csv", "level,i,j,side,dist,neighbors", cov.csv_rows())
    n_samples = cfg.get_int("pou_samples")
    pts = pou.sample_covered_points(n_samples, seed=cfg.get_int("seed"))
    sums = pou.sum_at(pts)
    L = pou.grad_bound()
    return {
        "cubes": len(cov.cubes),
        "gamma0": cov.gamma0,
        "overlap_98": cov.overlap_98(),
        "overlap_98_bound": 16.0 * cov.gamma0,
        "uncovered_cells": cov.uncovered_cells,
        "boundary_cell_budget": cov.boundary_cell_count,
        "pou": {"samples": n_samples, "max_deviation_from_1": float(np.abs(sums - 1.0).max()),
                "grad_bound_L": L},
        "grid": _grid_block(pipe.grid),
    }


def run_reflect(cfg, pipe=None):
    pipe = pipe or build_pipeline(cfg)
    rm, sh = pipe.rmap, pipe.shell_index
    _write_csv(cfg.get("out"), "reflect.csv", "cube_id,xstar_x,xstar_y,qstar_cells,sentinel",
               rm.csv_rows())
    shell_hist = {}
    for k in sorted(set(sh.shell.tolist())):
        shell_hist[str(k)] = int(np.count_nonzero(sh.shell == k))
    return {
        "constants": pipe.constants,
        "sentinels": int(np.count_nonzero(~rm.small)),
        "shells": shell_hist,
        "grid": _grid_block(pipe.grid),
    }


def run_norm(cfg, pipe=None):
    g = pipe.grid if pipe else make_grid(cfg)
    phi = young.parse_young(cfg.get("phi"))
    u = named_function(cfg.get("u"), g)
    lux = orlicz_norms.luxemburg(u, phi)
    _write_csv(cfg.get("out"), "trace.csv", "alpha,I", lux.trace)
    out = {"phi": phi.label(), "u": cfg.get("u"), "luxemburg": lux.as_json(),
           "grid": _grid_block(g)}
    if phi.kind == "power":
        p = phi.params[0]
        if p > 2:
            out["frac_sobolev_cross_check"] = orlicz_norms.frac_sobolev(u, 2.0 / p, p)
    plan = orlicz_norms.BallPlan.default(g, seed=cfg.get_int("seed"))
    out["bmo"] = orlicz_norms.bmo_norm(u, plan)
    d = g.diam()
    if math.isfinite(d):
        c = g.spec.center()
        out["poincare_ratio"] = orlicz_norms.poincare_check(u, c, d / 2.0, phi)
    return out


def run_extend(cfg, pipe=None):
    pipe = pipe or build_pipeline(cfg)
    g = pipe.grid
    u = named_function(cfg.get("u"), g)
    eu = extension.extend(pipe.ctx, u)
    ident = bool(np.array_equal(eu.values[g.indicator], u.values[g.indicator]))
    c = orlicz_norms.GridFunction.constant(g, 2.0)
    const_gap = float(np.abs(extension.extend(pipe.ctx, c).values - 2.0).max())
    v = named_function("osc_low", g)
    combo = orlicz_norms.GridFunction(g, 2.0 * u.values + 3.0 * v.values, g.indicator.copy())
    lin_gap = float(np.abs(extension.extend(pipe.ctx, combo).values
                           - 2.0 * eu.values - 3.0 * extension.extend(pipe.ctx, v).values).max())
    if cfg.get("dump_grid") not in ("0", "false", ""):
        out = Path(cfg.get("out"))
        out.mkdir(parents=True, exist_ok=True)
        g.save(out / "grid.txt")
    return {
        "constants": pipe.constants,
        "identity_on_domain": ident,
        "constant_preservation_gap": const_gap,
        "linearity_gap": lin_gap,
        "extension_range": [float(eu.values.min()), float(eu.values.max())],
        "grid": _grid_block(g),
    }


def run_ratio(cfg, pipe=None):
    pipe = pipe or build_pipeline(cfg)
    phi = young.parse_young(cfg.get("phi"))
    base_radius = cfg.get_int("base_radius")
    rows = {}
    worst = 0.0
    for name, u in extension.battery(pipe.grid):
        res = extension.operator_ratio(pipe.ctx, phi, u, base_radius=base_radius)
        rows[name] = res.as_json()
        if res.defined:
            worst = max(worst, res.ratio)
    return {"constants": pipe.constants, "phi": phi.label(), "ratios": rows,
            "max_ratio": worst, "grid": _grid_block(pipe.grid)}


def run_hsplit(cfg, pipe=None):
    pipe = pipe or build_pipeline(cfg)
    phi = young.parse_young(cfg.get("phi"))
    u = named_function(cfg.get("u"), pipe.grid)
    eu = extension.extend(pipe.ctx, u)
    hists = extension.split_histograms(pipe.ctx, eu, base_radius=cfg.get_int("base_radius"))
    alpha_cfg = cfg.get("alpha")
    if alpha_cfg == "auto":
        box_hist = hists[0].combined(hists[1], hists[2])
        lux = extension._lux_from_hist(box_hist, phi, eu, np.ones_like(pipe.grid.indicator), 1e-4)
        alpha = lux.value * 1.01 if lux.value > 0 else 1.0
    else:
        alpha = float(alpha_cfg)
    h1, h2, h3 = extension.h_split(pipe.ctx, phi, u, alpha, hists=hists)
    total = hists[0].combined(hists[1], hists[2]).modular(phi, alpha)
    return {
        "constants": pipe.constants, "phi": phi.label(), "u": cfg.get("u"),
        "alpha": alpha, "H1": h1, "H2": h2, "H3": h3,
        "sum": h1 + 2 * h2 + h3, "box_energy": total,
        "identity_gap": abs(h1 + 2 * h2 + h3 - total),
        "grid": _grid_block(pipe.grid),
    }


def default_cutoffs(grid):
    d = grid.diam()
    cs = []
    for x in ((0.0, 0.0), (0.3, 0.0), (0.0, 0.3), (-0.3, 0.2), (0.2, -0.4)):
        for (r, t) in ((0.125 * d, 0.25 * d), (0.05 * d, 0.15 * d)):
            cs.append(extension.CutoffSpec(x, r, t))
    return cs


def run_cutoff(cfg, pipe=None):
    g = pipe.grid if pipe else make_grid(cfg)
    phi = young.parse_young(cfg.get("phi"))
    cp = young.compute_cphi(phi)
    if cp.diverges:
        raise UsageError("growth constant diverges; cutoff bound undefined")
    spec_str = cfg.get("cutoffs")
    if spec_str == "auto":
        specs = default_cutoffs(g)
    else:
        specs = []
        for part in spec_str.split(";"):
            x0, y0, r, t = (float(v) for v in part.split(","))
            specs.append(extension.CutoffSpec((x0, y0), r, t))
    rows = []
    for cs in specs:
        u = extension.cutoff(cs, g)
        bound = extension.cutoff_bound(cs, g, phi, cphi_value=cp.value)
        lux = orlicz_norms.luxemburg(u, phi, method="multilevel")
        rows.append({"x": list(cs.x), "r": cs.r, "t": cs.t,
                     "seminorm": lux.value, "bound": bound,
                     "ok": bool(lux.value <= bound)})
    return {"phi": phi.label(), "C_phi": cp.value, "cutoffs": rows, "grid": _grid_block(g)}


def run_probe(cfg, pipe=None):
    g = pipe.grid if pipe else make_grid(cfg)
    phi = young.parse_young(cfg.get("phi"))
    out = {"phi": phi.label(), "grid": _grid_block(g)}

    # imbedding constant from the battery plus the probe's own ramps
    funcs = extension.battery(g)
    balls = [(g.spec.center(), g.diam() / 2.0), (g.spec.center(), g.diam() / 4.0)]
    points = []
    for part in cfg.get("probe_points").split(";"):
        x0, y0, r = (float(v) for v in part.split(","))
        points.append(((x0, y0), r))
    for k, (x, r) in enumerate(points):
        for (rr, tt) in ((0.25 * r, 0.5 * r), (0.5 * r, 0.75 * r)):
            try:
                funcs.append((f"probe_cutoff_{k}_{rr:g}", extension.cutoff(
                    extension.CutoffSpec(x, rr, tt), g)))
            except (UsageError, InvariantViolation):
                pass
    c_i = extension.imbedding_constant(g, phi, funcs, balls, method="multilevel")
    out["C_I"] = c_i
    out["C_n_target"] = extension.EXP_TARGET

    probes = extension.necessity_probe(g, phi, c_i, points)
    out["chain"] = [
        {"x": list(p.x), "r": p.r, "measure": p.measure, "b": p.b,
         "partial_sum_b1": (p.b[1] - p.b[-1]) if len(p.b) > 1 else None,
         "chain": p.chain, "b1_at_least_tenth": p.b1_at_least_tenth,
         "recentered": p.recentered, "regularity_ratio": p.implied_lower_bound}
        for p in probes
    ]

    if g.spec is not None and g.spec.kind == "cusp":
        tip = (0.0, 0.0)
        ladder = []
        for k in range(3, 8):
            r = 2.0 ** (-k)
            m_an = geometry.ball_measure_analytic(g.spec, tip, r)
            m_gr = geometry.ball_measure(g, tip, r)
            ladder.append({"k": k, "r": r, "ratio_analytic": m_an / r ** 2,
                           "ratio_grid": m_gr / r ** 2})
        out["tip_ladder"] = ladder

        pipe = pipe or build_pipeline(cfg)
        scales = [float(s) for s in cfg.get("scales").split(",")]
        tip_rows = []
        for s in scales:
            cs = extension.CutoffSpec((s, 0.0), s / 2.0, s)
            u = extension.cutoff(cs, g)
            res = extension.operator_ratio(pipe.ctx, phi, u,
                                           base_radius=cfg.get_int("base_radius"))
            tip_rows.append({"scale": s, "ratio": res.ratio if res.defined else None,
                             "lux_domain": res.lux_domain, "lux_box": res.lux_box})
        out["tip_cutoff_ratios"] = tip_rows
        out["constants"] = pipe.constants
    return out


def run_suite(cfg):
    report = {"cphi": run_cphi(cfg)}
    pipe = build_pipeline(cfg)
    report["ahlfors"] = run_ahlfors(cfg, pipe)
    report["whitney"] = run_whitney(cfg, pipe)
    report["reflect"] = run_reflect(cfg, pipe)
    report["norm"] = run_norm(cfg, pipe)
    report["extend"] = run_extend(cfg, pipe)
    report["hsplit"] = run_hsplit(cfg, pipe)
    return report


RUNNERS = {
    "cphi": run_cphi,
    "ahlfors": run_ahlfors,
    "whitney": run_whitney,
    "reflect": run_reflect,
    "norm": run_norm,
    "extend": run_extend,
    "ratio": run_ratio,
    "hsplit": run_hsplit,
    "cutoff": run_cutoff,
    "probe": run_probe,
    "suite": run_suite,
}

NEEDS_PIPELINE = {"reflect", "extend", "ratio", "hsplit"}


def run_experiment(verb, cfg):
    """Execute one verb end to end; returns the report dict (also written to disk)."""
    if verb not in RUNNERS:
        raise UsageError(f"unknown verb {verb!r}; choose from {VERBS}")
    runner = RUNNERS[verb]
    body = runner(cfg)
    report = {"verb": verb, "config": dict(sorted(cfg.values.items())), "results": body}
    _write_report(cfg.get("out"), verb, report)
    return report


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if not argv or argv[0] in ("-h", "--help"):
            print(__doc__)
            return 0
        verb = argv[0]
        if verb not in VERBS:
            raise UsageError(f"unknown verb {verb!r}; choose from {VERBS}")
        cfg_path = None
        overrides = []
        k = 1
        while k < len(argv):
            if argv[k] == "--config":
                if k + 1 >= len(argv):
                    raise UsageError("--config needs a path")
                cfg_path = argv[k + 1]
                k += 2
            elif argv[k] == "--set":
                if k + 1 >= len(argv):
                    raise UsageError("--set needs key=value")
                overrides.append(argv[k + 1])
                k += 2
            else:
                raise UsageError(f"unexpected argument {argv[k]!r}")
        cfg = ExperimentConfig.load(cfg_path, overrides)
        run_experiment(verb, cfg)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2
    except ObextError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
