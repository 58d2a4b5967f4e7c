"""Command-line entry point: brwlab <command> --config FILE."""
from __future__ import annotations

import argparse
import datetime as _dt
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, io
from .config import ConfigError, ExperimentConfig, load_config

log = logging.getLogger("brwlab")

COMMANDS = ("calibrate", "simulate", "tail", "potential", "fluct", "stable-selftest", "lambert-selftest")


class MissingInput(RuntimeError):
    pass


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _set_threads(n: int | None) -> int:
    import numba

    env = os.environ.get("BRWLAB_THREADS")
    if env:
        n = int(env)
    if n is None:
        return numba.get_num_threads()
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def _law(cfg: ExperimentConfig, strict: bool | None = None):
    from .model import make_builtin_law

    law = cfg["law"]
    return make_builtin_law(law["kind"], cfg.law_params, c0=law["c0"],
                            strict=law["strict"] if strict is None else strict)


def _pruning(cfg):
    from .brw import Pruning

    sim = cfg["simulate"]
    return Pruning(sim["barrier"], sim["particle_cap"])


def _header(cfg):
    return {"config_hash": cfg.config_hash}


def _sample_path(cfg) -> Path:
    return cfg.output_dir / "sample.jsonl"


def _load_sample(cfg):
    from .brw import EmpiricalSample

    path = _sample_path(cfg)
    if not path.exists() or not io.meta_path(path).exists():
        raise MissingInput(f"missing prerequisite sample file {path}; run 'simulate' first")
    meta = io.read_json(io.meta_path(path))
    if meta.get("sample_hash") != cfg.sample_hash:
        raise MissingInput(f"sample {path} was produced by a different law/simulation config "
                           f"(hash {meta.get('sample_hash')} != {cfg.sample_hash})")
    return EmpiricalSample.load(path)


def _write_manifest(cfg, command, started, rows, acceptance=None, extra=None):
    man = {"command": command, "config_hash": cfg.config_hash, "sample_hash": cfg.sample_hash,
           "code_version": __version__, "timestamps": {"started": started, "finished": _now()},
           "rows": rows, "acceptance": acceptance or {}}
    if extra:
        man.update(extra)
    io.write_json(cfg.output_dir / f"manifest_{command}.json", man)


def _est_rows(report):
    d = report.as_dict()
    rows = []
    for key in ("m1", "drift", "sigma2", "mean_offspring"):
        rows.append({"name": key, "value": d[key]["value"], "se": d[key]["se"]})
    for group in ("integrability", "sstar"):
        for k, v in d[group].items():
            rows.append({"name": f"{group}.{k}", "value": v["value"], "se": v["se"]})
    return rows


# ---------------------------------------------------------------- commands

def cmd_calibrate(cfg, args) -> int:
    from .model import closed_form_moments, verify_conditions

    started = _now()
    law = _law(cfg, strict=False)
    rep = verify_conditions(law, cfg["calibrate"]["draws"], cfg["simulate"]["seed"])
    rows = _est_rows(rep)
    cf = closed_form_moments(law)
    for r in rows:
        r["closed_form"] = cf.get(r["name"], "")
    # the m1_hat column is what downstream tooling keys on
    for r in rows:
        r["m1_hat"] = rep.m1.value
    io.write_csv(cfg.output_dir / "calibrate.csv", rows, ["name", "value", "se", "closed_form", "m1_hat"], _header(cfg))
    ok = rep.gate(3.0)
    print(f"law {law.kind}: m1_hat = {rep.m1.value:.6f} +- {rep.m1.se:.6f}, "
          f"drift_hat = {rep.drift.value:.6f} +- {rep.drift.se:.6f}, "
          f"sigma2_hat = {rep.sigma2.value:.6f} +- {rep.sigma2.se:.6f}")
    if rep.nonfinite:
        print(f"non-finite functionals: {', '.join(rep.nonfinite)}")
    print("3-SE boundary gate:", "PASS" if ok else "FAIL")
    _write_manifest(cfg, "calibrate", started, {"calibrate.csv": len(rows)}, {"boundary_gate": ok})
    return 0 if ok else 1


def cmd_simulate(cfg, args) -> int:
    from .brw import estimate_Z

    started = _now()
    sim = cfg["simulate"]
    law = _law(cfg)
    path = _sample_path(cfg)
    if path.exists() and args.resume:
        meta = io.read_json(io.meta_path(path))
        if meta.get("sample_hash") != cfg.sample_hash:
            raise ConfigError(f"cannot resume {path}: it was produced by a different configuration")
    before = len(io.read_jsonl(path)) if (path.exists() and args.resume) else 0
    sample = estimate_Z(law, sim["n_stop"], sim["replicas"], _pruning(cfg), sim["seed"], path=path,
                        resume=args.resume, chunk=sim["chunk"],
                        extra_meta={"sample_hash": cfg.sample_hash, "config_hash": cfg.config_hash})
    after = len(io.read_jsonl(path))
    print(f"{len(sample)} replicas in {path} ({after - before} new)")
    neg = float(np.mean(sample.Z_hat < 0)) if len(sample) else 0.0
    _write_manifest(cfg, "simulate", started, {"sample.jsonl": after, "new": after - before},
                    extra={"negative_fraction": neg})
    return 0


def cmd_tail(cfg, args) -> int:
    from .tail import G_profile, estimate_c, harmonic_check, laplace_profile, tail_curves, tauberian_check

    started = _now()
    an = cfg["analysis"]
    sample = _load_sample(cfg)
    z = sample.Z_hat
    seed = cfg["simulate"]["seed"]
    out = cfg.output_dir
    hdr = _header(cfg)
    rows = {}
    acc = {}
    rep = tail_curves(z, an["x_grid"], an["bootstrap_reps"], seed)
    for name in ("H", "H2", "Gstar", "tail_product"):
        rs = list(rep.rows(name))
        io.write_csv(out / f"tail_{name}.csv", rs, ["x", "value", "se"], hdr)
        rows[f"tail_{name}.csv"] = len(rs)
    sel = (rep.x >= 5) & (rep.x <= 20)
    tp = rep.tail_product[sel]
    acc["tail_product_5_20_in_0.7_1.3"] = bool(tp.size and np.all((tp >= 0.7) & (tp <= 1.3)))
    try:
        slope = rep.h_slope(10, 50)
    except ValueError:
        slope = math.nan
    acc["H_slope_10_50_in_0.9_1.1"] = bool(0.9 <= slope <= 1.1)
    c = estimate_c(z, an["c_window"], an["bootstrap_reps"], seed)
    half = z.size // 2
    c1 = estimate_c(z[:half], c.window, an["bootstrap_reps"], seed)
    c2 = estimate_c(z[half:], c.window, an["bootstrap_reps"], seed)
    split_ok = abs(c1.c_hat - c2.c_hat) <= 1.96 * math.hypot(c1.se, c2.se)
    acc["c_ci_width_lt_0.3"] = bool(c.ci[1] - c.ci[0] < 0.3)
    acc["c_split_consistent"] = bool(split_ok)
    summary = {"c_hat": c.c_hat, "c_ci": list(c.ci), "c_flatness": c.flatness, "c_warning": c.warning,
               "c_halves": [c1.c_hat, c2.c_hat], "H_slope_10_50": slope, "negative_fraction": rep.negative_fraction,
               "replicas": int(z.size), "dropped_x": rep.dropped.tolist()}
    lp = laplace_profile(z, an["d_grid"], an["s_grid"])
    io.write_csv(out / "laplace_D.csv", [{"x": float(x), "value": float(d), "se": float(s)}
                                          for x, d, s in zip(lp.x, lp.D, lp.se["D"])], ["x", "value", "se"], hdr)
    io.write_csv(out / "laplace_phi.csv", [{"x": float(s), "value": float(p), "se": float(e)}
                                            for s, p, e in zip(lp.s, lp.phi, lp.se["phi"])], ["x", "value", "se"], hdr)
    dx = lp.D_over_x
    acc["D_over_x_2_6_in_0.7_1.3"] = bool(np.all(np.isfinite(dx)) and np.all((dx >= 0.7) & (dx <= 1.3)))
    law = _law(cfg)
    try:
        g = G_profile(law, z, an["g_grid"], an["g_draws"], seed)
        io.write_csv(out / "G.csv", [{"x": float(x), "value": float(v), "se": float(s)}
                                     for x, v, s in zip(g.x, g.G, g.se)], ["x", "value", "se"], hdr)
        acc["G_nonnegative"] = g.nonnegative()
        acc["G_scaled_nonincreasing"] = g.monotone()
        hc = harmonic_check(law, z, an["g_grid"], an["g_draws"], an["harmonic_splits"], seed)
        io.write_csv(out / "harmonic_D.csv", [{"x": float(x), "value": float(r), "se": float(s)}
                                              for x, r, s in zip(hc.x, hc.residual, hc.se)], ["x", "value", "se"], hdr)
        acc["D_residual_within_3se"] = bool(np.all(np.abs(hc.residual) <= 3 * hc.se))
    except ValueError as exc:
        summary["G_error"] = str(exc)
        acc["G_nonnegative"] = acc["G_scaled_nonincreasing"] = acc["D_residual_within_3se"] = False
    tt = tauberian_check(z, an["t_grid"])
    io.write_csv(out / "tauberian.csv", list(tt.rows()),
                 ["t", "psi_star", "Gstar", "Hstar", "log_t", "ratio_psi", "ratio_G", "ratio_H", "offset"], hdr)
    summary["acceptance"] = acc
    io.write_json(out / "tail_summary.json", {**summary, "config_hash": cfg.config_hash})
    for k, v in acc.items():
        print(f"{k}: {'PASS' if v else 'FAIL'}")
    _write_manifest(cfg, "tail", started, rows, acc)
    return 0


def cmd_potential(cfg, args) -> int:
    from .potential import (SpikeTrain, dri_classify, exp_decay, exp_dominated, hard_cutoff,
                            occupation_expectation, parse_function, three_term_representation)
    from .rng import TAG_WALK, Stream
    from .walk import escape_estimate, renewal_tables

    started = _now()
    pc = cfg["potential"]
    seed = cfg["simulate"]["seed"]
    law = _law(cfg)
    spine = law.spine
    lattice = spine.is_unit_lattice
    out = cfg.output_dir
    hdr = _header(cfg)
    rng = Stream(seed).child(TAG_WALK).generator()
    p = parse_function(pc["p"])
    x = pc["x"]
    rows = []
    methods = ["monte_carlo", "renewal_double_integral"] + (["lattice_dp"] if lattice else [])
    for m in methods:
        v = occupation_expectation(spine, p, x, m, draws=pc["draws"], rng=rng)
        rows.append({"p": p.name, "x": x, "method": m, "value": v.value, "se": v.se, "censored": v.censored})
    io.write_csv(out / "potential_identity.csv", rows, ["p", "x", "method", "value", "se", "censored"], hdr)
    mode = "exact_lattice" if lattice else "empirical"
    grid = pc["x_grid"]
    table = renewal_tables(spine, grid, mode, n_ladders=pc["n_ladders"], rng=rng, x_max=float(grid.max()) + 1)
    io.write_csv(out / "renewal.csv", list(table.rows()), ["x", "U", "V", "R", "mode"], hdr)
    rep = three_term_representation(spine, pc["g"], pc["h"], pc["kappa"], grid, draws=pc["draws"], rng=rng,
                                    table=table)
    io.write_csv(out / "representation.csv", list(rep.rows()), ["x", "term1", "term2", "term3", "f", "se"], hdr)
    prow = []
    for y in pc["y_list"]:
        v, se = escape_estimate(spine, x, float(y), pc["draws"], rng)
        prow.append({"x": x, "y": float(y), "value": v, "se": se})
    io.write_csv(out / "passage.csv", prow, ["x", "y", "value", "se"], hdr)
    drows = []
    for name, fn, rule, xm in (("exp(-x)", exp_decay(1.0), exp_dominated(0.0), 40.0),
                               ("spike_train", SpikeTrain(40.0).as_test_function(), hard_cutoff(), 40.0)):
        d = dri_classify(fn, [1.0, 0.5, 0.25, 0.125], xm, rule)
        for h, up, lo in zip(d.h, d.upper, d.lower):
            drows.append({"function": name, "h": float(h), "upper": float(up), "lower": float(lo), "verdict": d.verdict})
    io.write_csv(out / "dri.csv", drows, ["function", "h", "upper", "lower", "verdict"], hdr)
    acc = {}
    if lattice:
        by = {r["method"]: r for r in rows}
        acc["occupation_routes_agree"] = abs(by["lattice_dp"]["value"] - by["renewal_double_integral"]["value"]) < 1e-8
    for r in rows:
        print(f"{r['p']} at x={r['x']:g} via {r['method']}: {r['value']:.6f} +- {r['se']:.6f}")
    _write_manifest(cfg, "potential", started, {"potential_identity.csv": len(rows), "renewal.csv": grid.size,
                                                "representation.csv": grid.size, "passage.csv": len(prow),
                                                "dri.csv": len(drows)}, acc)
    return 0


def cmd_fluct(cfg, args) -> int:
    from .stable import StableError, fluctuation_experiment
    from .tail import estimate_c

    started = _now()
    law = _law(cfg)
    if law.arithmetic_span > 0:
        print("error: the fluctuation experiment needs a nonarithmetic law; lattice laws are rejected", file=sys.stderr)
        return 2
    fc = cfg["fluct"]
    an = cfg["analysis"]
    sample = _load_sample(cfg)
    c = estimate_c(sample.Z_hat, an["c_window"], 0)
    try:
        rep = fluctuation_experiment(law, [int(n) for n in fc["n_list"]], fc["replicas"], fc["deep_factor"],
                                     cfg["simulate"]["seed"], _pruning(cfg), c_hat=c.c_hat,
                                     sensitivity_replicas=fc["sensitivity_replicas"])
    except StableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = cfg.output_dir
    rows = [r.as_dict() for r in rep.rows]
    io.write_csv(out / "fluct.csv", rows, ["n", "ks", "ks_locfree", "a_fit", "b_fit", "beta_fit", "replicas",
                                           "surviving", "skew", "shift"], _header(cfg))
    io.write_json(out / "fluct_target.json", {"target": rep.target.as_dict(), "decomposition": rep.decomposition,
                                              "deep_generation": rep.deep_generation, "sensitivity": rep.sensitivity,
                                              "config_hash": cfg.config_hash})
    acc = {"ks_decreasing": rep.ks_decreasing(), "skew_positive": rep.skew_positive()}
    for r in rows:
        print(f"n={r['n']}: surviving {r['surviving']}/{r['replicas']}, KS {r['ks']:.4f}, skew {r['skew']:.3f}")
    _write_manifest(cfg, "fluct", started, {"fluct.csv": len(rows)}, acc)
    return 0


SELFTEST_TRIPLES = ((0.0, 1.0, 0.0), (0.0, 1.0, 1.0), (2.0, 1.0, 0.0), (1.0, 2.0, 0.5), (-1.0, 0.5, 1.0))


def cmd_stable_selftest(cfg, args) -> int:
    from .stable import StableTriple, cf, fit, ks_to_triple, sample

    started = _now()
    n = cfg["stable"]["draws"]
    seed = cfg["simulate"]["seed"]
    ts = np.linspace(-5, 5, 41)
    rows = []
    ok_all = True
    for i, tr in enumerate(SELFTEST_TRIPLES):
        T = StableTriple(*tr)
        x = sample(T, n, seed + i)
        emp = np.array([np.exp(1j * t * x).mean() for t in ts])
        gap = float(np.abs(emp - cf(T, ts)).max())
        ks = ks_to_triple(x, T)
        f = fit(x, seed=seed)
        ok = gap < 0.01 and ks < 0.005 and f.covers(T)
        ok_all &= ok
        rows.append({"a": T.a, "b": T.b, "beta": T.beta, "cf_gap": gap, "ks": ks, "a_fit": f.triple.a,
                     "b_fit": f.triple.b, "beta_fit": f.triple.beta, "pass": ok})
        print(f"{tr}: cf gap {gap:.4f}, KS {ks:.4f}, fit {f.triple.a:.3f} {f.triple.b:.3f} {f.triple.beta:.3f} -> "
              f"{'PASS' if ok else 'FAIL'}")
    io.write_csv(cfg.output_dir / "stable_selftest.csv", rows,
                 ["a", "b", "beta", "cf_gap", "ks", "a_fit", "b_fit", "beta_fit", "pass"], _header(cfg))
    _write_manifest(cfg, "stable-selftest", started, {"stable_selftest.csv": len(rows)}, {"all_pass": ok_all})
    return 0 if ok_all else 1


def cmd_lambert_selftest(cfg, args) -> int:
    from .lambert import RESIDUAL_TOL, asymptotic_gap, random_admissible, solve_roots
    from .rng import TAG_MISC, Stream

    started = _now()
    rng = Stream(cfg["simulate"]["seed"]).child(TAG_MISC).generator()
    rows = []
    ok = True
    for a, b, e in random_admissible(cfg["lambert"]["cases"], rng):
        r = solve_roots(a, b, e)
        good = max(r.residual1, r.residual2) < RESIDUAL_TOL and r.y1 < r.y2 and b / a <= r.y1 < b / a + 1
        ok &= good
        rows.append({"a": a, "b": b, "eps": e, "y1": r.y1, "y2": r.y2, "residual1": r.residual1,
                     "residual2": r.residual2, "pass": good})
    gt = asymptotic_gap(1.0, 0.0, [1e-2, 1e-4, 1e-6])
    ok &= gt.strictly_decreasing
    io.write_csv(cfg.output_dir / "lambert.csv", rows, ["a", "b", "eps", "y1", "y2", "residual1", "residual2", "pass"],
                 _header(cfg))
    io.write_csv(cfg.output_dir / "lambert_gap.csv", [{"eps": float(e), "gap": float(g)} for e, g in zip(gt.eps, gt.gap)],
                 ["eps", "gap"], _header(cfg))
    print(f"{len(rows)} random cases, residual check {'PASS' if ok else 'FAIL'}; gaps {np.round(gt.gap, 6).tolist()}")
    _write_manifest(cfg, "lambert-selftest", started, {"lambert.csv": len(rows)}, {"all_pass": ok})
    return 0 if ok else 1


HANDLERS = {"calibrate": cmd_calibrate, "simulate": cmd_simulate, "tail": cmd_tail, "potential": cmd_potential,
            "fluct": cmd_fluct, "stable-selftest": cmd_stable_selftest, "lambert-selftest": cmd_lambert_selftest}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="brwlab", description="Boundary-case branching random walk experiments.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="experiment config (INI)")
        sp.add_argument("--threads", type=int, default=None, help="worker threads (BRWLAB_THREADS overrides)")
        sp.add_argument("--resume", action="store_true", help="keep existing replicas and add missing ones")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    from .brw import PopulationCapError
    from .model import LawError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        _set_threads(args.threads)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](cfg, args)
    except (ConfigError, MissingInput, LawError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PopulationCapError as exc:
        print(f"error: particle cap exceeded: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
