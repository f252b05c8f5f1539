"""Experiment runner.

Binds the library modules behind five fixed experiment kinds, emitting data
files plus a manifest with full provenance (config echo, content hash,
timestamps, warnings).  Data files are byte-identical across reruns and
thread counts for a fixed (config, seed); the manifest carries wall-clock
timestamps and is exempt from that guarantee.

Exit codes: 0 success, 2 completed with flagged results, 1 error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import critical as crit
from . import entropy as ent
from . import moments as mom
from .models import LatticeTopology, make_model
from .runconfig import ConfigError, RunConfig, format_config, parse_config
from .sampler import ShellSamplerConfig, dump_samples, sample_level_set


def build_model(cfg: RunConfig):
    m = cfg.model
    topo = LatticeTopology(dimension=m.dimension, sites_per_side=m.sites,
                           boundary=m.boundary)
    params = {}
    if m.kind == "fpu":
        params["lam"] = m.lam
    elif m.kind == "phi4":
        params["r"] = m.r
        params["u"] = m.u
    return make_model(m.kind, topo, **params)


def sampler_config(cfg: RunConfig, vbar: float, order: int,
                   n_dof: int, seed_shift: int = 0) -> ShellSamplerConfig:
    s = cfg.sampler
    v = vbar * n_dof
    eps = s.epsilon if s.epsilon > 0 else 1e-3 * max(abs(v), 1.0)
    return ShellSamplerConfig(v=v, epsilon=eps, step_sigma=s.step_sigma,
                              n_steps=s.n_steps, burn_in=s.burn_in,
                              thinning=s.thinning, n_chains=s.n_chains,
                              seed=cfg.seed + seed_shift, order=order)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([x if isinstance(x, str) else repr(x) for x in row])


def _grid_ranges(cfg: RunConfig, model):
    g = cfg.grid
    if g.range_lo != g.range_hi:
        return [(g.range_lo, g.range_hi)] * model.n_dof
    return None


def _run_entropy_derivs(cfg: RunConfig, out: Path, warnings: list):
    model = build_model(cfg)
    vbars = cfg.derivs.vbar_values or (cfg.sampler.vbar,)
    orders = sorted(set(cfg.derivs.orders))
    rows = []
    for i, vb in enumerate(vbars):
        run_cfg = sampler_config(cfg, float(vb), max(orders), model.n_dof,
                                 seed_shift=10 * i)
        row = {"vbar": float(vb), "S": float("nan")}
        for k in orders:
            est = ent.entropy_derivative(model, float(vb), k, run_cfg,
                                         threads=cfg.threads,
                                         eps_pair=cfg.sampler.eps_pair)
            row[f"dS{k}"] = est.value
            row[f"stderr{k}"] = est.stderr
            warnings.extend(f"vbar={vb} k={k}: {f}" for f in est.flags)
        rows.append(row)
        if cfg.sampler.dump_samples and i == 0:
            samples = sample_level_set(model, run_cfg, threads=cfg.threads)
            dump_samples(samples, out / "samples.csv")
    header = ["vbar", "S"] + [f"dS{k}" for k in (1, 2, 3, 4)] \
        + [f"stderr{k}" for k in (1, 2, 3, 4)]
    table = [[r["vbar"], r["S"]]
             + [r.get(f"dS{k}", float("nan")) for k in (1, 2, 3, 4)]
             + [r.get(f"stderr{k}", float("nan")) for k in (1, 2, 3, 4)]
             for r in rows]
    _write_csv(out / "entropy_derivs.csv", header, table)


def _run_critical_scan(cfg: RunConfig, out: Path, warnings: list):
    model = build_model(cfg)
    w = cfg.window
    search = crit.find_critical_points(model, window=None,
                                       n_random_seeds=w.n_random_seeds,
                                       structured=w.structured,
                                       seed=cfg.seed, threads=cfg.threads)
    report = crit.certify_window(model, (w.lo, w.hi), search=search,
                                 seed=cfg.seed, threads=cfg.threads)
    if search.unknown_family_found:
        warnings.append("unknown family found: critical points off the "
                        "{0, pi}-difference family")
    for p in search.points:
        if p.degenerate:
            warnings.append(f"degenerate critical point at vbar={p.vbar:.6g}")
    with open(out / "critical_scan.json", "w") as fh:
        fh.write(crit.topology_report_json(report, points=search.points))


def _run_khinchin(cfg: RunConfig, out: Path, warnings: list):
    k = cfg.khinchin
    report = mom.sum_function_moments(k.base, k.ladder, k.trials,
                                      seed=cfg.seed, threads=cfg.threads)
    _write_csv(out / "khinchin.csv", report.csv_rows()[0],
               report.csv_rows()[1:])
    with open(out / "khinchin_summary.json", "w") as fh:
        json.dump(report.summary(), fh, indent=1, sort_keys=True)


def _run_oracle_compare(cfg: RunConfig, out: Path, warnings: list):
    model = build_model(cfg)
    g = cfg.grid
    kwargs = {"ranges": _grid_ranges(cfg, model), "bins": g.bins,
              "seed": cfg.seed, "threads": cfg.threads}
    if g.v_max > 0:
        kwargs["v_max"] = g.v_max
    if g.points_per_axis:
        table = ent.oracle_density_of_states(
            model, points_per_axis=g.points_per_axis, **kwargs)
    else:
        table = ent.oracle_density_of_states(
            model, n_samples=g.n_samples or 10_000_000, **kwargs)
    vbars = cfg.derivs.vbar_values or (cfg.sampler.vbar,)
    orders = sorted(set(cfg.derivs.orders))
    rows = []
    for i, vb in enumerate(vbars):
        run_cfg = sampler_config(cfg, float(vb), max(orders), model.n_dof,
                                 seed_shift=10 * i)
        for k in orders:
            est = ent.entropy_derivative(model, float(vb), k, run_cfg,
                                         threads=cfg.threads,
                                         eps_pair=cfg.sampler.eps_pair)
            oval, oerr = table.derivative(float(vb), k)
            comb = est.stderr + oerr
            dist = abs(est.value - oval) / comb if comb > 0 else float("inf")
            rows.append([float(vb), k, est.value, est.stderr, oval, oerr,
                         dist])
            warnings.extend(f"vbar={vb} k={k}: {f}" for f in est.flags)
    _write_csv(out / "oracle_compare.csv",
               ["vbar", "k", "surface", "surface_err", "oracle",
                "oracle_err", "sigma_distance"], rows)


def _run_legendre(cfg: RunConfig, out: Path, warnings: list):
    leg = cfg.legendre
    vbar = np.linspace(leg.vbar_lo, leg.vbar_hi, leg.n_points)
    if leg.source == "harmonic-limit":
        s_values = ent.harmonic_volume_entropy_limit(vbar)
    else:
        model = build_model(cfg)
        g = cfg.grid
        kwargs = {"ranges": _grid_ranges(cfg, model), "bins": g.bins,
                  "seed": cfg.seed, "threads": cfg.threads}
        if g.v_max > 0:
            kwargs["v_max"] = g.v_max
        if g.points_per_axis:
            table = ent.oracle_density_of_states(
                model, points_per_axis=g.points_per_axis, **kwargs)
        else:
            table = ent.oracle_density_of_states(
                model, n_samples=g.n_samples or 10_000_000, **kwargs)
        with np.errstate(divide="ignore"):
            logm = np.log(np.maximum(table.m_cum, 1e-300))
        centers = table.centers
        keep = table.m_cum > 0
        vbar = centers[keep] / model.n_dof
        s_values = logm[keep] / model.n_dof
        if len(vbar) < 20:
            raise ValueError("oracle table too sparse for a Legendre grid")
    curves = ent.thermo_curves(vbar, s_values)
    if curves.legendre_table.nonconcave:
        warnings.append("entropy table is not concave; infimum returned as-is")
    tab = curves.legendre_table
    _write_csv(out / "thermo.csv", ["beta", "f", "F", "vbar_at_beta"],
               list(zip(tab.beta, tab.f, curves.helmholtz_values,
                        tab.vbar_at_beta)))
    _write_csv(out / "entropy_table.csv", ["vbar", "S", "beta"],
               list(zip(curves.vbar, curves.s_values, curves.beta_of_vbar)))


_RUNNERS = {
    "entropy-derivs": _run_entropy_derivs,
    "critical-scan": _run_critical_scan,
    "khinchin": _run_khinchin,
    "oracle-compare": _run_oracle_compare,
    "legendre": _run_legendre,
}


def run(cfg: RunConfig) -> int:
    """Execute one experiment; returns the process exit code."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    canonical = format_config(cfg)
    manifest = {
        "config": canonical,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "kind": cfg.kind,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "started_utc": datetime.datetime.now(datetime.timezone.utc)
                       .isoformat(timespec="seconds"),
        "warnings": [],
    }
    warnings: list = []
    code = 0
    try:
        _RUNNERS[cfg.kind](cfg, out, warnings)
    except Exception as exc:   # noqa: BLE001 - reported via manifest
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        code = 1
    manifest["warnings"] = warnings
    manifest["ended_utc"] = datetime.datetime.now(datetime.timezone.utc) \
        .isoformat(timespec="seconds")
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    if code == 0 and warnings:
        code = 2
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="levelmc",
        description="level-set Monte Carlo experiment runner")
    parser.add_argument("--config", required=True, help="config file path")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, help="seed override")
    parser.add_argument("--threads", type=int, help="worker thread count")
    args = parser.parse_args(argv)
    try:
        text = Path(args.config).read_text()
        cfg = parse_config(text)
    except FileNotFoundError:
        print(f"config file not found: {args.config}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.out is not None:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
