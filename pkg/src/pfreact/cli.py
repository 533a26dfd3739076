"""Command line driver: ``pfreact <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import scenarios as sc
from .mesh import GridSpec
from .reduced import ReducedParams, convergence_study

log = logging.getLogger("pfreact")


def _common(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--dt", type=float, help="time step")
    ap.add_argument("--nx", type=int, help="cells along x")
    ap.add_argument("--ny", type=int, help="cells along y")
    ap.add_argument("--tfinal", type=float, help="final time")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--seed", type=int, help="seed recorded with the run metadata")
    ap.add_argument("--check-invariants", choices=sc.INVARIANT_MODES, default=None,
                    help="per-step mass/energy/divergence checks (default: fail)")


def _apply(cfg: sc.ScenarioConfig, args) -> sc.ScenarioConfig:
    g = cfg.grid
    if args.nx is not None or args.ny is not None:
        g = replace(g, nx=args.nx or g.nx, ny=args.ny or g.ny)
    upd = {"grid": g}
    if args.dt is not None:
        upd["scheme"] = replace(cfg.scheme, dt=args.dt)
    if args.tfinal is not None:
        upd["t_final"] = args.tfinal
        upd["snapshot_times"] = tuple(t for t in cfg.snapshot_times if t <= args.tfinal)
    if args.out is not None:
        upd["out_dir"] = args.out
    if args.seed is not None:
        upd["seed"] = args.seed
    if args.check_invariants is not None:
        upd["check_invariants"] = args.check_invariants
    return replace(cfg, **upd)


def _progress(k, n, s, rep):
    if k == n or k % 50 == 0:
        log.info("step %d/%d  t=%.4g  newton=%d  residual=%.2e", k, n, s.t, rep.newton_iters, rep.residual)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def cmd_converge(args) -> int:
    cfg = _apply(sc.default_config("convergence"), args)
    if args.ladder:
        cfg = replace(cfg, ladder=_floats(args.ladder))
    if args.reference_dt:
        cfg = replace(cfg, reference_dt=args.reference_dt)
    table, _ = sc.convergence_rates(cfg, progress=_progress)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "rate_table.csv", interleave=True)
    _print_table(table)
    return 0


def _print_table(table) -> None:
    for k, errs in table.errors.items():
        print(f"{k:>16s} " + "  ".join(f"{e:.3e}" for e in errs))
        print(f"{'order':>16s} " + "  ".join(f"{o:9.3f}" for o in table.orders[k]))


def cmd_shear(args) -> int:
    base = _apply(sc.default_config("shear"), args)
    root = Path(base.out_dir)
    for m in (1.0, 0.0):
        cfg = replace(base, phys=replace(base.phys, m_pen=m, n_adh=m), out_dir=str(root / f"shear_MN{int(m)}"))
        res = sc.simulate(cfg, progress=_progress)
        s = res.final
        print(f"M=N={m:g}: band fraction c2={sc.band_mass_fraction(s.c2, s.phi, 0.95):.6f} "
              f"c3={sc.band_mass_fraction(s.c3, s.phi, 0.95):.6f}")
    return 0


def cmd_vessel(args) -> int:
    cfg = _apply(sc.default_config("vessel_straight"), args)
    res = sc.simulate(cfg, progress=_progress)
    for t, s in sorted(res.states.items()):
        print(f"t={t:g}: upper interface height {sc.upper_interface_height(s, cfg.grid):.6f}  "
              f"c3 band fraction {sc.band_mass_fraction(s.c3, s.phi, 1.0):.6f}")
    return 0


def cmd_bifurcate(args) -> int:
    base = _apply(sc.default_config("vessel_bifurcated"), args)
    root = Path(base.out_dir)
    rows = []
    for ang in _floats(args.angles):
        cfg = replace(base, bifurcation_angle=ang, out_dir=str(root / f"angle_{ang:g}"))
        res = sc.simulate(cfg, progress=_progress)
        val = sc.bifurcation_extraction(res.final, cfg)
        rows.append((ang, val))
        print(f"angle {ang:g}: wall-band peak c3 = {val:.6e}")
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "extraction.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["angle_deg", "peak_c3"])
        w.writerows((a, f"{v:.17e}") for a, v in rows)
    print(sc.EXTRACTION_NOTE)
    return 0


def cmd_rates(args) -> int:
    n = args.nx or 32
    g = GridSpec(n, args.ny or n, 1.0, 1.0, "periodic", "wall")
    dts = _floats(args.ladder) if args.ladder else (4e-3, 2e-3, 1e-3, 5e-4)
    table = convergence_study(g, ReducedParams(), dts, args.reference_dt or 5e-5, T=args.tfinal or 0.04)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "reduced_rate_table.csv")
    _print_table(table)
    return 0


def cmd_custom(args) -> int:
    cfg = _apply(sc.load_config(args.config), args)
    res = sc.simulate(cfg, progress=_progress)
    print(f"finished t={res.final.t:g}; diagnostics in {Path(cfg.out_dir) / 'diagnostics.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pfreact", description="Phase-field reaction/transport simulations.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("converge", help="temporal self-convergence table of the full scheme")
    _common(p)
    p.add_argument("--ladder", help="comma separated time steps")
    p.add_argument("--reference-dt", type=float)
    p.set_defaults(func=cmd_converge)
    p = sub.add_parser("shear", help="ellipse in shear flow, with and without interface adsorption")
    _common(p)
    p.set_defaults(func=cmd_shear)
    p = sub.add_parser("vessel", help="straight vessel with a reactive hotspot")
    _common(p)
    p.set_defaults(func=cmd_vessel)
    p = sub.add_parser("bifurcate", help="bifurcated vessel over several branch angles")
    _common(p)
    p.add_argument("--angles", default="14,20,26", help="comma separated half-angles in degrees")
    p.set_defaults(func=cmd_bifurcate)
    p = sub.add_parser("rates", help="self-convergence of the reduced model")
    _common(p)
    p.add_argument("--ladder", help="comma separated time steps")
    p.add_argument("--reference-dt", type=float)
    p.set_defaults(func=cmd_rates)
    p = sub.add_parser("custom", help="run a key = value configuration file")
    p.add_argument("config", help="configuration file")
    _common(p)
    p.set_defaults(func=cmd_custom)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    t0 = time.time()
    try:
        code = args.func(args)
    except (ValueError, OSError) as exc:
        print(f"pfreact: error: {exc}", file=sys.stderr)
        return 2
    except sc.ScenarioError as exc:
        print(f"pfreact: run failed: {exc}", file=sys.stderr)
        return 1
    log.info("done in %.1f s", time.time() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
