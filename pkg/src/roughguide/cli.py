"""Command-line front end.

    roughguide <command> [--config PATH] [--seed U64] [--workers N] [--out DIR]

Commands: roughness, profile, cmo, lifetime, stability, accept.  On failure a
JSON object {"error": <category>, "message": ...} goes to stderr and the exit
code names the category.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import acceptance as ACC
from . import config as CF
from . import constants as C
from . import dynamics as D
from . import manifest as M
from . import pipelines as PL
from . import potential as P
from . import roughness as R
from .analysis import roughness_statistics
from .magnetostatics import NoConvergenceError

EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 2, 3, 4, 5

NUMERICAL_ERRORS = (D.DomainError, D.RejectionEfficiencyError, D.TimeStepError,
                    D.FitConvergenceError, NoConvergenceError, P.OutOfWindowError,
                    P.IllConditionedFitError, R.DiscretizationError, FloatingPointError,
                    ArithmeticError)


class AcceptanceFailure(RuntimeError):
    pass


def _hashed_config(sc: CF.ScenarioConfig) -> dict:
    # worker count and output location never change results
    raw = json.loads(json.dumps(sc.raw))
    raw["scenario"].pop("workers", None)
    raw["scenario"].pop("out", None)
    return raw


class Run:
    """Output directory, run id and output bookkeeping of one command."""

    def __init__(self, sc: CF.ScenarioConfig, command: str):
        self.sc = sc
        self.command = command
        self.rid = M.run_id(_hashed_config(sc))
        self.out = Path(sc.si["scenario"]["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs = []

    def columns(self, name, columns, header=None):
        p = M.write_columns(self.out / name, columns, header, self.rid)
        self.outputs.append(p)
        return p

    def file(self, path):
        self.outputs.append(Path(path))
        return Path(path)

    def finish(self, derived: dict):
        return M.write_manifest(self.out, self.rid, self.sc.raw, derived, self.outputs,
                                self.command)


# -- commands ----------------------------------------------------------------
def cmd_roughness(sc: CF.ScenarioConfig):
    r = sc.section("roughness")
    K = r["realizations"]
    if K < 1:
        raise CF.ConfigError("roughness.realizations must be at least 1")
    run = Run(sc, "roughness")
    tf = R.cached_transfer_function(r["height"])
    I = sc.section("trap")["I_c"]
    rms, energy = [], []
    for k in range(K):
        real = R.spectral_realization(sc.seed, k, r["z_extent"], r["dz"], r["height"], r["edge_rms"])
        rms.append(float(np.sqrt(np.mean(real.dBz**2))))
        energy.append(R.energy_rms(real, I))
        run.file(real.save(run.out / f"realization_{k:04d}.txt", {"run_id": run.rid}))
    spec = R.EdgeNoiseSpec(r["edge_rms"], r["dz"], r["z_extent"], sc.seed, 0)
    expected = R.parseval_rms(spec, tf)
    ens = float(np.sqrt(np.mean(np.square(rms))))
    run.columns("realization_rms.txt", {"realization": np.arange(K), "dBz_rms_T_per_A": rms,
                                        "energy_rms_nK": np.array(energy) * 1e9})
    derived = {"parseval_rms_T_per_A": expected, "ensemble_rms_T_per_A": ens,
               "ensemble_over_parseval": ens / expected,
               "calibration_factor_to_target": [r["target_rms"] / e for e in energy]}
    run.finish(derived)
    return derived


def cmd_profile(sc: CF.ScenarioConfig):
    r = sc.section("roughness")
    an = sc.section("analysis")
    run = Run(sc, "profile")
    real = R.spectral_realization(sc.seed, 0, r["z_extent"], r["dz"], r["height"], r["edge_rms"])
    cfg = PL.trap_from_scenario(sc, roughness=real, kind="ac")
    res = PL.roughness_suppression(sc.seed, r["target_rms"], an["noise_floor"], an["pixel"], cfg=cfg)
    for kind, prof in res.profiles.items():
        run.file(prof.save(run.out / f"profile_{kind}.txt", {"run_id": run.rid}))
    dcp, dcm, ac = res.dc_plus, res.dc_minus, res.ac
    nk = 1e9 / C.K_B
    run.columns("roughness_residuals.txt",
                {"z_um": dcp.z * 1e6, "residual_dc_plus_nK": dcp.residual_profile * nk,
                 "residual_dc_minus_nK": dcm.residual_profile * nk,
                 "residual_ac_nK": ac.residual_profile * nk})
    stats = {}
    for name, fit in (("dc_positive", dcp), ("dc_negative", dcm), ("ac", ac)):
        rms, (freq, power) = roughness_statistics(fit.residual_profile, float(fit.z[1] - fit.z[0]))
        stats[name] = {"omega_z_over_2pi_Hz": fit.omega / (2 * np.pi), "center_um": fit.center * 1e6,
                       "residual_rms_nK": rms * 1e9, "window_um": [w * 1e6 for w in fit.window]}
        run.columns(f"residual_spectrum_{name}.txt",
                    {"k_per_um": freq * 1e-6, "power_nK2_um": power * 1e18 * 1e6})
    model = P.trap_model(res.cfg)
    smooth_dc = res.cfg.with_roughness(None).with_modulation(omega_m=0.0)
    w_perp = P.transverse_frequencies(smooth_dc, 0.0, averaged=False)
    derived = {"fits": stats, "ideal_ratio": res.ideal_ratio, "noisy_ratio": res.noisy_ratio,
               "noisy_dc_rms_nK": res.noisy_dc_rms * 1e9, "noisy_ac_rms_nK": res.noisy_ac_rms * 1e9,
               "B_H_prime_T_per_m": model.B_H_prime,
               "omega_perp_dc_over_2pi_Hz": (w_perp / (2 * np.pi)).tolist(),
               "calibrated_scale": (res.cfg.roughness.meta.get("calibrated_residual_rms_K")
                                    if res.cfg.roughness is not None else 0.0)}
    run.finish(derived)
    return derived


def cmd_cmo(sc: CF.ScenarioConfig):
    st, en, it = sc.section("study"), sc.section("ensemble"), sc.section("integrator")
    run = Run(sc, "cmo")
    trap = PL.trap_from_scenario(sc, kind="dc_positive")
    omega_z = P.harmonic_fit(P.longitudinal_profile(trap)).omega
    ens = D.EnsembleSpec(en["N"], en["temperature"], en["Z1"], sc.seed)
    icfg = D.IntegratorConfig(it["dt"], it["t_max"], it["sample_interval"])
    rows = PL.damping_vs_roughness_study(st["scales"], st["realizations"], ens, icfg,
                                         st["base_rms"], omega_z,
                                         workers=sc.si["scenario"]["workers"],
                                         z_extent=st["z_extent"])
    for i, row in enumerate(rows):
        run.columns(f"cm_{i:02d}.txt", {"t_s": row.t, "cm_um": row.cm * 1e6},
                    {"scale": row.scale, "rms_nK": row.rms * 1e9})
    f = [r.fit for r in rows]
    run.columns("damping.txt", {
        "scale": [r.scale for r in rows], "rms_nK": [r.rms * 1e9 for r in rows],
        "tau_s": [x.tau for x in f], "tau_err_s": [x.errors["tau"] for x in f],
        "omega_over_2pi_Hz": [x.omega / (2 * np.pi) for x in f],
        "lower_bound": [x.tau_lower_bound for x in f]})
    derived = {"omega_z_over_2pi_Hz": omega_z / (2 * np.pi),
               "fits": [dict(r.fit.as_dict(), scale=r.scale, per_realization_tau=r.per_realization_tau)
                        for r in rows]}
    run.finish(derived)
    return derived


def cmd_lifetime(sc: CF.ScenarioConfig):
    lt, en = sc.section("lifetime"), sc.section("ensemble")
    run = Run(sc, "lifetime")
    trap = PL.trap_from_scenario(sc, kind="ac")
    trap = replace(trap, stray=(lt["stray"], lt["stray"]))
    ens = D.EnsembleSpec(lt["N"], en["temperature"], 0.0, sc.seed, dim=3)
    rows = D.lifetime_scan(lt["frequencies"], trap, ens, lt["t_max"],
                           workers=sc.si["scenario"]["workers"])
    run.columns("lifetime.txt", {
        "f_mod_kHz": [r["f_mod_hz"] / 1e3 for r in rows],
        "lifetime_s": [r["lifetime_s"] for r in rows], "error_s": [r["error_s"] for r in rows],
        "lower_bound": [r["lower_bound"] for r in rows], "lost": [r["lost"] for r in rows],
        "N": [r["N"] for r in rows]})
    for r in rows:
        rec = r["record"]
        run.columns(f"survival_{r['f_mod_hz'] / 1e3:g}kHz.txt", {"t_s": rec.t, "alive": rec.alive})
    derived = {"rows": [{k: v for k, v in r.items() if k != "record"} for r in rows]}
    run.finish(derived)
    return derived


def cmd_stability(sc: CF.ScenarioConfig):
    run = Run(sc, "stability")
    trap = PL.trap_from_scenario(sc, kind="dc_positive")
    w_dc = float(P.transverse_frequencies(trap, 0.0, averaged=False).max())
    crit = D.stability_threshold()
    ratios = np.linspace(0.5, 2.0, 151)
    half_trace = [0.5 * float(np.trace(D.monodromy(1.0, x))) for x in ratios]
    run.columns("stability.txt", {"omega_m_over_omega_perp": ratios, "half_trace": half_trace,
                                  "stable": [abs(h) <= 1 for h in half_trace]})
    derived = {"critical_ratio": crit, "omega_perp_dc_over_2pi_Hz": w_dc / (2 * np.pi),
               "critical_f_mod_Hz": crit * w_dc / (2 * np.pi)}
    run.finish(derived)
    return derived


def cmd_accept(sc: CF.ScenarioConfig, only=None):
    run = Run(sc, "accept")
    results = ACC.run_all(sc.seed, sc.si["scenario"]["workers"], only)
    run.columns("acceptance.txt", {"criterion": [r.number for r in results],
                                   "passed": [r.passed for r in results],
                                   "runtime_s": [r.runtime for r in results]})
    derived = {str(r.number): {"name": r.name, "passed": r.passed, "measured": r.measured,
                               "expected": r.expected} for r in results}
    run.finish(derived)
    failed = [r.number for r in results if not r.passed]
    if failed:
        raise AcceptanceFailure(f"criteria failed: {failed}")
    return derived


COMMANDS = {"roughness": cmd_roughness, "profile": cmd_profile, "cmo": cmd_cmo,
            "lifetime": cmd_lifetime, "stability": cmd_stability, "accept": cmd_accept}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="roughguide", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="YAML scenario file")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--workers", type=int, help="worker threads")
        p.add_argument("--out", type=str, help="output directory")
        if name == "accept":
            p.add_argument("--only", type=int, nargs="+", help="criterion numbers to run")
    return ap


def _fail(category: str, code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": category, "type": type(exc).__name__,
                                 "message": str(exc)}) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        over = {"seed": args.seed, "workers": args.workers, "out": args.out}
        if args.command == "accept" and args.seed is None and args.config is None:
            over["seed"] = 0  # the suite has fixed default seeds
        sc = CF.load(args.config, **over) if args.config else CF.resolve(None, **over)
        if args.command == "accept":
            derived = cmd_accept(sc, args.only)
        else:
            derived = COMMANDS[args.command](sc)
            print(json.dumps(derived, indent=2, sort_keys=True, default=M._jsonable))
    except AcceptanceFailure as exc:
        return _fail("acceptance", EXIT_ACCEPTANCE, exc)
    except CF.ConfigError as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except OSError as exc:
        return _fail("io", EXIT_IO, exc)
    except NUMERICAL_ERRORS as exc:
        return _fail("numerical", EXIT_NUMERICAL, exc)
    except ValueError as exc:
        return _fail("config", EXIT_CONFIG, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
