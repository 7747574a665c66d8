"""Command-line front end.

Subcommands: epsilon-prep, keyrate, finite-size, phase-noise, simulate.
Every run writes a ``manifest.json`` (fully resolved configuration + seed +
package version) next to its outputs; re-running the same subcommand with
``--config manifest.json`` reproduces the CSV outputs byte for byte.

Exit codes: 0 success, 2 invalid configuration, 3 memory guard tripped,
4 estimation aborted (no certifiable correlation in the data).
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io, plots
from .finite_size import (
    CalibrationBudget,
    EstimationAbort,
    SecurityEpsilons,
    confidence_halfwidths,
    expected_record,
    finite_key_rate,
    ml_estimates,
    propagate_eta_uncertainty,
    worst_case_params,
)
from .keyrate import SystemParams, asymptotic_key_rate, holevo_bound, mutual_information
from .modulation import (
    CartesianGridSpec,
    MemoryGuardError,
    PolarGridSpec,
    build_polar,
    certify_cartesian,
    certify_polar,
    default_cutoff,
    ensemble_entropy,
    perturbation_study,
)
from .phase_noise import PhaseNoiseModel, estimate_e1, phase_noise_keyrate_comparison, remap_parameters
from .simulate import SimulationSpec, simulate_channel, simulate_phase_calibration

_LOCATION_KEYS = {"config", "outdir"}


def _resolved_config(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items()
           if k not in _LOCATION_KEYS and not k.startswith("_") and k != "func"}
    return cfg


def _outdir(args) -> Path:
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_distances(args) -> np.ndarray:
    n = int(round((args.dmax - args.dmin) / args.dstep)) + 1
    return args.dmin + args.dstep * np.arange(n)


# ---------------------------------------------------------------------------
# epsilon-prep
# ---------------------------------------------------------------------------

def _budget_row(scheme: str, va: float, budget, entropy, *, a=None, n=None,
                k=None, ell=None) -> dict:
    row = {"scheme": scheme, "V_A": va, "A": a, "N": n, "K": k, "L": ell,
           "entropy_bits": entropy.total_bits}
    row.update(budget.to_dict())
    return row


_GAUSS_SEARCH_LADDER = (64, 96, 128, 192, 256, 384, 512, 768)


def cmd_epsilon_prep(args) -> int:
    out = _outdir(args)
    rows = []
    extra = {}
    if args.scheme == "cartesian":
        if args.steps_per_side:
            spec = CartesianGridSpec(args.va, args.steps_per_side,
                                     half_width=args.cutoff_sd * math.sqrt(args.va),
                                     cutoff_scheme=args.cutoff_scheme)
        else:
            spec = CartesianGridSpec.standard(args.va, args.cutoff_sd,
                                              args.steps_per_unit,
                                              cutoff_scheme=args.cutoff_scheme)
        cutoff = args.Q if args.Q else None
        sigma_errors = [s for s in (args.sigma_error or [])]
        if any(s > 0 for s in sigma_errors):
            study = perturbation_study(spec, sigma_errors, args.trials,
                                       args.seed, cutoff=cutoff)
            ent = ensemble_entropy(spec)
            for s_err, mean_eps, q in zip(study.sigma_errors,
                                          study.mean_epsilon, study.cutoffs):
                pspec = replace(spec, perturbation_sigma=float(s_err))
                row = {"scheme": f"cartesian_perturbed_{s_err:g}",
                       "V_A": args.va, "A": spec.a, "N": spec.steps_per_side,
                       "K": None, "L": None, "Q": q, "R_rho": None,
                       "Delta_diag": None, "Delta_nondiag": None,
                       "R_sigma": None, "slack": None,
                       "epsilon_prep": mean_eps,
                       "entropy_bits": ent.total_bits}
                rows.append(row)
            extra["perturbation_slope"] = study.slope
            extra["mean_epsilon_prep"] = list(study.mean_epsilon)
        else:
            _, budget = certify_cartesian(spec, cutoff=cutoff, seed=args.seed,
                                          target=args.target)
            ent = ensemble_entropy(spec)
            rows.append(_budget_row(f"cartesian_{spec.cutoff_scheme}", args.va,
                                    budget, ent, a=spec.a, n=spec.steps_per_side))
    else:
        if args.radial_bits:
            radial_count = 2 ** args.radial_bits
        else:
            radial_count = args.radial_count
        rule = args.radial_rule.replace("-", "_")
        if rule != "uniform" and not radial_count:
            # configuration search: smallest node count certifying the target
            found = None
            for k in _GAUSS_SEARCH_LADDER:
                spec = PolarGridSpec(args.va, k, args.angular_count,
                                     radial_rule=rule)
                _, budget = certify_polar(spec, cutoff=args.Q or None,
                                          target=args.target)
                ent = ensemble_entropy(spec)
                rows.append(_budget_row(f"polar_{rule}", args.va, budget, ent,
                                        a=spec.r_max, k=k, ell=args.angular_count))
                if budget.epsilon_prep <= args.target:
                    found = (k, ent.components["modulus_bits"])
                    break
            if found:
                extra["search"] = {"radial_count": found[0],
                                   "modulus_bits": found[1],
                                   "target": args.target}
        else:
            if not radial_count:
                raise ValueError("polar uniform rule needs --radial-count or "
                                 "--radial-bits")
            spec = PolarGridSpec(args.va, radial_count, args.angular_count,
                                 radial_rule=rule)
            _, budget = certify_polar(spec, cutoff=args.Q or None,
                                      target=args.target)
            ent = ensemble_entropy(spec)
            rows.append(_budget_row(f"polar_{rule}", args.va, budget, ent,
                                    a=spec.r_max, k=radial_count,
                                    ell=args.angular_count))

    io.write_budget_csv(out / "epsilon_prep.csv", rows)
    io.write_json(out / "epsilon_prep.json", {"rows": rows, **extra})
    if args.svg:
        plots.plot_budget_terms(out / "epsilon_prep.svg", rows)
    io.write_manifest(out, "epsilon-prep", _resolved_config(args))
    for row in rows:
        print(f"{row['scheme']}: epsilon_prep = {row['epsilon_prep']}")
    return 0


# ---------------------------------------------------------------------------
# keyrate
# ---------------------------------------------------------------------------

def _curve_name(token: str) -> str:
    return "K_asympt" if token == "asympt" else f"K_{token}"


def _asymptotic_worst_rate(params: SystemParams, budget: CalibrationBudget,
                           eps_pe: float) -> float:
    """beta*I - max chi over the calibration box, with no statistical width."""
    rec = expected_record(params, shot_noise=1.0, n=10)
    rec = replace(rec, z=0.0, dt=0.0, dsigma2=0.0, dsigma02=0.0, dva=0.0)
    worst = worst_case_params(rec, budget, eps_pe, model=params.model)
    return params.beta * mutual_information(params) - worst.holevo_bits


def cmd_keyrate(args) -> int:
    out = _outdir(args)
    distances = _parse_distances(args)
    curves: dict[str, np.ndarray] = {}
    summary: dict = {"distances_km": list(distances)}

    if args.e1 is not None:
        comp = phase_noise_keyrate_comparison(
            args.va, args.xi, args.beta, args.e1, distances,
            fiber_loss_db_km=args.alpha, convention=args.convention)
        curves["K_realistic"] = comp.rate_realistic
        curves["K_paranoid"] = comp.rate_paranoid
        summary.update({
            "xi_apparent": comp.xi_paranoid,
            "xi_realistic": comp.xi_realistic,
            "xi_other_convention": comp.xi_other_convention,
            "convention": comp.convention,
            "max_distance_realistic_km": comp.max_distance_realistic,
            "max_distance_paranoid_km": comp.max_distance_paranoid,
            "distance_gain_km": comp.distance_gain_km,
        })
    else:
        tokens = [t.strip() for t in args.samples.split(",") if t.strip()]
        budget = CalibrationBudget.with_relative(
            args.eta, args.vel, args.delta_eta_rel, args.delta_vel_rel)
        epsilons = SecurityEpsilons(total=args.epsilon)
        for token in tokens:
            rates = np.empty(distances.size)
            for i, d in enumerate(distances):
                params = SystemParams.from_distance(
                    d, args.va, excess_noise=args.xi, eta=args.eta,
                    v_el=args.vel, beta=args.beta,
                    fiber_loss_db_km=args.alpha, model=args.model)
                try:
                    if token == "asympt":
                        if args.delta_eta_rel or args.delta_vel_rel:
                            rates[i] = _asymptotic_worst_rate(
                                params, budget, epsilons.eps_pe)
                        else:
                            rates[i] = asymptotic_key_rate(params)
                    else:
                        n = int(float(token))
                        rec = expected_record(params, shot_noise=1.0, n=n)
                        report = finite_key_rate(rec, budget, epsilons,
                                                 args.beta,
                                                 n_fraction=args.n_fraction,
                                                 model=args.model)
                        rates[i] = report.rate
                except EstimationAbort:
                    rates[i] = float("-inf")
            curves[_curve_name(token)] = rates

    if args.clamp_negative:
        curves = {k: np.maximum(v, 0.0) for k, v in curves.items()}
    io.write_curves_csv(out / "keyrate.csv", distances, curves)
    io.write_json(out / "keyrate.json", summary)
    if args.svg:
        plots.plot_rate_curves(out / "keyrate.svg", distances, curves)
    io.write_manifest(out, "keyrate", _resolved_config(args))
    print(f"wrote {len(curves)} curve(s) over {distances.size} distances")
    return 0


# ---------------------------------------------------------------------------
# simulate (+ estimate)
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    out = _outdir(args)
    t = (10.0 ** (-args.alpha * args.distance / 10.0)
         if args.transmittance is None else args.transmittance)
    phase = (PhaseNoiseModel.from_e1(args.phase_family, args.e1)
             if args.e1 is not None else None)
    spec = SimulationSpec(
        v_mod=args.va, transmittance=t, excess_noise=args.xi, eta=args.eta,
        v_el=args.vel, shot_noise=args.n0, n_samples=args.n,
        n_vacuum=args.nprime, phase_noise=phase, seed=args.seed)
    x, y, y0 = simulate_channel(spec)
    ext = "bin" if args.format == "binary" else "csv"
    if args.write_samples:
        io.write_xy(out / f"samples_xy.{ext}", x, y, fmt=args.format)
        io.write_scalar_series(out / f"samples_y0.{ext}", y0, fmt=args.format)
    report: dict = {"simulation": {
        "t": spec.t, "noise_variance": spec.noise_variance,
        "vacuum_variance": spec.vacuum_variance, "shot_noise": args.n0,
    }}
    cal = None
    if phase is not None:
        cal = simulate_phase_calibration(spec)
        if args.write_samples:
            io.write_phase_samples(out / f"samples_phase.{ext}", cal,
                                   fmt=args.format)
    if args.estimate:
        budget = CalibrationBudget.with_relative(
            args.eta, args.vel * args.n0, args.delta_eta_rel,
            args.delta_vel_rel)
        record = ml_estimates(x, y, y0)
        epsilons = SecurityEpsilons(total=args.epsilon)
        key = finite_key_rate(record, budget, epsilons, args.beta,
                              n_fraction=args.n_fraction, model=args.model)
        report["keyrate"] = key.to_dict()
        if cal is not None:
            est = estimate_e1(cal)
            pp = key.point_params
            kappa = est.kappa
            t_remap, xi_remap, _ = remap_parameters(
                pp["transmittance"], pp["excess_noise"], kappa, pp["v_mod"],
                args.convention)
            apparent = SystemParams(v_mod=pp["v_mod"],
                                    transmittance=pp["transmittance"],
                                    excess_noise=pp["excess_noise"],
                                    beta=args.beta)
            remapped = SystemParams(v_mod=pp["v_mod"],
                                    transmittance=min(t_remap, 1.0),
                                    excess_noise=xi_remap, beta=args.beta)
            k_par = asymptotic_key_rate(apparent)
            k_real = (args.beta * mutual_information(apparent)
                      - holevo_bound(remapped).holevo_bits)
            report["phase_noise"] = {
                "e1": est.e1, "kappa": est.kappa,
                "var_parallel": est.var_parallel,
                "var_orthogonal": est.var_orthogonal,
                "xi_remapped": xi_remap,
                "asymptotic_rate_realistic": k_real,
                "asymptotic_rate_paranoid": k_par,
            }
    io.write_json(out / "simulate_report.json", report)
    io.write_manifest(out, "simulate", _resolved_config(args))
    if "keyrate" in report:
        print(f"K_finite = {report['keyrate']['K_finite']}")
    return 0


# ---------------------------------------------------------------------------
# finite-size (from sample files)
# ---------------------------------------------------------------------------

def cmd_finite_size(args) -> int:
    out = _outdir(args)
    x, y = io.read_xy(args.xy, fmt=args.format)
    y0 = io.read_scalar_series(args.y0, fmt=args.format)
    record = ml_estimates(x, y, y0)
    budget = CalibrationBudget.with_relative(args.eta, args.vel,
                                             args.delta_eta_rel,
                                             args.delta_vel_rel)
    epsilons = SecurityEpsilons(total=args.epsilon)
    report = finite_key_rate(record, budget, epsilons, args.beta,
                             n_fraction=args.n_fraction, model=args.model)
    io.write_json(out / "finite_size_report.json", report.to_dict())
    io.write_manifest(out, "finite-size", _resolved_config(args))
    print(f"K_finite = {report.rate}")
    return 0


# ---------------------------------------------------------------------------
# phase-noise (from calibration sample files)
# ---------------------------------------------------------------------------

def cmd_phase_noise(args) -> int:
    out = _outdir(args)
    samples = io.read_phase_samples(args.samples, args.n0, fmt=args.format)
    est = estimate_e1(samples)
    report = {"e1": est.e1, "kappa": est.kappa,
              "var_parallel": est.var_parallel,
              "var_orthogonal": est.var_orthogonal,
              "clamped": est.clamped}
    if args.compare:
        distances = _parse_distances(args)
        comp = phase_noise_keyrate_comparison(
            args.va, args.xi, args.beta, est.e1, distances,
            fiber_loss_db_km=args.alpha, convention=args.convention)
        io.write_curves_csv(out / "phase_noise_curves.csv", distances,
                            {"K_realistic": comp.rate_realistic,
                             "K_paranoid": comp.rate_paranoid})
        report.update({
            "xi_realistic": comp.xi_realistic,
            "xi_other_convention": comp.xi_other_convention,
            "distance_gain_km": comp.distance_gain_km,
        })
        if args.svg:
            plots.plot_rate_curves(out / "phase_noise_curves.svg", distances,
                                   {"K_realistic": comp.rate_realistic,
                                    "K_paranoid": comp.rate_paranoid})
    io.write_json(out / "phase_noise_report.json", report)
    io.write_manifest(out, "phase-noise", _resolved_config(args))
    print(f"E1 = {est.e1}, kappa = {est.kappa}")
    return 0


# ---------------------------------------------------------------------------
# parser plumbing
# ---------------------------------------------------------------------------

def _add_common(sp):
    sp.add_argument("--outdir", default=".", help="output directory")
    sp.add_argument("--config", default=None,
                    help="JSON config or manifest; flags override its values")
    sp.add_argument("--svg", action="store_true", help="also emit SVG plots")
    sp.add_argument("--seed", type=int, default=0)


def _add_channel_flags(sp, va=2.5, xi=0.01):
    sp.add_argument("--va", type=float, default=va,
                    help="modulation variance (shot-noise units)")
    sp.add_argument("--xi", type=float, default=xi, help="excess noise")
    sp.add_argument("--eta", type=float, default=0.6,
                    help="detector efficiency")
    sp.add_argument("--vel", type=float, default=0.01,
                    help="electronic noise (shot-noise units)")
    sp.add_argument("--beta", type=float, default=0.95,
                    help="reconciliation efficiency")
    sp.add_argument("--alpha", type=float, default=0.2,
                    help="fiber loss (dB/km)")
    sp.add_argument("--epsilon", type=float, default=1e-10,
                    help="total security parameter")
    sp.add_argument("--model", choices=("realistic", "paranoid"),
                    default="realistic")
    sp.add_argument("--delta-eta-rel", type=float, default=0.0,
                    help="relative calibration uncertainty on eta")
    sp.add_argument("--delta-vel-rel", type=float, default=0.0,
                    help="relative calibration uncertainty on v_el")
    sp.add_argument("--n-fraction", type=float, default=1.0)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cvqkd",
        description="Security numerics for continuous-variable QKD with "
                    "imperfect modulation, calibration, and phase noise.")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    sp = sub.add_parser("epsilon-prep",
                        help="certify a discretized modulation against the "
                             "ideal thermal state")
    sp.add_argument("--scheme", choices=("cartesian", "polar"),
                    default="cartesian")
    sp.add_argument("--va", type=float, default=20.0)
    sp.add_argument("--cutoff-sd", type=float, default=7.0,
                    help="grid half-width in modulation standard deviations")
    sp.add_argument("--steps-per-unit", type=float, default=4.0,
                    help="grid steps per shot-noise unit")
    sp.add_argument("--steps-per-side", type=int, default=0,
                    help="explicit N (overrides --steps-per-unit)")
    sp.add_argument("--cutoff-scheme",
                    choices=("even_redistribution", "edge_mass"),
                    default="even_redistribution")
    sp.add_argument("--Q", type=int, default=0,
                    help="Fock cutoff (0 = automatic)")
    sp.add_argument("--target", type=float, default=1e-10,
                    help="certification target for automatic choices")
    sp.add_argument("--sigma-error", type=float, action="append",
                    help="grid perturbation level; repeat for a sweep")
    sp.add_argument("--trials", type=int, default=16)
    sp.add_argument("--radial-count", type=int, default=0)
    sp.add_argument("--radial-bits", type=int, default=0)
    sp.add_argument("--angular-count", type=int, default=2000)
    sp.add_argument("--radial-rule",
                    choices=("uniform", "gauss", "gauss-hermite-folded"),
                    default="uniform")
    _add_common(sp)
    sp.set_defaults(func=cmd_epsilon_prep)
    subs["epsilon-prep"] = sp

    sp = sub.add_parser("keyrate", help="secret key rate versus distance")
    _add_channel_flags(sp)
    sp.add_argument("--samples", default="asympt,1e10,1e9,1e8,1e7,1e6",
                    help="comma list of sample counts; 'asympt' allowed")
    sp.add_argument("--dmin", type=float, default=0.0)
    sp.add_argument("--dmax", type=float, default=100.0)
    sp.add_argument("--dstep", type=float, default=1.0)
    sp.add_argument("--e1", type=float, default=None,
                    help="calibrated phase noise: switch to the "
                         "realistic-vs-paranoid comparison")
    sp.add_argument("--convention", choices=("paper_numbers", "paper_text"),
                    default="paper_numbers")
    sp.add_argument("--clamp-negative", action="store_true",
                    help="clamp negative rates to zero in outputs")
    _add_common(sp)
    sp.set_defaults(func=cmd_keyrate)
    subs["keyrate"] = sp

    sp = sub.add_parser("simulate",
                        help="generate protocol data, then estimate and "
                             "compute the finite-size rate")
    _add_channel_flags(sp)
    sp.add_argument("--distance", type=float, default=10.0, help="km")
    sp.add_argument("--transmittance", type=float, default=None,
                    help="override the distance-derived transmittance")
    sp.add_argument("--n", type=int, default=1_000_000)
    sp.add_argument("--nprime", type=int, default=None)
    sp.add_argument("--n0", type=float, default=1.0,
                    help="shot noise in linear units")
    sp.add_argument("--e1", type=float, default=None,
                    help="inject preparation phase noise with this "
                         "E[sin^2 theta]")
    sp.add_argument("--phase-family", choices=("gaussian", "uniform"),
                    default="gaussian")
    sp.add_argument("--convention", choices=("paper_numbers", "paper_text"),
                    default="paper_numbers")
    sp.add_argument("--write-samples", action="store_true")
    sp.add_argument("--format", choices=("csv", "binary"), default="binary")
    sp.add_argument("--no-estimate", dest="estimate", action="store_false")
    _add_common(sp)
    sp.set_defaults(func=cmd_simulate)
    subs["simulate"] = sp

    sp = sub.add_parser("finite-size",
                        help="finite-size key rate from recorded samples")
    sp.add_argument("--xy", required=True, help="x,y sample file")
    sp.add_argument("--y0", required=True, help="vacuum sample file")
    sp.add_argument("--format", choices=("csv", "binary"), default=None)
    sp.add_argument("--eta", type=float, default=0.6)
    sp.add_argument("--vel", type=float, default=0.01,
                    help="calibrated electronic noise, linear units")
    sp.add_argument("--delta-eta-rel", type=float, default=0.0)
    sp.add_argument("--delta-vel-rel", type=float, default=0.0)
    sp.add_argument("--epsilon", type=float, default=1e-10)
    sp.add_argument("--beta", type=float, default=0.95)
    sp.add_argument("--n-fraction", type=float, default=1.0)
    sp.add_argument("--model", choices=("realistic", "paranoid"),
                    default="realistic")
    _add_common(sp)
    sp.set_defaults(func=cmd_finite_size)
    subs["finite-size"] = sp

    sp = sub.add_parser("phase-noise",
                        help="estimate phase noise from calibration samples")
    sp.add_argument("--samples", required=True,
                    help="calibration file (A, phi, outcome)")
    sp.add_argument("--n0", type=float, required=True,
                    help="calibrated shot noise, linear units")
    sp.add_argument("--format", choices=("csv", "binary"), default=None)
    sp.add_argument("--compare", action="store_true",
                    help="also emit realistic-vs-paranoid rate curves")
    sp.add_argument("--va", type=float, default=2.5)
    sp.add_argument("--xi", type=float, default=0.025)
    sp.add_argument("--beta", type=float, default=0.95)
    sp.add_argument("--alpha", type=float, default=0.2)
    sp.add_argument("--convention", choices=("paper_numbers", "paper_text"),
                    default="paper_numbers")
    sp.add_argument("--dmin", type=float, default=0.0)
    sp.add_argument("--dmax", type=float, default=120.0)
    sp.add_argument("--dstep", type=float, default=1.0)
    _add_common(sp)
    sp.set_defaults(func=cmd_phase_noise)
    subs["phase-noise"] = sp

    return parser, subs


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    # apply --config values as defaults before the real parse
    peek = argparse.ArgumentParser(add_help=False)
    peek.add_argument("--config", default=None)
    known, _ = peek.parse_known_args(argv)
    if known.config:
        cfg = io.read_config(known.config)
        command = next((a for a in argv if a in subs), None)
        if command is not None:
            sp = subs[command]
            dests = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in cfg.items() if k in dests})
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EstimationAbort as exc:
        print(f"estimation aborted: {exc}", file=sys.stderr)
        return 4
    except MemoryGuardError as exc:
        print(f"memory guard: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
