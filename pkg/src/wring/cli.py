"""``wring`` command line: one pipeline stage per subcommand, files in and out.

Exit codes: 0 success, 2 validation failure, 3 capacity exceeded,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .dynamics import (DENSE_OPEN_MAX_SITES, evolve_closed, evolve_open, apply_rotation,
                       preparation_fidelity)
from .errors import CapacityError, ValidationError, WringError
from .fileio import (Report, Table, emit_report, file_digest, ingest_shot_file, load_ensemble,
                     load_state, read_table, save_ensemble, save_state, write_shot_file,
                     write_table)
from .hamiltonian import ground_state
from .inference import (build_prior_ensemble, ensemble_log_likelihoods, fidelity_from_counts,
                        kink_populations, posterior_fidelity, posterior_weights,
                        px_from_distribution, px_from_samples)
from .lattice import ring_positions
from .measurement import (ConfusionModel, apply_readout_noise, calibration_fit, sample_bitstrings)
from .pipeline import (MITIGATION_METHODS, fidelity_table, kl_table, member_table,
                       mitigated_distribution, population_table, predicted_mixture)
from .search import fit_power_law, gap_scan, grape_optimize, rotation_target, sweep_detuning


def _config(args) -> ExperimentConfig:
    return load_config(args.config, allow_unphysical=True if args.allow_unphysical else None)


def _say(msg: str):
    print(msg, flush=True)


def cmd_prepare(args):
    cfg = _config(args)
    sched = cfg.prep_schedule()
    kw = dict(dt=cfg.numerics.dt, method=cfg.numerics.method, c6=cfg.lattice.c6,
              truncation=cfg.lattice.truncation)
    if args.open:
        res = evolve_open(cfg.geometry(), sched, ground_state(cfg.L), cfg.noise.gamma, **kw)
    else:
        res = evolve_closed(cfg.geometry(), sched, ground_state(cfg.L), **kw)
    fid = preparation_fidelity(res, cfg.L)
    save_state(args.out, res.state, {"config": cfg.to_dict(), "F_th": fid, "open": args.open})
    _say(f"F_th={fid:.10g}")


def cmd_sweep(args):
    cfg = _config(args)
    tf = args.t_final if args.t_final is not None else cfg.prep.t_final
    res = sweep_detuning(cfg.L, cfg.lattice.a, cfg.prep.omega, tf, (args.delta_min, args.delta_max),
                         args.delta_step, ramp_fraction=args.ramp_fraction, c6=cfg.lattice.c6,
                         truncation=cfg.lattice.truncation, dt=cfg.numerics.dt,
                         method=cfg.numerics.method, limits=cfg.hardware_limits())
    t = Table("sweep", ["delta [rad/us]", "F_th [1]", "infidelity [1]"])
    for d, f in res.grid:
        t.add(d, f, 1.0 - f)
    t.notes.append(f"best_delta={res.best[0]:.10g} best_F_th={res.best[1]:.10g} t_F={tf:.10g}")
    write_table(args.out, t)
    _say(t.notes[0])


def cmd_gap(args):
    rows = gap_scan(args.sizes, args.a, args.omega, args.delta)
    t = Table("gap", ["L [1]", "gap [rad/us]", "gap_above_ground [rad/us]",
                      "ground_multiplicity [1]"])
    for r in rows:
        t.add(r.L, r.gap, r.gap_above_ground, r.ground_multiplicity)
    write_table(args.out, t)
    odd = [(r.L, r.gap) for r in rows if r.L % 2]
    if len(odd) >= 3:
        fit = fit_power_law(odd)
        _say(f"odd_L_exponent={fit.exponent:.6g} stderr={fit.stderr:.3g}")


def cmd_grape(args):
    geom = ring_positions(args.L, args.a)
    res = grape_optimize(rotation_target(args.L), geom, n_slices=args.slices,
                         duration=args.duration, iterations=args.iterations, seed=args.seed)
    t = Table("grape", ["slice [1]", "t_start [us]", "omega [rad/us]", "phi [rad]",
                        "delta [rad/us]"])
    for k, (om, ph, de) in enumerate(res.controls):
        t.add(k, k * res.slice_duration, om, ph, de)
    t.notes.append(f"fidelity={res.fidelity:.10g} iterations={len(res.fidelity_trace) - 1}")
    write_table(args.out, t)
    _say(t.notes[0])


def cmd_sample(args):
    cfg = _config(args)
    state, _ = load_state(args.state)
    n = args.shots or cfg.sampling.shots
    seed = cfg.sampling.seed if args.seed is None else args.seed
    meta = {"experiment": args.experiment_id or f"{args.basis}", "seed": seed}
    if args.basis == "z":
        shots = sample_bitstrings(state, "z", n, seed, metadata=meta)
    elif args.ideal:
        shots = sample_bitstrings(state, "x", n, seed, metadata=meta)
    else:
        rots = cfg.rotation_schedules()
        if not 0 <= args.rotation < len(rots):
            raise ValidationError(f"rotation index {args.rotation} out of range 0..{len(rots) - 1}")
        after = apply_rotation(state, rots[args.rotation], cfg.geometry(), cfg.noise.gamma,
                               dt=cfg.numerics.dt, c6=cfg.lattice.c6,
                               truncation=cfg.lattice.truncation)
        meta["rotation"] = cfg.rotation_labels()[args.rotation]
        shots = sample_bitstrings(after, "x", n, seed, rotated=True, metadata=meta)
    if not args.no_readout_noise:
        shots = apply_readout_noise(shots, cfg.confusion(), seed=seed + 1)
    write_shot_file(args.out, shots)
    _say(f"shots={len(shots)}")


def cmd_ingest(args):
    shots = ingest_shot_file(args.shots, args.L, postselect=args.postselect)
    if args.out:
        write_shot_file(args.out, shots)
    kept = shots.metadata.get("retained", len(shots))
    _say(f"L={shots.L} basis={shots.basis} shots={kept}")


def _confusion(args, L) -> ConfusionModel:
    return ConfusionModel.uniform(L, args.p_g_to_r, args.p_r_to_g)


def cmd_estimate(args):
    z = ingest_shot_file(args.z, postselect=True)
    x = ingest_shot_file(args.x, z.L, postselect=True)
    if x.basis != "x":
        raise ValidationError(f"{args.x} does not hold x-basis shots")
    L = z.L
    if args.mitigate:
        cm = _confusion(args, L)
        p = kink_populations(mitigated_distribution(z.distribution(), cm, args.mitigation)[0], L)
        # sampling noise can leave linear estimates slightly outside the simplex
        p = np.clip(p, 0.0, None)
        p = p / max(p.sum(), 1.0)
        px = px_from_distribution(mitigated_distribution(x.distribution(), cm, args.mitigation)[0], L)
        px_err = float("nan")
    else:
        p = kink_populations(z.distribution(), L)
        px, px_err = px_from_samples(x)
    est = fidelity_from_counts(p, px, L)
    t = Table("estimate", ["L [1]", "sum_p_k [1]", "px [1]", "px_err [1]", "F_e [1]",
                           "out_of_range [1]"])
    t.add(L, float(p.sum()), px, px_err, est.value, est.out_of_range)
    write_table(args.out, t)
    _say(f"F_e={est.value:.10g}")


def cmd_prior(args):
    cfg = _config(args)
    if cfg.L > DENSE_OPEN_MAX_SITES:
        raise CapacityError(f"prior ensembles need open-system simulation (L <= {DENSE_OPEN_MAX_SITES})")
    Q = args.Q or cfg.ensemble.Q
    ens = build_prior_ensemble(cfg.L, cfg.lattice.a, cfg.prep_schedule(), cfg.rotation_schedules(),
                               cfg.noise_params(), Q, cfg.ensemble.seed, readout=cfg.confusion(),
                               c6=cfg.lattice.c6, truncation=cfg.lattice.truncation,
                               dt=cfg.numerics.dt, labels=cfg.rotation_labels())
    save_ensemble(args.out, ens)
    if args.members_out:
        write_table(args.members_out, member_table(ens))
    fe = ens.fidelities
    _say(f"Q={len(ens)} F_e_min={fe.min():.6g} F_e_max={fe.max():.6g}")


def _observed(paths, L):
    shots = [ingest_shot_file(p, L, postselect=True) for p in paths]
    return shots, [s.distribution() for s in shots], [len(s) for s in shots]


def cmd_posterior(args):
    ens = load_ensemble(args.ensemble)
    shots, obs, counts = _observed(args.shots, ens.L)
    logs = ensemble_log_likelihoods(ens, obs, counts, basis=shots[0].basis)
    w = posterior_weights(logs, log=True)
    write_table(args.out, member_table(ens, w))
    F, spread = posterior_fidelity(ens, w)
    _say(f"F_posterior={F:.10g} spread={spread:.6g}")


def cmd_calibrate(args):
    cols, rows = read_table(args.data)
    try:
        data = [(float(r[0]), float(r[1])) for r in rows]
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"{args.data}: calibration rows must hold two numbers ({exc})")
    fit = calibration_fit(data, args.t_pi)
    t = Table("calibration", ["omega [rad/us]", "omega_err [rad/us]", "delta_offset [rad/us]",
                              "delta_offset_err [rad/us]", "rms_residual [1]"])
    t.add(fit.omega, fit.omega_stderr, fit.delta_offset, fit.delta_offset_stderr, fit.residual)
    write_table(args.out, t)
    _say(f"omega={fit.omega:.10g} +- {fit.omega_stderr:.3g}")


def cmd_report(args):
    cfg = _config(args)
    inputs = {Path(p).name: file_digest(p) for p in [args.z, args.ensemble, *args.x]
              if p is not None}
    report = Report({"tool": f"wring {__version__}", "config": cfg.to_dict(),
                     "input_sha256": inputs, "bootstrap": {"B": args.bootstrap, "seed": args.seed}})
    z = ingest_shot_file(args.z, cfg.L, postselect=True)
    if z.post:
        report.tables.append(population_table(z, cfg.confusion(), B=args.bootstrap,
                                              seed=args.seed, method=args.mitigation))
    else:
        report.warnings.append("no z-basis shots survived post-selection")
    if args.ensemble:
        ens = load_ensemble(args.ensemble)
        shots, obs, counts = _observed(args.x, cfg.L)
        weights = None
        if shots:
            logs = ensemble_log_likelihoods(ens, obs, counts, basis="x")
            weights = posterior_weights(logs, log=True)
            preds = [predicted_mixture(ens, weights, "x", a) for a in range(len(obs))]
            labels = [s.metadata.get("rotation", s.metadata.get("experiment", f"x{a}"))
                      for a, s in enumerate(shots)]
            report.tables.append(kl_table(obs, counts, preds, labels, cfg.L))
        report.tables.append(fidelity_table(ens, weights))
    emit_report(args.out, report, args.format)
    _say(f"report written to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wring", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"wring {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", required=True, help="experiment TOML file")
        sp.add_argument("--allow-unphysical", action="store_true",
                        help="skip hardware-limit validation")
        return sp

    sp = with_config(sub.add_parser("prepare", help="simulate the preparation sequence"))
    sp.add_argument("--open", action="store_true", help="include dephasing (L <= 9)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_prepare)

    sp = with_config(sub.add_parser("sweep", help="F_th over a detuning grid"))
    sp.add_argument("--delta-min", type=float, default=10.0)
    sp.add_argument("--delta-max", type=float, default=50.0)
    sp.add_argument("--delta-step", type=float, default=1.0)
    sp.add_argument("--t-final", type=float)
    sp.add_argument("--ramp-fraction", type=float, default=0.25)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("gap", help="low-energy gaps of ideal rings")
    sp.add_argument("--sizes", type=lambda s: [int(x) for x in s.split(",")],
                    default=[5, 7, 9, 11, 13])
    sp.add_argument("--a", type=float, default=6.0)
    sp.add_argument("--omega", type=float, default=5.0)
    sp.add_argument("--delta", type=float, default=29.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gap)

    sp = sub.add_parser("grape", help="optimize the rotation pulse")
    sp.add_argument("--L", type=int, default=3)
    sp.add_argument("--a", type=float, default=6.0)
    sp.add_argument("--slices", type=int, default=40)
    sp.add_argument("--duration", type=float, default=0.25)
    sp.add_argument("--iterations", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_grape)

    sp = with_config(sub.add_parser("sample", help="draw shots from a saved state"))
    sp.add_argument("--state", required=True)
    sp.add_argument("--basis", choices=("z", "x"), default="z")
    sp.add_argument("--rotation", type=int, default=2, help="index into the rotation variants")
    sp.add_argument("--ideal", action="store_true", help="exact basis change instead of the pulse")
    sp.add_argument("--shots", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--experiment-id")
    sp.add_argument("--no-readout-noise", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("ingest", help="validate (and post-select) a shot file")
    sp.add_argument("--shots", required=True)
    sp.add_argument("--L", type=int)
    sp.add_argument("--postselect", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_ingest)

    def with_readout(sp):
        sp.add_argument("--p-g-to-r", type=float, default=0.01)
        sp.add_argument("--p-r-to-g", type=float, default=0.08)
        return sp

    sp = with_readout(sub.add_parser("estimate", help="direct fidelity estimate from z and x shots"))
    sp.add_argument("--z", required=True)
    sp.add_argument("--x", required=True)
    sp.add_argument("--mitigate", action="store_true")
    sp.add_argument("--mitigation", choices=MITIGATION_METHODS, default="linear")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_estimate)

    sp = with_config(sub.add_parser("prior", help="build the simulated prior ensemble"))
    sp.add_argument("--Q", type=int)
    sp.add_argument("--out", required=True)
    sp.add_argument("--members-out")
    sp.set_defaults(func=cmd_prior)

    sp = sub.add_parser("posterior", help="reweight a prior ensemble with rotation data")
    sp.add_argument("--ensemble", required=True)
    sp.add_argument("--shots", nargs="+", required=True,
                    help="one shot file per rotation experiment, in ensemble order")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_posterior)

    sp = sub.add_parser("calibrate", help="fit the single-atom resonance curve")
    sp.add_argument("--data", required=True, help="table with columns delta,P_e")
    sp.add_argument("--t-pi", type=float, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_calibrate)

    sp = with_config(sub.add_parser("report", help="population, KL and fidelity tables"))
    sp.add_argument("--z", required=True)
    sp.add_argument("--x", nargs="*", default=[])
    sp.add_argument("--ensemble")
    sp.add_argument("--bootstrap", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--mitigation", choices=MITIGATION_METHODS, default="linear")
    sp.add_argument("--format", choices=("table", "delimited"), default="table")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except WringError as exc:
        print(f"wring {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
