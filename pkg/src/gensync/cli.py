"""Command-line front end.

Subcommands ``run``, ``bounds``, ``sweep`` and ``validate-reduction``.

Exit codes:
    0  success
    1  model error (no equilibrium, degenerate parameters, ...)
    2  usage error
    3  configuration error
    4  simulation failure (non-finite state)
    5  analysis error (gain too small, empty operating box)
    6  a validation check failed
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .analysis import (
    TAIL_FRACTION,
    BoundsReport,
    bounds_report,
    regulation_bound,
    reports_to_csv,
    shifted_leader_norm,
    tail_sup,
)
from .config import DEFAULT_DT, load_config, load_high_order
from .errors import AnalysisError, ConfigError, GensyncError, SimulationError
from .sim import MODE_PRE, Scenario, read_trajectory_csv, run, sweep

EXIT_OK, EXIT_MODEL, EXIT_USAGE, EXIT_CONFIG, EXIT_SIM, EXIT_ANALYSIS, EXIT_CHECK = 0, 1, 2, 3, 4, 5, 6

RATIO_ZERO, RATIO_FIRST, RATIO_TOL = 0.5, 0.25, 0.1
ROUND_TRIP_TOL = 1e-6
COMPARE_TOL = 0.02


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".10g")


@dataclass
class RunSummary:
    """Headline numbers of a run.  All of them follow from the trajectory CSV
    plus the scenario parameters (see :func:`summarize`)."""

    model: str
    connected: bool
    connection_time: float | None
    steady_speed_error: float | None
    max_freq_deviation: float
    presync_regulation: float | None = None
    bound_report: BoundsReport | None = None
    iss_bound: float | None = None
    verdicts: dict[str, bool] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"model={self.model}",
            f"connected={_fmt(self.connected)}",
            f"connection_time={_fmt(self.connection_time)}",
            f"steady_speed_error={_fmt(self.steady_speed_error)}",
            f"steady_speed_error_over_pi={_fmt(None if self.steady_speed_error is None else self.steady_speed_error / math.pi)}",
            f"max_freq_deviation={_fmt(self.max_freq_deviation)}",
        ]
        if self.presync_regulation is not None:
            lines.append(f"presync_regulation={_fmt(self.presync_regulation)}")
        if self.iss_bound is not None:
            lines.append(f"iss_error_bound={_fmt(self.iss_bound)}")
        if self.bound_report is not None:
            lines += ["bound." + ln for ln in self.bound_report.to_text().splitlines()]
        lines += [f"verdict.{k}={_fmt(v)}" for k, v in self.verdicts.items()]
        return "\n".join(lines) + "\n"

    @property
    def ok(self) -> bool:
        return all(self.verdicts.values())


def summarize(data: dict[str, np.ndarray], events, sc: Scenario, report: BoundsReport | None = None,
              iss_bound: float | None = None) -> RunSummary:
    """Build the summary from recorded samples and the event rows.

    ``steady_speed_error`` is sup |e| over the last 20% of the horizon.  The
    leader regulation measure only makes sense before connection (afterwards
    the leader no longer carries the whole load), so it is the tail sup over
    the last 20% of the pre-sync segment.
    """
    t, p = data["t"], sc.params
    conn = [ev for ev in events if ev.kind == "connection"]
    connected = bool(conn)
    conn_time = conn[0].time if conn else None
    # high-order runs have no follower, so e is all NaN there
    steady = tail_sup(t, data["e"]) if np.any(np.isfinite(data["e"])) else None
    w0 = p.omega0 if sc.model_kind != "high-order" else sc.high_order.omega0
    fdev = float(np.max(np.abs(data["omega3"] - w0)))
    th = sc.thresholds
    verdicts = {"freq_within_band": fdev <= th.freq_band}

    reg = None
    if sc.model_kind == "damped":
        pre = data["mode"] == MODE_PRE
        if np.count_nonzero(pre) >= 2:
            norm = shifted_leader_norm(t[pre], data["theta1"][pre], data["omega1"][pre], data["ell"][pre], p)
            reg = tail_sup(t[pre], norm, TAIL_FRACTION)
    if report is not None and steady is not None:
        verdicts["speed_error_within_bound"] = steady <= report.sync_error_bound
        if reg is not None:
            verdicts["regulation_within_bound"] = reg <= report.regulation_bound
    if iss_bound is not None and steady is not None:
        verdicts["speed_error_within_iss_bound"] = steady <= iss_bound
    if connected:
        vals = dict(conn[0].values)
        verdicts["connection_within_thresholds"] = (abs(vals["speed_err"]) <= th.max_speed_error + 1e-9
                                                    and abs(vals["phase_err"]) <= th.max_phase_error + 1e-9)
    return RunSummary(sc.model_kind, connected, conn_time, steady, fdev, reg, report, iss_bound, verdicts)


def _omega_box_for(data, sc: Scenario):
    """Default box, widened to every leader speed seen in the run."""
    from .phase_damping import default_omega_box

    th_box, (lo, hi) = default_omega_box(sc.params)
    w1 = data["omega1"]
    return th_box, (min(lo, float(np.min(w1))), max(hi, float(np.max(w1))))


def _bound_inputs(cfg, data=None):
    """Bound report (damped) or ISS bound (phase-damping) for the configured disturbance."""
    sc = cfg.scenario
    if sc.model_kind == "damped":
        horizon = cfg.bounds.horizon or sc.horizon
        return bounds_report(sc.params, sc.load, sc.disturbance.sup, horizon, DEFAULT_DT["damped"], cfg.bounds.safety), None
    if sc.model_kind == "phase-damping" and sc.damping is not None:
        from .phase_damping import iss_error_bound

        box = None if data is None else _omega_box_for(data, sc)
        return None, iss_error_bound(sc.damping, sc.disturbance.sup, sc.params, omega_box=box)
    return None, None


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.dt, args.horizon)
    sc = cfg.scenario
    traj = run(sc)
    out = _out_dir(args)
    csv_path = out / "trajectory.csv"
    traj.write_csv(csv_path)
    # the summary is computed from the file just written
    data, events = read_trajectory_csv(csv_path)
    report, iss = _bound_inputs(cfg, data)
    summary = summarize(data, events, sc, report, iss)
    text = summary.to_text()
    (out / "summary.txt").write_text(text)
    if args.svg:
        from .svg import write_svg

        w0 = sc.high_order.omega0 if sc.model_kind == "high-order" else sc.params.omega0
        write_svg(data, out / "trajectory.svg", sc.thresholds, w0, cfg.doc.description)
    sys.stdout.write(text)
    return EXIT_OK


def _phase_damping_bounds(cfg, out) -> int:
    from .phase_damping import DampingProfile, iss_gain_phi, ltv_constants

    sc = cfg.scenario
    profile = sc.damping if sc.damping is not None else DampingProfile.constant(sc.params.d1_0)
    ltv = ltv_constants(profile, sc.params)
    lines = [f"ltv.{k}={_fmt(v)}" for k, v in asdict(ltv).items()]
    lines += [f"d_lower={_fmt(profile.d_lower)}", f"d_upper={_fmt(profile.d_upper)}", f"eps_deriv={_fmt(profile.eps_deriv)}"]
    rows = ["d,phi,certified,envelope,omega_sup,error_bound"]
    for d in cfg.bounds.d_values:
        g = iss_gain_phi(profile, abs(d), sc.params)
        rows.append(",".join(_fmt(v) for v in (d, g.phi, g.certified, g.envelope, g.omega_sup, g.phi / profile.d_lower)))
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text + "\n".join(rows) + "\n")
    if out is not None:
        (out / "bounds.txt").write_text(text)
        (out / "bounds.csv").write_text("\n".join(rows) + "\n")
    return EXIT_OK


def cmd_bounds(args) -> int:
    cfg = load_config(args.config, args.dt, args.horizon)
    sc = cfg.scenario
    out = _out_dir(args) if args.out else None
    if sc.model_kind == "phase-damping":
        return _phase_damping_bounds(cfg, out)
    if sc.model_kind != "damped":
        raise ConfigError("bounds needs the damped or phase-damping model", "model")
    p = sc.params
    horizon = cfg.bounds.horizon or sc.horizon
    base = bounds_report(p, sc.load, sc.disturbance.sup, horizon, DEFAULT_DT["damped"], cfg.bounds.safety)
    rows = [base.with_d(abs(d), p) for d in cfg.bounds.d_values]
    text = base.to_text()
    # affine in d: successive differences must equal (k / D) * delta d
    slope_err = 0.0
    for a, b in zip(rows, rows[1:]):
        expect = (p.k / p.d1_0) * (b.d_sup - a.d_sup)
        got = b.sync_error_bound - a.sync_error_bound
        slope_err = max(slope_err, abs(got - expect) / max(abs(expect), 1e-300))
    text += f"slope_rel_error={_fmt(slope_err)}\nslope_ok={_fmt(slope_err <= 1e-6)}\n"
    table = reports_to_csv(rows)
    sys.stdout.write(text)
    sys.stdout.write(table)
    for r in rows:
        sys.stdout.write(f"d/pi={r.d_sup / math.pi:.6g} bound/pi={r.sync_error_bound / math.pi:.6g}\n")
    if out is not None:
        (out / "bounds.txt").write_text(text)
        (out / "bounds.csv").write_text(table)
    return EXIT_OK if slope_err <= 1e-6 else EXIT_CHECK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.dt, args.horizon)
    if cfg.sweep is None:
        raise ConfigError("missing sweep section", "sweep")
    res = sweep(cfg.scenario, cfg.sweep.k_values, cfg.sweep.d_values, cfg.sweep.workers)
    text = res.to_csv()
    if args.out:
        (_out_dir(args) / "sweep.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_validate_reduction(args) -> int:
    from .high_order import compare_with_damped, params_for_damped, ratio_tests, reduce_to_damped
    from .model import GeneratorParams

    if args.config:
        import json

        path = Path(args.config)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(str(exc), "") from None
        spec = raw.get("high_order", raw) if isinstance(raw, dict) else raw
        hp = load_high_order(spec, path.parent)
    else:
        hp = load_high_order(None)

    lines, ok = [], True
    for r in ratio_tests(hp):
        good = abs(r.ratio_zero - RATIO_ZERO) <= RATIO_TOL
        lines.append(f"ratio.{r.name}.zero={_fmt(r.ratio_zero)}")
        if r.ratio_first is not None:
            good_first = abs(r.ratio_first - RATIO_FIRST) <= RATIO_TOL
            lines.append(f"ratio.{r.name}.first={_fmt(r.ratio_first)}")
            good = good and good_first
        lines.append(f"ratio.{r.name}.ok={_fmt(good)}")
        ok = ok and good

    target = GeneratorParams.reference()
    back = reduce_to_damped(params_for_damped(hp, target.k1, target.x1, target.d1_0))
    for name in ("k1", "x1", "d1_0"):
        want, got = getattr(target, name), getattr(back, name)
        rel = abs(got - want) / abs(want)
        lines.append(f"round_trip.{name}={_fmt(got)} rel_error={_fmt(rel)}")
        ok = ok and rel <= ROUND_TRIP_TOL

    cmp = compare_with_damped(hp)
    good = cmp.max_rel_diff <= COMPARE_TOL
    lines += [
        f"compare.settle_time={_fmt(cmp.settle_time)}",
        f"compare.max_abs_diff={_fmt(cmp.max_abs_diff)}",
        f"compare.max_rel_diff={_fmt(cmp.max_rel_diff)}",
        f"compare.ok={_fmt(good)}",
    ]
    ok = ok and good
    lines.append(f"all_ok={_fmt(ok)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        (_out_dir(args) / "reduction.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if ok else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gensync", description="Leader/follower generator synchronization simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON scenario file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--dt", type=float, default=None, help="override the step size (s)")
        p.add_argument("--horizon", type=float, default=None, help="override the horizon (s)")
        p.add_argument("--seed", type=int, default=None,
                       help="accepted for harness compatibility; all commands are deterministic")

    p = sub.add_parser("run", help="simulate one scenario")
    common(p)
    p.add_argument("--svg", action="store_true", help="also write trajectory.svg")
    p.set_defaults(func=cmd_run, needs_out=True)
    p = sub.add_parser("bounds", help="decay constants and ultimate bounds")
    common(p)
    p.set_defaults(func=cmd_bounds)
    p = sub.add_parser("sweep", help="steady error over a (k, d) grid")
    common(p)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("validate-reduction", help="manifold ratio tests and reduced-model comparison")
    common(p, config_required=False)
    p.set_defaults(func=cmd_validate_reduction)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if getattr(args, "needs_out", False) and not args.out:
        args.out = "."
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM
    except AnalysisError as exc:
        print(f"analysis error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except GensyncError as exc:
        print(f"model error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
