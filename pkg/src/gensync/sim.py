"""Scenario orchestration: pre-sync, connection, post-sync and AGC phases."""

from __future__ import annotations

import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import TAIL_FRACTION, estimate_theta_bounds, sync_error_bound, tail_sup
from .control import AgcParams, agc_control, follower_field
from .errors import ConfigError, DegenerateDamping, GensyncError
from .integrate import check_finite, lerp
from .model import DAMPING_FLOOR, GeneratorParams, postsync_field, steady_theta13, theta13_field
from .signals import Disturbance, LoadProfile
from .supervisor import Supervisor, SyncThresholds, wrap_phase

MODEL_KINDS = ("damped", "phase-damping", "high-order")
COLUMNS = (
    "t", "theta1", "omega1", "theta3", "omega3", "theta2", "omega2", "e", "ell", "d",
    "mode", "u1", "u2", "p1", "p2", "z", "theta13", "phase_err",
)
MODE_PRE, MODE_POST, MODE_AGC = 0, 1, 2


@dataclass(frozen=True)
class Scenario:
    """Everything a run needs.  ``initial`` is an explicit pre-sync state
    (theta1, omega1, theta13, theta2, omega2); None selects the leader at its
    equilibrium with the follower at rest."""

    params: GeneratorParams
    load: LoadProfile = field(default_factory=LoadProfile)
    disturbance: Disturbance = field(default_factory=Disturbance)
    thresholds: SyncThresholds = field(default_factory=SyncThresholds)
    agc: AgcParams = field(default_factory=AgcParams)
    horizon: float = 600.0
    dt: float = 1e-3
    model_kind: str = "damped"
    initial: tuple[float, ...] | None = None
    allow_connection: bool = True
    record_every: float = 0.1
    speed_mode: str = "true"
    give_up_after: float | None = None
    damping: object | None = None
    signal: object | None = None
    high_order: object | None = None

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigError("must be > 0", "sim.dt")
        if not (math.isfinite(self.horizon) and self.horizon >= self.dt):
            raise ConfigError("must be >= dt", "sim.horizon")
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"expected one of {MODEL_KINDS}", "model")
        if self.record_every < self.dt:
            raise ConfigError("must be >= dt", "sim.record_every")
        if self.initial is not None and len(self.initial) != 5:
            raise ConfigError("explicit initial state needs 5 values", "sim.initial")
        if self.model_kind == "high-order" and self.high_order is None:
            raise ConfigError("high-order runs need high_order parameters", "high_order")

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    values: tuple[tuple[str, float], ...] = ()

    def csv_row(self) -> str:
        vals = ";".join(f"{k}={_fmt(v)}" for k, v in self.values)
        return f"#EVENT,{_fmt(self.time)},{self.kind},{vals}"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".12g")


@dataclass
class Trajectory:
    data: dict[str, np.ndarray]
    events: list[Event]
    connection: object | None = None
    agc_time: float | None = None
    max_freq_dev_steps: float = 0.0

    @property
    def connected(self) -> bool:
        return self.connection is not None

    @property
    def connection_time(self) -> float | None:
        return None if self.connection is None else self.connection.time

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[name]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(COLUMNS) + "\n")
        cols = [self.data[c] for c in COLUMNS]
        for i in range(len(cols[0])):
            buf.write(",".join(_fmt(c[i]) for c in cols) + "\n")
        for ev in self.events:
            buf.write(ev.csv_row() + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def steady_speed_error(self, fraction: float = TAIL_FRACTION) -> float:
        return tail_sup(self.data["t"], self.data["e"], fraction)


def read_trajectory_csv(path_or_text) -> tuple[dict[str, np.ndarray], list[Event]]:
    """Parse a CSV produced by :meth:`Trajectory.to_csv`."""
    text = path_or_text
    if not isinstance(text, str) or "\n" not in text:
        with open(path_or_text) as fh:
            text = fh.read()
    lines = text.splitlines()
    header = lines[0].split(",")
    rows, events = [], []
    for line in lines[1:]:
        if line.startswith("#EVENT"):
            _, t, kind, vals = line.split(",", 3)
            pairs = tuple((k, float(v)) for k, v in (p.split("=") for p in vals.split(";") if p))
            events.append(Event(float(t), kind, pairs))
        elif line:
            rows.append([float(x) for x in line.split(",")])
    arr = np.array(rows)
    return {name: arr[:, i] for i, name in enumerate(header)}, events


class _Recorder:
    def __init__(self):
        self.rows: list[tuple] = []

    def add(self, row):
        self.rows.append(row)

    def finish(self) -> dict[str, np.ndarray]:
        arr = np.array(self.rows, dtype=float).reshape(-1, len(COLUMNS))
        return {name: arr[:, i].copy() for i, name in enumerate(COLUMNS)}


def default_initial_state(params: GeneratorParams, load: LoadProfile) -> tuple[float, ...]:
    """Leader at its time-varying equilibrium at t = 0, follower at rest."""
    ell0 = load.evaluator()(0.0)[0]
    th13 = params.theta13_bar if ell0 == params.ell_bar else steady_theta13(params, ell0)
    theta1 = -(ell0 + params.d1_0 * params.omega0) / params.k
    return (theta1, params.omega0, th13, 0.0, 0.0)


def run(scenario: Scenario) -> Trajectory:
    if scenario.model_kind == "phase-damping":
        from .phase_damping import run_phase_damping

        return run_phase_damping(scenario)
    if scenario.model_kind == "high-order":
        from .high_order import run_high_order

        return run_high_order(scenario)
    return _run_damped(scenario)


def _presync_stepper(p: GeneratorParams, load, dist):
    """RK4 step for the pre-sync loop with leader and follower laws inlined.

    Equivalent to rk4_step over presync_field with the two control laws;
    fusing them roughly halves the cost of the hot loop.  The midpoint
    signals are shared by the two middle stages.
    """
    k, w0, m = p.k, p.omega0, p.inertia
    k1, x1, c1, c2, d10, d20 = p.k1, p.x1, p.c1, p.c2, p.d1_0, p.d2_0
    th_bar = p.theta13_bar
    off = -k * th_bar - float(p.b1(th_bar))
    dd = d20 - d10
    sin, cos = math.sin, math.cos

    def rates(t, th1, w1, th13, w2, ell, d):
        c = cos(th13)
        s = sin(th13)
        damp = c1 * c * c + c2 * s * s
        if damp <= DAMPING_FLOOR:
            raise DegenerateDamping(f"D1({th13!r}) = {damp!r}")
        u1 = -k * (th1 - w0 * t)
        u2 = -k * (th1 - th13 + d) + k * w0 * t + off + dd * w2
        return (u1 - ell - d10 * w1) / m, (ell - k1 * s - 2.0 * x1 * s * c) / damp, (u2 - d20 * w2) / m

    def step(t, y, h):
        h2 = 0.5 * h
        tm, te = t + h2, t + h
        l0, lm, l1 = load(t)[0], load(tm)[0], load(te)[0]
        d0, dm, d1 = dist(t), dist(tm), dist(te)
        a1, w1, c1_, v1 = y[0], y[1], y[2], y[4]
        b1, g1, e1 = rates(t, a1, w1, c1_, v1, l0, d0)
        a2, w2, c2_, v2 = a1 + h2 * w1, w1 + h2 * b1, c1_ + h2 * g1, v1 + h2 * e1
        b2, g2, e2 = rates(tm, a2, w2, c2_, v2, lm, dm)
        a3, w3, c3_, v3 = a1 + h2 * w2, w1 + h2 * b2, c1_ + h2 * g2, v1 + h2 * e2
        b3, g3, e3 = rates(tm, a3, w3, c3_, v3, lm, dm)
        a4, w4, c4_, v4 = a1 + h * w3, w1 + h * b3, c1_ + h * g3, v1 + h * e3
        b4, g4, e4 = rates(te, a4, w4, c4_, v4, l1, d1)
        h6 = h / 6.0
        return (
            a1 + h6 * (w1 + 2.0 * (w2 + w3) + w4),
            w1 + h6 * (b1 + 2.0 * (b2 + b3) + b4),
            c1_ + h6 * (g1 + 2.0 * (g2 + g3) + g4),
            y[3] + h6 * (v1 + 2.0 * (v2 + v3) + v4),
            v1 + h6 * (e1 + 2.0 * (e2 + e3) + e4),
        )

    return step


def _postsync_stepper(p: GeneratorParams, load, dist, agc: AgcParams):
    """RK4 step after connection; ``agc_on`` swaps the integral laws for the shared integrator."""
    k, w0, m = p.k, p.omega0, p.inertia
    k1, x1, k2, x2, c1, c2 = p.k1, p.x1, p.k2, p.x2, p.c1, p.c2
    d10, d20 = p.d1_0, p.d2_0
    th_bar = p.theta13_bar
    off = -k * th_bar - float(p.b1(th_bar))
    dd = d20 - d10
    al1, al2 = agc.alpha1, agc.alpha2
    dsum = d10 + d20
    sin, cos = math.sin, math.cos

    def rates(t, y, ell, d, agc_on):
        th1, w1, th2, w2, th3, z = y
        a = th1 - th3
        b = th2 - th3
        ca, sa, cb, sb = cos(a), sin(a), cos(b), sin(b)
        da = c1 * ca * ca + c2 * sa * sa
        db = c1 * cb * cb + c2 * sb * sb
        if da + db <= DAMPING_FLOOR:
            raise DegenerateDamping(f"D1 + D2 = {da + db!r}")
        ba = k1 * sa + 2.0 * x1 * sa * ca
        bb = k2 * sb + 2.0 * x2 * sb * cb
        w3 = (da * w1 + db * w2 + ba + bb - ell) / (da + db)
        if agc_on:
            u1, u2 = al1 * z, al2 * z
            zdot = w0 - (d10 * w1 + d20 * w2) / dsum
        else:
            u1 = -k * (th1 - w0 * t)
            u2 = -k * (th3 + d) + k * w0 * t + off + dd * w2
            zdot = 0.0
        p1 = ba + da * (w1 - w3)
        p2 = bb + db * (w2 - w3)
        return (w1, (u1 - p1 - d10 * w1) / m, w2, (u2 - p2 - d20 * w2) / m, w3, zdot)

    def step(t, y, h, agc_on):
        h2 = 0.5 * h
        tm, te = t + h2, t + h
        lm = load(tm)[0]
        dm = dist(tm)
        q1 = rates(t, y, load(t)[0], dist(t), agc_on)
        q2 = rates(tm, [a + h2 * b for a, b in zip(y, q1)], lm, dm, agc_on)
        q3 = rates(tm, [a + h2 * b for a, b in zip(y, q2)], lm, dm, agc_on)
        q4 = rates(te, [a + h * b for a, b in zip(y, q3)], load(te)[0], dist(te), agc_on)
        h6 = h / 6.0
        return tuple([a + h6 * (b1 + 2.0 * (b2 + b3) + b4) for a, b1, b2, b3, b4 in zip(y, q1, q2, q3, q4)])

    return step


def _run_damped(sc: Scenario) -> Trajectory:
    p = sc.params
    k, w0 = p.k, p.omega0
    load = sc.load.evaluator()
    dist = sc.disturbance.evaluator()
    post = postsync_field(p)
    rate13 = theta13_field(p)
    u2_law = follower_field(p)
    agc = sc.agc

    step_pre = _presync_stepper(p, load, dist)
    step_post = _postsync_stepper(p, load, dist, agc)

    def outputs(t, y, mode):
        """Row of COLUMNS for state y in the given mode."""
        ell = load(t)[0]
        d = dist(t)
        if mode == MODE_PRE:
            th1, w1, th13, th2, w2 = y
            th3 = th1 - th13
            w3 = w1 - rate13(th13, ell)
            u1 = -k * (th1 - w0 * t)
            u2 = u2_law(th3 + d, w2, t)
            p1, p2, z = ell, 0.0, 0.0
        else:
            th1, w1, th2, w2, th3, z = y
            th13 = th1 - th3
            if mode == MODE_AGC:
                _, u1, u2 = agc_control(w1, w2, z, agc, p)
            else:
                u1 = -k * (th1 - w0 * t)
                u2 = u2_law(th3 + d, w2, t)
            _, w3, p1, p2 = post(y, u1, u2, ell, 0.0)
        return (t, th1, w1, th3, w3, th2, w2, w2 - w3, ell, d, mode, u1, u2, p1, p2, z, th13,
                wrap_phase(th2 - th3 - d))

    dt = sc.dt
    n_steps = int(round(sc.horizon / dt))
    stride = max(1, int(round(sc.record_every / dt)))
    rec = _Recorder()
    events: list[Event] = []
    y = tuple(float(v) for v in (sc.initial if sc.initial is not None else default_initial_state(p, sc.load)))
    check_finite(0.0, y, "initial state")
    mode = MODE_PRE
    sup = Supervisor(sc.thresholds, sc.speed_mode, sc.give_up_after) if sc.allow_connection else None
    agc_time = None
    max_fdev = 0.0

    def try_connect(t, y, s_frac, y_prev, t_prev):
        """Switch to post-sync at the supervisor's event; returns (t_ev, y_post)."""
        ev = sup.event
        y_ev = y if t_prev is None else lerp(y_prev, y, s_frac)
        th1, w1, th13, th2, w2 = y_ev
        y_post = (th1, w1, th2, w2, th1 - th13, 0.0)
        events.append(Event(ev.time, "connection", (
            ("phase_err", ev.wrapped_phase_error), ("speed_err", ev.speed_error),
            ("true_phase_err", ev.true_phase_error),
        )))
        return ev.time, y_post

    def observe(t, y):
        """Supervisor check at a grid point; also tracks the frequency excursion."""
        nonlocal max_fdev
        ell = load(t)[0]
        w3 = y[1] - rate13(y[2], ell)
        if abs(w3 - w0) > max_fdev:
            max_fdev = abs(w3 - w0)
        if sup is None or not sup.active:
            return None
        return sup.observe(t, y[3], y[4], y[0] - y[2] + dist(t), w3, y[0] - y[2])

    def engage(t, y):
        nonlocal agc_time
        u1 = -k * (y[0] - w0 * t)
        u2 = u2_law(y[4] + dist(t), y[3], t)
        z0 = agc.initial_z(u1, u2)
        agc_time = t
        events.append(Event(t, "agc_engaged", (("z0", z0),)))
        return y[:5] + (z0,)

    rec.add(outputs(0.0, y, mode))
    if observe(0.0, y) is not None:
        _, y = try_connect(0.0, y, 0.0, None, None)
        mode = MODE_POST
        rec.add(outputs(0.0, y, mode))
    if mode == MODE_POST and agc.engage_time <= 0.0:
        y = engage(0.0, y)
        mode = MODE_AGC

    for n in range(n_steps):
        t0 = n * dt
        t1 = (n + 1) * dt
        # walk a cursor through [t0, t1], splitting the step at mode changes
        t_cur, y_cur = t0, y
        if mode == MODE_PRE:
            y_new = step_pre(t0, y, dt)
            s = observe(t1, y_new)
            if s is None:
                t_cur, y_cur = t1, y_new
            else:
                t_cur, y_cur = try_connect(t1, y_new, s, y, t0)
                mode = MODE_POST
                rec.add(outputs(t_cur, y_cur, mode))
                max_fdev = max(max_fdev, abs(post(y_cur, 0.0, 0.0, load(t_cur)[0])[1] - w0))
        if mode == MODE_POST and t_cur < t1:
            t_eng = max(agc.engage_time, sup.event.time)
            if t_eng < t1:
                if t_eng - t_cur > 1e-12:
                    y_cur = step_post(t_cur, y_cur, t_eng - t_cur, False)
                    t_cur = t_eng
                y_cur = engage(t_cur, y_cur)
                mode = MODE_AGC
            else:
                if t1 - t_cur > 1e-12:
                    y_cur = step_post(t_cur, y_cur, t1 - t_cur, False)
                t_cur = t1
        if mode == MODE_AGC and t1 - t_cur > 1e-12:
            y_cur = step_post(t_cur, y_cur, t1 - t_cur, True)
        y = y_cur
        if mode != MODE_PRE:
            fd = abs(post(y, 0.0, 0.0, load(t1)[0])[1] - w0)
            if fd > max_fdev:
                max_fdev = fd
        if (n + 1) % stride == 0 or n + 1 == n_steps:
            # NaN/inf propagate through RK4, so checking at record points is enough
            check_finite(t1, y, f"mode {mode}")
            rec.add(outputs(t1, y, mode))

    if mode == MODE_PRE:
        events.append(Event(n_steps * dt, "no_connection", (("allowed", bool(sc.allow_connection)),)))
    return Trajectory(rec.finish(), events, sup.event if sup is not None else None, agc_time, max_fdev)


@dataclass(frozen=True)
class SweepCell:
    k: float
    d: float
    steady_e: float
    bound: float
    connected: bool
    connection_time: float | None
    error: str = ""


@dataclass
class SweepResult:
    cells: list[SweepCell]
    k_values: tuple[float, ...]
    d_values: tuple[float, ...]

    def grid(self) -> np.ndarray:
        g = np.full((len(self.k_values), len(self.d_values)), np.nan)
        for i, kv in enumerate(self.k_values):
            for j, dv in enumerate(self.d_values):
                g[i, j] = self.cells[i * len(self.d_values) + j].steady_e
        return g

    def monotone_in_d(self) -> list[bool]:
        return [bool(np.all(np.diff(row) >= -1e-12)) for row in self.grid()]

    def monotone_in_k(self) -> list[bool]:
        return [bool(np.all(np.diff(col) >= -1e-12)) for col in self.grid().T]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("k,d,steady_e,bound,connected,connection_time,error\n")
        for c in self.cells:
            ct = "" if c.connection_time is None else _fmt(c.connection_time)
            buf.write(f"{_fmt(c.k)},{_fmt(c.d)},{_fmt(c.steady_e)},{_fmt(c.bound)},{int(c.connected)},{ct},{c.error}\n")
        md = ";".join(str(int(v)) for v in self.monotone_in_d())
        mk = ";".join(str(int(v)) for v in self.monotone_in_k())
        buf.write(f"#MONOTONE,d_by_k_row,{md}\n#MONOTONE,k_by_d_col,{mk}\n")
        return buf.getvalue()


def _sweep_cell(args):
    base, kv, dv, dth, dthd = args
    try:
        sc = base.with_(params=base.params.with_(k=kv), disturbance=Disturbance("constant", dv))
        traj = run(sc)
        bound = sync_error_bound(sc.params, abs(dv), dth, dthd)
        return SweepCell(kv, dv, traj.steady_speed_error(), bound, traj.connected, traj.connection_time)
    except GensyncError as exc:
        return SweepCell(kv, dv, math.nan, math.nan, False, None, f"{type(exc).__name__}: {exc}".replace(",", ";"))


def sweep(base: Scenario, k_values, d_values, workers: int | None = None) -> SweepResult:
    """One run per (k, d) cell with a constant disturbance d.  Failed cells are recorded, not raised."""
    k_values = tuple(float(v) for v in k_values)
    d_values = tuple(float(v) for v in d_values)
    if not k_values or not d_values:
        raise ConfigError("sweep grids must be nonempty", "sweep")
    dth, dthd = estimate_theta_bounds(base.params, base.load, base.horizon, base.dt)
    jobs = [(base, kv, dv, dth, dthd) for kv in k_values for dv in d_values]
    if workers is None:
        workers = min(len(jobs), os.cpu_count() or 1)
    if workers <= 1 or len(jobs) == 1:
        cells = [_sweep_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_sweep_cell, jobs))
    return SweepResult(cells, k_values, d_values)
