"""Command line: ``run``, ``sweep``, ``train`` and ``report``.

Output goes under ``--out`` (default ``$MIXTRAFFIC_OUT`` or ``./runs``).
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .agent import TrainConfig, save_checkpoint, train, write_curve
from .control import observation_width
from .engine import ScenarioConfig, Simulation, SweepCell, aggregate, make_policy, sweep
from .metrics import MetricsReport
from .plotting import plot_learning_curve, plot_shortage, plot_sweep
from .scenario import dump_scenario, load_scenario

log = logging.getLogger("mixtraffic")

OUT_ENV = "MIXTRAFFIC_OUT"


def _grid(text: str) -> tuple[int, int]:
    try:
        r, c = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 3x3, got {text!r}") from None
    if r < 1 or c < 1:
        raise argparse.ArgumentTypeError("grid dimensions must be >= 1")
    return r, c


def _rates(text: str) -> list[float]:
    """``a:b:step`` (inclusive) or a comma list."""
    if ":" in text:
        a, b, s = (float(x) for x in text.split(":"))
        if s <= 0:
            raise argparse.ArgumentTypeError("rate step must be > 0")
        n = int(round((b - a) / s))
        return [round(a + i * s, 10) for i in range(n + 1)]
    return [float(x) for x in text.split(",")]


def _seeds(text: str) -> list[int]:
    """A count ``N`` (seeds 0..N-1) or a comma list."""
    if "," in text:
        return [int(x) for x in text.split(",")]
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("need at least one seed")
    return list(range(n))


def _window(text: str) -> tuple[float, float]:
    a, b = (float(x) for x in text.split(":"))
    return a, b


def _weights(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _scenario_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scenario")
    g.add_argument("--scenario", help="YAML scenario file (replaces --grid)")
    g.add_argument("--grid", type=_grid, help="Manhattan grid RxC (default 3x3)")
    g.add_argument("--edge-length", type=float, help="grid edge length, m (default 100)")
    g.add_argument("--speed-limit", type=float, help="grid speed limit, m/s (default 13.9)")
    g.add_argument("--demand-rate", type=float, help="arrivals per boundary entry, veh/s (default 0.02)")
    g.add_argument("--horizon", type=float, help="simulated seconds (default 1000)")
    g.add_argument("--window", type=_window, help="measurement window t0:t1, s (default 500:1000)")
    g.add_argument("--dt", type=float, help="step length, s (default 1)")
    g.add_argument("--routing", dest="routing", action="store_true", default=None, help="enable rerouting (default on)")
    g.add_argument("--no-routing", dest="routing", action="store_false", help="disable rerouting")
    g.add_argument("--policy", choices=["heuristic", "random", "always-go", "checkpoint"], help="RV policy (default heuristic)")
    g.add_argument("--checkpoint", help="policy checkpoint JSON (implies --policy checkpoint)")
    g.add_argument("--theta-go", type=float, help="heuristic Go threshold on ego threat (default 0.2)")

    g = p.add_argument_group("reward")
    g.add_argument("--lambda-parity", type=float, help="queue-parity weight (default 0.2)")
    g.add_argument("--lambda-threat", type=float, help="threat weight (default 0.5)")
    g.add_argument("--conflict-penalty", type=float, help="penalty p_c on an overridden Go (default -1)")

    g = p.add_argument_group("conflict threat")
    g.add_argument("--zone-radius", type=float, help="control zone radius, m (default 30)")
    g.add_argument("--c0", type=int, help="entry cells counted per movement (default 3)")
    g.add_argument("--cell-weights", type=_weights, help="comma list of c0 cell weights (default uniform 1)")
    g.add_argument("--z-norm", type=float, help="threat normaliser Z (default 5)")

    g = p.add_argument_group("routing")
    g.add_argument("--rho", type=float, help="reroute activation probability (default 0.15)")
    g.add_argument("--delta", type=float, help="max detour ratio (default 1.20)")
    g.add_argument("--alpha", type=float, help="cost adjustment strength (default 1.0)")
    g.add_argument("--commitment-distance", type=float, help="no reroute closer than this to the junction, m (default 50)")
    g.add_argument("--cooldown", type=int, help="steps between reroutes of one RV (default 60)")
    g.add_argument("--p-target", type=float, help="target RV coverage (default RV rate - 0.05)")
    g.add_argument("--update-interval", type=int, help="coordinator broadcast period, steps (default 60)")
    g.add_argument("--history", type=int, help="coverage samples kept per edge, k (default 5)")
    g.add_argument("--prediction-horizon", type=float, help="trend extrapolation, steps (default one update interval)")

    g = p.add_argument_group("car following")
    g.add_argument("--a-max", type=float, help="IDM max acceleration, m/s^2 (default 2.6)")
    g.add_argument("--b", type=float, help="IDM comfortable deceleration, m/s^2 (default 4.5)")
    g.add_argument("--s0", type=float, help="IDM jam distance, m (default 2)")
    g.add_argument("--headway", type=float, help="IDM time headway T, s (default 1)")


def _config(args) -> ScenarioConfig:
    cfg = load_scenario(args.scenario) if args.scenario else ScenarioConfig()
    top = {
        "grid": args.grid,
        "edge_length": args.edge_length,
        "speed_limit": args.speed_limit,
        "demand_rate": args.demand_rate,
        "horizon": args.horizon,
        "window": args.window,
        "dt": args.dt,
        "routing": args.routing,
        "policy": args.policy,
        "checkpoint": args.checkpoint,
        "theta_go": args.theta_go,
    }
    changes = {k: v for k, v in top.items() if v is not None}
    if args.grid is not None:
        changes.update(network=None, demand=None)
    if args.checkpoint and not args.policy:
        changes["policy"] = "checkpoint"
    if args.horizon is not None and args.window is None:
        changes["window"] = (min(cfg.window[0], args.horizon / 2), args.horizon)
    cfg = replace(cfg, **changes)

    def sub(obj, mapping):
        changes = {k: v for k, v in mapping.items() if v is not None}
        return replace(obj, **changes) if changes else obj

    return replace(
        cfg,
        reward=sub(cfg.reward, {"lambda_parity": args.lambda_parity, "lambda_threat": args.lambda_threat, "conflict_penalty": args.conflict_penalty}),
        zone=sub(cfg.zone, {"radius": args.zone_radius, "c0": args.c0, "cell_weights": args.cell_weights, "z_norm": args.z_norm}),
        reroute=sub(cfg.reroute, {"rho": args.rho, "delta": args.delta, "commitment_distance": args.commitment_distance, "cooldown": args.cooldown}),
        coordinator=sub(cfg.coordinator, {"alpha": args.alpha, "p_target": args.p_target, "update_interval": args.update_interval, "window": args.history, "horizon": args.prediction_horizon}),
        idm=sub(cfg.idm, {"a_max": args.a_max, "b": args.b, "s0": args.s0, "T": args.headway}),
    )


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV, "runs"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_rows(path: Path, header, rows) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


# -- run ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.rv_rate is not None:
        cfg = replace(cfg, rv_rate=args.rv_rate)
    out = _out_dir(args)
    sim = Simulation(
        cfg,
        args.seed,
        record_trajectories=args.dump_trajectories,
        record_cost_maps=args.dump_cost_maps,
        record_rewards=args.dump_rewards,
    )
    report, trace = sim.run()
    _atomic_write(out / "metrics.json", report.to_json() + "\n")
    dump_scenario(cfg, out / "scenario.yaml")
    if args.dump_control:
        _write_rows(out / "control.csv", ["t", "intersection", "vehicle", "action", "overridden", "threat"],
                    ([r.t, r.intersection, r.vehicle, r.action, int(r.overridden), repr(r.threat)] for r in trace.control_log))
    if args.dump_routing:
        _write_rows(out / "routing.csv", ["t", "vehicle", "gated", "candidate_cost", "baseline_cost", "adopted"],
                    ([r.t, r.vehicle, int(r.gated), "" if r.candidate_cost is None else repr(r.candidate_cost), repr(r.baseline_cost), int(r.adopted)] for r in trace.routing_log))
        _write_rows(out / "shortage.csv", ["t", "generation", "total_shortage"], trace.shortage)
        if trace.shortage:
            plot_shortage({"routing on" if cfg.routing else "routing off": trace.shortage}, out / "shortage.png")
    if args.dump_trajectories:
        _write_rows(out / "trajectories.csv", ["t", "vehicle", "class", "link", "pos", "speed", "accel"], trace.trajectories)
    if args.dump_cost_maps:
        ids = [e.id for e in sim.net.edges]
        _write_rows(out / "cost_maps.csv", ["t", "generation", *ids], ([t, g, *map(repr, c)] for t, g, c in trace.cost_maps))
    if args.dump_rewards:
        _write_rows(out / "rewards.csv", ["t", "intersection", "vehicle", "action", "r_ego", "r_parity", "r_threat", "conflict", "total"],
                    ([t, j, v, a, rb.r_ego, rb.r_parity, rb.r_threat, int(rb.conflict), rb.total] for t, j, v, a, rb in trace.reward_log))
    print(report.to_json())
    return 0


# -- sweep / report ----------------------------------------------------------------

CELL_HEADER = ["rv_rate", "seed", "error", *MetricsReport.metric_names(), "t0", "t1"]


def _cell_row(c: SweepCell) -> list:
    if c.report is None:
        return [c.rv_rate, c.seed, c.error, *[""] * len(MetricsReport.metric_names()), "", ""]
    r = c.report
    vals = ["" if getattr(r, n) is None else repr(getattr(r, n)) for n in MetricsReport.metric_names()]
    return [c.rv_rate, c.seed, "", *vals, r.window[0], r.window[1]]


def read_cells(path: str | Path) -> list[SweepCell]:
    cells = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["error"]:
                cells.append(SweepCell(float(row["rv_rate"]), int(row["seed"]), None, row["error"]))
                continue
            d = {n: (None if row[n] == "" else float(row[n])) for n in MetricsReport.metric_names()}
            d["window"] = (float(row["t0"]), float(row["t1"]))
            cells.append(SweepCell(float(row["rv_rate"]), int(row["seed"]), MetricsReport.from_dict(d)))
    return cells


def write_table(path: Path, table: dict) -> None:
    """Wide layout: one row per (metric, statistic), one column per RV rate."""
    rates = sorted(table)
    header = ["metric", "stat", *[f"{round(100 * r)}%" for r in rates]]
    rows = []
    for name in MetricsReport.metric_names():
        for i, stat in enumerate(("mean", "std", "n")):
            vals = []
            for r in rates:
                v = table[r][name][i]
                vals.append("" if v is None else repr(v))
            rows.append([name, stat, *vals])
    rows.append(["failures", "count", *[table[r]["failures"] for r in rates]])
    _write_rows(path, header, rows)


def _finish_table(cells: list[SweepCell], out: Path, plots: bool) -> dict:
    table = aggregate(cells)
    write_table(out / "aggregate.csv", table)
    if plots:
        plot_sweep(table, out)
    return table


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    policy = make_policy(cfg)
    cells_path = out / "cells.csv"
    done: list[SweepCell] = []

    def on_cell(c: SweepCell):
        done.append(c)
        _write_rows(cells_path, CELL_HEADER, [_cell_row(x) for x in done])
        status = "ok" if c.report is not None else f"FAILED ({c.error})"
        log.info("rv_rate=%.2f seed=%d %s", c.rv_rate, c.seed, status)

    cells = sweep(cfg, args.rv_rates, args.seeds, policy=policy, on_cell=on_cell)
    dump_scenario(cfg, out / "scenario.yaml")
    _finish_table(cells, out, not args.no_plots)
    print(f"wrote {cells_path} and {out / 'aggregate.csv'}")
    return 0 if all(c.report is not None for c in cells) else 1


def cmd_report(args) -> int:
    out = _out_dir(args)
    cells = []
    for p in args.cells:
        cells.extend(read_cells(p))
    if not cells:
        print("no sweep cells found", file=sys.stderr)
        return 2
    _finish_table(cells, out, not args.no_plots)
    print(f"wrote {out / 'aggregate.csv'}")
    return 0


# -- train -------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.rv_rate is not None:
        cfg = replace(cfg, rv_rate=args.rv_rate)
    cfg = replace(cfg, policy="heuristic", checkpoint=None)
    tcfg = TrainConfig(
        gamma=args.gamma, lr=args.lr, iterations=args.iterations, batch_size=args.batch_size,
        updates_per_iteration=args.updates, target_sync=args.target_sync, seed=args.seed,
    )
    out = _out_dir(args)
    net = cfg.build_network()

    def env(seed, policy, sink):
        Simulation(cfg, seed, policy=policy, sink=sink, net=net).run()

    result = train(env, tcfg, observation_width(cfg.zone) + 5)
    save_checkpoint(out / "checkpoint.json", result.q, tcfg, {"scenario": cfg.to_dict()})
    write_curve(out / "learning_curve.csv", result.curve, result.losses)
    if not args.no_plots:
        plot_learning_curve(result.curve, out / "learning_curve.png", result.losses)
    tail = result.curve[-10:]
    print(f"wrote {out / 'checkpoint.json'}; mean return over last {len(tail)} iterations: {np.mean(tail):.4f}")
    return 0


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixtraffic", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sp = p.add_subparsers(dest="command", required=True)

    r = sp.add_parser("run", help="simulate one scenario and write metrics JSON")
    _scenario_args(r)
    r.add_argument("--rv-rate", type=float, help="RV penetration rate (default 0.6)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out")
    r.add_argument("--dump-control", action="store_true", help="write control.csv")
    r.add_argument("--dump-routing", action="store_true", help="write routing.csv, shortage.csv and shortage.png")
    r.add_argument("--dump-trajectories", action="store_true", help="write per-step trajectories.csv")
    r.add_argument("--dump-cost-maps", action="store_true", help="write broadcast cost_maps.csv")
    r.add_argument("--dump-rewards", action="store_true", help="write per-decision rewards.csv")
    r.set_defaults(func=cmd_run)

    s = sp.add_parser("sweep", help="RV-rate x seed cross product with aggregate table and figures")
    _scenario_args(s)
    s.add_argument("--rv-rates", type=_rates, default=_rates("0.4:0.9:0.1"), help="a:b:step or comma list (default 0.4:0.9:0.1)")
    s.add_argument("--seeds", type=_seeds, default=list(range(10)), help="count N or comma list (default 10)")
    s.add_argument("--out")
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_sweep)

    t = sp.add_parser("train", help="train the shared linear Q policy; write checkpoint and learning curve")
    _scenario_args(t)
    t.add_argument("--rv-rate", type=float, help="RV penetration rate (default 0.6)")
    t.add_argument("--iterations", type=int, default=1000, help="training episodes (default 1000)")
    t.add_argument("--lr", type=float, default=5e-4, help="Adam learning rate (default 5e-4)")
    t.add_argument("--gamma", type=float, default=0.99, help="discount (default 0.99)")
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--updates", type=int, default=100, help="minibatch updates per iteration (default 100)")
    t.add_argument("--target-sync", type=int, default=2, help="iterations between target syncs (default 2)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out")
    t.add_argument("--no-plots", action="store_true")
    t.set_defaults(func=cmd_train)

    rep = sp.add_parser("report", help="re-aggregate sweep cells.csv files into a table and figures")
    rep.add_argument("cells", nargs="+")
    rep.add_argument("--out")
    rep.add_argument("--no-plots", action="store_true")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"mixtraffic: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
