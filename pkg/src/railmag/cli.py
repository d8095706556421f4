"""Command-line entry point: ``railmag <command> [options]``.

Exit codes: 0 success, 2 invalid input or configuration, 3 filter collapse.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
from pathlib import Path

import numba
import numpy as np
import scipy

from railmag import __version__
from railmag.config import RunConfig
from railmag.errors import ConfigError, DomainError, FilterCollapse, ParseError
from railmag.evaluation import (
    coldstart_summary,
    convergence_report,
    error_over_time,
    min_length_study,
    random_start_runs,
)
from railmag.hybrid import HybridConfig, LocalisationEvent, align_top3, localise
from railmag.pf import PfConfig, init_local, init_uniform, measurement_epochs, step
from railmag.signal import load_signal, save_signal
from railmag.spacify import SpaceSignal, integrate_positions, invert_time, spacify
from railmag.synth import RunSpec, gen_map, load_truth, save_truth, simulate_run
from railmag.track import TrackMap, arclengths_to_geo, load_map, save_map

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_COLLAPSE = 3

ESTIMATE_HEADER = "t_s,x_m,v_mps,var_m2,lat_deg,lon_deg\n"
EVENT_HEADER = "t_s,kind,detail\n"


def derive_seed(seed: int, *tags) -> int:
    return int(np.random.SeedSequence((int(seed), *tags)).generate_state(1)[0])


def set_threads(n: int | None) -> int:
    """Cap numba's worker pool.  Results never depend on this value."""
    if n is None:
        return numba.config.NUMBA_NUM_THREADS
    if n < 1:
        raise ConfigError("--threads must be at least 1")
    n = min(n, numba.config.NUMBA_NUM_THREADS)
    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER = "workqueue"
    numba.set_num_threads(n)
    return n


def _versions() -> dict:
    return {
        "railmag": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def write_meta(out_dir: Path, command: str, cfg: RunConfig, **extra):
    meta = {"command": command, "seed": cfg["seed"], "config_sha256": cfg.digest(), "versions": _versions()}
    meta.update(extra)
    (out_dir / f"{command}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out_dir / f"{command}.config.txt").write_text(cfg.dump(), encoding="utf-8")


def write_estimates(path: Path, track: TrackMap, t, estimates):
    x = np.array([e.x_hat for e in estimates], dtype=np.float64)
    lat, lon = arclengths_to_geo(track, np.clip(x, 0.0, track.length)) if len(x) else (x, x)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(ESTIMATE_HEADER)
        for i, e in enumerate(estimates):
            fh.write(f"{t[i]:.6f},{e.x_hat:.6f},{e.v_hat:.6f},{e.var_x:.6g},{lat[i]:.9f},{lon[i]:.9f}\n")


def write_events(path: Path, events):
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(EVENT_HEADER)
        for ev in events:
            fh.write(f"{ev.t:.6f},{ev.kind},{ev.format_detail()}\n")


def _check_dx(cfg: RunConfig, track: TrackMap):
    if "dx" in cfg.explicit and not math.isclose(cfg["dx"], track.dx, rel_tol=1e-9):
        raise ConfigError(f"configured dx {cfg['dx']} does not match the map's dx {track.dx}")


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg: RunConfig) -> int:
    out = args.out_dir
    if args.map:
        track = load_map(args.map)
        _check_dx(cfg, track)
    else:
        track = gen_map(cfg.synth_spec())
        save_map(track, out / "map.csv")
    run = cfg.run_spec(seed=derive_seed(cfg["seed"], 1))
    sig, truth = simulate_run(track, run)
    save_signal(sig, out / "signal.csv")
    save_truth(truth, out / "truth.csv")
    write_meta(out, "simulate", cfg, samples=len(sig), map_length_m=track.length)
    print(f"wrote {len(sig)} samples over {truth.x[-1] - truth.x[0]:.1f} m to {out}")
    return EXIT_OK


def cmd_map_build(args, cfg: RunConfig) -> int:
    sig = load_signal(args.signal)
    truth = load_truth(args.truth)
    if sig.v is None:
        raise DomainError(f"{args.signal}: map building needs the v_mps velocity channel")
    if truth.lat is None or truth.lon is None:
        raise ParseError(f"{args.truth}: map building needs lat_deg/lon_deg columns")
    # anchor the integrated positions so the first sample sits at the truth
    x0 = float(truth.position_at(sig.t0)) - sig.dt * float(sig.v[0])
    space = spacify(sig, cfg["dx"], x0=x0)
    # grid arclength -> time -> geo via the truth
    f = invert_time(integrate_positions(sig.v, sig.dt, x0), sig.t)
    lo, hi = f.domain
    tq = f(np.clip(space.x, lo, hi))
    lat = np.interp(tq, truth.t, truth.lat)
    lon = np.interp(tq, truth.t, truth.lon)
    s = space.dx * np.arange(len(space))
    track = TrackMap(s=s, lat=lat, lon=lon, b=space.b)
    out = Path(args.out)
    save_map(track, out)
    write_meta(out.parent, "map-build", cfg, s_offset_m=space.x0, samples=len(track))
    print(f"wrote {len(track)} samples ({track.length:.2f} m, offset {space.x0:.3f} m) to {out}")
    return EXIT_OK


def _run_filter(track, sig, state, cfg: RunConfig):
    pf = cfg.pf_config()
    epochs = measurement_epochs(sig, pf.dt)
    ts, ests, events = [], [], []
    for k in range(len(epochs)):
        try:
            state, est = step(state, track, epochs.z[k], pf)
        except FilterCollapse as exc:
            events.append(LocalisationEvent(float(epochs.t[k]), "collapse", {"reason": str(exc)}))
            return ts, ests, events, exc
        ts.append(float(epochs.t[k]))
        ests.append(est)
    return ts, ests, events, None


def cmd_localise(args, cfg: RunConfig) -> int:
    track = load_map(args.map)
    _check_dx(cfg, track)
    sig = load_signal(args.signal)
    truth = load_truth(args.truth) if args.truth else None
    out = args.out_dir
    seed = derive_seed(cfg["seed"], 2)
    collapse = None
    if args.mode == "hybrid":
        res = localise(track, sig, cfg.hybrid_config(), seed=seed)
        ts, ests, events = res.t, res.estimates, res.events
    else:
        if args.mode == "warm":
            x0 = cfg["x0"]
            if x0 is None:
                if truth is None:
                    raise ConfigError("warm mode needs x0 in the configuration or --truth")
                x0 = float(truth.position_at(sig.t0))
            v0 = cfg["v0"]
            if v0 is None:
                if sig.v is None:
                    raise ConfigError("warm mode needs v0 or a velocity channel")
                v0 = float(sig.v[0])
            state = init_local(
                x0, cfg["init_spread"], v0, cfg["v_spread"], cfg["n_particles"], seed, bounds=(0.0, track.length)
            )
        else:
            state = init_uniform(track, cfg["n_particles"], (cfg["v_prior_min"], cfg["v_prior_max"]), seed)
        ts, ests, events, collapse = _run_filter(track, sig, state, cfg)
        events.insert(0, LocalisationEvent(sig.t0, "start", {"mode": args.mode, "particles": cfg["n_particles"]}))
    write_estimates(out / "estimates.csv", track, ts, ests)
    write_events(out / "events.log", events)
    extra = {"mode": args.mode, "estimates": len(ests)}
    if truth is not None and ests:
        series = error_over_time(ts, [e.x_hat for e in ests], truth, mode="geo", track=track)
        rep = convergence_report(series, truth, cfg["threshold"], t_start=sig.t0)
        extra.update(
            mean_error_m=float(series.err.mean()),
            max_error_m=float(series.err.max()),
            converged=rep.converged,
            t_first_s=rep.t_first,
            d_first_m=rep.d_first,
            excursions=rep.excursions,
        )
        print(
            f"mean error {series.err.mean():.2f} m, max {series.err.max():.2f} m, "
            f"converged={rep.converged} t_first={rep.t_first} d_first={rep.d_first}"
        )
    write_meta(out, "localise", cfg, **extra)
    print(f"wrote {len(ests)} estimates and {len(events)} events to {out}")
    if collapse is not None:
        print(f"error: filter collapsed: {collapse}", file=sys.stderr)
        return EXIT_COLLAPSE
    return EXIT_OK


def _parse_lengths(text: str) -> list[float]:
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ConfigError("--lengths expects start:stop:step")
        a, b, s = parts
        n = int(math.floor((b - a) / s + 1e-9)) + 1
        return [a + i * s for i in range(n)]
    return [float(p) for p in text.split(",") if p.strip()]


def cmd_coldstart_study(args, cfg: RunConfig) -> int:
    out = args.out_dir
    if args.map:
        track = load_map(args.map)
        _check_dx(cfg, track)
    else:
        track = gen_map(cfg.synth_spec())
    lengths = _parse_lengths(args.lengths)
    ks = sorted({int(k) for k in args.k.split(",")})
    results = []
    starts = []
    runs = random_start_runs(
        track,
        args.starts,
        derive_seed(cfg["seed"], 3),
        max_length=max(lengths),
        sensor_rate=cfg["sensor_rate"],
        noise_sigma=cfg["noise_sigma"],
    )
    for start, sig, truth in runs:
        res = min_length_study(
            track, sig, truth, k_values=ks, lengths=lengths, metric=args.metric, threshold=cfg["threshold"]
        )
        results.append(res)
        starts.append(start)

    def fmt(v):
        return "not_found" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:g}"

    with (out / "table1.csv").open("w", encoding="utf-8") as fh:
        fh.write("k,L_m\n")
        for k in ks:
            fh.write(f"{k},{fmt(results[0].L[k])}\n")
    with (out / "table2.csv").open("w", encoding="utf-8") as fh:
        fh.write("k,mean_m,std_m,min_m,max_m,not_found\n")
        for k, mean, sd, lo, hi, nf in coldstart_summary(results, ks):
            fh.write(f"{k},{fmt(mean)},{fmt(sd)},{fmt(lo)},{fmt(hi)},{nf}\n")
    with (out / "starts.csv").open("w", encoding="utf-8") as fh:
        fh.write("start_m," + ",".join(f"L{k}_m" for k in ks) + "\n")
        for s, r in zip(starts, results):
            fh.write(f"{s:.3f}," + ",".join(fmt(r.L[k]) for k in ks) + "\n")
    write_meta(out, "coldstart-study", cfg, starts=args.starts, metric=args.metric, k=ks)
    print((out / "table2.csv").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def bench_pf(track: TrackMap, n_particles: int, seconds: float, seed: int, sensor_rate: float = 2000.0):
    """Real-time factor of the filter (data seconds per wall second),
    including measurement averaging."""
    v = 25.0
    start = 0.5 * (track.length - v * seconds)
    if start < 0:
        raise DomainError("map too short for the benchmark run")
    sig, truth = simulate_run(track, RunSpec(((seconds, v),), sensor_rate=sensor_rate, start_s=start, seed=seed))
    cfg = PfConfig()
    state = init_local(start, 50.0, v, 1.0, n_particles, seed, bounds=(0.0, track.length))
    # compile outside the timed region
    step(init_local(start, 1.0, v, 0.0, 8, seed), track, sig.b[0], cfg)
    t0 = time.perf_counter()
    epochs = measurement_epochs(sig, cfg.dt)
    for k in range(len(epochs)):
        state, _ = step(state, track, epochs.z[k], cfg)
    wall = time.perf_counter() - t0
    return len(epochs) * cfg.dt / wall, wall / len(epochs)


def bench_dtw(track: TrackMap, query_m: float, seed: int):
    """Wall time of one top-3 DTW search of a ``query_m`` meter window."""
    m = int(round(query_m / track.dx)) + 1
    rng = np.random.Generator(np.random.Philox(seed))
    i0 = int(rng.integers(0, len(track) - m))
    query = SpaceSignal(track.dx, 0.0, track.b[i0:i0 + m] + rng.normal(0.0, 0.01 * np.std(track.b), (m, 3)))
    cfg = HybridConfig(align_metric="dtw")
    small = SpaceSignal(track.dx, 0.0, track.b[: 4 * m])
    align_top3(TrackMap(track.s[: 4 * m], track.lat[: 4 * m], track.lon[: 4 * m], small.b), query, cfg)
    t0 = time.perf_counter()
    hits = align_top3(track, query, cfg)
    return time.perf_counter() - t0, i0, hits


def cmd_bench(args, cfg: RunConfig) -> int:
    track = load_map(args.map) if args.map else gen_map(cfg.synth_spec())
    seed = derive_seed(cfg["seed"], 4)
    rtf, per_step = bench_pf(track, args.particles, args.seconds, seed)
    _, per_step_2 = bench_pf(track, 2 * args.particles, args.seconds / 2, seed)
    dtw_s, i0, hits = bench_dtw(track, args.query, seed)
    report = {
        "machine": {
            "platform": platform.platform(),
            "processor": platform.processor() or platform.machine(),
            "cpu_count": os.cpu_count(),
        },
        "versions": _versions(),
        "pf": {
            "particles": args.particles,
            "update_hz": 10,
            "input_hz": 2000,
            "real_time_factor": rtf,
            "step_ms": per_step * 1e3,
            "step_ms_2n": per_step_2 * 1e3,
            "scaling_2n": per_step_2 / per_step,
        },
        "dtw": {
            "query_m": args.query,
            "map_m": track.length,
            "wall_s": dtw_s,
            "planted_index": i0,
            "found_index": hits[0].index if hits else None,
        },
    }
    print(json.dumps(report, indent=2))
    (args.out_dir / "bench.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key")
    common.add_argument("--seed", type=int, help="master seed (same as --set seed=N)")
    common.add_argument("--threads", type=int, help="cap on worker threads; results do not depend on it")
    common.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")
    common.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")

    p = argparse.ArgumentParser(prog="railmag", description="Magnetic-fingerprint rail localisation.")
    p.add_argument("--version", action="version", version=f"railmag {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate a synthetic map and sensor run")
    s.add_argument("--map", type=Path, help="replay over an existing map instead of generating one")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("map-build", parents=[common], help="build a map from a recorded run")
    s.add_argument("--signal", type=Path, required=True)
    s.add_argument("--truth", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_map_build)

    s = sub.add_parser("localise", parents=[common], help="replay a run through a localiser")
    s.add_argument("--map", type=Path, required=True)
    s.add_argument("--signal", type=Path, required=True)
    s.add_argument("--truth", type=Path, help="ground truth for error reporting and warm-start x0")
    s.add_argument("--mode", choices=("warm", "cold", "hybrid"), default="hybrid")
    s.set_defaults(func=cmd_localise)

    s = sub.add_parser("coldstart-study", parents=[common], help="minimum query length L(k) study")
    s.add_argument("--map", type=Path, help="map to study (default: generate from the configuration)")
    s.add_argument("--starts", type=int, default=14)
    s.add_argument("--lengths", default="1:200:1", help="start:stop:step or a comma list, meters")
    s.add_argument("--k", default="1,2,3,4,5")
    s.add_argument("--metric", choices=("euclid", "dtw"), default="euclid")
    s.set_defaults(func=cmd_coldstart_study)

    s = sub.add_parser("bench", parents=[common], help="throughput benchmarks")
    s.add_argument("--map", type=Path, help="map to benchmark on (default: generate from the configuration)")
    s.add_argument("--particles", type=int, default=100000)
    s.add_argument("--seconds", type=float, default=30.0, help="simulated seconds replayed by the filter")
    s.add_argument("--query", type=float, default=100.0, help="DTW query length, meters")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = RunConfig.load(args.config, overrides)
        if args.print_config:
            sys.stdout.write(cfg.dump())
            return EXIT_OK
        set_threads(args.threads)
        args.out_dir.mkdir(parents=True, exist_ok=True)
        return args.func(args, cfg)
    except FilterCollapse as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COLLAPSE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
