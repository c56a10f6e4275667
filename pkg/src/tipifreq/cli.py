"""Command-line front end.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime error.
Human-readable tables go to stdout; machine-readable output goes to files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from tipifreq import harness
from tipifreq.platform import TraceFormatError, replay_open
from tipifreq.policy import PolicyConfig, Variant
from tipifreq.simulator import ParametricModel, load_model, load_script

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class ConfigError(Exception):
    pass


def _load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _model(args):
    if getattr(args, "model", None):
        try:
            return load_model(args.model)
        except OSError as exc:
            raise ConfigError(f"cannot read {args.model}: {exc.strerror}") from None
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{args.model}: {exc}") from None
    return ParametricModel()


def _script(path: str, seed: Optional[int]):
    try:
        script = load_script(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return script if seed is None else script.with_seed(seed)


def _run_config(args, script) -> harness.RunConfig:
    model = _model(args)
    try:
        policy = PolicyConfig(
            t_inv_us=int(round(args.tinv_ms * 1000)),
            warmup_us=int(round(args.warmup_ms * 1000)),
            variant=Variant(args.variant),
            core_grid=model.core_grid,
            uncore_grid=model.uncore_grid,
        )
        baseline = harness.BaselineSpec.parse(args.baseline)
        cfg = harness.RunConfig(policy, model, script, baseline)
        harness.BaselinePolicy(baseline, model.core_grid, model.uncore_grid)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _print_slabs(report: harness.RunReport) -> None:
    print(f"{'slab':>5} {'tipi range':>13} {'occupancy':>9} {'freq':>4} {'cf_opt':>7} {'uf_opt':>7}")
    for s in report.slabs:
        cf = "-" if s.cf_opt_mhz is None else s.cf_opt_mhz
        uf = "-" if s.uf_opt_mhz is None else s.uf_opt_mhz
        print(f"{s.index:>5} {s.tipi_lo:.3f}-{s.tipi_hi:.3f} {s.occupancy_pct:8.1f}% "
              f"{'yes' if s.frequent else 'no':>4} {cf:>7} {uf:>7}")


def cmd_simulate(args) -> int:
    script = _script(args.script, args.seed)
    cfg = _run_config(args, script)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "trace.csv", "w", encoding="utf-8", newline="\n") as trace:
        report = harness.run(cfg, trace_sink=trace)
    base = harness.run_baseline(cfg)
    comparison = harness.compare(report, base)

    _write(out / "decisions.csv", report.decisions_text())
    _write(out / "report.json", harness.dumps(report.to_dict()))
    _write(out / "baseline_report.json", harness.dumps(base.to_dict("baseline_decisions.csv")))
    _write(out / "baseline_decisions.csv", base.decisions_text())
    _write(out / "comparison.json", harness.dumps(comparison.to_dict()))
    _write(out / "policy.json", harness.dumps(cfg.policy.to_dict()))
    _write(out / "state.json", harness.state_json(report.final_state))

    _print_slabs(report)
    print(f"energy {report.total_energy_j:.3f} J vs {base.total_energy_j:.3f} J default; "
          f"time {report.total_time_s:.3f} s vs {base.total_time_s:.3f} s")
    print(f"energy savings {comparison.energy_savings_pct:.2f}%  slowdown {comparison.slowdown_pct:.2f}%  "
          f"EDP savings {comparison.edp_savings_pct:.2f}%")
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        policy = PolicyConfig.from_dict(_load_json(args.policy_config))
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{args.policy_config}: {exc}") from None
    try:
        port = replay_open(args.trace, policy.core_grid, policy.uncore_grid)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.trace}: {exc.strerror}") from None
    try:
        report = harness.run_policy_on_port(port, policy)
    finally:
        port.close()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mismatches = port.mismatches()
    _write(out / "decisions.csv", report.decisions_text())
    _write(out / "state.json", harness.state_json(report.final_state))
    _write(out / "mismatches.json", harness.dumps({
        "count": len(mismatches),
        "rows": [
            {"interval": i, "recorded_cf_mhz": rec.cf_mhz, "recorded_uf_mhz": rec.uf_mhz,
             "cf_mhz": policy.core_grid.index_to_mhz(p.cf), "uf_mhz": policy.uncore_grid.index_to_mhz(p.uf)}
            for i, rec, p in mismatches
        ],
    }))
    print(f"replayed {len(report.decisions)} intervals, {len(mismatches)} mismatches")
    return EXIT_OK


def cmd_sweep(args) -> int:
    scripts = [_script(p, args.seed) for p in args.script]
    cfg = _run_config(args, scripts[0])
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad --values {args.values!r}") from None
    if not values or any(v <= 0 for v in values):
        raise ConfigError("--values must be positive milliseconds")
    rows = harness.sweep_tinv(cfg, values, scripts)
    print(f"{'T_inv':>8} {'energy savings':>15} {'slowdown':>9}")
    for r in rows:
        print(f"{r.t_inv_ms:>6g}ms {r.energy_savings_pct:14.2f}% {r.slowdown_pct:8.2f}%")
    if args.out:
        _write(Path(args.out), harness.dumps([r.__dict__ for r in rows]))
    return EXIT_OK


def cmd_motivate(args) -> int:
    model = _model(args)
    try:
        slabs = [int(s) for s in args.slabs.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad --slabs {args.slabs!r}") from None
    table = harness.motivational_sweep(model, slabs)
    width = 0.004
    header = " ".join(f"{s * width:.3f}".rjust(10) for s in slabs)
    print(f"JPI (nJ/instr), uncore at max        tipi: {header}")
    for mhz, row in zip(table.core_mhz, table.core_jpi):
        print(f"  core {mhz:>4} MHz{'':21}" + " ".join(f"{v * 1e9:10.4f}" for v in row))
    print("JPI (nJ/instr), core at max")
    for mhz, row in zip(table.uncore_mhz, table.uncore_jpi):
        print(f"  uncore {mhz:>4} MHz{'':19}" + " ".join(f"{v * 1e9:10.4f}" for v in row))
    if args.out:
        _write(Path(args.out), harness.dumps(table.to_dict()))
    return EXIT_OK


def cmd_inspect(args) -> int:
    snap = _load_json(args.state)
    if "nodes" not in snap:
        raise ConfigError(f"{args.state}: not a state snapshot")
    print(f"phase {snap.get('phase')}  intervals {snap.get('interval_count')}  nodes {len(snap['nodes'])}")
    if not snap["nodes"]:
        print("(no TIPI slabs discovered)")
        return EXIT_OK
    print(f"{'slab':>5} {'tipi range':>13} {'seen':>6}  {'cf lb..rb':>11} {'cf_opt':>6}  {'uf lb..rb':>11} {'uf_opt':>6}")
    for n in snap["nodes"]:
        cf, uf = n["cf"], n["uf"]
        print(f"{n['slab']:>5} {n['tipi_lo']:.3f}-{n['tipi_hi']:.3f} {n['occurrences']:>6}  "
              f"{cf['lb_mhz']:>5}..{cf['rb_mhz']:<5} {cf['opt_mhz'] or '-':>6}  "
              f"{uf['lb_mhz']:>5}..{uf['rb_mhz']:<5} {uf['opt_mhz'] or '-':>6}")
    return EXIT_OK


def _run_flags(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--model", help="machine model JSON (parametric coefficients or tabular surfaces)")
    src.add_argument("--default-model", action="store_true", help="use the built-in parametric machine (default)")
    p.add_argument("--variant", choices=[v.value for v in Variant], default="full")
    p.add_argument("--baseline", default="auto", help="auto, max, or a fixed uncore MHz for the default run")
    p.add_argument("--tinv-ms", type=float, default=20.0)
    p.add_argument("--warmup-ms", type=float, default=2000.0)
    p.add_argument("--seed", type=int, default=None, help="override the script's noise seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tipifreq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run engine and default baseline on a workload script")
    p.add_argument("--script", required=True)
    p.add_argument("--out", required=True)
    _run_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="feed a recorded trace through the engine")
    p.add_argument("--trace", required=True)
    p.add_argument("--policy-config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("sweep-tinv", help="energy savings and slowdown for several T_inv values")
    p.add_argument("--script", required=True, action="append", help="repeat for a geomean over scripts")
    p.add_argument("--values", default="10,20,40,60", help="comma-separated milliseconds")
    p.add_argument("--out", help="write rows as JSON")
    _run_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("motivate", help="JPI at min/mid/max core and uncore frequency per slab")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--model")
    src.add_argument("--default-model", action="store_true")
    p.add_argument("--slabs", default="0,6,16,28")
    p.add_argument("--out", help="write the matrix as JSON")
    p.set_defaults(func=cmd_motivate)

    p = sub.add_parser("inspect", help="render a state snapshot")
    p.add_argument("--state", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"tipifreq: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceFormatError as exc:
        print(f"tipifreq: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - surfaced as exit code 3
        print(f"tipifreq: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
