"""Command-line entry point: ``sicert <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .geometry import SetDefinitionError, build_graph, ideal_witness_optimum, load_set
from .noisefit import fit_delta_theta, fit_noise
from .opticsim import ExperimentRecord, NoiseChannelParams, simulate_experiment
from .pipeline import PipelineError, RunConfig, dumps, run_pipeline, sweep, sweep_csv


def _noise(text: str) -> NoiseChannelParams:
    try:
        parts = [float(x) for x in text.split(",")]
        return NoiseChannelParams(*parts)
    except (TypeError, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"--noise expects p_ba,p_bb,p_pa: {exc}") from exc


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--set", dest="set_name", help="built-in set name or JSON path")
    p.add_argument("--shots", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--delta-theta", type=float, help="waveplate offset in degrees")
    p.add_argument("--noise", type=_noise, help="p_ba,p_bb,p_pa")
    p.add_argument("--exact", action="store_true", default=None, help="analytic probabilities, no sampling")
    p.add_argument("--out", help="output file (stdout when omitted)")
    p.add_argument("--record", help="ExperimentRecord JSON (switches to ingest mode)")
    p.add_argument("--bootstrap", type=int)
    p.add_argument("--bootstrap-sdp", type=int)
    p.add_argument("--no-noise-fit", action="store_true", default=None)
    p.add_argument("--workers", type=int)


def config_from_args(args) -> RunConfig:
    data = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg = RunConfig.from_dict(data)
    over = {
        "set": args.set_name, "shots": args.shots, "seed": args.seed, "delta_theta": args.delta_theta,
        "noise": args.noise, "exact": args.exact, "out": args.out, "bootstrap": args.bootstrap,
        "bootstrap_sdp": args.bootstrap_sdp, "workers": args.workers,
    }
    over = {k: v for k, v in over.items() if v is not None}
    if args.record:
        over.update(mode="ingest", record=args.record)
    if args.no_noise_fit:
        over["use_noise_fit"] = False
    return replace(cfg, **over)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _record(cfg: RunConfig):
    s = load_set(cfg.set)
    g = build_graph(s)
    if cfg.mode == "ingest":
        rec = ExperimentRecord.from_dict(json.loads(Path(cfg.record).read_text()), s, g)
    else:
        rec = simulate_experiment(s, g, cfg.noise, cfg.delta_theta, cfg.effective_shots, cfg.seed)
    return s, g, rec


def cmd_sets_show(args) -> int:
    s = load_set(args.name)
    g = build_graph(s)
    info = s.to_dict()
    info.update(
        n_edges=len(g.edges),
        contexts=[[s.label(k) for k in c] for c in g.contexts],
        measurement_bases=[[s.label(k) for k in b] for b in g.measurement_bases],
        w_opt=str(ideal_witness_optimum(s)),
    )
    sys.stdout.write(dumps(info))
    return 0


def cmd_simulate(args) -> int:
    cfg = config_from_args(args)
    s, _, rec = _record(cfg)
    _emit(dumps(rec.to_dict(s)), cfg.out)
    return 0


def cmd_certify(args) -> int:
    cfg = config_from_args(args)
    out = cfg.out
    report = run_pipeline(replace(cfg, out=None))
    _emit(report.to_json(), out)
    logging.getLogger(__name__).info("verdict: %s", report.verdict)
    return 0


def cmd_fit_noise(args) -> int:
    cfg = config_from_args(args)
    s, g, rec = _record(cfg)
    _emit(dumps(fit_noise(rec.eps, s, g, seed=cfg.seed).to_dict(s)), cfg.out)
    return 0


def cmd_fit_angle(args) -> int:
    cfg = config_from_args(args)
    s, g, rec = _record(cfg)
    eps = fit_noise(rec.eps, s, g, seed=cfg.seed).eps_prime if cfg.use_noise_fit else rec.eps
    _emit(dumps(fit_delta_theta(eps, s, g).to_dict()), cfg.out)
    return 0


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    if not args.grid:
        raise SystemExit("sweep: --grid needs at least one delta_theta value")
    rows = sweep(replace(cfg, out=None), args.grid)
    _emit(sweep_csv(rows), cfg.out)
    return 0 if all(r.error is None for r in rows) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sicert", description="Certify projective measurements against SI-C sets.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sets = sub.add_parser("sets", help="inspect measurement sets")
    sets_sub = sets.add_subparsers(dest="sets_command", required=True)
    show = sets_sub.add_parser("show")
    show.add_argument("name")
    show.set_defaults(func=cmd_sets_show)

    for name, func, help_ in (
        ("simulate", cmd_simulate, "write a simulated ExperimentRecord"),
        ("certify", cmd_certify, "run the full pipeline and write a report"),
        ("fit-noise", cmd_fit_noise, "fit noise channels and realized states"),
        ("fit-angle", cmd_fit_angle, "fit a single waveplate offset"),
        ("sweep", cmd_sweep, "certify over a grid of waveplate offsets, CSV output"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        if name == "sweep":
            p.add_argument("--grid", type=float, nargs="+", required=True, help="delta_theta values in degrees")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (PipelineError, SetDefinitionError, ValueError, OSError) as exc:
        sys.stderr.write(f"sicert: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
