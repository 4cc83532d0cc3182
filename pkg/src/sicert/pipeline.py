"""End-to-end certification: simulate or ingest, fit, witness, SDP threshold, report."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .certsdp import SdpEngine, SdpSettings, eps_prime_matrix, threshold_search
from .geometry import MeasurementSet, OrthogonalityGraph, build_graph, ideal_witness_optimum, load_set
from .noisefit import fit_delta_theta, fit_noise
from .opticsim import ExperimentRecord, NoiseChannelParams, estimates_from_counts, simulate_experiment
from .witness import WitnessInputs, WitnessValue, witness_value, worst_case_bound

log = logging.getLogger(__name__)

CSV_HEADER = ["delta_theta_deg", "w_worst", "w_worst_sigma", "w_sdp", "w_sdp_sigma", "verdict"]
# report keys that legitimately differ between identical runs
TIMING_KEYS = ("timing",)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class RunConfig:
    set: str = "peres24"
    mode: str = "simulate"  # or "ingest"
    record: str | None = None  # ExperimentRecord JSON for ingest mode
    noise: NoiseChannelParams = field(default_factory=NoiseChannelParams)
    delta_theta: float = 0.0
    shots: int = 30000
    exact: bool = False
    seed: int = 0
    bootstrap: int = 200
    bootstrap_sdp: int = 20
    tau_threshold: float = 1e-4
    eps_precision: float = 1e-3
    bisection_tol: float = 1e-3
    use_noise_fit: bool = True
    fit_angle: bool = True
    compute_nu: bool = False
    out: str | None = None
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.noise, dict):
            self.noise = NoiseChannelParams(**self.noise)
        elif isinstance(self.noise, (list, tuple)):
            self.noise = NoiseChannelParams(*self.noise)
        if self.mode not in ("simulate", "ingest"):
            raise ValueError("mode must be 'simulate' or 'ingest'")
        if self.mode == "ingest" and not self.record:
            raise ValueError("ingest mode needs a record path")
        if self.bootstrap < 1:
            raise ValueError("bootstrap resamples must be at least 1")
        if self.bootstrap_sdp < 0:
            raise ValueError("bootstrap_sdp must be nonnegative")
        if self.shots < 0:
            raise ValueError("shots must be nonnegative")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        for name in ("tau_threshold", "eps_precision", "bisection_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def effective_shots(self) -> int:
        return 0 if self.exact else self.shots

    def sdp_settings(self) -> SdpSettings:
        return SdpSettings(
            tau_threshold=self.tau_threshold,
            eps_precision=self.eps_precision,
            bisection_tol=self.bisection_tol,
            compute_nu=self.compute_nu,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise"] = self.noise.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)


@dataclass
class CertificationReport:
    config: dict
    record: dict
    w_exp: dict
    w_worst: dict
    w_sdp: dict
    noise_fit: dict | None
    angle_fit: dict | None
    gram_bounds: dict
    tau: dict
    nu: dict
    checks: dict
    bootstrap: dict
    verdict: str
    timing: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.verdict == "certified"

    def recomputed_verdict(self) -> str:
        ok = self.checks["orthogonality_ok"] and self.checks["completeness_ok"]
        return "certified" if ok and self.w_worst["value"] > self.w_sdp["value"] else "not certified"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, include_timing: bool = True) -> str:
        d = self.to_dict()
        if not include_timing:
            for k in TIMING_KEYS:
                d.pop(k, None)
        return dumps(d)

    @classmethod
    def from_json(cls, text: str) -> "CertificationReport":
        return cls(**json.loads(text))


# ---------------------------------------------------------------- serialization


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def dumps(obj, indent: int = 2) -> str:
    """JSON with every float written to 17 significant digits, keys in insertion order."""

    def enc(o, level: int) -> str:
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, bool) or o is None:
            return json.dumps(o)
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            return _fmt_float(float(o))
        if isinstance(o, str):
            return json.dumps(o)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(str(k))}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, (list, tuple, np.ndarray)):
            if len(o) == 0:
                return "[]"
            if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in o):
                return "[" + ", ".join(enc(v, level + 1) for v in o) + "]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in o) + "\n" + end + "]"
        raise TypeError(f"cannot serialize {type(o).__name__}")

    return enc(obj, 0) + "\n"


# ---------------------------------------------------------------- stages


def _stage(name: str, timing: dict, fn, *args, **kwargs):
    t0 = time.perf_counter()
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure is reported with its stage
        raise PipelineError(name, f"{type(exc).__name__}: {exc}") from exc
    finally:
        timing[name] = time.perf_counter() - t0


def acquire_record(config: RunConfig, s: MeasurementSet, graph: OrthogonalityGraph) -> ExperimentRecord:
    if config.mode == "ingest":
        data = json.loads(Path(config.record).read_text())
        rec = ExperimentRecord.from_dict(data, s, graph)
        if rec.set_name != s.name:
            raise ValueError(f"record is for set {rec.set_name!r}, config names {s.name!r}")
        return rec
    return simulate_experiment(s, graph, config.noise, config.delta_theta, config.effective_shots, config.seed)


def _label_pair(s: MeasurementSet, e) -> str:
    return f"{s.label(e[0])}-{s.label(e[1])}"


@dataclass
class _Downstream:
    """Everything computed from one (p, eps) estimate."""

    w_exp: WitnessValue
    w_worst: WitnessValue
    eps_prime_edges: dict
    noise_fit: object | None = None
    angle_fit: object | None = None
    verdict: object | None = None


def _witness(s, graph, p, eps, sigma_p=None, sigma_eps=None):
    wv = witness_value(s, graph, WitnessInputs(p, eps, sigma_p, sigma_eps or {}))
    return wv, worst_case_bound(wv, ideal_witness_optimum(s), s.dim)


def _eps_prime_edges(config, s, graph, eps, timing):
    fit = None
    if config.use_noise_fit:
        fit = _stage("noise_fit", timing, fit_noise, eps, s, graph, seed=config.seed)
        return fit.eps_prime, fit
    return dict(eps), None


def _downstream(config, s, graph, p, eps, timing, sdp: bool, angle: bool, sigma_p=None, sigma_eps=None):
    wv, ww = _stage("witness", timing, _witness, s, graph, p, eps, sigma_p, sigma_eps)
    out = _Downstream(wv, ww, dict(eps))
    if not sdp:
        return out
    out.eps_prime_edges, out.noise_fit = _eps_prime_edges(config, s, graph, eps, timing)
    if angle and config.fit_angle and s.dim in (3, 4):
        out.angle_fit = _stage("angle_fit", timing, fit_delta_theta, out.eps_prime_edges, s, graph)
    engine = SdpEngine(s, graph, config.sdp_settings())
    e = eps_prime_matrix(out.eps_prime_edges, graph)
    out.verdict = _stage("sdp", timing, threshold_search, e, s, graph, engine=engine)
    return out


def _sample_std(values) -> float:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0


def _resample_counts(counts: dict, rng: np.random.Generator) -> dict:
    return {k: {"basis": c["basis"], "counts": [int(x) for x in rng.poisson(c["counts"])]} for k, c in counts.items()}


def bootstrap_errors(record: ExperimentRecord, config: RunConfig, s=None, graph=None) -> dict:
    """Poisson-bootstrap sigmas of w_exp, w_worst, w_sdp and of the per-edge eps.

    Every count is redrawn from a Poisson law with the observed count as its
    mean; resample b uses the stream seeded by (seed, b). Exact-mode records
    carry no counts, so all sigmas are zero and flagged.
    """
    s = s or load_set(record.set_name)
    graph = graph or build_graph(s)
    if record.exact or not record.counts:
        return {
            "flag": "exact-mode record: no counts to resample, sigmas set to 0",
            "resamples": 0, "resamples_sdp": 0,
            "w_exp_sigma": 0.0, "w_worst_sigma": 0.0, "w_sdp_sigma": 0.0,
            "mean_eps_sigma": 0.0, "eps_sigma_mean": 0.0, "mean_p_sigma": 0.0,
        }

    def one(b: int, with_sdp: bool):
        rng = np.random.default_rng([config.seed, 1, b])
        p, _, eps, _, _ = estimates_from_counts(s, graph, _resample_counts(record.counts, rng))
        d = _downstream(config, s, graph, p, eps, {}, sdp=with_sdp, angle=False)
        return p, eps, d

    def run(tasks):
        if config.workers > 1:
            with ThreadPoolExecutor(config.workers) as pool:
                return list(pool.map(lambda a: one(*a), tasks))
        return [one(*a) for a in tasks]

    light = run([(b, False) for b in range(config.bootstrap)])
    edges = sorted(record.eps)
    eps_table = np.array([[r[1][e] for e in edges] for r in light])
    eps_sd = eps_table.std(axis=0, ddof=1) if len(light) > 1 else np.zeros(len(edges))
    out = {
        "flag": None,
        "resamples": config.bootstrap,
        "resamples_sdp": config.bootstrap_sdp,
        "w_exp_sigma": _sample_std([r[2].w_exp.w for r in light]),
        "w_worst_sigma": _sample_std([r[2].w_worst.w for r in light]),
        # spread of the edge-averaged eps over resamples
        "mean_eps_sigma": _sample_std(eps_table.mean(axis=1)),
        # typical error bar of a single eps_ij, averaged over edges
        "eps_sigma_mean": float(np.mean(eps_sd)),
        "mean_p_sigma": float(np.mean(np.std([r[0] for r in light], axis=0, ddof=1))) if len(light) > 1 else 0.0,
        "w_sdp_sigma": 0.0,
    }
    if config.bootstrap_sdp:
        heavy = run([(b, True) for b in range(config.bootstrap_sdp)])
        out["w_sdp_sigma"] = _sample_std([r[2].verdict.w_sdp for r in heavy])
    else:
        out["flag"] = "w_sdp bootstrap disabled (bootstrap_sdp = 0), w_sdp sigma set to 0"
    return out


def _record_summary(record: ExperimentRecord, s: MeasurementSet) -> dict:
    eps = np.array(list(record.eps.values()))
    seps = np.array([record.sigma_eps.get(e, 0.0) for e in record.eps])
    return {
        "set": record.set_name,
        "shots": record.shots,
        "seed": record.seed,
        "exact": record.exact,
        "n_edges_measured": len(record.eps),
        "mean_eps": float(eps.mean()),
        "mean_eps_sigma": float(seps.mean()),
        "max_eps": float(eps.max()),
        "mean_p": float(np.mean(record.p)),
        "mean_p_sigma": float(np.mean(record.sigma_p)),
        "eps": {_label_pair(s, e): float(v) for e, v in record.eps.items()},
    }


def run_pipeline(config: RunConfig) -> CertificationReport:
    """simulate-or-ingest, optional noise fit, witness, worst case, SDP threshold, report."""
    timing: dict[str, float] = {}
    s = _stage("load_set", timing, load_set, config.set)
    graph = _stage("graph", timing, build_graph, s)
    record = _stage("acquire", timing, acquire_record, config, s, graph)
    d = _downstream(config, s, graph, record.p, record.eps, timing, sdp=True, angle=True,
                    sigma_p=record.sigma_p, sigma_eps=record.sigma_eps)
    boot = _stage("bootstrap", timing, bootstrap_errors, record, config, s, graph)
    v = d.verdict

    summary = _record_summary(record, s)
    if boot["resamples"]:
        summary["mean_eps_sigma_bootstrap"] = boot["eps_sigma_mean"]
        summary["mean_p_sigma_bootstrap"] = boot["mean_p_sigma"]
    w_exp_sigma = boot["w_exp_sigma"] if boot["resamples"] else d.w_exp.sigma
    w_worst_sigma = boot["w_worst_sigma"] if boot["resamples"] else d.w_worst.sigma

    checks = {
        "orthogonality_ok": bool(v.orthogonality_ok),
        "completeness_ok": bool(v.completeness_ok),
        "sdp_certifiable": bool(v.certifiable),
        "infeasible_at_w_sdp": bool(v.infeasible_at_w_sdp),
        "tightening_sweeps": int(v.iterations),
        "candidates": [[float(w), bool(ok)] for w, ok in v.candidates],
    }
    report = CertificationReport(
        config=config.to_dict(),
        record=summary,
        w_exp={"value": d.w_exp.w, "sigma": w_exp_sigma},
        w_worst={"value": d.w_worst.w, "sigma": w_worst_sigma},
        w_sdp={"value": float(v.w_sdp), "sigma": boot["w_sdp_sigma"]},
        noise_fit=d.noise_fit.to_dict(s) if d.noise_fit else None,
        angle_fit=d.angle_fit.to_dict() if d.angle_fit else None,
        gram_bounds=v.gram_bounds.to_dict(),
        tau={_label_pair(s, e): float(t) for e, t in sorted(v.tau.items())},
        nu={"+".join(s.label(k) for k in graph.contexts[c]): float(x) for c, x in v.nu.items()},
        checks=checks,
        bootstrap=boot,
        verdict="",
        timing=timing,
    )
    report.verdict = report.recomputed_verdict()
    if config.out:
        Path(config.out).write_text(report.to_json())
    return report


def certify(config: RunConfig) -> CertificationReport:
    return run_pipeline(config)


# ---------------------------------------------------------------- sweep


@dataclass
class SweepRow:
    delta_theta_deg: float
    w_worst: float = math.nan
    w_worst_sigma: float = math.nan
    w_sdp: float = math.nan
    w_sdp_sigma: float = math.nan
    verdict: str = "error"
    error: str | None = None


def _point_seed(seed: int, idx: int) -> int:
    return int(np.random.SeedSequence([seed, idx]).generate_state(1)[0])


def sweep(config: RunConfig, delta_theta_grid) -> list[SweepRow]:
    """Run the pipeline once per delta_theta; failed points keep a row with their error."""
    grid = [float(x) for x in delta_theta_grid]
    if not grid:
        raise ValueError("delta_theta grid is empty")

    def point(idx: int) -> SweepRow:
        cfg = replace(config, delta_theta=grid[idx], seed=_point_seed(config.seed, idx), out=None)
        try:
            r = run_pipeline(cfg)
        except PipelineError as exc:
            log.error("sweep point %g failed: %s", grid[idx], exc)
            return SweepRow(grid[idx], error=str(exc))
        return SweepRow(grid[idx], r.w_worst["value"], r.w_worst["sigma"], r.w_sdp["value"], r.w_sdp["sigma"], r.verdict)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            return list(pool.map(point, range(len(grid))))
    return [point(k) for k in range(len(grid))]


def sweep_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt_float(r.delta_theta_deg), _fmt_float(r.w_worst), _fmt_float(r.w_worst_sigma),
                    _fmt_float(r.w_sdp), _fmt_float(r.w_sdp_sigma), r.verdict])
    return buf.getvalue()
