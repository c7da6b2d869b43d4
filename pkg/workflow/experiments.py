"""
Experiment workflows behind the command-line subcommands.

Each experiment is a generator of step events in the shape
{"type": "step_start" | "step_complete" | "final_result" | "error", ...};
ExperimentWorkflow.run consumes them, narrates progress and turns the
self-checks of the final result into an exit code.
"""

import logging
import math
import uuid
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel

from config.settings import settings
from models.data_models import (
    DoobCheckConfig,
    EntropyReport,
    HopflaxConfig,
    HydroConfig,
    InitialSpec,
    IntermittentConfig,
    OneBlockConfig,
    RateEvalConfig,
    RateVariant,
    SpeedBuildConfig,
    SpeedSpec,
    TiltConfig,
)
from tasep import doob, entropy, hopflax, ratefn, sim
from tasep.lattice import (
    Boundary,
    FieldSlice,
    HeightProfile,
    MacroField,
    bernoulli_profile,
    flat_profile,
    profile_from_macro,
    triangulate,
    two_phase_profile,
    wedge_profile,
)
from tasep.speedbuild import SimpleSpeed, build_regions, l1_gap, r_upper_star, rasterize
from utils.file_handler import ArtifactHandler
from utils.logger import experiment_logger

logger = logging.getLogger(__name__)

Event = Dict[str, Any]


def replica_seeds(seed: int, count: int, *key: int) -> List[int]:
    """Independent per-replica seeds derived from the global seed and a key."""
    children = np.random.SeedSequence([seed, *key]).spawn(count)
    return [int(c.generate_state(1)[0]) for c in children]


def _stderr(values: Sequence[float]) -> float:
    arr = np.asarray(values, dtype=float)
    return float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0


# ============================================================================
# Initial conditions and speeds from config blocks
# ============================================================================


def macro_initial(spec: InitialSpec) -> Callable[[np.ndarray], np.ndarray]:
    if spec.kind == "wedge":
        return lambda xi: np.maximum(xi, 0.0)
    if spec.kind == "flat":
        return lambda xi: np.zeros_like(np.asarray(xi, dtype=float))
    if spec.kind in ("linear", "bernoulli"):
        return lambda xi: spec.rho * np.asarray(xi, dtype=float)
    return lambda xi: np.where(np.asarray(xi) < 0, spec.rho_left * np.asarray(xi), spec.rho_right * np.asarray(xi))


def lattice_initial(spec: InitialSpec, N: int, x_min: int, x_max: int, seed: int) -> HeightProfile:
    if spec.kind == "wedge":
        return wedge_profile(x_min, x_max)
    if spec.kind == "flat":
        return flat_profile(x_min, x_max)
    if spec.kind == "bernoulli":
        rng = np.random.default_rng(seed)
        return bernoulli_profile(rng, x_min, x_max, spec.rho, Boundary.FROZEN, anchor=int(math.floor(spec.rho * x_min)))
    if spec.kind == "two_phase":
        return two_phase_profile(np.random.default_rng(seed), x_min, x_max, spec.rho_left, spec.rho_right)
    return profile_from_macro(macro_initial(spec), N, x_min, x_max)


def load_speed(spec: SpeedSpec, horizon: float) -> SimpleSpeed:
    if spec.constant is not None:
        return SimpleSpeed.constant(spec.constant, horizon)
    return ArtifactHandler.read_speed(spec.speed_json)


def grid_length(reach: float, step: float) -> float:
    """Smallest whole number of cells covering reach."""
    return math.ceil(reach / step - 1e-9) * step


# ============================================================================
# Replica workers (module level so a process pool can pickle them)
# ============================================================================


def _hydro_replica(task) -> float:
    spec, N, x_min, x_max, speed, T, seed, field = task
    h0 = lattice_initial(spec, N, x_min, x_max, seed)
    window = (int(math.floor(field.xi_grid[0] * N)), int(math.ceil(field.xi_grid[-1] * N)))
    rec = sim.run(h0, speed, T, N, seed, observe=window)
    snapshots = sim.scaled_field(rec, field.t_grid, field.xi_grid)
    return float(np.max(np.abs(snapshots.values - field.values)))


def _torus_record(N: int, width: float, rho: float, speed, T: float, seed: int) -> sim.TrajectoryRecord:
    period = max(int(round(width * N)), 4)
    h0 = bernoulli_profile(np.random.default_rng(seed), 0, period, rho, Boundary.TORUS)
    return sim.run(h0, speed, T, N, seed)


def _tilt_replica(task) -> Dict[str, float]:
    N, width, rho, lam, T, seed = task
    rec = _torus_record(N, width, rho, lam, T, seed)
    window = (rec.initial.x_min, rec.initial.x_max - 1)
    return {
        "events": rec.events,
        "flux": sim.empirical_flux(rec, window, 0.0, T),
        "compensator": sim.expected_flux(rec, window, 0.0, T),
        "entropy": entropy.entropy_density(rec, lam) / (rec.initial.period / N),
        "rn": entropy.rn_logdensity(rec, lam) / N ** 2,
    }


def _intermittent_replica(task) -> Dict[str, float]:
    speed, N, T, rho_bar, x_min, x_max, sites, slabs, window, seed = task
    h0 = bernoulli_profile(np.random.default_rng(seed), x_min, x_max, rho_bar, Boundary.FROZEN)
    rec = sim.run(h0, speed, T, N, seed, observe=sites)
    durations = np.array([b - a for a, b in slabs])
    fluxes = np.array([sim.empirical_flux(rec, sites, a, b) for a, b in slabs])
    return {
        "events": rec.events,
        "flux": float(np.sum(fluxes * durations) / durations.sum()),
        "entropy": entropy.entropy_density(rec, speed, window),
    }


def _unit_weight(t, xi):
    return np.ones_like(xi)


def _oneblock_replica(task) -> List[float]:
    N, width, rho, T, k_list, seed = task
    rec = _torus_record(N, width, rho, 1.0, T, seed)
    return [abs(sim.one_block_stat(rec, _unit_weight, k)) / N for k in k_list]


# ============================================================================
# Workflow
# ============================================================================


class ExperimentWorkflow:
    """Runs one experiment and writes its artifacts under one output directory."""

    def __init__(self, run_id: Optional[str] = None, out_dir: Optional[Path] = None, threads: Optional[int] = None):
        self.run_id = run_id or f"run_{uuid.uuid4().hex[:8]}"
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.threads = int(threads or settings.THREADS)
        self.artifacts: Optional[ArtifactHandler] = None

    def _map(self, fn: Callable, tasks: Sequence) -> List:
        if self.threads > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(fn, tasks))
        return [fn(t) for t in tasks]

    def _open(self, name: str, config: BaseModel):
        target = self.out_dir or (Path(config.out_dir) if config.out_dir else settings.OUT_DIR / name)
        self.artifacts = ArtifactHandler(target)
        self.artifacts.stamp(config)

    def steps(self, name: str, config: BaseModel) -> Iterator[Event]:
        generators = {
            "hydro": self.hydro,
            "tilt": self.tilt,
            "intermittent": self.intermittent,
            "speed-build": self.speed_build,
            "hopflax": self.hopflax,
            "doob-check": self.doob_check,
            "rate-eval": self.rate_eval,
            "oneblock": self.oneblock,
        }
        if name not in generators:
            raise KeyError(f"unknown experiment {name!r}")
        self._open(name, config)
        try:
            yield from generators[name](config)
        except Exception as e:
            logger.error(f"{name} failed: {e}")
            yield {"type": "error", "message": f"{name} failed: {e}"}
            raise

    def run(self, name: str, config: BaseModel) -> Tuple[int, Dict[str, Any]]:
        """Consume the step events; exit code 3 when a self-check fails."""
        summary: Dict[str, Any] = {}
        for event in self.steps(name, config):
            kind = event["type"]
            if kind == "step_start":
                experiment_logger.log_workflow_step(name, event["message"])
            elif kind == "step_complete":
                experiment_logger.log_workflow_step(name, f"finished {event['step']}")
            elif kind == "final_result":
                summary = event["data"]
        checks = summary.get("checks", {})
        for check, passed in checks.items():
            experiment_logger.log_self_check(name, check, passed)
        return (0 if all(checks.values()) else 3), summary

    def _finish(self, summary: Dict[str, Any]) -> Event:
        path = self.artifacts.write_json("summary.json", summary)
        return {"type": "final_result", "data": summary, "run_id": self.run_id, "summary_path": str(path)}

    # ------------------------------------------------------------------
    # hydro
    # ------------------------------------------------------------------

    def hydro(self, config: HydroConfig) -> Iterator[Event]:
        yield {"type": "step_start", "step": "hopf_lax", "message": "Solving the Hopf-Lax reference field..."}
        T = config.T
        speed = load_speed(config.speed_spec, T)
        dt, dxi = config.grid.dt, config.grid.dxi
        r = grid_length(config.r, dxi)
        L = grid_length(r + speed.max_value * (T + dt), dxi)
        nodes = np.linspace(-L, L, int(round(2 * L / dxi)) + 1)
        f0 = FieldSlice(nodes, macro_initial(config.initial_spec)(nodes))
        field = hopflax.solve(speed, f0, (dt, dxi), L, r=r, horizon=T)
        yield {"type": "step_complete", "step": "hopf_lax", "data": {"times": int(field.t_grid.size), "nodes": int(field.xi_grid.size)}}

        rows = []
        for N in config.N_list:
            yield {"type": "step_start", "step": f"replicas_N{N}", "message": f"Simulating {config.replicas} replicas at N={N}..."}
            half = int(math.ceil(r * N)) + sim.safety_margin(speed.max_value, N, T)
            tasks = [(config.initial_spec, N, -half, half, speed, T, s, field) for s in replica_seeds(config.seed, config.replicas, N)]
            errors = self._map(_hydro_replica, tasks)
            rows.append({"N": N, "mean_err": float(np.mean(errors)), "std_err": _stderr(errors)})
            yield {"type": "step_complete", "step": f"replicas_N{N}", "data": rows[-1]}

        table = pd.DataFrame(rows, columns=["N", "mean_err", "std_err"])
        self.artifacts.write_csv("convergence.csv", table)
        summary: Dict[str, Any] = {"experiment": "hydro", "convergence": rows, "checks": {}}
        if config.max_final_error is not None:
            summary["checks"]["final_error"] = rows[-1]["mean_err"] <= config.max_final_error
        yield self._finish(summary)

    # ------------------------------------------------------------------
    # tilt
    # ------------------------------------------------------------------

    def tilt(self, config: TiltConfig) -> Iterator[Event]:
        yield {"type": "step_start", "step": "replicas", "message": f"Tilted torus at speed {config.speed}..."}
        tasks = [(config.N, config.width, config.rho, config.speed, config.T, s) for s in replica_seeds(config.seed, config.replicas)]
        results = self._map(_tilt_replica, tasks)
        for i, res in enumerate(results):
            experiment_logger.log_replica("tilt", i, len(results), res["events"])
        yield {"type": "step_complete", "step": "replicas", "data": {"replicas": len(results)}}

        flux = np.array([res["flux"] for res in results])
        ent = np.array([res["entropy"] for res in results])
        diffs = np.array([res["flux"] - res["compensator"] for res in results])
        discrepancy = entropy.paired_discrepancy(diffs)
        expected_flux = config.speed * config.rho * (1 - config.rho)
        expected_ent = config.rho * (1 - config.rho) * float(ratefn.poisson_rate(config.speed)) * config.T
        report = EntropyReport(mc_estimate=float(ent.mean()), std_error=_stderr(ent), replicas=len(results))

        frame = pd.DataFrame(
            {"replica": np.arange(len(results)), "flux": flux, "entropy_per_length": ent, "rn_per_n2": [res["rn"] for res in results]}
        )
        self.artifacts.write_csv("replicas.csv", frame)
        ent_gap = abs(report.mc_estimate - expected_ent)
        summary = {
            "experiment": "tilt",
            "flux": {"mean": float(flux.mean()), "std_error": _stderr(flux), "expected": expected_flux},
            "entropy": report.model_dump(),
            "entropy_expected": expected_ent,
            "flux_identity_discrepancy": discrepancy,
            "checks": {
                "flux": abs(float(flux.mean()) - expected_flux) <= config.flux_tolerance,
                "entropy": ent_gap <= config.entropy_rel_tolerance * expected_ent if expected_ent > 0 else ent_gap <= config.entropy_rel_tolerance,
            },
        }
        yield self._finish(summary)

    # ------------------------------------------------------------------
    # intermittent
    # ------------------------------------------------------------------

    def intermittent(self, config: IntermittentConfig) -> Iterator[Event]:
        yield {"type": "step_start", "step": "triangulate", "message": f"Constant deviation kappa={config.kappa}, rho={config.rho_bar}..."}
        T = config.T
        lam = config.kappa / (config.rho_bar * (1 - config.rho_bar))
        r_up = float(r_upper_star(config.r_star, T, lam))
        t_grid = np.linspace(0.0, T, int(round(T / config.tau)) * 4 + 1)
        xi_grid = np.linspace(-r_up, r_up, int(round(2 * r_up / config.b)) * 4 + 1)
        g = MacroField.from_function(lambda t, xi: config.kappa * t + config.rho_bar * xi, t_grid, xi_grid)
        tri = triangulate(g, config.tau, config.b, r_up)
        yield {"type": "step_complete", "step": "triangulate", "data": {"lambda": lam, "r_upper_star": r_up}}

        N = config.N
        sites = (int(math.ceil(-config.r_star * N)), int(math.floor(config.r_star * N)))
        half = int(math.ceil(r_up * N)) + sim.safety_margin(max(lam, 1.0), N, T)
        tau1 = config.tau / config.m
        slabs = [(i * config.tau + 3 * tau1, (i + 1) * config.tau - 3 * tau1) for i in range(tri.n_slabs)]
        # thin slab 4 of the left triangle in the middle column: pure stripe/residual band
        j = tri.n_cols // 2
        x_j, b1 = tri.column_left(j), config.b / config.m
        window = (4 * tau1, 5 * tau1, x_j + b1, x_j + 2 * b1)

        rows, checks = [], {}
        for n in config.n_list:
            yield {"type": "step_start", "step": f"n{n}", "message": f"Building and simulating m={config.m}, n={n}..."}
            zp = build_regions(tri, config.m, n, config.r_star, r_up)
            speed = rasterize(zp)
            checks[f"partition_n{n}"] = zp.report.passed
            tasks = [
                (speed, N, T, config.rho_bar, -half, half, sites, slabs, window, s)
                for s in replica_seeds(config.seed, config.replicas, n)
            ]
            results = self._map(_intermittent_replica, tasks)
            flux = [res["flux"] for res in results]
            ent = [res["entropy"] for res in results]
            rows.append({
                "n": n,
                "regions": len(zp.regions),
                "violations": len(zp.report.violations),
                "flux": float(np.mean(flux)),
                "flux_std_error": _stderr(flux),
                "entropy": float(np.mean(ent)),
                "entropy_std_error": _stderr(ent),
            })
            self.artifacts.write_json(f"partition_n{n}.json", zp.report.model_dump())
            yield {"type": "step_complete", "step": f"n{n}", "data": rows[-1]}

        self.artifacts.write_csv("intermittent.csv", pd.DataFrame(rows))
        checks[f"flux_n{rows[-1]['n']}"] = abs(rows[-1]["flux"] - config.kappa) <= config.flux_tolerance
        summary: Dict[str, Any] = {"experiment": "intermittent", "lambda": lam, "rows": rows, "checks": checks}
        if len(rows) > 1 and rows[0]["entropy"] > 0:
            ratio = rows[-1]["entropy"] / rows[0]["entropy"]
            lo, hi = config.decay_range
            summary["entropy_ratio"] = ratio
            checks["entropy_decay"] = lo <= ratio <= hi
        yield self._finish(summary)

    # ------------------------------------------------------------------
    # speed-build
    # ------------------------------------------------------------------

    def speed_build(self, config: SpeedBuildConfig) -> Iterator[Event]:
        yield {"type": "step_start", "step": "triangulate", "message": "Reading the deviation g..."}
        if config.g_csv is not None:
            g = ArtifactHandler.read_field(config.g_csv)
            r_up = float(max(-g.xi_grid[0], g.xi_grid[-1]))
        else:
            heights = np.asarray(config.g_vertices, dtype=float)
            r_up = float(Fraction(config.b) * (heights.shape[1] - 1) / 2)
            t_grid = np.linspace(0.0, config.T, 4 * (heights.shape[0] - 1) + 1)
            xi_grid = np.linspace(-r_up, r_up, 4 * (heights.shape[1] - 1) + 1)
            g = MacroField.from_vertices(heights, config.tau, config.b, r_up, t_grid, xi_grid)
        tri = triangulate(g, config.tau, config.b, r_up)
        yield {"type": "step_complete", "step": "triangulate", "data": {"triangles": 2 * tri.n_slabs * tri.n_cols}}

        yield {"type": "step_start", "step": "partition", "message": f"Zoned partition m={config.m}, n={config.n}..."}
        zp = build_regions(tri, config.m, config.n, config.r_star)
        speed = rasterize(zp)
        gap = l1_gap(speed, tri)
        yield {"type": "step_complete", "step": "partition", "data": {"regions": len(zp.regions)}}

        self.artifacts.write_json("speed.json", speed.to_dict())
        self.artifacts.write_json("partition_report.json", zp.report.model_dump())
        regions = pd.DataFrame([
            {
                "rid": reg.rid,
                "kind": reg.kind.value,
                "t_lo": float(reg.t_lo),
                "t_hi": float(reg.t_hi),
                "lam": reg.lam,
                "area": float(reg.area),
            }
            for reg in zp.regions
        ])
        self.artifacts.write_csv("regions.csv", regions)
        yield self._finish({
            "experiment": "speed-build",
            "regions": len(zp.regions),
            "time_pieces": len(speed.profiles),
            "lambda_max": tri.lambda_max,
            "r_upper_star": float(zp.r_upper_star),
            "l1_gap": gap,
            "violations": [v.model_dump() for v in zp.report.violations],
            "checks": {"partition": zp.report.passed},
        })

    # ------------------------------------------------------------------
    # hopflax
    # ------------------------------------------------------------------

    def hopflax(self, config: HopflaxConfig) -> Iterator[Event]:
        yield {"type": "step_start", "step": "solve", "message": "Solving the Hopf-Lax problem on the grid..."}
        oracle = config.oracle
        speed = hopflax.oracle_speed(oracle, config.T) if oracle is not None else load_speed(config.speed_spec, config.T)
        nodes = np.linspace(-config.L, config.L, int(round(2 * config.L / config.dxi)) + 1)
        if oracle is not None:
            f0 = hopflax.closed_form_initial(oracle, nodes)
        elif config.f0_linear is not None:
            f0 = FieldSlice(nodes, config.f0_linear.anchor + config.f0_linear.rho * nodes)
        else:
            f0 = ArtifactHandler.read_field(config.f0_csv).slice(0)
        s0 = oracle.s0 if oracle is not None else 0.0
        field = hopflax.solve_localized(speed, f0, s0, (config.dt, config.dxi), config.L, horizon=config.T)
        yield {"type": "step_complete", "step": "solve", "data": {"times": int(field.t_grid.size)}}

        self.artifacts.write_csv("field.csv", field.to_frame())
        summary: Dict[str, Any] = {"experiment": "hopflax", "r": float(field.xi_grid[-1]), "checks": {}}
        if oracle is not None:
            err = hopflax.sup_error(field, oracle)
            summary["sup_error"] = err
            summary["checks"]["oracle"] = err <= 2 * (config.dt + config.dxi)
        yield self._finish(summary)

    # ------------------------------------------------------------------
    # doob-check
    # ------------------------------------------------------------------

    def doob_check(self, config: DoobCheckConfig) -> Iterator[Event]:
        yield {"type": "step_start", "step": "systems", "message": "Building conditioned systems..."}
        systems: List[doob.DoobSystem] = []
        if config.k is not None and config.initial is not None and config.envelopes is not None:
            systems.append(doob.build_system(config.k, config.initial, config.envelopes, config.T))
        if config.random is not None:
            rng = np.random.default_rng(config.seed)
            for _ in range(config.random.count):
                k = int(rng.integers(1, config.random.k_max + 1))
                T = float(rng.uniform(0.1, config.random.T_max))
                systems.append(doob.random_system(rng, k, T))
        yield {"type": "step_complete", "step": "systems", "data": {"count": len(systems)}}

        yield {"type": "step_start", "step": "identity", "message": "Comparing -log q with the rate integral..."}
        rows = []
        for idx, system in enumerate(systems):
            table = doob.solve_q(system)
            exact = doob.entropy_exact(system, table)
            formula = doob.entropy_formula(system, table)
            gap = 0.0 if exact == formula else abs(exact - formula)
            rows.append({"system": idx, "k": system.k, "states": system.size, "horizon": system.horizon,
                         "exact": exact, "formula": formula, "gap": gap})
        yield {"type": "step_complete", "step": "identity", "data": {"systems": len(rows)}}

        self.artifacts.write_csv("doob.csv", pd.DataFrame(rows))
        max_gap = max(row["gap"] for row in rows)
        yield self._finish({
            "experiment": "doob-check",
            "systems": len(rows),
            "max_gap": max_gap,
            "checks": {"identity": max_gap <= config.tolerance},
        })

    # ------------------------------------------------------------------
    # rate-eval
    # ------------------------------------------------------------------

    def rate_eval(self, config: RateEvalConfig) -> Iterator[Event]:
        yield {"type": "step_start", "step": "evaluate", "message": f"Rate functional, variant {config.variant}..."}
        field = ArtifactHandler.read_field(config.field_csv)
        variant = RateVariant(variant=config.variant, truncation_a=config.truncation_a)
        value = ratefn.rate_functional(field, variant, r=config.r, cells=config.cells)
        yield {"type": "step_complete", "step": "evaluate", "data": {"value": value}}
        yield self._finish({"experiment": "rate-eval", "value": value, "variant": variant.model_dump(), "cells": config.cells, "checks": {}})

    # ------------------------------------------------------------------
    # oneblock
    # ------------------------------------------------------------------

    def oneblock(self, config: OneBlockConfig) -> Iterator[Event]:
        yield {"type": "step_start", "step": "replicas", "message": f"One-block statistic for k in {config.k_list}..."}
        tasks = [(config.N, config.width, config.rho, config.T, config.k_list, s) for s in replica_seeds(config.seed, config.replicas)]
        values = np.array(self._map(_oneblock_replica, tasks))
        yield {"type": "step_complete", "step": "replicas", "data": {"replicas": len(tasks)}}

        means = values.mean(axis=0)
        rows = [{"k": k, "value": float(means[i]), "std_error": _stderr(values[:, i])} for i, k in enumerate(config.k_list)]
        self.artifacts.write_csv("oneblock.csv", pd.DataFrame(rows))
        checks = {}
        if len(rows) > 1:
            checks["decay"] = rows[-1]["value"] < config.decay_factor * rows[0]["value"]
        yield self._finish({"experiment": "oneblock", "rows": rows, "checks": checks})
