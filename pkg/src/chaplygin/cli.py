"""Batch front-end.

    chaplygin {verify|simulate|generator-test|sphere-test|ham-check|drift-report}
        --config FILE [--workers N] [--seed S]

Exit codes: 0 pass, 1 quantitative failure, 2 usage/config error,
3 numerical abort (rejected step).
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import sys
import time
from pathlib import Path
from typing import Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import __version__, kernels
from .ball import BallModel, InertiaOperator, identity_inertia, physical_inertia, random_inertia
from .geometry import TestFunction, _nabla_nh_point, _self_nabla_sums, drift_vector
from .lab import (
    FitRejected,
    drift_theorem_report,
    mc_generator_estimate,
    sphere_decay_test,
    sphere_project,
)
from .lie import LogSafetyError, expm_skew, random_group_point
from .sde import IntegratorConfig, NoiseConfig, simulate_ensemble

log = logging.getLogger("chaplygin")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

TOLERANCES = {
    "theorem": 1e-8,
    "e0": 1e-8,
    "e1": 1e-8,
    "e2": 1e-10,
    "dlogN_fd": 1e-6,
    "mech_horiz": 1e-9,
    "vel_horiz": 1e-8,
    "torsion": 1e-12,
    "metricity": 1e-10,
    "ham_satisfied": 1e-8,
    "orth_defect": 1e-9,
}


class ConfigError(Exception):
    pass


# configuration schema


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class MassesInertia(_Strict):
    masses: list[float]


class MatrixInertia(_Strict):
    matrix: str


class RandomInertiaSpec(_Strict):
    seed: int = 0
    low: float = 0.5
    high: float = 5.0


class RandomInertia(_Strict):
    random: RandomInertiaSpec


InertiaSpec = Union[Literal["identity"], MassesInertia, MatrixInertia, RandomInertia]


class NoiseSpec(_Strict):
    angular: bool = True
    translational: bool = True
    include_h0_drift: bool = True


class IntegratorSpec(_Strict):
    h: float = Field(1e-3, gt=0)
    scheme: Literal["euler_exp", "heun_exp"] = "heun_exp"
    reorth_interval: int = Field(100, ge=1)
    master_seed: int = Field(0, ge=0, lt=2**64)
    path_count: int = Field(1, ge=1)


class ExperimentConfig(_Strict):
    n: int = Field(ge=3)
    inertia: InertiaSpec = "identity"
    noise: NoiseSpec = NoiseSpec()
    integrator: IntegratorSpec = IntegratorSpec()
    experiment: dict = Field(default_factory=dict)
    output_dir: str = "."


class VerifyBlock(_Strict):
    dims: list[int] | None = None
    random_inertias: int = Field(0, ge=0)
    include_config_inertia: bool = True
    samples: int = Field(50, ge=1)

    @field_validator("dims")
    @classmethod
    def _dims(cls, v):
        if v is not None and any(d < 3 for d in v):
            raise ValueError("all dims must be >= 3")
        return v


class SimulateBlock(_Strict):
    T: float = Field(1.0, gt=0)
    snapshot_stride: int | None = Field(None, ge=1)
    s0: Literal["identity", "random"] = "identity"


class GeneratorBlock(_Strict):
    points: int = Field(3, ge=1)
    functions: int = Field(5, ge=1)


class SphereBlock(_Strict):
    T: float = Field(2.0, gt=0)
    grid: int = Field(20, ge=2)
    c: list[float] | None = None


class HamBlock(_Strict):
    random_inertias: int = Field(0, ge=0)
    spot_checks: int = Field(10, ge=0)
    expect: Literal["satisfied", "report"] | None = None


class DriftBlock(_Strict):
    samples: int = Field(50, ge=1)


BLOCKS = {
    "verify": VerifyBlock,
    "simulate": SimulateBlock,
    "generator-test": GeneratorBlock,
    "sphere-test": SphereBlock,
    "ham-check": HamBlock,
    "drift-report": DriftBlock,
}


def _format_validation(exc: ValidationError, prefix: str = "") -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        lines.append(f"field {prefix}{loc}: {err['msg']}")
    return "\n".join(lines)


def load_config(path: Path, command: str, seed: int | None = None):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    if seed is not None:
        raw.setdefault("integrator", {})
        if not isinstance(raw["integrator"], dict):
            raise ConfigError("field integrator: must be an object")
        raw["integrator"]["master_seed"] = seed
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from exc
    try:
        block = BLOCKS[command].model_validate(cfg.experiment)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc, "experiment.")) from exc
    return cfg, block


def build_inertia(spec, n: int, base_dir: Path) -> InertiaOperator:
    try:
        if spec == "identity":
            return identity_inertia(n)
        if isinstance(spec, MassesInertia):
            return physical_inertia(n, spec.masses)
        if isinstance(spec, RandomInertia):
            r = spec.random
            return random_inertia(n, np.random.default_rng(r.seed), r.low, r.high)
        p = Path(spec.matrix)
        p = p if p.is_absolute() else base_dir / p
        if not p.exists():
            raise ConfigError(f"field inertia.matrix: file {p} does not exist")
        G = np.load(p) if p.suffix == ".npy" else np.array(json.loads(p.read_text()), dtype=float)
        return InertiaOperator(G)
    except ValueError as exc:
        raise ConfigError(f"field inertia: {exc}") from exc


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical validated config; ``output_dir`` does not
    affect results and is left out."""
    canon = json.dumps(cfg.model_dump(mode="json", exclude={"output_dir"}), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# output


def fmt(x) -> str:
    """Shortest round-trip float text."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


class Run:
    """Collects metadata and writes the CSV/JSON pair for one command."""

    def __init__(self, command: str, cfg: ExperimentConfig, out_dir: Path):
        self.command = command
        self.cfg = cfg
        self.out_dir = out_dir
        self.hash = config_hash(cfg)
        self.t0 = time.perf_counter()
        self.started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        out_dir.mkdir(parents=True, exist_ok=True)

    def header(self, tolerances: dict) -> str:
        tol = ";".join(f"{k}={fmt(v)}" for k, v in sorted(tolerances.items()))
        return (f"# chaplygin {__version__} command={self.command} config_sha256={self.hash} "
                f"master_seed={self.cfg.integrator.master_seed} tolerances={tol}\n")

    def write_csv(self, name: str, columns: list[str], rows, tolerances: dict) -> Path:
        buf = io.StringIO(newline="")
        buf.write(self.header(tolerances))
        w = csv.writer(buf, delimiter=",", lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])
        path = self.out_dir / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
        return path

    def write_summary(self, name: str, passed: bool, metrics: dict, tolerances: dict, failures: list[str]) -> Path:
        doc = {
            "tool": "chaplygin",
            "version": __version__,
            "command": self.command,
            "config_sha256": self.hash,
            "master_seed": self.cfg.integrator.master_seed,
            "kernel_backend": kernels.active(),
            "started_utc": self.started,
            "wall_clock_seconds": round(time.perf_counter() - self.t0, 3),
            "tolerances": tolerances,
            "pass": passed,
            "failures": failures,
            "metrics": metrics,
        }
        path = self.out_dir / name
        path.write_text(json.dumps(doc, indent=2, sort_keys=False, default=_json_default) + "\n", encoding="utf-8")
        return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _finish(passed: bool, failures: list[str]) -> int:
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    return EXIT_OK if passed else EXIT_FAIL


# subcommands


def analytic_suite(model: BallModel, rng: np.random.Generator, samples: int) -> dict:
    """Max residual per identity over ``samples`` random points."""
    out = {k: 0.0 for k in ("theorem", "theorem_opposite", "e0", "e1", "e2", "dlogN_fd", "mech_horiz",
                            "vel_horiz", "torsion", "metricity")}
    vel_checked = 0
    br = model.basis.bracket
    for _ in range(samples):
        s = random_group_point(rng, model.n).matrix
        P = model.at(s)
        sw, su = _self_nabla_sums(model, P)
        v0 = P.solve(model.gram @ model.sum_nabla_I)
        g = P.grad_logN()
        d = -0.5 * v0 + 0.5 * sw + 0.5 * su
        out["theorem"] = max(out["theorem"], np.linalg.norm(d + 0.5 * g))
        out["theorem_opposite"] = max(out["theorem_opposite"], np.linalg.norm(d - 0.5 * g))
        out["e0"] = max(out["e0"], np.linalg.norm(-v0 + sw + su + g))
        out["e1"] = max(out["e1"], np.linalg.norm(sw - v0 + g))
        out["e2"] = max(out["e2"], np.linalg.norm(su))
        u, v, w = rng.standard_normal((3, model.m))
        hstep = 1e-5
        E = expm_skew(hstep * model.basis.to_matrix(u))
        fd = (model.log_density_N(s @ E) - model.log_density_N(s @ E.T)) / (2 * hstep)
        out["dlogN_fd"] = max(out["dlogN_fd"], abs(fd - P.dlogN_coeffs() @ (P.zeta @ u)))
        xi = model.xi_all(s)
        out["mech_horiz"] = max(out["mech_horiz"], float(np.abs(xi @ (P.mu0 @ d)).max()))
        if model.ham_condition_residual(s) < TOLERANCES["ham_satisfied"]:
            vel_checked += 1
            out["vel_horiz"] = max(out["vel_horiz"], float(np.abs(xi @ d).max()))
        tor = _nabla_nh_point(model, P, u, v) - _nabla_nh_point(model, P, v, u) - br(u, v)
        out["torsion"] = max(out["torsion"], np.linalg.norm(tor - P.solve(P.P @ br(u, v))))
        lhs = u @ P.d_mu0(w) @ v
        rhs = _nabla_nh_point(model, P, w, u) @ P.mu0 @ v + u @ P.mu0 @ _nabla_nh_point(model, P, w, v)
        out["metricity"] = max(out["metricity"], abs(lhs - rhs))
    out = {k: float(v) for k, v in out.items()}
    out["vel_horiz_points"] = vel_checked
    return out


def cmd_verify(cfg, block: VerifyBlock, base_dir: Path, workers: int) -> int:
    run = Run("verify", cfg, Path(cfg.output_dir))
    rng = np.random.default_rng(cfg.integrator.master_seed)
    dims = block.dims or [cfg.n]
    cases = []
    for n in dims:
        inertias = []
        if block.include_config_inertia:
            inertias.append(("config", build_inertia(cfg.inertia, n, base_dir)))
        inertias += [(f"random_{i}", random_inertia(n, rng)) for i in range(block.random_inertias)]
        for label, inertia in inertias:
            res = analytic_suite(BallModel(n, inertia), rng, block.samples)
            cases.append({"n": n, "inertia": label, **res})
    keys = [k for k in TOLERANCES if k in cases[0]]
    maxima = {k: max(c[k] for c in cases) for k in keys}
    maxima["theorem_opposite"] = max(c["theorem_opposite"] for c in cases)
    failures = [f"{k}: max residual {maxima[k]:.3e} >= {TOLERANCES[k]:.0e}" for k in keys if not maxima[k] < TOLERANCES[k]]
    tol = {k: TOLERANCES[k] for k in keys}
    run.write_summary("verify.json", not failures, {"max_residuals": maxima, "cases": cases}, tol, failures)
    return _finish(not failures, failures)


def _initial_point(kind: str, n: int, seed: int) -> np.ndarray:
    if kind == "identity":
        return np.eye(n)
    return random_group_point(np.random.default_rng(seed), n).matrix


def _integrator(cfg) -> IntegratorConfig:
    return IntegratorConfig(**cfg.integrator.model_dump())


def _noise(cfg) -> NoiseConfig:
    return NoiseConfig(**cfg.noise.model_dump())


def cmd_simulate(cfg, block: SimulateBlock, base_dir: Path, workers: int) -> int:
    run = Run("simulate", cfg, Path(cfg.output_dir))
    model = BallModel(cfg.n, build_inertia(cfg.inertia, cfg.n, base_dir))
    icfg = _integrator(cfg)
    s0 = _initial_point(block.s0, cfg.n, icfg.master_seed)
    ens = simulate_ensemble(model, s0, block.T, icfg, _noise(cfg), workers=workers,
                            snapshot_stride=block.snapshot_stride or int(round(block.T / icfg.h)))
    n = cfg.n
    cols = ["path_id", "t"] + [f"s_{i + 1}{j + 1}" for i in range(n) for j in range(n)] + [f"kappa_{i + 1}" for i in range(n)]

    def rows():
        for p in range(ens.path_count):
            for k, t in enumerate(ens.times):
                S = ens.snapshots[p, k]
                yield [p, t, *S.ravel(), *sphere_project(S)]

    defects = np.linalg.norm(np.swapaxes(ens.terminal, -1, -2) @ ens.terminal - np.eye(n), axis=(-2, -1))
    tol = {"orth_defect": TOLERANCES["orth_defect"]}
    run.write_csv("simulate.csv", cols, rows(), tol)
    failures = [] if defects.max() < tol["orth_defect"] else [f"orth_defect: {defects.max():.3e}"]
    metrics = {"paths": ens.path_count, "steps": int(round(block.T / icfg.h)),
               "max_orth_defect": float(defects.max()), "mean_orth_defect": float(defects.mean())}
    run.write_summary("simulate.json", not failures, metrics, tol, failures)
    return _finish(not failures, failures)


def cmd_generator_test(cfg, block: GeneratorBlock, base_dir: Path, workers: int) -> int:
    run = Run("generator-test", cfg, Path(cfg.output_dir))
    model = BallModel(cfg.n, build_inertia(cfg.inertia, cfg.n, base_dir))
    icfg = _integrator(cfg)
    rng = np.random.default_rng(icfg.master_seed)
    rows, failures = [], []
    for j in range(block.points):
        s = random_group_point(rng, cfg.n).matrix
        for i in range(block.functions):
            f = TestFunction(rng.standard_normal((cfg.n, cfg.n)))
            rep = mc_generator_estimate(model, f, s, icfg.h, icfg.path_count, _noise(cfg),
                                        seed=icfg.master_seed + 1 + j * block.functions + i,
                                        scheme=icfg.scheme, workers=workers)
            fid = f"p{j}_f{i}"
            rows.append([fid, rep.analytic, rep.mc_estimate, rep.stderr, rep.h, rep.paths])
            if not rep.passed:
                failures.append(f"generator {fid}: |mc - analytic| = {abs(rep.mc_estimate - rep.analytic):.3e} "
                                f"> {rep.tolerance:.3e}")
    tol = {"stderr_multiple": 3.0, "bias_fraction": 0.1}
    run.write_csv("generator_test.csv", ["f_id", "analytic", "mc", "stderr", "h", "paths"], rows, tol)
    run.write_summary("generator_test.json", not failures, {"functions": len(rows)}, tol, failures)
    return _finish(not failures, failures)


def cmd_sphere_test(cfg, block: SphereBlock, base_dir: Path, workers: int) -> int:
    run = Run("sphere-test", cfg, Path(cfg.output_dir))
    if cfg.inertia != "identity":
        raise ConfigError("field inertia: sphere-test requires the homogeneous ball (\"identity\")")
    icfg = _integrator(cfg)
    rep = sphere_decay_test(cfg.n, block.T, block.grid, icfg.path_count, _noise(cfg), seed=icfg.master_seed,
                            h=icfg.h, c=block.c, workers=workers)
    rows = [[t, m, se, float(rep.means[0] * np.exp(-rep.predicted_rate * t))] for t, m, se in zip(rep.times, rep.means, rep.stderrs)]
    tol = {"stderr_multiple": 3.0, "bias_fraction": 0.1}
    run.write_csv("sphere_test.csv", ["t", "mean", "stderr", "predicted_mean"], rows, tol)
    failures = [] if rep.passed else [f"fitted_rate: {rep.fitted_rate:.5f} vs predicted {rep.predicted_rate:.5f} "
                                      f"(tolerance {rep.tolerance:.5f})"]
    metrics = {"fitted_rate": rep.fitted_rate, "predicted_rate": rep.predicted_rate, "rate_stderr": rep.rate_stderr,
               "r_squared": rep.r_squared, "channel_rates": rep.channel_rates, "c": rep.c}
    run.write_summary("sphere_test.json", rep.passed, metrics, tol, failures)
    return _finish(rep.passed, failures)


def cmd_ham_check(cfg, block: HamBlock, base_dir: Path, workers: int) -> int:
    run = Run("ham-check", cfg, Path(cfg.output_dir))
    rng = np.random.default_rng(cfg.integrator.master_seed)
    inertias = [("config", build_inertia(cfg.inertia, cfg.n, base_dir))]
    inertias += [(f"random_{i}", random_inertia(cfg.n, rng)) for i in range(block.random_inertias)]
    rows = []
    for label, inertia in inertias:
        model = BallModel(cfg.n, inertia)
        at_id = model.ham_condition_residual()
        spot = max((model.ham_condition_residual(random_group_point(rng, cfg.n).matrix)
                    for _ in range(block.spot_checks)), default=0.0)
        rows.append([label, at_id, spot, max(at_id, spot) < TOLERANCES["ham_satisfied"]])
    expect = block.expect or ("satisfied" if cfg.n == 3 else "report")
    failures = [f"ham_residual {r[0]}: {max(r[1], r[2]):.3e}" for r in rows if expect == "satisfied" and not r[3]]
    tol = {"ham_satisfied": TOLERANCES["ham_satisfied"]}
    run.write_csv("ham_check.csv", ["inertia_id", "residual_identity", "residual_spot_max", "satisfied"], rows, tol)
    run.write_summary("ham_check.json", not failures, {"expect": expect, "satisfied": sum(r[3] for r in rows),
                                                        "total": len(rows)}, tol, failures)
    return _finish(not failures, failures)


def cmd_drift_report(cfg, block: DriftBlock, base_dir: Path, workers: int) -> int:
    run = Run("drift-report", cfg, Path(cfg.output_dir))
    model = BallModel(cfg.n, build_inertia(cfg.inertia, cfg.n, base_dir))
    rep = drift_theorem_report(model, block.samples, np.random.default_rng(cfg.integrator.master_seed))
    cols = ["sample_id", "residual_theorem", "max_mech_horiz", "max_vel_horiz", "ham_residual"]
    rows = [[r[c] for c in cols] for r in rep.rows]
    tol = {k: TOLERANCES[k] for k in ("theorem", "mech_horiz", "vel_horiz", "ham_satisfied")}
    run.write_csv("drift_report.csv", cols, rows, tol)
    summ = rep.summary()
    failures = []
    if not summ["residual_theorem"]["max"] < tol["theorem"]:
        failures.append(f"residual_theorem: max {summ['residual_theorem']['max']:.3e} "
                        f"(opposite orientation max {summ['residual_opposite']['max']:.3e})")
    if not summ["max_mech_horiz"]["max"] < tol["mech_horiz"]:
        failures.append(f"max_mech_horiz: {summ['max_mech_horiz']['max']:.3e}")
    ham_ok = rep.column("ham_residual") < tol["ham_satisfied"]
    if ham_ok.any() and not rep.column("max_vel_horiz")[ham_ok].max() < tol["vel_horiz"]:
        failures.append(f"max_vel_horiz: {rep.column('max_vel_horiz')[ham_ok].max():.3e}")
    run.write_summary("drift_report.json", not failures, summ, tol, failures)
    return _finish(not failures, failures)


COMMANDS = {
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "generator-test": cmd_generator_test,
    "sphere-test": cmd_sphere_test,
    "ham-check": cmd_ham_check,
    "drift-report": cmd_drift_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chaplygin", description="Stochastic Chaplygin ball verification suites")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, type=Path, help="JSON experiment configuration")
    p.add_argument("--workers", type=int, default=1, help="worker processes for path ensembles")
    p.add_argument("--seed", type=int, default=None, help="override integrator.master_seed")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg, block = load_config(args.config, args.command, args.seed)
        return COMMANDS[args.command](cfg, block, args.config.parent, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LogSafetyError, FitRejected) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
