"""Left-trivialized Stratonovich integration on SO(n) and on Q = SO(n) x R^(n-1).

The projected non-holonomic diffusion is

    s^-1 ds = V0 dt + sum_i V_i o dB^i + sum_a U_a o dW^a

with ``V0 = -1/2 mu0^-1 I sum nabla^I_{v_i} v_i``, ``V_i = mu0^-1 I v_i`` and
``U_a = -mu0^-1 zeta_a``.  Steps are taken in exponential coordinates,
``s <- s exp(b)``, with a Heun predictor-corrector on the noise fields.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .ball import BallModel
from .lie import LogSafetyError, as_matrix, expm_skew

__all__ = [
    "IntegratorConfig",
    "NoiseConfig",
    "PathEnsemble",
    "QEnsemble",
    "QState",
    "StepRejected",
    "draw_increments",
    "nh_vector_fields",
    "path_generator",
    "q_bm_step",
    "simulate_ensemble",
    "simulate_q_ensemble",
    "step",
]

log = logging.getLogger(__name__)

SCHEMES = {"euler_exp": 0, "heun_exp": 1}
CHUNK = 2048


class StepRejected(LogSafetyError):
    def __init__(self, path: int, step: int):
        super().__init__(f"path {path}: step {step} left the exp/log safety region; reduce h")
        self.path = path
        self.step = step


@dataclass(frozen=True)
class NoiseConfig:
    angular: bool = True
    translational: bool = True
    include_h0_drift: bool = True

    @property
    def drift_active(self) -> bool:
        # V0 comes from H_0, which belongs to the angular channel
        return self.angular and self.include_h0_drift

    @property
    def stochastic(self) -> bool:
        return self.angular or self.translational


@dataclass(frozen=True)
class IntegratorConfig:
    h: float = 1e-3
    scheme: str = "heun_exp"
    reorth_interval: int = 100
    master_seed: int = 0
    path_count: int = 1

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"step size must be positive, got {self.h}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {sorted(SCHEMES)}")
        if self.path_count < 1:
            raise ValueError("path_count must be >= 1")
        if self.reorth_interval < 1:
            raise ValueError("reorth_interval must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in 64 bits")


@dataclass
class QState:
    s: np.ndarray
    x: np.ndarray


def nh_vector_fields(model: BallModel, s):
    """``(V0, V, U)`` with ``V`` of shape ``(m, m)`` and ``U`` of shape
    ``(n-1, m)``, one field per row."""
    P = model.at(as_matrix(s))
    V0 = -0.5 * P.solve(model.gram @ model.sum_nabla_I)
    V = P.solve(model.gram @ model.v_frame).T
    U = -P.solve(P.zeta.T).T
    return V0, V, U


def _scaled_fields(model):
    gv = model.gram @ model.v_frame
    gw0 = -0.5 * model.gram @ model.sum_nabla_I
    return gv, gw0


def step(model: BallModel, s, dt: float, dB, dW, cfg: IntegratorConfig, noise: NoiseConfig = NoiseConfig(),
         step_index: int = 0, backend: str | None = None) -> np.ndarray:
    """One step from ``s`` with caller-supplied increments.

    Inactive channels are zeroed here.  Re-orthonormalization follows the
    policy in ``cfg`` with ``step_index`` counting completed steps.
    """
    S = as_matrix(s)
    incr = _mask(np.concatenate([np.asarray(dB, float), np.asarray(dW, float)]), model, noise)
    gv, gw0 = _scaled_fields(model)
    # the kernels apply the periodic policy at (step + 1) % interval == 0
    interval = cfg.reorth_interval
    out, _, status = kernels.integrate_nh(
        S[None], incr[None, None, :], model.gram, gv, gw0, model.basis.pairs, dt,
        noise.drift_active, SCHEMES[cfg.scheme], 1 if (step_index + 1) % interval == 0 else 2**31 - 1, 1,
        backend=backend,
    )
    if status[0]:
        raise StepRejected(0, step_index + 1)
    return out[0]


def _mask(incr: np.ndarray, model: BallModel, noise: NoiseConfig) -> np.ndarray:
    incr = np.array(incr, dtype=float)
    if not noise.angular:
        incr[..., : model.m] = 0.0
    if not noise.translational:
        incr[..., model.m:] = 0.0
    return incr


def path_generator(master_seed: int, path: int) -> np.random.Generator:
    """Counter-based stream for one path: Philox keyed by ``(seed, path)``."""
    key = np.array([master_seed, path], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def draw_increments(master_seed: int, paths: range, steps: int, channels: int, h: float) -> np.ndarray:
    """Gaussian increments ``(len(paths), steps, channels)`` with variance ``h``.

    Per step the channel order is ``B`` then ``W``; a path's numbers depend only
    on ``(master_seed, path)``.
    """
    out = np.empty((len(paths), steps, channels))
    sq = np.sqrt(h)
    for r, p in enumerate(paths):
        out[r] = sq * path_generator(master_seed, p).standard_normal((steps, channels))
    return out


@dataclass
class PathEnsemble:
    """Terminal states and snapshots; arrays are indexed by path."""

    times: np.ndarray
    terminal: np.ndarray
    snapshots: np.ndarray | None
    backend: str

    @property
    def path_count(self) -> int:
        return self.terminal.shape[0]


def _run_chunk(args):
    model, s0, start, stop, steps, cfg, noise, stride, keep, backend = args
    incr = draw_increments(cfg.master_seed, range(start, stop), steps, model.m + model.n - 1, cfg.h)
    incr = _mask(incr, model, noise)
    gv, gw0 = _scaled_fields(model)
    s_init = np.broadcast_to(as_matrix(s0), (stop - start, model.n, model.n))
    terminal, snaps, status = kernels.integrate_nh(
        s_init, incr, model.gram, gv, gw0, model.basis.pairs, cfg.h, noise.drift_active,
        SCHEMES[cfg.scheme], cfg.reorth_interval, stride, backend=backend,
    )
    bad = np.flatnonzero(status)
    if bad.size:
        raise StepRejected(start + int(bad[0]), int(status[bad[0]]))
    return start, terminal, (snaps if keep else None)


def _chunks(path_count: int, chunk: int):
    return [(a, min(a + chunk, path_count)) for a in range(0, path_count, chunk)]


def simulate_ensemble(model: BallModel, s0, T: float, cfg: IntegratorConfig, noise: NoiseConfig = NoiseConfig(),
                      workers: int = 1, snapshot_stride: int | None = None, backend: str | None = None,
                      chunk: int = CHUNK) -> PathEnsemble:
    """Simulate ``cfg.path_count`` independent paths up to time ``T``.

    Paths are split into fixed chunks independent of ``workers``; results are
    assembled by path index, so output is identical for any worker count.
    """
    steps = int(round(T / cfg.h))
    if steps < 1:
        raise ValueError(f"T={T} is shorter than one step h={cfg.h}")
    if not noise.stochastic and not noise.drift_active:
        log.info("no active channel: paths are constant")
    stride = snapshot_stride or steps
    if steps % stride:
        raise ValueError(f"snapshot stride {stride} does not divide the {steps} steps")
    backend = backend or kernels.active()
    tasks = [(model, as_matrix(s0), a, b, steps, cfg, noise, stride, snapshot_stride is not None, backend)
             for a, b in _chunks(cfg.path_count, chunk)]
    n = model.n
    terminal = np.empty((cfg.path_count, n, n))
    snaps = np.empty((cfg.path_count, steps // stride + 1, n, n)) if snapshot_stride else None
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_chunk, tasks))
    else:
        results = map(_run_chunk, tasks)
    for start, term, sn in results:
        terminal[start:start + term.shape[0]] = term
        if snaps is not None:
            snaps[start:start + term.shape[0]] = sn
    times = cfg.h * stride * np.arange(steps // stride + 1)
    return PathEnsemble(times, terminal, snaps, backend)


# Brownian motion on Q = K x V


def q_bm_step(model: BallModel, state: QState, dt: float, dB, dW, cfg: IntegratorConfig | None = None,
              noise: NoiseConfig = NoiseConfig()) -> QState:
    """Base projection of the unconstrained Hamiltonian system.

    The ``s`` coefficients are left-invariant, so the Heun corrector equals the
    predictor and ``s <- s exp(-1/2 sum nabla^I_{v_i} v_i dt + sum v_i dB^i)``.
    """
    s, x = _q_batch(model, as_matrix(state.s)[None], np.asarray(state.x, float)[None],
                    np.asarray(dB, float)[None], np.asarray(dW, float)[None], dt, noise)
    return QState(s[0], x[0])


def _q_batch(model, s, x, dB, dW, dt, noise):
    a = np.zeros((s.shape[0], model.m))
    if noise.angular:
        a += dB @ model.v_frame.T
        if noise.include_h0_drift:
            a += -0.5 * dt * model.sum_nabla_I
    if np.any(np.linalg.norm(a, axis=-1) >= np.pi / 3):
        raise LogSafetyError("group increment left the exp/log safety region; reduce h")
    s = s @ expm_skew(model.basis.to_matrix(a))
    if noise.translational:
        x = x + dW
    return s, x


@dataclass
class QEnsemble:
    terminal_s: np.ndarray
    terminal_x: np.ndarray


def simulate_q_ensemble(model: BallModel, state: QState, T: float, cfg: IntegratorConfig,
                        noise: NoiseConfig = NoiseConfig(), chunk: int = CHUNK) -> QEnsemble:
    steps = int(round(T / cfg.h))
    n, m = model.n, model.m
    S = np.empty((cfg.path_count, n, n))
    Xs = np.empty((cfg.path_count, n - 1))
    for a, b in _chunks(cfg.path_count, chunk):
        incr = _mask(draw_increments(cfg.master_seed, range(a, b), steps, m + n - 1, cfg.h), model, noise)
        s = np.broadcast_to(as_matrix(state.s), (b - a, n, n)).copy()
        x = np.broadcast_to(np.asarray(state.x, float), (b - a, n - 1)).copy()
        for k in range(steps):
            s, x = _q_batch(model, s, x, incr[:, k, :m], incr[:, k, m:], cfg.h, noise)
            if (k + 1) % cfg.reorth_interval == 0:
                s = _polar(s)
        S[a:b], Xs[a:b] = s, x
    return QEnsemble(S, Xs)


def _polar(s):
    U, _, Vt = np.linalg.svd(s)
    return U @ Vt
