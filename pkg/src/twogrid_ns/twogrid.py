"""Backward-Euler two-grid driver and the one-grid Newton baseline.

Each time level runs

1. a Newton solve of the full nonlinear problem on the coarse mesh,
2. one Newton step on the fine mesh linearized about the coarse solution,
3. a correction on the fine mesh with the same operator as step 2.

Pressures are fixed by a zero-mean constraint. The saddle solver works with
``q = -p`` so that the momentum rows read ``A u + B^T q = f``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import mms
from .assembly import (
    apply_dirichlet,
    assemble_load,
    assemble_static,
    embed,
    linearized_convection,
    trilinear_vector,
)
from .linalg import SaddleSystem, SingularMatrixError
from .mesh import build_structured_mesh
from .space import PRESSURE, VELOCITY, FeFunction, build_dof_map

log = logging.getLogger(__name__)

MODES = ("twogrid", "onegrid")


class NewtonDivergence(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class StepFailure(RuntimeError):
    def __init__(self, step, cause):
        super().__init__(f"time step {step} failed: {cause}")
        self.step = step
        self.cause = cause


def parse_krule(krule: str, n_h: int) -> float:
    if krule == "h2":
        return 1.0 / n_h**2
    if krule == "h":
        return 1.0 / n_h
    if krule.startswith("fixed:"):
        try:
            k = float(krule.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad fixed time step in {krule!r}") from None
        if not k > 0:
            raise ValueError("time step must be positive")
        return k
    raise ValueError(f"unknown k rule {krule!r}; expected h2, h or fixed:<value>")


def coarse_for(n_h: int) -> int:
    """Coarse subdivisions with H^2 close to h."""
    return max(2, int(round(math.sqrt(n_h))))


@dataclass
class SimulationConfig:
    n_h: int = 16
    n_H: int | None = None
    nu: float = 1.0
    T: float = 1.0
    krule: str = "h2"
    k: float | None = None
    example: int | str = 1
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    mode: str = "twogrid"

    def __post_init__(self):
        if self.n_H is None:
            self.n_H = coarse_for(self.n_h)
        if self.k is None:
            self.k = parse_krule(self.krule, self.n_h)
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not (1 <= self.n_H <= self.n_h):
            raise ValueError(f"need 1 <= n_H <= n_h, got n_H={self.n_H}, n_h={self.n_h}")
        if not self.k > 0 or self.T < self.k * (1 - 1e-12):
            raise ValueError(f"need k > 0 and T >= k, got k={self.k}, T={self.T}")
        ratio = self.T / self.k
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError(f"T={self.T} is not an integer multiple of k={self.k}")
        if self.nu <= 0:
            raise ValueError("viscosity must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.k))


class Level:
    """Mesh, DOFs and the static operators on one resolution."""

    def __init__(self, n: int):
        self.mesh = build_structured_mesh(n)
        self.dofs = build_dof_map(self.mesh)
        self.forms = assemble_static(self.mesh, self.dofs)
        self.inner = self.dofs.interior_velocity_dofs
        self.areas = self.forms.areas
        _, self.B, _ = apply_dirichlet(None, self.forms.B, None, self.dofs)

    @property
    def n_unknowns(self) -> int:
        return len(self.inner) + self.dofs.n_pressure_dofs

    def velocity(self, inner_values) -> FeFunction:
        return FeFunction(VELOCITY, embed(inner_values, self.dofs), self.dofs)

    def pressure(self, q) -> FeFunction:
        return FeFunction(PRESSURE, -np.asarray(q), self.dofs)

    def restrict(self, matrix):
        return apply_dirichlet(matrix, None, None, self.dofs)[0]

    def divergence_residual(self, u: FeFunction) -> float:
        return float(np.linalg.norm(self.forms.B @ u.coefficients))

    def pressure_mean(self, p: FeFunction) -> float:
        return float(np.dot(self.areas, p.coefficients))


@lru_cache(maxsize=16)
def level(n: int) -> Level:
    return Level(n)


def initial_projection(u0, lev: Level):
    """Discretely divergence-free L2 projection of ``u0(x, y)``.

    Returns the projected velocity and the multiplier of the divergence
    constraint.
    """
    rhs = assemble_load(u0, lev.dofs, degree=mms.NORM_DEGREE)[lev.inner]
    m_i = lev.restrict(lev.forms.M)
    u_i, q = SaddleSystem(m_i, lev.B, lev.areas).solve(rhs)
    return lev.velocity(u_i), q


@dataclass
class TimeStepState:
    t: float
    n: int
    U_H: FeFunction | None = None
    P_H: FeFunction | None = None
    U_star: FeFunction | None = None
    P_star: FeFunction | None = None
    U_h: FeFunction | None = None
    P_h: FeFunction | None = None


@dataclass
class StepLog:
    n: int
    t: float
    newton_iterations: int
    newton_residuals: list
    fine_factorizations: int
    divergence: dict
    pressure_mean: dict
    seconds: float


@dataclass
class RunResult:
    state: TimeStepState
    steps: list = field(default_factory=list)
    wall_seconds: float = 0.0

    @property
    def fine_velocity(self) -> FeFunction:
        return self.state.U_h

    @property
    def fine_pressure(self) -> FeFunction:
        return self.state.P_h

    @property
    def total_fine_factorizations(self) -> int:
        return sum(s.fine_factorizations for s in self.steps)

    @property
    def mean_newton_iterations(self) -> float:
        return float(np.mean([s.newton_iterations for s in self.steps])) if self.steps else 0.0

    @property
    def max_divergence(self) -> float:
        return max((v for s in self.steps for v in s.divergence.values()), default=0.0)

    @property
    def max_pressure_mean(self) -> float:
        return max((abs(v) for s in self.steps for v in s.pressure_mean.values()), default=0.0)


class TwoGridSolver:
    """Holds the two levels and the manufactured case for one run."""

    def __init__(self, config: SimulationConfig, case: mms.ManufacturedCase | None = None):
        self.config = config
        self.case = case if case is not None else mms.get_case(config.example)
        self.coarse = level(config.n_H)
        self.fine = level(config.n_h)
        self.factorizations = 0

    # -- building blocks -------------------------------------------------

    def load(self, lev: Level, t: float) -> np.ndarray:
        return assemble_load(mms.forcing_field(self.case, t, self.config.nu), lev.dofs)

    def time_operator(self, lev: Level):
        k, nu = self.config.k, self.config.nu
        return lev.forms.M / k + nu * lev.forms.A

    def residual(self, lev: Level, x, u_prev: FeFunction, load: np.ndarray) -> np.ndarray:
        """Nonlinear backward-Euler residual in ``(u_inner, q, multiplier)``."""
        ni, nc = len(lev.inner), lev.dofs.n_pressure_dofs
        u = lev.velocity(x[:ni])
        q, lam = x[ni : ni + nc], x[-1]
        k = self.config.k
        r_u = (
            self.time_operator(lev) @ u.coefficients
            - lev.forms.M @ u_prev.coefficients / k
            - load
            + trilinear_vector(u, u, lev.dofs)
        )[lev.inner] + lev.B.T @ q
        r_q = lev.B @ x[:ni] + lev.areas * lam
        r_m = np.dot(lev.areas, q)
        return np.concatenate([r_u, r_q, [r_m]])

    def jacobian(self, lev: Level, u: FeFunction):
        return lev.restrict(self.time_operator(lev) + linearized_convection(u, lev.dofs))

    def newton(self, lev: Level, u_prev: FeFunction, q_prev, t: float):
        """Solve one implicit step; returns velocity, pressure and residual history."""
        cfg = self.config
        load = self.load(lev, t)
        scale = 1.0 + np.linalg.norm((lev.forms.M @ u_prev.coefficients / cfg.k + load)[lev.inner])
        x = np.concatenate([u_prev.coefficients[lev.inner], q_prev, [0.0]])
        ni, nc = len(lev.inner), lev.dofs.n_pressure_dofs
        res = self.residual(lev, x, u_prev, load)
        history = [float(np.linalg.norm(res))]
        iterations = 0
        while history[-1] > cfg.newton_tol * scale:
            if iterations >= cfg.newton_max_iter:
                raise NewtonDivergence(
                    f"Newton did not converge in {iterations} iterations (residual {history[-1]:.3e})", history[-1]
                )
            u = lev.velocity(x[:ni])
            system = SaddleSystem(self.jacobian(lev, u), lev.B, lev.areas)
            if lev is self.fine:
                self.factorizations += 1
            du, dq = system.solve(res[:ni], res[ni : ni + nc], res[-1])
            x = x - np.concatenate([du, dq, [system.multiplier]])
            iterations += 1
            res = self.residual(lev, x, u_prev, load)
            history.append(float(np.linalg.norm(res)))
            if not np.isfinite(history[-1]) or history[-1] > 1e6 * history[0] + 1e-300:
                raise NewtonDivergence(f"Newton diverged (residual {history[-1]:.3e})", history[-1])
        return lev.velocity(x[:ni]), x[ni : ni + nc], history

    # -- the three steps -----------------------------------------------

    def step1_coarse(self, state: TimeStepState, t: float):
        u, q, hist = self.newton(self.coarse, state.U_H, -state.P_H.coefficients, t)
        return u, self.coarse.pressure(q), hist

    def fine_operator(self, u_H: FeFunction) -> SaddleSystem:
        """Shared left-hand side of steps 2 and 3 (one factorization)."""
        fine = self.fine
        lhs = fine.restrict(self.time_operator(fine) + linearized_convection(u_H, fine.dofs))
        self.factorizations += 1
        return SaddleSystem(lhs, fine.B, fine.areas)

    def step2_fine(self, system: SaddleSystem, u_H: FeFunction, u_prev: FeFunction, load):
        fine = self.fine
        rhs = fine.forms.M @ u_prev.coefficients / self.config.k + load + trilinear_vector(u_H, u_H, fine.dofs)
        u_i, q = system.solve(rhs[fine.inner])
        return fine.velocity(u_i), fine.pressure(q)

    def step3_fine(self, system: SaddleSystem, u_H: FeFunction, u_star: FeFunction, u_prev: FeFunction, load):
        fine = self.fine
        dofs = fine.dofs
        rhs = (
            fine.forms.M @ u_prev.coefficients / self.config.k
            + load
            + trilinear_vector(u_H, u_star, dofs)
            + trilinear_vector(u_star, u_H, dofs)
            - trilinear_vector(u_star, u_star, dofs)
        )
        u_i, q = system.solve(rhs[fine.inner])
        return fine.velocity(u_i), fine.pressure(q)

    def one_grid_step(self, state: TimeStepState, t: float):
        u, q, hist = self.newton(self.fine, state.U_h, -state.P_h.coefficients, t)
        return u, self.fine.pressure(q), hist

    # -- driver -----------------------------------------------------------

    def initial_state(self) -> TimeStepState:
        u0 = mms.velocity(self.case, 0.0)
        state = TimeStepState(t=0.0, n=0)
        fine_u0, _ = initial_projection(u0, self.fine)
        state.U_h = fine_u0
        state.P_h = FeFunction(PRESSURE, np.zeros(self.fine.dofs.n_pressure_dofs), self.fine.dofs)
        if self.config.mode == "twogrid":
            state.U_H, _ = initial_projection(u0, self.coarse)
            state.P_H = FeFunction(PRESSURE, np.zeros(self.coarse.dofs.n_pressure_dofs), self.coarse.dofs)
            state.U_star = fine_u0.copy()
            state.P_star = state.P_h.copy()
        return state

    def advance(self, state: TimeStepState) -> StepLog:
        cfg = self.config
        n = state.n + 1
        t = n * cfg.k
        start = time.perf_counter()
        before = self.factorizations
        fine = self.fine
        if cfg.mode == "twogrid":
            state.U_H, state.P_H, hist = self.step1_coarse(state, t)
            load = self.load(fine, t)
            system = self.fine_operator(state.U_H)
            state.U_star, state.P_star = self.step2_fine(system, state.U_H, state.U_star, load)
            state.U_h, state.P_h = self.step3_fine(system, state.U_H, state.U_star, state.U_h, load)
            div = {
                "U_H": self.coarse.divergence_residual(state.U_H),
                "U_star": fine.divergence_residual(state.U_star),
                "U_h": fine.divergence_residual(state.U_h),
            }
            means = {
                "P_H": self.coarse.pressure_mean(state.P_H),
                "P_star": fine.pressure_mean(state.P_star),
                "P_h": fine.pressure_mean(state.P_h),
            }
        else:
            state.U_h, state.P_h, hist = self.one_grid_step(state, t)
            div = {"U_h": fine.divergence_residual(state.U_h)}
            means = {"P_h": fine.pressure_mean(state.P_h)}
        state.n, state.t = n, t
        return StepLog(n, t, len(hist) - 1, hist, self.factorizations - before, div, means,
                       time.perf_counter() - start)

    def run(self) -> RunResult:
        state = self.initial_state()
        result = RunResult(state)
        start = time.perf_counter()
        for _ in range(self.config.n_steps):
            try:
                result.steps.append(self.advance(state))
            except (NewtonDivergence, SingularMatrixError, np.linalg.LinAlgError) as exc:
                raise StepFailure(state.n + 1, exc) from exc
        result.wall_seconds = time.perf_counter() - start
        log.debug("run %s finished in %.2fs", self.config, result.wall_seconds)
        return result


def run(config: SimulationConfig, case: mms.ManufacturedCase | None = None) -> RunResult:
    return TwoGridSolver(config, case).run()
