"""Inviscid Eulerian smoke solver used as the ground-truth generator.

One step applies, in order: emitter injection, buoyancy on v-faces,
self-advection of velocity, pressure projection, then density advection by
the projected (divergence-free) velocity. Advection is first-order
semi-Lagrangian with a single backtrace and clamped bilinear sampling, so it
obeys the max principle in source-free regions. The box is closed with
free-slip walls; obstacle cells are solid with zero normal face velocity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import (
    Field2,
    GridDims,
    MacVelocity2,
    _bilinear,
    divergence,
    sample_field_many,
    sample_velocity,
)
from .rng import SplitMix64

DEFAULT_PROJECTION_TOL = 1e-5
DEFAULT_PROJECTION_MAX_ITERS = 400

EMITTER_MODES = ("emission", "inflow")


@dataclass(frozen=True)
class Emitter:
    """Disc source. `emission` injects density only; `inflow` also imposes
    an upward inflow velocity of `inflow_speed` on faces inside the disc."""

    x: float
    y: float
    radius: float
    rate: float
    mode: str = "emission"
    inflow_speed: float = 1.0

    def __post_init__(self):
        if self.mode not in EMITTER_MODES:
            raise ValueError(f"emitter mode must be one of {EMITTER_MODES}, got {self.mode!r}")
        if self.radius <= 0 or self.rate < 0:
            raise ValueError("emitter needs radius > 0 and rate >= 0")


@dataclass(frozen=True)
class Obstacle:
    x: float
    y: float
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("obstacle radius must be positive")


def _inside_domain(dims: GridDims, x: float, y: float) -> bool:
    return 0.0 <= x <= dims.width and 0.0 <= y <= dims.height


@dataclass(frozen=True)
class SceneConfig:
    dims: GridDims
    dt: float
    substeps_per_frame: int
    frames: int
    emitter: Emitter
    buoyancy: float
    obstacle: Obstacle | None = None
    seed: int = 0
    initial_noise: float = 0.0
    projection_tol: float = DEFAULT_PROJECTION_TOL
    projection_max_iters: int = DEFAULT_PROJECTION_MAX_ITERS

    def __post_init__(self):
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        if self.substeps_per_frame < 1:
            raise ValueError("substeps_per_frame must be >= 1")
        if self.frames < 2:
            raise ValueError("need at least 2 frames")
        if not _inside_domain(self.dims, self.emitter.x, self.emitter.y):
            raise ValueError("emitter center lies outside the domain")
        if self.obstacle is not None and not _inside_domain(
            self.dims, self.obstacle.x, self.obstacle.y
        ):
            raise ValueError("obstacle center lies outside the domain")

    @property
    def dense_dt(self) -> float:
        return self.dt / self.substeps_per_frame


@dataclass
class SimState:
    density: Field2
    velocity: MacVelocity2
    pressure: Field2
    solids: np.ndarray  # bool, (ny, nx)
    time: float = 0.0
    projection_converged: bool = True

    def copy(self) -> "SimState":
        return SimState(
            self.density.copy(),
            self.velocity.copy(),
            self.pressure.copy(),
            self.solids.copy(),
            self.time,
            self.projection_converged,
        )


def solid_mask(dims: GridDims, obstacle: Obstacle | None) -> np.ndarray:
    mask = np.zeros((dims.ny, dims.nx), dtype=bool)
    if obstacle is not None:
        X, Y = dims.cell_centers()
        mask = (X - obstacle.x) ** 2 + (Y - obstacle.y) ** 2 <= obstacle.radius**2
    return mask


def emitter_mask(dims: GridDims, emitter: Emitter) -> np.ndarray:
    X, Y = dims.cell_centers()
    return (X - emitter.x) ** 2 + (Y - emitter.y) ** 2 <= emitter.radius**2


def initial_state(scene: SceneConfig) -> SimState:
    dims = scene.dims
    vel = MacVelocity2.zeros(dims)
    if scene.initial_noise > 0:
        rng = SplitMix64(scene.seed)
        vel.u += scene.initial_noise * rng.normals(vel.u.shape)
        vel.v += scene.initial_noise * rng.normals(vel.v.shape)
    return SimState(
        density=Field2.zeros(dims),
        velocity=vel,
        pressure=Field2.zeros(dims),
        solids=solid_mask(dims, scene.obstacle),
        time=0.0,
    )


def advect_semi_lagrangian(
    fld: Field2, vel: MacVelocity2, dt: float, warn_cfl: bool = True
) -> Field2:
    """Backtrace each cell center along `vel` and sample the source field.

    Callers that take a deliberate long jump (consistency references,
    re-advection baselines) pass warn_cfl=False and accept the smearing."""
    dims = fld.dims
    cfl = dt * vel.max_speed() / dims.dx
    if warn_cfl and cfl > 1.0:
        warnings.warn(f"advection CFL {cfl:.2f} exceeds 1; expect extra smearing", stacklevel=2)
    X, Y = dims.cell_centers()
    uc, vc = sample_velocity(vel, X, Y)
    return Field2(dims, sample_field_many(fld, X - dt * uc, Y - dt * vc))


def advect_velocity(vel: MacVelocity2, dt: float) -> MacVelocity2:
    """Self-advection: backtrace each face along the full interpolated velocity."""
    dims = vel.dims
    dx = dims.dx
    # u faces
    xs = np.arange(dims.nx + 1) * dx
    ys = (np.arange(dims.ny) + 0.5) * dx
    X, Y = np.meshgrid(xs, ys)
    fu, fv = sample_velocity(vel, X, Y)
    bx, by = X - dt * fu, Y - dt * fv
    new_u = _bilinear(vel.u, bx / dx, by / dx - 0.5)
    # v faces
    xs = (np.arange(dims.nx) + 0.5) * dx
    ys = np.arange(dims.ny + 1) * dx
    X, Y = np.meshgrid(xs, ys)
    fu, fv = sample_velocity(vel, X, Y)
    bx, by = X - dt * fu, Y - dt * fv
    new_v = _bilinear(vel.v, bx / dx - 0.5, by / dx)
    return MacVelocity2(dims, new_u, new_v)


def enforce_boundaries(vel: MacVelocity2, solids: np.ndarray) -> MacVelocity2:
    """Zero normal velocity on wall and solid faces (free slip)."""
    u = vel.u.copy()
    v = vel.v.copy()
    u[:, 0] = 0.0
    u[:, -1] = 0.0
    v[0, :] = 0.0
    v[-1, :] = 0.0
    # faces adjacent to a solid cell carry zero normal velocity
    u[:, 1:-1][solids[:, :-1] | solids[:, 1:]] = 0.0
    v[1:-1, :][solids[:-1, :] | solids[1:, :]] = 0.0
    return MacVelocity2(vel.dims, u, v)


def _apply_poisson(phi: np.ndarray, fluid: np.ndarray, inv_dx2: float) -> np.ndarray:
    """Matrix-free A phi for the 5-point Neumann Poisson operator.

    A = -Laplacian restricted to fluid cells; wall/solid neighbors drop out
    (zero-gradient), so the diagonal counts fluid neighbors only.
    """
    phi = np.where(fluid, phi, 0.0)
    padded = np.pad(phi, 1)
    fpad = np.pad(fluid, 1)
    out = np.zeros_like(phi)
    deg = np.zeros_like(phi)
    for dj, di in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        nb_fluid = fpad[1 + dj : 1 + dj + phi.shape[0], 1 + di : 1 + di + phi.shape[1]]
        nb_phi = padded[1 + dj : 1 + dj + phi.shape[0], 1 + di : 1 + di + phi.shape[1]]
        out -= np.where(nb_fluid, nb_phi, 0.0)
        deg += nb_fluid
    out += deg * phi
    return np.where(fluid, out * inv_dx2, 0.0)


def project(
    vel: MacVelocity2,
    solids: np.ndarray,
    tol: float = DEFAULT_PROJECTION_TOL,
    max_iters: int = DEFAULT_PROJECTION_MAX_ITERS,
    initial_pressure: Field2 | None = None,
) -> tuple[MacVelocity2, Field2, bool]:
    """Make `vel` divergence-free over fluid cells via a CG pressure solve.

    Returns (velocity, pressure, converged). The CG residual equals the
    post-correction divergence field, so iteration stops exactly when the
    divergence L-inf bound is met. The system is pure-Neumann (singular up to
    a constant); the right-hand side is mean-centered to stay consistent.
    """
    if not (tol > 0):
        raise ValueError("projection tolerance must be positive")
    dims = vel.dims
    fluid = ~solids
    vel = enforce_boundaries(vel, solids)
    rhs = np.where(fluid, -divergence(vel).values, 0.0)
    nfluid = int(fluid.sum())
    if nfluid == 0:
        return vel, Field2.zeros(dims), True
    rhs -= np.where(fluid, rhs.sum() / nfluid, 0.0)

    inv_dx2 = 1.0 / dims.dx**2
    phi = (
        np.where(fluid, initial_pressure.values, 0.0)
        if initial_pressure is not None
        else np.zeros_like(rhs)
    )
    stop = 0.9 * tol  # margin so the re-applied correction stays under tol
    r = rhs - _apply_poisson(phi, fluid, inv_dx2)
    converged = bool(np.abs(r).max() <= stop)
    if not converged:
        p = r.copy()
        rs = float((r * r).sum())
        for _ in range(max_iters):
            ap = _apply_poisson(p, fluid, inv_dx2)
            pap = float((p * ap).sum())
            if pap <= 0:
                break
            alpha = rs / pap
            phi += alpha * p
            r -= alpha * ap
            if np.abs(r).max() <= stop:
                converged = True
                break
            rs_new = float((r * r).sum())
            p = r + (rs_new / rs) * p
            rs = rs_new

    # subtract the pressure gradient on interior fluid faces only
    u = vel.u.copy()
    v = vel.v.copy()
    gphi_x = (phi[:, 1:] - phi[:, :-1]) / dims.dx
    open_u = fluid[:, :-1] & fluid[:, 1:]
    u[:, 1:-1][open_u] -= gphi_x[open_u]
    gphi_y = (phi[1:, :] - phi[:-1, :]) / dims.dx
    open_v = fluid[:-1, :] & fluid[1:, :]
    v[1:-1, :][open_v] -= gphi_y[open_v]
    return MacVelocity2(dims, u, v), Field2(dims, phi), converged


def inject_emitter(state: SimState, emitter: Emitter, dt: float) -> SimState:
    dims = state.density.dims
    mask = emitter_mask(dims, emitter) & ~state.solids
    density = state.density.values.copy()
    density[mask] += emitter.rate * dt
    vel = state.velocity
    if emitter.mode == "inflow":
        u = vel.u.copy()
        v = vel.v.copy()
        xs = (np.arange(dims.nx) + 0.5) * dims.dx
        ys = np.arange(dims.ny + 1) * dims.dx
        X, Y = np.meshgrid(xs, ys)
        vmask = (X - emitter.x) ** 2 + (Y - emitter.y) ** 2 <= emitter.radius**2
        v[vmask] = emitter.inflow_speed
        vel = MacVelocity2(dims, u, v)
    return SimState(
        Field2(dims, density), vel, state.pressure, state.solids, state.time,
        state.projection_converged,
    )


def apply_buoyancy(vel: MacVelocity2, density: Field2, buoyancy: float, dt: float) -> MacVelocity2:
    """Add dt * buoyancy * rho to v-faces, rho averaged from adjacent cells."""
    v = vel.v.copy()
    rho = density.values
    v[1:-1, :] += dt * buoyancy * 0.5 * (rho[:-1, :] + rho[1:, :])
    return MacVelocity2(vel.dims, vel.u.copy(), v)


def step(state: SimState, scene: SceneConfig, dt: float) -> SimState:
    if not (dt > 0):
        raise ValueError("dt must be positive")
    dims = scene.dims
    st = inject_emitter(state, scene.emitter, dt)
    vel = apply_buoyancy(st.velocity, st.density, scene.buoyancy, dt)
    vel = enforce_boundaries(vel, st.solids)
    vel = advect_velocity(vel, dt)
    vel, pressure, converged = project(
        vel,
        st.solids,
        tol=scene.projection_tol,
        max_iters=scene.projection_max_iters,
        initial_pressure=state.pressure,
    )
    density = advect_semi_lagrangian(st.density, vel, dt)
    rho = density.values.copy()
    rho[st.solids] = 0.0
    return SimState(
        density=Field2(dims, rho),
        velocity=vel,
        pressure=pressure,
        solids=st.solids,
        time=state.time + dt,
        projection_converged=converged,
    )


@dataclass
class SimSequence:
    """Dense simulation output; keyframes are every `keyframe_stride`-th frame."""

    scene: SceneConfig
    states: list[SimState] = field(default_factory=list)

    @property
    def keyframe_stride(self) -> int:
        return self.scene.substeps_per_frame

    @property
    def keyframe_indices(self) -> list[int]:
        return list(range(0, len(self.states), self.keyframe_stride))

    def keyframes(self) -> list[SimState]:
        return [self.states[i] for i in self.keyframe_indices]


def generate_scenario(scene: SceneConfig) -> SimSequence:
    """Run the dense simulation; aborts on projection non-convergence."""
    n_steps = (scene.frames - 1) * scene.substeps_per_frame
    state = initial_state(scene)
    seq = SimSequence(scene, [state])
    dt = scene.dense_dt
    for k in range(n_steps):
        state = step(state, scene, dt)
        if not state.projection_converged:
            raise RuntimeError(
                f"pressure projection failed to reach tol={scene.projection_tol} "
                f"within {scene.projection_max_iters} iterations at dense step {k + 1}"
            )
        seq.states.append(state)
    return seq
