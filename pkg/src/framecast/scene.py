"""Synthetic dynamic scene: a PID-driven disk rendered into grayscale frames.

A point-mass target is steered from one of a few start points to one of a
few goal points by a PID controller whose gains are drawn per trial.  The
camera is stationary by default; in "moving" observer mode it pans with a
randomly commanded velocity, which is recorded as the episode's actions.
Trajectories are cut into non-overlapping windows of ``t_in + t_out``
frames, one :class:`Episode` per window.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import Rng

log = logging.getLogger(__name__)

BACKGROUND = 220
FOREGROUND = 40
SUPERSAMPLE = 8

ACTION_DIM = 2  # commanded ego (vx, vy)
STATE_DIM = 4  # ego (x, y, vx, vy)


@dataclass(frozen=True)
class WorldSpec:
    rows: int = 64
    cols: int = 64
    radius: float = 0.1
    starts: tuple = ((0.15, 0.2), (0.15, 0.5), (0.15, 0.8))
    goals: tuple = ((0.85, 0.15), (0.85, 0.4), (0.85, 0.6), (0.85, 0.85))
    kp: tuple = (2.0, 6.0)
    ki: tuple = (0.0, 0.5)
    kd: tuple = (2.0, 5.0)
    dt: float = 0.1
    max_speed: float = 0.5
    max_steps: int = 200
    noise_sigma: float = 0.0
    observer: str = "stationary"
    ego_speed: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.observer not in ("stationary", "moving"):
            raise ValueError(f"observer must be 'stationary' or 'moving', got {self.observer!r}")
        if not self.starts or not self.goals:
            raise ValueError("need at least one start and one goal")

    @property
    def min_radius(self) -> float:
        # a disk narrower than one pixel could vanish between samples
        return 0.5 / min(self.rows, self.cols)


@dataclass
class PidState:
    pos: np.ndarray
    vel: np.ndarray
    integral: np.ndarray
    prev_error: np.ndarray


def pid_step(
    gains: tuple[float, float, float],
    state: PidState,
    goal,
    dt: float,
    max_speed: float = np.inf,
    arena: float = 1.0,
) -> tuple[np.ndarray, PidState]:
    """One controller update and one point-mass integration step.

    Returns the acceleration command and the new state.  Velocity is clamped
    to ``max_speed`` (by norm), the position to ``[0, arena]``, and the error
    integral to ``±10 * arena``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    kp, ki, kd = gains
    err = np.asarray(goal, dtype=float) - state.pos
    limit = 10.0 * arena
    integral = np.clip(state.integral + err * dt, -limit, limit)
    u = kp * err + ki * integral + kd * (err - state.prev_error) / dt
    vel = state.vel + u * dt
    speed = float(np.hypot(*vel))
    if speed > max_speed:
        vel = vel * (max_speed / speed)
    pos = np.clip(state.pos + vel * dt, 0.0, arena)
    return u, PidState(pos, vel, integral, err)


def render(pos, spec: WorldSpec, rng: Rng | None = None) -> np.ndarray:
    """Draw the disk centred at ``pos`` = (x, y) into a ``rows x cols`` uint8 frame.

    x runs along columns, y along rows.  Edge pixels take an intensity
    proportional to the fraction of their area the disk covers (estimated
    on an 8x8 sub-pixel grid).
    """
    rows, cols = spec.rows, spec.cols
    r = max(spec.radius, spec.min_radius)
    sub = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    ys = ((np.arange(rows)[:, None] + sub[None, :]) / rows).ravel()
    xs = ((np.arange(cols)[:, None] + sub[None, :]) / cols).ravel()
    dy2 = (ys - pos[1]) ** 2
    dx2 = (xs - pos[0]) ** 2
    inside = (dy2[:, None] + dx2[None, :]) <= r * r
    coverage = inside.reshape(rows, SUPERSAMPLE, cols, SUPERSAMPLE).mean(axis=(1, 3))
    img = BACKGROUND + (FOREGROUND - BACKGROUND) * coverage
    if spec.noise_sigma > 0:
        if rng is None:
            raise ValueError("sensor noise needs an rng")
        img = img + rng.normal(spec.noise_sigma, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


@dataclass
class EpisodeMeta:
    trial: int
    start: int
    goal: int
    window: int
    gains: tuple[float, float, float]


@dataclass
class Episode:
    input_frames: np.ndarray  # (t_in, rows, cols) uint8
    target_frames: np.ndarray  # (t_out, rows, cols) uint8
    actions: np.ndarray  # (t_out, action_dim)
    states: np.ndarray  # (t_out, state_dim)
    meta: EpisodeMeta = field(default_factory=lambda: EpisodeMeta(0, 0, 0, 0, (0.0, 0.0, 0.0)))


@dataclass
class Dataset:
    rows: int
    cols: int
    t_in: int
    t_out: int
    action_dim: int = ACTION_DIM
    state_dim: int = STATE_DIM
    episodes: list[Episode] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.episodes)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return replace(self, episodes=self.episodes[i])
        return self.episodes[i]

    def frames(self) -> np.ndarray:
        """Every input and target frame, stacked ``(N, rows, cols)``."""
        if not self.episodes:
            return np.zeros((0, self.rows, self.cols), dtype=np.uint8)
        return np.concatenate(
            [np.concatenate([e.input_frames, e.target_frames]) for e in self.episodes]
        )


@dataclass
class Trajectory:
    object_pos: np.ndarray  # (L, 2)
    ego_pos: np.ndarray  # (L, 2)
    ego_vel: np.ndarray  # (L, 2)
    commands: np.ndarray  # (L, 2)
    gains: tuple[float, float, float]
    start: int
    goal: int


def simulate_trial(spec: WorldSpec, trial: int) -> Trajectory:
    """Run one PID trial until the object settles at its goal or ``max_steps`` elapse."""
    rng = Rng.derived(spec.seed, trial)
    start = rng.integers(len(spec.starts))
    goal_idx = rng.integers(len(spec.goals))
    gains = (rng.uniform(*spec.kp), rng.uniform(*spec.ki), rng.uniform(*spec.kd))
    goal = np.asarray(spec.goals[goal_idx], dtype=float)
    pos = np.asarray(spec.starts[start], dtype=float)
    # prev_error starts at the initial error so the derivative term has no kick
    state = PidState(pos, np.zeros(2), np.zeros(2), goal - pos)

    ego = np.zeros(2)
    ego_vel = np.zeros(2)
    cmd = np.zeros(2)
    objs, egos, ego_vels, cmds = [pos.copy()], [ego.copy()], [ego_vel.copy()], [cmd.copy()]
    # settled: inside the disk footprint and creeping by < 0.4% of the arena per step
    settle_speed = 0.004 / spec.dt
    for _ in range(spec.max_steps - 1):
        _, state = pid_step(gains, state, goal, spec.dt, spec.max_speed)
        if spec.observer == "moving":
            if rng.uniform(0.0, 1.0) < 0.3:
                cmd = rng.uniform(-spec.ego_speed, spec.ego_speed, size=2)
            # keep the target inside the field of view
            new_ego = np.clip(ego + cmd * spec.dt, state.pos - 1.0, state.pos)
            ego_vel = (new_ego - ego) / spec.dt
            ego = new_ego
        objs.append(state.pos.copy())
        egos.append(ego.copy())
        ego_vels.append(ego_vel.copy())
        cmds.append(cmd.copy())
        if np.hypot(*(goal - state.pos)) < spec.radius and np.hypot(*state.vel) < settle_speed:
            break
    return Trajectory(np.array(objs), np.array(egos), np.array(ego_vels), np.array(cmds), gains, start, goal_idx)


def _trial_episodes(spec: WorldSpec, trial: int, t_in: int, t_out: int) -> list[Episode]:
    traj = simulate_trial(spec, trial)
    window = t_in + t_out
    n_windows = len(traj.object_pos) // window
    if n_windows == 0:
        return []
    noise_rng = Rng.derived(spec.seed, trial, 1) if spec.noise_sigma > 0 else None
    view = traj.object_pos - traj.ego_pos
    frames = np.stack([render(p, spec, noise_rng) for p in view[: n_windows * window]])
    out = []
    for w in range(n_windows):
        sl = slice(w * window, (w + 1) * window)
        tgt = slice(w * window + t_in, (w + 1) * window)
        out.append(
            Episode(
                input_frames=frames[sl][:t_in],
                target_frames=frames[sl][t_in:],
                actions=traj.commands[tgt].copy(),
                states=np.concatenate([traj.ego_pos[tgt], traj.ego_vel[tgt]], axis=1),
                meta=EpisodeMeta(trial, traj.start, traj.goal, w, traj.gains),
            )
        )
    return out


def generate_dataset(
    spec: WorldSpec,
    trials: int | None = None,
    t_in: int = 5,
    t_out: int = 5,
    episodes: int | None = None,
    workers: int = 1,
) -> Dataset:
    """Simulate trials and cut them into episodes.

    With ``trials`` exactly that many trials are run.  With ``episodes``
    trials keep running (in id order) until that many episodes exist, and
    the surplus from the last trial is dropped.  Either way the result
    depends only on ``spec`` (including its seed), never on ``workers``.
    """
    if trials is None and episodes is None:
        raise ValueError("give trials, episodes, or both")
    if trials is not None and trials < 1:
        raise ValueError("trials must be >= 1")
    ds = Dataset(spec.rows, spec.cols, t_in, t_out)
    skipped = 0
    next_trial = 0
    chunk = max(1, workers) * 8
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        while True:
            if trials is not None:
                batch = range(next_trial, min(next_trial + chunk, trials))
            else:
                batch = range(next_trial, next_trial + chunk)
            if not batch:
                break
            results = list(pool.map(lambda t: _trial_episodes(spec, t, t_in, t_out), batch))
            next_trial = batch[-1] + 1
            for eps in results:
                if not eps:
                    skipped += 1
                ds.episodes.extend(eps)
            if episodes is not None and len(ds.episodes) >= episodes:
                del ds.episodes[episodes:]
                break
            if next_trial > 1_000_000:
                raise RuntimeError("trajectories never fill a window; check WorldSpec")
    if skipped:
        log.warning("%d trial(s) shorter than one %d-frame window were skipped", skipped, t_in + t_out)
    return ds
