"""Synthetic indoor navigation environment.

A square room rendered to a first-person RGB view. The robot moves with
polar-coordinate commands (initial rotation, forward distance, final
rotation); a target object of a configurable shape/color stands on the
floor; an optional pillar obstacle can block the direct path.

Rendering is a pure function of state: a small column raycaster draws the
four walls in distinct hues with distance shading, so images determine
the robot pose, and the target is a flat-colored sprite whose on-screen
position and size encode its bearing and range. All randomness comes from
caller-supplied generators.

Fixed scene constants (centimeters): camera height 40, wall height 120,
target radius 25, 90 degree field of view, horizon at mid-frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from dreamnav.data import Dataset, Episode
from dreamnav.errors import ConfigError

CAM_HEIGHT = 40.0
WALL_HEIGHT = 120.0
TARGET_RADIUS = 25.0
TARGET_HEIGHT = 50.0
OBSTACLE_RADIUS = 25.0
OBSTACLE_HEIGHT = 100.0
ROBOT_RADIUS = 15.0
PLACE_MARGIN = 30.0
MIN_DEPTH = 6.0

ALPHA_RANGE = (-30.0, 30.0)
V_RANGE = (0.0, 20.0)
OMEGA_RANGE = (-30.0, 30.0)

FLOOR_COLOR = (70, 72, 82)
CEILING_COLOR = (24, 24, 28)
WALL_COLORS = ((158, 120, 92), (96, 128, 160), (120, 150, 96), (150, 96, 128))
OBSTACLE_COLOR = (110, 80, 60)


@dataclass(frozen=True)
class TargetType:
    shape: str  # square | circle | triangle | diamond
    color: tuple[int, int, int]
    name: str


SEEN_TARGETS: tuple[TargetType, ...] = (
    TargetType("square", (230, 40, 40), "red-square"),
    TargetType("circle", (40, 200, 60), "green-circle"),
    TargetType("triangle", (50, 90, 235), "blue-triangle"),
    TargetType("circle", (235, 215, 40), "yellow-circle"),
    TargetType("square", (225, 50, 215), "magenta-square"),
    TargetType("triangle", (45, 210, 210), "cyan-triangle"),
    TargetType("diamond", (240, 140, 30), "orange-diamond"),
)

# held-out shape/color combinations; each shape and color appears above
UNSEEN_TARGETS: tuple[TargetType, ...] = (
    TargetType("circle", (230, 40, 40), "red-circle"),
    TargetType("square", (45, 210, 210), "cyan-square"),
)


@dataclass(frozen=True)
class WorldConfig:
    room_w: float = 500.0
    room_h: float = 500.0
    target_types: tuple[TargetType, ...] = SEEN_TARGETS
    obstacle_enabled: bool = False
    goal_radius: float = 20.0
    render_size: int = 64
    start_distance: tuple[float, float] = (60.0, 400.0)

    def __post_init__(self):
        if self.render_size not in (32, 64, 128, 256):
            raise ConfigError(f"render_size must be one of 32/64/128/256, got {self.render_size}")
        if self.goal_radius <= 0:
            raise ConfigError("goal_radius must be positive")
        if not self.target_types:
            raise ConfigError("at least one target type is required")
        usable = min(self.room_w, self.room_h) - 2 * PLACE_MARGIN
        if usable <= self.start_distance[0]:
            raise ConfigError(
                f"room {self.room_w}x{self.room_h} too small for start separation "
                f">= {self.start_distance[0]}"
            )


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float  # degrees in [0, 360)

    def __post_init__(self):
        object.__setattr__(self, "theta", self.theta % 360.0)


@dataclass(frozen=True)
class EnvAction:
    d_alpha: float  # deg
    d_v: float  # cm
    d_omega: float  # deg

    def as_array(self) -> np.ndarray:
        return np.array([self.d_alpha, self.d_v, self.d_omega], dtype=np.float32)


@dataclass(frozen=True)
class EnvState:
    robot: Pose
    target: Pose
    target_type: int
    obstacle: Pose | None = None
    obstacle_radius: float = OBSTACLE_RADIUS
    step_count: int = 0


def clamp_action(action) -> tuple[EnvAction, bool]:
    """Clip a raw (d_alpha, d_v, d_omega) triple into the legal box."""
    a = np.asarray(action, dtype=np.float64).reshape(3)
    da = float(np.clip(a[0], *ALPHA_RANGE))
    dv = float(np.clip(a[1], *V_RANGE))
    do = float(np.clip(a[2], *OMEGA_RANGE))
    clamped = not (da == a[0] and dv == a[1] and do == a[2])
    return EnvAction(da, dv, do), clamped


def normalize_action(action: np.ndarray) -> np.ndarray:
    """Physical (deg, cm, deg) -> [-1, 1]^3."""
    a = np.asarray(action, dtype=np.float32)
    out = np.empty_like(a)
    out[..., 0] = a[..., 0] / 30.0
    out[..., 1] = a[..., 1] / 10.0 - 1.0
    out[..., 2] = a[..., 2] / 30.0
    return out


def denormalize_action(action: np.ndarray) -> np.ndarray:
    """[-1, 1]^3 -> physical (deg, cm, deg)."""
    a = np.asarray(action, dtype=np.float32)
    out = np.empty_like(a)
    out[..., 0] = a[..., 0] * 30.0
    out[..., 1] = (a[..., 1] + 1.0) * 10.0
    out[..., 2] = a[..., 2] * 30.0
    return out


def _segment_disk_stop(p0, p1, center, radius) -> float:
    """First parameter t in [0,1] where the segment p0->p1 touches the disk,
    or 1.0 when it never does (including a start already inside)."""
    d = p1 - p0
    f = p0 - center
    a = float(d @ d)
    if a < 1e-12:
        return 1.0
    b = 2.0 * float(f @ d)
    c = float(f @ f) - radius * radius
    disc = b * b - 4 * a * c
    if disc < 0:
        return 1.0
    t = (-b - math.sqrt(disc)) / (2 * a)
    if 0.0 <= t <= 1.0:
        return t
    return 1.0


def apply_action(state: EnvState, action, room_w: float, room_h: float) -> tuple[EnvState, bool]:
    """Pure kinematics step; returns (next_state, was_clamped)."""
    act, was_clamped = clamp_action(action)
    r = state.robot
    heading = (r.theta + act.d_alpha) % 360.0
    rad = math.radians(heading)
    p0 = np.array([r.x, r.y])
    p1 = p0 + act.d_v * np.array([math.cos(rad), math.sin(rad)])
    if state.obstacle is not None:
        contact = state.obstacle_radius + ROBOT_RADIUS
        t = _segment_disk_stop(p0, p1, np.array([state.obstacle.x, state.obstacle.y]), contact)
        p1 = p0 + t * (p1 - p0)
    x = float(np.clip(p1[0], 0.0, room_w))
    y = float(np.clip(p1[1], 0.0, room_h))
    theta = (heading + act.d_omega) % 360.0
    new = replace(state, robot=Pose(x, y, theta), step_count=state.step_count + 1)
    return new, was_clamped


def _wrap_deg(a: float) -> float:
    return (a + 180.0) % 360.0 - 180.0


def _cast_walls(px, py, theta_deg, bearings_rad, room_w, room_h):
    """Per-column wall hit: returns (depth, wall_id) arrays."""
    phi = np.radians(theta_deg) + bearings_rad
    dx, dy = np.cos(phi), np.sin(phi)
    big = 1e9
    # walls: 0 east x=w, 1 north y=h, 2 west x=0, 3 south y=0
    with np.errstate(divide="ignore", invalid="ignore"):
        ts = np.stack(
            [
                np.where(dx > 1e-12, (room_w - px) / dx, big),
                np.where(dy > 1e-12, (room_h - py) / dy, big),
                np.where(dx < -1e-12, (0.0 - px) / dx, big),
                np.where(dy < -1e-12, (0.0 - py) / dy, big),
            ]
        )
    wall_id = np.argmin(ts, axis=0)
    t = ts[wall_id, np.arange(ts.shape[1])]
    depth = t * np.cos(bearings_rad)
    return np.maximum(depth, 1.0), wall_id


def _sprite_mask(shape, rows, cols, top, bottom, u_c, half_w):
    v_mid = (top + bottom) / 2.0
    half_v = max((bottom - top) / 2.0, 0.5)
    half_w = max(half_w, 0.5)
    du = (cols - u_c) / half_w
    dv = (rows - v_mid) / half_v
    if shape == "square":
        return (np.abs(du) <= 1.0) & (np.abs(dv) <= 1.0)
    if shape == "circle":
        return du * du + dv * dv <= 1.0
    if shape == "triangle":
        frac = np.clip((rows - top) / max(bottom - top, 1e-6), 0.0, 1.0)
        return (np.abs(cols - u_c) <= half_w * frac) & (rows >= top) & (rows <= bottom)
    if shape == "diamond":
        return np.abs(du) + np.abs(dv) <= 1.0
    if shape == "pillar":
        return (np.abs(du) <= 0.5) & (np.abs(dv) <= 1.0)
    raise ConfigError(f"unknown sprite shape {shape!r}")


def render_frame(state: EnvState, config: WorldConfig) -> np.ndarray:
    """Rasterize the first-person view; deterministic uint8 RGB."""
    n = config.render_size
    f = n / 2.0  # 90 degree FOV
    horizon = n / 2.0
    c = (n - 1) / 2.0
    r = state.robot

    cols = np.arange(n, dtype=np.float64)
    bearings = np.arctan((c - cols) / f)  # positive = robot's left
    depth, wall_id = _cast_walls(r.x, r.y, r.theta, bearings, config.room_w, config.room_h)

    wall_top = horizon - f * (WALL_HEIGHT - CAM_HEIGHT) / depth
    wall_base = horizon + f * CAM_HEIGHT / depth
    shade = np.clip(1.0 - depth / 1400.0, 0.45, 1.0)

    rows = np.arange(n, dtype=np.float64)[:, None]
    img = np.empty((n, n, 3), dtype=np.float64)
    img[:] = CEILING_COLOR
    wall_rgb = np.asarray(WALL_COLORS, dtype=np.float64)[wall_id] * shade[:, None]
    floor_depth = f * CAM_HEIGHT / np.maximum(rows - horizon, 0.5)
    floor_shade = np.clip(1.0 - floor_depth / 1400.0, 0.45, 1.0)
    floor_rgb = np.asarray(FLOOR_COLOR, dtype=np.float64) * floor_shade
    is_wall = (rows >= wall_top[None, :]) & (rows < wall_base[None, :])
    is_floor = rows >= wall_base[None, :]
    img = np.where(is_wall[:, :, None], wall_rgb[None, :, :], img)
    img = np.where(is_floor[:, :, None], np.broadcast_to(floor_rgb, (n, n, 3)), img)

    # sprites far to near so closer ones overdraw
    sprites = []
    ttype = config.target_types[state.target_type]
    sprites.append((state.target, ttype.shape, ttype.color, TARGET_RADIUS, TARGET_HEIGHT))
    if state.obstacle is not None:
        sprites.append(
            (state.obstacle, "pillar", OBSTACLE_COLOR, state.obstacle_radius, OBSTACLE_HEIGHT)
        )

    drawn = []
    for pose, shape, color, radius, height in sprites:
        rel_x, rel_y = pose.x - r.x, pose.y - r.y
        dist = math.hypot(rel_x, rel_y)
        bearing = _wrap_deg(math.degrees(math.atan2(rel_y, rel_x)) - r.theta)
        if abs(bearing) >= 85.0:
            continue
        z = max(dist * math.cos(math.radians(bearing)), MIN_DEPTH)
        drawn.append((z, bearing, shape, color, radius, height))
    drawn.sort(key=lambda s: -s[0])

    cols_grid = np.arange(n, dtype=np.float64)[None, :]
    rows_grid = np.arange(n, dtype=np.float64)[:, None]
    for z, bearing, shape, color, radius, height in drawn:
        u_c = c - f * math.tan(math.radians(bearing))
        half_w = f * radius / z
        top = horizon + f * (CAM_HEIGHT - height) / z
        bottom = horizon + f * CAM_HEIGHT / z
        if u_c + half_w < 0 or u_c - half_w >= n or bottom < 0 or top >= n:
            continue
        mask = _sprite_mask(shape, rows_grid, cols_grid, top, bottom, u_c, half_w)
        img[mask] = color

    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


class WorldSim:
    """Simulator facade with interaction counters for audit purposes.

    The counters exist so tests can prove that policy training never
    touches the simulator: every reset/step/render bumps one.
    """

    def __init__(self, config: WorldConfig | None = None):
        self.config = config if config is not None else WorldConfig()
        self.n_resets = 0
        self.n_steps = 0
        self.n_renders = 0
        self.n_clamps = 0

    def reset(self, rng: np.random.Generator) -> EnvState:
        cfg = self.config
        self.n_resets += 1
        lo = PLACE_MARGIN
        d_min, d_max = cfg.start_distance
        for _ in range(1000):
            rx = rng.uniform(lo, cfg.room_w - lo)
            ry = rng.uniform(lo, cfg.room_h - lo)
            tx = rng.uniform(lo, cfg.room_w - lo)
            ty = rng.uniform(lo, cfg.room_h - lo)
            d = math.hypot(tx - rx, ty - ry)
            if d_min <= d <= d_max:
                break
        else:
            raise ConfigError("could not place robot and target with the requested separation")
        theta = rng.uniform(0.0, 360.0)
        ttype = int(rng.integers(0, len(cfg.target_types)))
        obstacle = None
        if cfg.obstacle_enabled:
            obstacle = self._place_obstacle(rng, rx, ry, tx, ty)
        return EnvState(
            robot=Pose(rx, ry, theta),
            target=Pose(tx, ty, 0.0),
            target_type=ttype,
            obstacle=obstacle,
        )

    def _place_obstacle(self, rng, rx, ry, tx, ty) -> Pose:
        cfg = self.config
        mx, my = (rx + tx) / 2.0, (ry + ty) / 2.0
        dx, dy = tx - rx, ty - ry
        norm = math.hypot(dx, dy)
        px, py = -dy / norm, dx / norm
        for _ in range(100):
            off = rng.uniform(-40.0, 40.0)
            ox = float(np.clip(mx + off * px, PLACE_MARGIN, cfg.room_w - PLACE_MARGIN))
            oy = float(np.clip(my + off * py, PLACE_MARGIN, cfg.room_h - PLACE_MARGIN))
            clear = OBSTACLE_RADIUS + ROBOT_RADIUS + 10.0
            if math.hypot(ox - rx, oy - ry) > clear and math.hypot(ox - tx, oy - ty) > clear:
                return Pose(ox, oy, 0.0)
        return Pose(mx, my, 0.0)

    def step(self, state: EnvState, action) -> EnvState:
        self.n_steps += 1
        new, was_clamped = apply_action(state, action, self.config.room_w, self.config.room_h)
        if was_clamped:
            self.n_clamps += 1
        return new

    def render(self, state: EnvState) -> np.ndarray:
        self.n_renders += 1
        return render_frame(state, self.config)

    def goal_reached(self, state: EnvState) -> tuple[bool, float]:
        d = math.hypot(state.target.x - state.robot.x, state.target.y - state.robot.y)
        return d <= self.config.goal_radius, d

    def collect_random(
        self, n_trajectories: int, max_len: int = 100, rng: np.random.Generator | None = None
    ) -> Dataset:
        """Random-action episodes; each stops at the goal or after max_len steps."""
        if n_trajectories < 1:
            raise ConfigError("n_trajectories must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        episodes = []
        lo = np.array([ALPHA_RANGE[0], V_RANGE[0], OMEGA_RANGE[0]])
        hi = np.array([ALPHA_RANGE[1], V_RANGE[1], OMEGA_RANGE[1]])
        for _ in range(n_trajectories):
            state = self.reset(rng)
            frames = [self.render(state)]
            labels = [self.goal_reached(state)[0]]
            actions = []
            for _ in range(max_len):
                a = rng.uniform(lo, hi)
                state = self.step(state, a)
                actions.append(a.astype(np.float32))
                frames.append(self.render(state))
                done = self.goal_reached(state)[0]
                labels.append(done)
                if done:
                    break
            episodes.append(
                Episode(
                    frames=np.stack(frames),
                    actions=np.asarray(actions, dtype=np.float32).reshape(-1, 3),
                    labels=np.asarray(labels, dtype=bool),
                    target_type=state.target_type,
                )
            )
        return Dataset(episodes)

    def sample_labeled_states(
        self, n: int, rng: np.random.Generator, goal_fraction: float = 0.5
    ) -> tuple[np.ndarray, np.ndarray]:
        """Balanced goal/non-goal frames for training a goal classifier.

        Goal-side samples face the target (a robot that arrived was driving
        toward it); labels always come from the distance predicate.
        """
        cfg = self.config
        images, labels = [], []
        for i in range(n):
            want_goal = i < int(round(n * goal_fraction))
            rx = rng.uniform(PLACE_MARGIN, cfg.room_w - PLACE_MARGIN)
            ry = rng.uniform(PLACE_MARGIN, cfg.room_h - PLACE_MARGIN)
            if want_goal:
                d = rng.uniform(4.0, cfg.goal_radius * 0.95)
            else:
                d = rng.uniform(cfg.goal_radius * 1.1, 380.0)
            ang = rng.uniform(0.0, 360.0)
            tx = float(np.clip(rx + d * math.cos(math.radians(ang)), 5.0, cfg.room_w - 5.0))
            ty = float(np.clip(ry + d * math.sin(math.radians(ang)), 5.0, cfg.room_h - 5.0))
            bearing_to_target = math.degrees(math.atan2(ty - ry, tx - rx))
            if want_goal:
                theta = (bearing_to_target + rng.uniform(-35.0, 35.0)) % 360.0
            else:
                theta = rng.uniform(0.0, 360.0)
            ttype = int(rng.integers(0, len(cfg.target_types)))
            state = EnvState(Pose(rx, ry, theta), Pose(tx, ty, 0.0), ttype)
            images.append(self.render(state))
            labels.append(self.goal_reached(state)[0])
        return np.stack(images), np.asarray(labels, dtype=bool)
