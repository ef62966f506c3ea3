"""Synthetic 2D worlds: geometry oracles, simulated range scanner, sensor noise.

Worlds are axis-aligned rectangles populated with circular and box obstacles.
Scans are expressed in the robot body frame (x forward, y left), matching the
egocentric inputs the rest of the stack consumes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .dynamics import RobotState

FOV_DEFAULT = math.radians(69.0)  # forward camera-like horizontal field of view


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("circle radius must be positive")

    def boundary_distance(self, p: np.ndarray) -> float:
        """Distance from p to the boundary; 0 if p is inside."""
        return max(0.0, math.hypot(p[0] - self.cx, p[1] - self.cy) - self.radius)

    def contains(self, p: np.ndarray) -> bool:
        return math.hypot(p[0] - self.cx, p[1] - self.cy) <= self.radius

    def ray_hits(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """First-intersection distances for unit rays; inf where the ray misses.

        A ray starting inside returns 0.
        """
        oc = origin - np.array([self.cx, self.cy])
        b = dirs @ oc
        c0 = oc @ oc - self.radius**2
        disc = b * b - c0
        t = np.full(dirs.shape[0], np.inf)
        ok = disc >= 0.0
        root = np.sqrt(np.maximum(disc, 0.0))
        t1 = -b - root
        t2 = -b + root
        t = np.where(ok & (t1 >= 0.0), t1, t)
        t = np.where(ok & (t1 < 0.0) & (t2 >= 0.0), 0.0, t)
        return t


@dataclass(frozen=True)
class Box:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError("box min corner must be strictly below max corner")

    def boundary_distance(self, p: np.ndarray) -> float:
        dx = max(self.xmin - p[0], 0.0, p[0] - self.xmax)
        dy = max(self.ymin - p[1], 0.0, p[1] - self.ymax)
        return math.hypot(dx, dy)

    def contains(self, p: np.ndarray) -> bool:
        return self.xmin <= p[0] <= self.xmax and self.ymin <= p[1] <= self.ymax

    def ray_hits(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        tmin, tmax = _slab_interval(origin, dirs, self.xmin, self.ymin, self.xmax, self.ymax)
        hit = tmax >= np.maximum(tmin, 0.0)
        entry = np.where(tmin >= 0.0, tmin, 0.0)  # origin inside -> 0
        return np.where(hit, entry, np.inf)


Obstacle = Circle | Box


def _slab_interval(origin, dirs, xmin, ymin, xmax, ymax):
    """Entry/exit parameters of rays against an axis-aligned rectangle."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    lo = (np.array([xmin, ymin]) - origin) * inv
    hi = (np.array([xmax, ymax]) - origin) * inv
    # rays parallel to a slab: +-inf from the division sorts correctly,
    # except 0/0 -> nan when the origin lies exactly on a slab plane
    lo = np.nan_to_num(lo, nan=-np.inf)
    hi = np.nan_to_num(hi, nan=np.inf)
    t_near = np.minimum(lo, hi)
    t_far = np.maximum(lo, hi)
    return t_near.max(axis=1), t_far.min(axis=1)


@dataclass(frozen=True)
class NoiseModel:
    """Range-sensor corruption emulating systematic depth-estimation error.

    range_bias_scale: amplitude of a smooth multiplicative bias over bearing,
    resampled (and interpolated) every drift_timescale steps, so the offset is
    placement- and time-dependent rather than white.
    """

    range_bias_scale: float = 0.0
    additive_sigma: float = 0.0
    drift_timescale: int = 30
    dropout_prob: float = 0.0

    def __post_init__(self):
        if self.additive_sigma < 0:
            raise ValueError("additive_sigma must be >= 0")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must be in [0, 1]")
        if self.drift_timescale < 1:
            raise ValueError("drift_timescale must be >= 1")

    @property
    def is_zero(self) -> bool:
        return (
            self.range_bias_scale == 0.0
            and self.additive_sigma == 0.0
            and self.dropout_prob == 0.0
        )


@dataclass(frozen=True)
class SensorConfig:
    fov: float = FOV_DEFAULT
    n_rays: int = 120
    max_range: float = 5.0
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self):
        if not 0.0 < self.fov <= 2 * math.pi:
            raise ValueError("fov must be in (0, 2*pi]")
        if self.n_rays < 1:
            raise ValueError("n_rays must be >= 1")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")


@dataclass(frozen=True, eq=False)
class World:
    obstacles: tuple[Obstacle, ...]
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    start: RobotState
    goal: tuple[float, float]

    def __post_init__(self):
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmin < xmax and ymin < ymax):
            raise ValueError("bounds must form a nonempty rectangle")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "goal", (float(self.goal[0]), float(self.goal[1])))

    def in_bounds(self, p: np.ndarray) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= p[0] <= xmax and ymin <= p[1] <= ymax

    def validate(self, robot_radius: float) -> None:
        """Check start and goal sit inside bounds and clear of inflated obstacles."""
        for name, p in (("start", self.start.position), ("goal", np.asarray(self.goal))):
            if not self.in_bounds(p):
                raise ValueError(f"{name} lies outside world bounds")
            d = true_clearance(p, self)
            if d < robot_radius:
                raise ValueError(f"{name} is within robot radius of an obstacle (d={d:.3f})")


def true_clearance(point: np.ndarray, world: World) -> float:
    """Minimum distance from point to any obstacle boundary; 0 inside an obstacle."""
    point = np.asarray(point, dtype=float)
    if not world.obstacles:
        return math.inf
    return min(ob.boundary_distance(point) for ob in world.obstacles)


def scan_angles(cfg: SensorConfig) -> np.ndarray:
    """Body-frame ray bearings uniformly spanning the field of view."""
    if cfg.n_rays == 1:
        return np.zeros(1)
    return np.linspace(-cfg.fov / 2.0, cfg.fov / 2.0, cfg.n_rays)


def scan_ranges(state: RobotState, world: World, cfg: SensorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Raw polar scan: (body bearings, ranges), inf where nothing within max_range.

    Bound walls count as hit surfaces (the arena is enclosed).
    """
    angles = scan_angles(cfg)
    world_angles = state.psi + angles
    dirs = np.column_stack([np.cos(world_angles), np.sin(world_angles)])
    origin = state.position
    t = np.full(cfg.n_rays, np.inf)
    for ob in world.obstacles:
        t = np.minimum(t, ob.ray_hits(origin, dirs))
    xmin, ymin, xmax, ymax = world.bounds
    _, t_exit = _slab_interval(origin, dirs, xmin, ymin, xmax, ymax)
    t = np.minimum(t, np.maximum(t_exit, 0.0))
    t = np.where(t <= cfg.max_range, t, np.inf)
    return angles, t


def _polar_to_points(angles: np.ndarray, ranges: np.ndarray) -> np.ndarray:
    return np.column_stack([ranges * np.cos(angles), ranges * np.sin(angles)])


def raycast_scan(state: RobotState, world: World, cfg: SensorConfig) -> np.ndarray:
    """Noise-free scan as body-frame hit points (m, 2); misses omitted."""
    angles, ranges = scan_ranges(state, world, cfg)
    hit = np.isfinite(ranges)
    return _polar_to_points(angles[hit], ranges[hit])


class BiasField:
    """Smooth multiplicative range-bias over world bearing, drifting in time.

    Knot values for drift epoch e are drawn from a generator seeded with
    (seed, e), so any epoch is reproducible regardless of query order. Between
    epochs the field is blended linearly; across bearing the knots are
    cosine-interpolated on a periodic grid.
    """

    def __init__(self, noise: NoiseModel, seed: int, n_knots: int = 12):
        self.noise = noise
        self.seed = int(seed)
        self.n_knots = n_knots

    def _knots(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, int(epoch)])
        return rng.uniform(-1.0, 1.0, self.n_knots) * self.noise.range_bias_scale

    def _interp(self, knots: np.ndarray, world_angles: np.ndarray) -> np.ndarray:
        pos = (np.mod(world_angles, 2 * math.pi)) / (2 * math.pi) * self.n_knots
        i0 = np.floor(pos).astype(int) % self.n_knots
        i1 = (i0 + 1) % self.n_knots
        frac = pos - np.floor(pos)
        w = 0.5 * (1.0 - np.cos(math.pi * frac))
        return (1.0 - w) * knots[i0] + w * knots[i1]

    def values(self, world_angles: np.ndarray, t: int) -> np.ndarray:
        ts = self.noise.drift_timescale
        epoch, frac = divmod(int(t), ts)
        a = self._interp(self._knots(epoch), world_angles)
        b = self._interp(self._knots(epoch + 1), world_angles)
        alpha = frac / ts
        return (1.0 - alpha) * a + alpha * b


def estimated_scan(
    state: RobotState,
    world: World,
    cfg: SensorConfig,
    rng: np.random.Generator,
    t: int = 0,
    bias: BiasField | None = None,
) -> np.ndarray:
    """Noisy scan: per hit ray, range -> range*(1 + b(theta, t)) + eta, then dropout.

    b is the smooth angular bias field (shared across an episode via `bias`),
    eta ~ N(0, additive_sigma^2). Results are clamped to (0, max_range]. A
    zero NoiseModel reproduces raycast_scan exactly.
    """
    noise = cfg.noise
    angles, ranges = scan_ranges(state, world, cfg)
    hit = np.isfinite(ranges)
    angles, ranges = angles[hit], ranges[hit]
    if noise.is_zero:
        return _polar_to_points(angles, ranges)
    if noise.range_bias_scale > 0.0:
        if bias is None:
            bias = BiasField(noise, seed=int(rng.integers(2**63)))
        ranges = ranges * (1.0 + bias.values(state.psi + angles, t))
    if noise.additive_sigma > 0.0:
        ranges = ranges + rng.normal(0.0, noise.additive_sigma, ranges.shape)
    if noise.dropout_prob > 0.0:
        keep = rng.random(ranges.shape) >= noise.dropout_prob
        angles, ranges = angles[keep], ranges[keep]
    ranges = np.clip(ranges, 1e-9, cfg.max_range)
    return _polar_to_points(angles, ranges)


def standardize_cloud(
    cloud: np.ndarray,
    cfg: SensorConfig,
    rng: np.random.Generator,
    size: int = 300,
) -> np.ndarray:
    """Resample a body-frame cloud to exactly `size` points.

    Oversized clouds are subsampled without replacement; undersized ones are
    padded by resampling existing points with replacement. An empty cloud maps
    to free-space sentinels at max_range fanned across the fov.
    """
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 2)
    n = cloud.shape[0]
    if n == size:
        return cloud
    if n > size:
        idx = np.sort(rng.choice(n, size=size, replace=False))
        return cloud[idx]
    if n == 0:
        angles = np.linspace(-cfg.fov / 2.0, cfg.fov / 2.0, size)
        return _polar_to_points(angles, np.full(size, cfg.max_range))
    pad = rng.choice(n, size=size - n, replace=True)
    return np.concatenate([cloud, cloud[pad]], axis=0)


def body_to_world(points: np.ndarray, state: RobotState) -> np.ndarray:
    """Transform body-frame points (n, 2) to the world frame."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    c, s = math.cos(state.psi), math.sin(state.psi)
    x = state.x + c * points[:, 0] - s * points[:, 1]
    y = state.y + s * points[:, 0] + c * points[:, 1]
    return np.column_stack([x, y])


# ---------------------------------------------------------------------------
# JSON scenario I/O (schema documented in README)

def obstacle_to_dict(ob: Obstacle) -> dict:
    if isinstance(ob, Circle):
        return {"type": "circle", "center": [ob.cx, ob.cy], "radius": ob.radius}
    return {"type": "box", "min": [ob.xmin, ob.ymin], "max": [ob.xmax, ob.ymax]}


def obstacle_from_dict(d: dict) -> Obstacle:
    kind = d["type"]
    if kind == "circle":
        return Circle(d["center"][0], d["center"][1], d["radius"])
    if kind == "box":
        return Box(d["min"][0], d["min"][1], d["max"][0], d["max"][1])
    raise ValueError(f"unknown obstacle type {kind!r}")


def world_to_dict(world: World) -> dict:
    s = world.start
    return {
        "bounds": list(world.bounds),
        "start": {"x": s.x, "y": s.y, "psi": s.psi, "v": s.v, "omega": s.omega},
        "goal": list(world.goal),
        "obstacles": [obstacle_to_dict(ob) for ob in world.obstacles],
    }


def world_from_dict(d: dict) -> World:
    s = d["start"]
    return World(
        obstacles=tuple(obstacle_from_dict(o) for o in d.get("obstacles", [])),
        bounds=tuple(d["bounds"]),
        start=RobotState(s["x"], s["y"], s["psi"], s.get("v", 0.0), s.get("omega", 0.0)),
        goal=tuple(d["goal"]),
    )


def sensor_to_dict(cfg: SensorConfig) -> dict:
    return {
        "fov": cfg.fov,
        "n_rays": cfg.n_rays,
        "max_range": cfg.max_range,
        "noise": asdict(cfg.noise),
    }


def sensor_from_dict(d: dict) -> SensorConfig:
    noise = NoiseModel(**d.get("noise", {}))
    return SensorConfig(
        fov=d.get("fov", FOV_DEFAULT),
        n_rays=d.get("n_rays", 120),
        max_range=d.get("max_range", 5.0),
        noise=noise,
    )


def save_scenario(path, world: World, sensor: SensorConfig, seed: int, extra: dict | None = None) -> None:
    doc = {"seed": int(seed), "world": world_to_dict(world), "sensor": sensor_to_dict(sensor)}
    if extra:
        doc.update(extra)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)


def load_scenario(path) -> tuple[World, SensorConfig, int, dict]:
    """Load (world, sensor, seed, extras) from a scenario JSON file."""
    with open(path) as f:
        doc = json.load(f)
    world = world_from_dict(doc["world"])
    sensor = sensor_from_dict(doc.get("sensor", {}))
    extras = {k: v for k, v in doc.items() if k not in ("world", "sensor", "seed")}
    return world, sensor, int(doc.get("seed", 0)), extras
