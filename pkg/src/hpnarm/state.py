"""Discretized goal/tip state for the tabular controller.

The control state combines where the goal sits relative to the arm's rest
tip position with where the tip currently sits relative to the goal. Both
halves reduce to a radius plus spherical direction angles, giving ten
continuous dimensions. Each dimension is quantized into four bins and the
bin vector packs into one integer, so the table addresses 4**10 =
1,048,576 states. The leading five dimensions depend on the goal alone;
their packed prefix partitions the state space into 1024 goal bins used
for balanced goal sampling and for sharding training work.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

N_DIMS = 10
N_BINS_PER_DIM = 4
N_STATES = N_BINS_PER_DIM**N_DIMS          # 1_048_576
GOAL_DIMS = 5
N_GOAL_BINS = N_BINS_PER_DIM**GOAL_DIMS    # 1024
N_TIP_STATES = N_STATES // N_GOAL_BINS     # 1024 suffix combinations per goal bin

DIM_NAMES = (
    "d_goal", "theta_dgoal", "phi_dgoal", "theta_egoal", "phi_egoal",
    "d_tip", "theta_dtip", "phi_dtip", "theta_etip", "phi_etip",
)

# Place value of each dimension in the packed index, most significant first.
_PLACE = tuple(N_BINS_PER_DIM ** (N_DIMS - 1 - i) for i in range(N_DIMS))

_TINY_RADIUS = 1e-12

# Interior edges shared by every azimuth dim ([-pi, pi) split in four) and
# every plain elevation dim ([0, pi] split in four).
_AZIMUTH_EDGES = (-math.pi / 2.0, 0.0, math.pi / 2.0)
_ELEVATION_EDGES = (math.pi / 4.0, math.pi / 2.0, 3.0 * math.pi / 4.0)


@dataclass(frozen=True, eq=False)
class GoalPose:
    """A target for the tip: world position (mm) and unit pointing direction."""

    position: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        dirn = np.asarray(self.direction, dtype=float).reshape(3)
        if not np.isfinite(pos).all() or not np.isfinite(dirn).all():
            raise ValueError("goal pose must be finite")
        if abs(float(np.linalg.norm(dirn)) - 1.0) > 1e-9:
            raise ValueError(f"goal direction must be unit norm, got {dirn!r}")
        pos.flags.writeable = False
        dirn.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "direction", dirn)


@dataclass(frozen=True)
class ContinuousState:
    """The ten raw state coordinates before binning.

    theta_* are azimuths in [-pi, pi), phi_* are polar angles from +z in
    [0, pi]. The *goal dims locate the goal pose relative to the rest tip
    origin; the *tip dims locate the current tip relative to the goal.
    """

    d_goal: float
    theta_dgoal: float
    phi_dgoal: float
    theta_egoal: float
    phi_egoal: float
    d_tip: float
    theta_dtip: float
    phi_dtip: float
    theta_etip: float
    phi_etip: float

    def as_tuple(self) -> tuple[float, ...]:
        return (
            self.d_goal, self.theta_dgoal, self.phi_dgoal,
            self.theta_egoal, self.phi_egoal,
            self.d_tip, self.theta_dtip, self.phi_dtip,
            self.theta_etip, self.phi_etip,
        )


@dataclass(frozen=True)
class BinningSpec:
    """Quantization edges for the ten state dimensions.

    Only the tip-distance edges, the goal-direction polar edges, and the
    goal-radius ceiling are free parameters; the seven remaining dims are
    split evenly over their natural ranges. Edges are interior boundaries:
    three values splitting a range into four half-open bins [lo, hi), with
    the last bin absorbing everything above the top edge.
    """

    d_tip_edges_mm: tuple[float, float, float] = (5.0, 30.0, 60.0)
    phi_egoal_edges_rad: tuple[float, float, float] = (
        math.radians(5.0), math.radians(20.0), math.radians(60.0))
    d_max_mm: float = 400.0

    def __post_init__(self):
        for name in ("d_tip_edges_mm", "phi_egoal_edges_rad"):
            edges = tuple(float(e) for e in getattr(self, name))
            if len(edges) != 3 or not all(np.isfinite(edges)):
                raise ValueError(f"{name} needs three finite interior edges")
            if not (0.0 < edges[0] < edges[1] < edges[2]):
                raise ValueError(f"{name} must be strictly increasing and positive")
            object.__setattr__(self, name, edges)
        if not (np.isfinite(self.d_max_mm) and self.d_max_mm > 0.0):
            raise ValueError(f"d_max_mm must be positive, got {self.d_max_mm}")

    def edges_for_dim(self, dim: int) -> tuple[float, float, float]:
        """Interior edges of one dimension, by position in DIM_NAMES order."""
        return self.all_edges()[dim]

    def all_edges(self) -> tuple[tuple[float, float, float], ...]:
        d = self.d_max_mm
        d_goal_edges = (d / 4.0, d / 2.0, 3.0 * d / 4.0)
        return (
            d_goal_edges,            # d_goal
            _AZIMUTH_EDGES,          # theta_dgoal
            _ELEVATION_EDGES,        # phi_dgoal
            _AZIMUTH_EDGES,          # theta_egoal
            self.phi_egoal_edges_rad,  # phi_egoal
            self.d_tip_edges_mm,     # d_tip
            _AZIMUTH_EDGES,          # theta_dtip
            _ELEVATION_EDGES,        # phi_dtip
            _AZIMUTH_EDGES,          # theta_etip
            _ELEVATION_EDGES,        # phi_etip
        )


@dataclass(frozen=True)
class DiscreteState:
    """A bin per dimension plus the equivalent packed index."""

    bins: tuple[int, ...]
    index: int

    def __post_init__(self):
        if len(self.bins) != N_DIMS:
            raise ValueError(f"need {N_DIMS} bins, got {len(self.bins)}")
        if any(b < 0 or b >= N_BINS_PER_DIM for b in self.bins):
            raise ValueError(f"bins out of range: {self.bins}")
        if self.index != pack_bins(self.bins):
            raise ValueError(f"index {self.index} does not match bins {self.bins}")

    @classmethod
    def from_bins(cls, bins) -> "DiscreteState":
        bins = tuple(int(b) for b in bins)
        return cls(bins=bins, index=pack_bins(bins))

    @classmethod
    def from_index(cls, index: int) -> "DiscreteState":
        return cls(bins=unpack_index(index), index=int(index))


def pack_bins(bins) -> int:
    """Pack ten bin digits (most significant first) into one index."""
    total = 0
    for b, place in zip(bins, _PLACE):
        total += b * place
    return total


def unpack_index(index: int) -> tuple[int, ...]:
    """Inverse of pack_bins."""
    index = int(index)
    if index < 0 or index >= N_STATES:
        raise ValueError(f"state index {index} outside [0, {N_STATES})")
    out = []
    for place in _PLACE:
        out.append(index // place)
        index %= place
    return tuple(out)


def pack_bins_array(bins: np.ndarray) -> np.ndarray:
    """Vectorized pack_bins for an (n, 10) bin matrix."""
    bins = np.asarray(bins, dtype=np.int64)
    return bins @ np.asarray(_PLACE, dtype=np.int64)


def unpack_index_array(indices: np.ndarray) -> np.ndarray:
    """Vectorized unpack_index, returning an (n, 10) bin matrix."""
    idx = np.asarray(indices, dtype=np.int64)
    out = np.empty(idx.shape + (N_DIMS,), dtype=np.int64)
    rem = idx.copy()
    for i, place in enumerate(_PLACE):
        out[..., i] = rem // place
        rem %= place
    return out


def goal_bin(ds: DiscreteState) -> int:
    """Packed prefix of the five goal dims, in [0, 1024)."""
    return ds.index // N_TIP_STATES


def spherical_of(v) -> tuple[float, float, float]:
    """Radius, azimuth, polar angle of a 3-vector.

    Azimuth is atan2(y, x) in [-pi, pi); polar angle is measured from +z
    in [0, pi]. Vectors shorter than 1e-12 get both angles zeroed.
    """
    x, y, z = (float(c) for c in v)
    r = math.sqrt(x * x + y * y + z * z)
    if r < _TINY_RADIUS:
        return r, 0.0, 0.0
    theta = math.atan2(y, x)
    if theta >= math.pi:  # atan2 yields (-pi, pi]; fold the single point pi
        theta = -math.pi
    phi = math.acos(min(1.0, max(-1.0, z / r)))
    return r, theta, phi


def rest_tip_origin(l0_mm: float) -> np.ndarray:
    """Tip position of the unpressurized arm, the reference point for goal coordinates."""
    return np.array([0.0, 0.0, 4.0 * l0_mm])


def goal_frame(direction) -> np.ndarray:
    """Right-handed orthonormal frame with z along ``direction``.

    Columns are (x, y, z). x is world-x projected off the direction and
    normalized; when the direction is nearly parallel to world-x the
    projection degenerates, so world-y seeds the projection instead.
    """
    z = np.asarray(direction, dtype=float).reshape(3)
    ref = np.array([1.0, 0.0, 0.0])
    if abs(z[0]) > 0.999:
        ref = np.array([0.0, 1.0, 0.0])
    x = ref - np.dot(ref, z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def continuous_state(goal: GoalPose, tip: np.ndarray, origin) -> ContinuousState:
    """The ten raw coordinates for one goal/tip pair.

    ``tip`` is a 4x4 pose; ``origin`` is the rest tip position. Goal dims:
    spherical coordinates of the goal position about the origin, plus the
    direction angles of the goal pointing direction. Tip dims: spherical
    coordinates of the tip position about the goal, plus the direction
    angles of the tip pointing direction expressed in the goal frame.
    """
    origin = np.asarray(origin, dtype=float).reshape(3)
    tip_pos = tip[:3, 3]
    tip_dir = tip[:3, 2]
    d_goal, theta_dgoal, phi_dgoal = spherical_of(goal.position - origin)
    _, theta_egoal, phi_egoal = spherical_of(goal.direction)
    d_tip, theta_dtip, phi_dtip = spherical_of(tip_pos - goal.position)
    rel_dir = goal_frame(goal.direction).T @ tip_dir
    _, theta_etip, phi_etip = spherical_of(rel_dir)
    return ContinuousState(
        d_goal=d_goal, theta_dgoal=theta_dgoal, phi_dgoal=phi_dgoal,
        theta_egoal=theta_egoal, phi_egoal=phi_egoal,
        d_tip=d_tip, theta_dtip=theta_dtip, phi_dtip=phi_dtip,
        theta_etip=theta_etip, phi_etip=phi_etip,
    )


def encode(cs: ContinuousState, spec: BinningSpec) -> DiscreteState:
    """Bin each coordinate with half-open [lo, hi) intervals.

    A value exactly on an interior edge lands in the upper bin; values
    past the last edge (including d_goal beyond d_max_mm) clamp to bin 3.
    """
    bins = tuple(
        bisect_right(edges, value)
        for value, edges in zip(cs.as_tuple(), spec.all_edges())
    )
    return DiscreteState(bins=bins, index=pack_bins(bins))


def encode_goal_prefix(position, direction, origin, spec: BinningSpec) -> int:
    """Goal-bin id of a goal pose: the packed first five dims."""
    origin = np.asarray(origin, dtype=float).reshape(3)
    d_goal, theta_dgoal, phi_dgoal = spherical_of(np.asarray(position, dtype=float) - origin)
    _, theta_egoal, phi_egoal = spherical_of(direction)
    edges = spec.all_edges()
    values = (d_goal, theta_dgoal, phi_dgoal, theta_egoal, phi_egoal)
    prefix = 0
    for value, dim_edges in zip(values, edges[:GOAL_DIMS]):
        prefix = prefix * N_BINS_PER_DIM + bisect_right(dim_edges, value)
    return prefix


def encode_goal_prefix_batch(positions, directions, origin, spec: BinningSpec) -> np.ndarray:
    """Vectorized encode_goal_prefix over (n, 3) position/direction stacks."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    dirn = np.asarray(directions, dtype=float).reshape(-1, 3)
    origin = np.asarray(origin, dtype=float).reshape(3)
    rel = pos - origin
    r = np.linalg.norm(rel, axis=1)
    safe_r = np.where(r < _TINY_RADIUS, 1.0, r)
    theta_d = np.arctan2(rel[:, 1], rel[:, 0])
    theta_d = np.where(theta_d >= np.pi, -np.pi, theta_d)
    phi_d = np.arccos(np.clip(rel[:, 2] / safe_r, -1.0, 1.0))
    small = r < _TINY_RADIUS
    theta_d[small] = 0.0
    phi_d[small] = 0.0
    theta_e = np.arctan2(dirn[:, 1], dirn[:, 0])
    theta_e = np.where(theta_e >= np.pi, -np.pi, theta_e)
    phi_e = np.arccos(np.clip(dirn[:, 2] / np.linalg.norm(dirn, axis=1), -1.0, 1.0))
    edges = spec.all_edges()
    prefix = np.zeros(pos.shape[0], dtype=np.int64)
    for values, dim_edges in zip((r, theta_d, phi_d, theta_e, phi_e), edges[:GOAL_DIMS]):
        bins = np.searchsorted(np.asarray(dim_edges), values, side="right")
        prefix = prefix * N_BINS_PER_DIM + bins
    return prefix


class StateEncoder:
    """Per-goal encoder that caches the goal half of the state.

    The five goal dims and the goal frame never change within an episode,
    so an episode builds one encoder and feeds it tip observations.
    """

    def __init__(self, goal: GoalPose, origin, spec: BinningSpec):
        self.goal = goal
        self.spec = spec
        cs0 = continuous_state(goal, np.eye(4), origin)
        edges = spec.all_edges()
        prefix_values = (cs0.d_goal, cs0.theta_dgoal, cs0.phi_dgoal,
                         cs0.theta_egoal, cs0.phi_egoal)
        self._prefix_bins = tuple(
            bisect_right(dim_edges, v)
            for v, dim_edges in zip(prefix_values, edges[:GOAL_DIMS])
        )
        self._prefix_index = 0
        for b in self._prefix_bins:
            self._prefix_index = self._prefix_index * N_BINS_PER_DIM + b
        self._tip_edges = edges[GOAL_DIMS:]
        self._gx = float(goal.position[0])
        self._gy = float(goal.position[1])
        self._gz = float(goal.position[2])
        # Rows of the goal frame transpose, for fast world->goal direction mapping.
        self._frame_rows = tuple(map(tuple, goal_frame(goal.direction).T))

    @property
    def goal_bin(self) -> int:
        return self._prefix_index

    def encode_tip(self, tip_pos, tip_dir) -> DiscreteState:
        """Full discrete state for one tip observation."""
        return DiscreteState.from_index(self.encode_tip_index(tip_pos, tip_dir))

    def encode_tip_index(self, tip_pos, tip_dir) -> int:
        """Bare packed index for one tip observation; the episode-loop fast path."""
        px = float(tip_pos[0]) - self._gx
        py = float(tip_pos[1]) - self._gy
        pz = float(tip_pos[2]) - self._gz
        d_tip, theta_dtip, phi_dtip = spherical_of((px, py, pz))
        dx, dy, dz = (float(c) for c in tip_dir)
        rel = tuple(r[0] * dx + r[1] * dy + r[2] * dz for r in self._frame_rows)
        _, theta_etip, phi_etip = spherical_of(rel)
        values = (d_tip, theta_dtip, phi_dtip, theta_etip, phi_etip)
        index = self._prefix_index
        for v, dim_edges in zip(values, self._tip_edges):
            index = index * N_BINS_PER_DIM + bisect_right(dim_edges, v)
        return index
