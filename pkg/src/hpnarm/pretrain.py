"""Bin-balanced goal generation and shard-parallel Q-table pretraining.

Training goals are drawn by rejection sampling: random pressure vectors are
pushed through the forward kinematics and the resulting tip poses deposited
into their goal bins until every bin holds `quota` goals or the sampling
budget runs out. Bins that never fill are flagged unreachable and excluded,
so every goal the controller trains on is known to be attainable.

Training itself is sharded by goal bin. Episode randomness is keyed to
(master seed, bin, goal index), never to the worker that happens to run the
bin, so a run with W workers is bit-identical to the single-process run.
Shards own disjoint bins, which makes the merge a plain disjoint union.
"""

from __future__ import annotations

import multiprocessing
import time
import zlib
from dataclasses import dataclass
from pathlib import Path
from struct import Struct
from typing import Mapping, Sequence

import numpy as np

from .episode import NominalPlant, RewardSpec, run_episode
from .kinematics import ArmParams, tip_batch
from .qtable import FLAG_TRAINED, ActionSpec, HyperParams, QTable, augment, save
from .state import (
    N_GOAL_BINS,
    N_TIP_STATES,
    BinningSpec,
    GoalPose,
    encode_goal_prefix_batch,
    rest_tip_origin,
)

DEFAULT_SAMPLE_BUDGET = 1_000_000
GOAL_SAMPLE_BATCH = 8192

# Runs past this many training episodes take hours, not minutes; they must be
# requested explicitly so a mistyped quota cannot launch one by accident.
LARGE_RUN_GOAL_LIMIT = 500_000

BANK_MAGIC = b"HPNB"
BANK_VERSION = 1
# version, seed, quota, budget, samples_used, fingerprint, reachable bins
_BANK_HEADER = Struct("<IQIQQII")
_BANK_CRC = Struct("<I")
_GOAL_ROW = 6  # position xyz + direction xyz, float64


class GoalBankError(RuntimeError):
    """Goal sampling failed or a cached goal-bank file is unusable."""


class MergeConflictError(ValueError):
    """Two partial tables trained the same goal bin; the shard plan is broken."""


@dataclass(frozen=True)
class GoalBank:
    """Per-bin training goals: `quota` goals in every reachable bin, none elsewhere."""

    quota: int
    goals: Mapping[int, tuple[GoalPose, ...]]
    reachable: np.ndarray  # (N_GOAL_BINS,) bool
    samples_used: int

    def __post_init__(self):
        if self.quota < 1:
            raise ValueError("quota must be >= 1")
        if self.samples_used < 0:
            raise ValueError("samples_used must be >= 0")
        reachable = np.asarray(self.reachable, dtype=bool).reshape(N_GOAL_BINS)
        reachable.flags.writeable = False
        object.__setattr__(self, "reachable", reachable)
        flagged = set(np.nonzero(reachable)[0].tolist())
        if set(self.goals) != flagged:
            raise ValueError("reachability flags disagree with stored goal bins")
        for bin_id, bin_goals in self.goals.items():
            if not 0 <= bin_id < N_GOAL_BINS:
                raise ValueError(f"goal bin {bin_id} out of range")
            if len(bin_goals) != self.quota:
                raise ValueError(
                    f"bin {bin_id} holds {len(bin_goals)} goals, quota is {self.quota}"
                )

    def reachable_bins(self) -> list[int]:
        return sorted(self.goals)

    def goals_for(self, bin_id: int) -> tuple[GoalPose, ...]:
        return self.goals[bin_id]

    def goal_count(self) -> int:
        return self.quota * len(self.goals)


def build_goal_bank(
    params: ArmParams,
    quota: int,
    budget: int = DEFAULT_SAMPLE_BUDGET,
    rng: np.random.Generator | None = None,
    *,
    binning: BinningSpec | None = None,
    batch_size: int = GOAL_SAMPLE_BATCH,
) -> GoalBank:
    """Fill goal bins by rejection sampling random pressure vectors through FK.

    Consumes at most `budget` forward-kinematics evaluations. Bins still short
    of `quota` when the budget runs out are dropped as unreachable; their
    partial goal lists are discarded rather than padded.
    """
    if quota < 1:
        raise ValueError("quota must be >= 1")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    if binning is None:
        binning = BinningSpec()
    origin = rest_tip_origin(params.l0_mm)

    needed = np.full(N_GOAL_BINS, quota, dtype=np.int64)
    stash: list[list[GoalPose]] = [[] for _ in range(N_GOAL_BINS)]
    used = 0
    while used < budget and needed.any():
        n = min(batch_size, budget - used)
        pressures = rng.uniform(0.0, params.p_max_kpa, size=(n, 16))
        used += n
        positions, directions = tip_batch(pressures, params)
        bins = encode_goal_prefix_batch(positions, directions, origin, binning)
        for i in np.nonzero(needed[bins] > 0)[0]:
            b = int(bins[i])
            if needed[b] > 0:  # the bin may have filled earlier in this batch
                stash[b].append(
                    GoalPose(position=positions[i].copy(), direction=directions[i].copy())
                )
                needed[b] -= 1

    reachable = needed == 0
    if not reachable.any():
        raise GoalBankError(
            f"no goal bin reached quota {quota} within {budget} samples; "
            "the arm parameters give a degenerate workspace"
        )
    goals = {int(b): tuple(stash[b]) for b in np.nonzero(reachable)[0]}
    return GoalBank(quota=quota, goals=goals, reachable=reachable, samples_used=used)


def config_fingerprint(params: ArmParams, binning: BinningSpec) -> int:
    """Checksum of the arm/binning settings a goal bank was sampled under."""
    return zlib.crc32(repr((params, binning)).encode("utf-8"))


def save_goal_bank(bank: GoalBank, path, *, seed: int, budget: int, fingerprint: int) -> None:
    """Write a goal bank cache: magic, header, sorted per-bin goal rows, CRC32."""
    bins = bank.reachable_bins()
    rows = np.empty((len(bins) * bank.quota, _GOAL_ROW), dtype="<f8")
    r = 0
    for b in bins:
        for goal in bank.goals_for(b):
            rows[r, :3] = goal.position
            rows[r, 3:] = goal.direction
            r += 1
    payload = (
        BANK_MAGIC
        + _BANK_HEADER.pack(
            BANK_VERSION, seed, bank.quota, budget, bank.samples_used,
            fingerprint, len(bins),
        )
        + np.asarray(bins, dtype="<u2").tobytes()
        + rows.tobytes()
    )
    Path(path).write_bytes(payload + _BANK_CRC.pack(zlib.crc32(payload)))


def load_goal_bank(path, *, seed: int, quota: int, budget: int, fingerprint: int) -> GoalBank:
    """Read a goal bank cache, rejecting files from a different sampling setup."""
    raw = Path(path).read_bytes()
    if len(raw) < len(BANK_MAGIC) or raw[: len(BANK_MAGIC)] != BANK_MAGIC:
        raise GoalBankError(f"{path}: not a goal bank file")
    header_end = len(BANK_MAGIC) + _BANK_HEADER.size
    if len(raw) < header_end + _BANK_CRC.size:
        raise GoalBankError(f"{path}: truncated goal bank file")
    version, f_seed, f_quota, f_budget, samples_used, f_print, n_bins = _BANK_HEADER.unpack(
        raw[len(BANK_MAGIC):header_end]
    )
    if version != BANK_VERSION:
        raise GoalBankError(f"{path}: unsupported goal bank version {version}")
    body_end = header_end + 2 * n_bins + 8 * _GOAL_ROW * n_bins * f_quota
    if len(raw) != body_end + _BANK_CRC.size:
        raise GoalBankError(f"{path}: goal bank size does not match its header")
    (crc,) = _BANK_CRC.unpack(raw[body_end:])
    if crc != zlib.crc32(raw[:body_end]):
        raise GoalBankError(f"{path}: goal bank checksum mismatch")
    for name, got, want in (
        ("seed", f_seed, seed), ("quota", f_quota, quota),
        ("budget", f_budget, budget), ("config fingerprint", f_print, fingerprint),
    ):
        if got != want:
            raise GoalBankError(
                f"{path}: cached goal bank was sampled with {name}={got}, "
                f"this run wants {want}"
            )
    bins = np.frombuffer(raw, dtype="<u2", count=n_bins, offset=header_end)
    rows = np.frombuffer(
        raw, dtype="<f8", count=n_bins * f_quota * _GOAL_ROW, offset=header_end + 2 * n_bins
    ).reshape(-1, _GOAL_ROW)
    goals: dict[int, tuple[GoalPose, ...]] = {}
    reachable = np.zeros(N_GOAL_BINS, dtype=bool)
    for j, b in enumerate(bins.tolist()):
        chunk = rows[j * f_quota:(j + 1) * f_quota]
        goals[b] = tuple(
            GoalPose(position=row[:3].copy(), direction=row[3:].copy()) for row in chunk
        )
        reachable[b] = True
    try:
        return GoalBank(quota=f_quota, goals=goals, reachable=reachable, samples_used=samples_used)
    except ValueError as exc:
        raise GoalBankError(f"{path}: inconsistent goal bank contents: {exc}") from exc


@dataclass(frozen=True)
class ShardPlan:
    """Disjoint assignment of goal bins to workers, all keyed to one master seed."""

    seed: int
    assignments: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if not self.assignments:
            raise ValueError("a shard plan needs at least one shard")
        flat = [b for shard in self.assignments for b in shard]
        if len(set(flat)) != len(flat):
            raise ValueError("shards must own disjoint goal bins")

    @property
    def workers(self) -> int:
        return len(self.assignments)

    def covered_bins(self) -> list[int]:
        return sorted(b for shard in self.assignments for b in shard)


def plan_shards(bins: Sequence[int], workers: int, seed: int) -> ShardPlan:
    """Deal the sorted bin list round-robin across `workers` shards."""
    if workers < 1:
        raise ValueError("worker count must be >= 1")
    ordered = sorted(bins)
    if len(set(ordered)) != len(ordered):
        raise ValueError("bin list contains duplicates")
    return ShardPlan(
        seed=seed,
        assignments=tuple(tuple(ordered[i::workers]) for i in range(workers)),
    )


def _train_bins(
    goals_by_bin: Mapping[int, tuple[GoalPose, ...]],
    seed: int,
    hp: HyperParams,
    params: ArmParams,
    action_spec: ActionSpec,
    reward_spec: RewardSpec,
    binning: BinningSpec,
    max_steps: int,
) -> QTable:
    q = QTable(action_spec.action_count)
    plant = NominalPlant(params)
    for bin_id in sorted(goals_by_bin):
        for goal_idx, goal in enumerate(goals_by_bin[bin_id]):
            rng = np.random.default_rng(np.random.SeedSequence((seed, 0, bin_id, goal_idx)))
            run_episode(
                plant, goal, q, hp,
                params=params, action_spec=action_spec, reward_spec=reward_spec,
                binning=binning, max_steps=max_steps, rng=rng, train=True,
            )
    return q


def pretrain_shard(
    bin_ids: Sequence[int],
    seed: int,
    bank: GoalBank,
    hp: HyperParams,
    *,
    params: ArmParams,
    action_spec: ActionSpec,
    reward_spec: RewardSpec,
    binning: BinningSpec,
    max_steps: int = 200,
) -> QTable:
    """Train one episode per banked goal for every bin in the shard.

    Episode randomness depends only on (seed, bin, goal index), so the same
    shard replayed with the same seed produces a bit-identical table.
    """
    subset = {int(b): bank.goals_for(int(b)) for b in bin_ids}
    return _train_bins(subset, seed, hp, params, action_spec, reward_spec, binning, max_steps)


def _shard_job(args):
    """Worker-process entry point: train a shard, return its entries as arrays."""
    q = _train_bins(*args)
    return q.record_arrays()


def merge(partials: Sequence[QTable]) -> QTable:
    """Disjoint union of partial tables from a shard plan.

    Each goal bin must have been trained by at most one partial; overlap means
    the shard plan handed one bin to two workers.
    """
    if not partials:
        return QTable()
    action_count = partials[0].action_count
    for p in partials[1:]:
        if p.action_count != action_count:
            raise MergeConflictError("partial tables disagree on action count")
    recs = [p.record_arrays() for p in partials]
    owner: dict[int, int] = {}
    for i, (states, _, flags, _) in enumerate(recs):
        trained = states[(flags & FLAG_TRAINED) != 0]
        for prefix in np.unique(trained // N_TIP_STATES).tolist():
            if prefix in owner and owner[prefix] != i:
                raise MergeConflictError(
                    f"goal bin {prefix} was trained by more than one partial table"
                )
            owner[prefix] = i
    states = np.concatenate([r[0] for r in recs]).astype(np.int64)
    actions = np.concatenate([r[1] for r in recs]).astype(np.int64)
    flags = np.concatenate([r[2] for r in recs])
    values = np.concatenate([r[3] for r in recs])
    if np.unique(states * action_count + actions).size != states.size:
        raise MergeConflictError("duplicate state-action entries across partial tables")
    return QTable.from_records(states, actions, flags, values, action_count=action_count)


@dataclass(frozen=True)
class PretrainSummary:
    goals_run: int
    reachable_bins: int
    unreachable_bins: int
    trained_entries: int
    augmented_entries: int
    total_entries: int
    workers: int
    wall_time_s: float

    def format(self) -> str:
        return "\n".join(
            [
                f"goals run: {self.goals_run}",
                f"reachable bins: {self.reachable_bins} of {N_GOAL_BINS}",
                f"unreachable bins: {self.unreachable_bins}",
                f"trained entries: {self.trained_entries}",
                f"augmented entries: {self.augmented_entries}",
                f"total entries: {self.total_entries}",
                f"workers: {self.workers}",
                f"wall time: {self.wall_time_s:.1f} s",
            ]
        )


def pretrain(
    params: ArmParams,
    hp: HyperParams,
    action_spec: ActionSpec,
    reward_spec: RewardSpec,
    binning: BinningSpec,
    *,
    quota: int,
    seed: int,
    workers: int = 1,
    budget: int = DEFAULT_SAMPLE_BUDGET,
    max_steps: int = 200,
    augment_radius: int = 1,
    out_path=None,
    bank_path=None,
    allow_large_run: bool = False,
) -> tuple[QTable, PretrainSummary]:
    """Full pipeline: goal bank, shard plan, parallel training, merge, augment.

    The result is independent of `workers` bit for bit. When `bank_path` is
    given, a matching cached goal bank is reused and a fresh one is written
    there after sampling. Saves the augmented table to `out_path` if set.
    """
    if quota < 1:
        raise ValueError("quota must be >= 1")
    if seed < 0:
        raise ValueError("seed must be >= 0")
    if workers < 1:
        raise ValueError("worker count must be >= 1")
    planned = quota * N_GOAL_BINS
    if planned > LARGE_RUN_GOAL_LIMIT and not allow_large_run:
        raise ValueError(
            f"quota {quota} plans up to {planned} episodes; runs beyond "
            f"{LARGE_RUN_GOAL_LIMIT} need allow_large_run=True"
        )
    t0 = time.perf_counter()
    fingerprint = config_fingerprint(params, binning)
    bank = None
    if bank_path is not None and Path(bank_path).exists():
        bank = load_goal_bank(
            bank_path, seed=seed, quota=quota, budget=budget, fingerprint=fingerprint
        )
    if bank is None:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
        bank = build_goal_bank(params, quota, budget, rng, binning=binning)
        if bank_path is not None:
            save_goal_bank(bank, bank_path, seed=seed, budget=budget, fingerprint=fingerprint)

    plan = plan_shards(bank.reachable_bins(), workers, seed)
    if workers == 1:
        partials = [
            pretrain_shard(
                plan.assignments[0], seed, bank, hp,
                params=params, action_spec=action_spec, reward_spec=reward_spec,
                binning=binning, max_steps=max_steps,
            )
        ]
    else:
        jobs = [
            (
                {b: bank.goals_for(b) for b in shard},
                seed, hp, params, action_spec, reward_spec, binning, max_steps,
            )
            for shard in plan.assignments
        ]
        ctx = multiprocessing.get_context("spawn")
        with ctx.Pool(processes=workers) as pool:
            results = pool.map(_shard_job, jobs)
        partials = [
            QTable.from_records(*r, action_count=action_spec.action_count) for r in results
        ]

    merged = merge(partials)
    table = augment(merged, radius=augment_radius)
    if out_path is not None:
        save(table, out_path)
    n_reachable = len(bank.reachable_bins())
    summary = PretrainSummary(
        goals_run=bank.goal_count(),
        reachable_bins=n_reachable,
        unreachable_bins=N_GOAL_BINS - n_reachable,
        trained_entries=table.trained_count(),
        augmented_entries=table.augmented_count(),
        total_entries=table.entry_count(),
        workers=workers,
        wall_time_s=time.perf_counter() - t0,
    )
    return table, summary
