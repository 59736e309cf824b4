"""Point-to-point evaluation runs: fixed goals, greedy policy, CSV curves.

Each goal is attempted `repetitions` times with exploration off and the table
frozen. Error curves are padded to a common length by holding the final value
so early successes still average cleanly, then written as per-goal CSVs plus
one aggregate CSV (mean curve over all goals).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .episode import (
    SECONDS_PER_STEP,
    NominalPlant,
    PerturbedPlant,
    PerturbedPlantConfig,
    RewardSpec,
    make_perturbed_plant,
    run_episode,
)
from .kinematics import ArmParams, tip_batch
from .qtable import ActionSpec, HyperParams, QTable
from .state import BinningSpec, GoalPose

EVAL_CSV_COLUMNS = ("step", "time_s", "pos_error_mm", "rot_error_deg")


def sample_goals(params: ArmParams, n: int, rng: np.random.Generator) -> list[GoalPose]:
    """Draw n reachable goal poses: FK images of random pressure vectors."""
    if n < 1:
        raise ValueError("need n >= 1 goals")
    pressures = rng.uniform(0.0, params.p_max_kpa, size=(n, 16))
    positions, directions = tip_batch(pressures, params)
    return [
        GoalPose(position=positions[i].copy(), direction=directions[i].copy())
        for i in range(n)
    ]


def _padded(series: Sequence[float], length: int) -> np.ndarray:
    out = np.empty(length, dtype=float)
    k = min(len(series), length)
    out[:k] = series[:k]
    out[k:] = series[k - 1]
    return out


@dataclass(frozen=True)
class GoalResult:
    """All repetitions of one goal: padded error curves plus per-rep outcomes."""

    goal: GoalPose
    pos_series: np.ndarray  # (repetitions, max_steps+1)
    rot_series: np.ndarray
    final_pos_mm: np.ndarray  # (repetitions,)
    final_rot_deg: np.ndarray
    success: np.ndarray

    def mean_pos_series(self) -> np.ndarray:
        return self.pos_series.mean(axis=0)

    def mean_rot_series(self) -> np.ndarray:
        return self.rot_series.mean(axis=0)

    def reaches(self, threshold_mm: float) -> bool:
        """Did the repetition-mean error curve ever drop below the threshold?"""
        return bool(self.mean_pos_series().min() < threshold_mm)

    def steps_to(self, threshold_mm: float) -> int | None:
        below = np.nonzero(self.mean_pos_series() < threshold_mm)[0]
        return int(below[0]) if below.size else None


@dataclass(frozen=True)
class EvalReport:
    label: str
    plant_kind: str
    results: tuple[GoalResult, ...]
    repetitions: int
    max_steps: int

    def final_pos_errors(self) -> np.ndarray:
        """Per-goal final positional error, averaged over repetitions."""
        return np.array([r.final_pos_mm.mean() for r in self.results])

    def final_rot_errors(self) -> np.ndarray:
        return np.array([r.final_rot_deg.mean() for r in self.results])

    def median_final_pos_mm(self) -> float:
        return float(np.median(self.final_pos_errors()))

    def mean_final_pos_mm(self) -> float:
        return float(self.final_pos_errors().mean())

    def median_final_rot_deg(self) -> float:
        return float(np.median(self.final_rot_errors()))

    def goals_reaching(self, threshold_mm: float) -> int:
        return sum(r.reaches(threshold_mm) for r in self.results)

    def mean_steps_to(self, threshold_mm: float) -> float | None:
        """Mean steps to threshold over the goals that reach it at all."""
        steps = [s for r in self.results if (s := r.steps_to(threshold_mm)) is not None]
        return float(np.mean(steps)) if steps else None

    def aggregate_pos_series(self) -> np.ndarray:
        return np.mean([r.mean_pos_series() for r in self.results], axis=0)

    def aggregate_rot_series(self) -> np.ndarray:
        return np.mean([r.mean_rot_series() for r in self.results], axis=0)

    def summary(self, threshold_mm: float = 30.0) -> str:
        reached = self.goals_reaching(threshold_mm)
        lines = [
            f"controller: {self.label}",
            f"plant: {self.plant_kind}",
            f"goals: {len(self.results)}",
            f"repetitions per goal: {self.repetitions}",
            f"median final positional error: {self.median_final_pos_mm():.2f} mm",
            f"mean final positional error: {self.mean_final_pos_mm():.2f} mm",
            f"median final rotational error: {self.median_final_rot_deg():.2f} deg",
            f"goals reaching {threshold_mm:g} mm: {reached} of {len(self.results)}",
        ]
        steps = self.mean_steps_to(threshold_mm)
        if steps is not None:
            lines.append(
                f"mean steps to {threshold_mm:g} mm: {steps:.1f}"
                f" ({steps * SECONDS_PER_STEP:.0f} s)"
            )
        return "\n".join(lines)


def evaluate(
    table: QTable | None,
    goals: Sequence[GoalPose],
    *,
    params: ArmParams,
    hp: HyperParams,
    action_spec: ActionSpec,
    reward_spec: RewardSpec,
    binning: BinningSpec,
    plant_kind: str = "nominal",
    perturbed_cfg: PerturbedPlantConfig | None = None,
    repetitions: int = 3,
    max_steps: int = 200,
    seed: int = 0,
    label: str | None = None,
) -> EvalReport:
    """Evaluate a table (or a zero-initialized one when None) on fixed goals.

    Episodes run greedily with learning off; the table is never written. On
    the perturbed plant a single plant instance serves the whole run, so its
    sampled gain scales are shared and its noise stream keeps advancing,
    which is what makes repetitions differ.
    """
    if not goals:
        raise ValueError("need at least one goal")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    if plant_kind not in ("nominal", "perturbed"):
        raise ValueError(f"unknown plant kind {plant_kind!r}")
    if table is None:
        table = QTable(action_spec.action_count)
        if label is None:
            label = "zero-init"
    elif label is None:
        label = "table"

    if plant_kind == "perturbed":
        cfg = perturbed_cfg if perturbed_cfg is not None else PerturbedPlantConfig()
        plant: NominalPlant | PerturbedPlant = make_perturbed_plant(
            params, cfg, seed=int(np.random.SeedSequence((seed, 3)).generate_state(1)[0])
        )
    else:
        plant = NominalPlant(params)

    length = max_steps + 1
    results = []
    for goal_i, goal in enumerate(goals):
        pos = np.empty((repetitions, length))
        rot = np.empty((repetitions, length))
        final_pos = np.empty(repetitions)
        final_rot = np.empty(repetitions)
        success = np.zeros(repetitions, dtype=bool)
        for rep in range(repetitions):
            rng = np.random.default_rng(np.random.SeedSequence((seed, 2, goal_i, rep)))
            log = run_episode(
                plant, goal, table, hp,
                params=params, action_spec=action_spec, reward_spec=reward_spec,
                binning=binning, max_steps=max_steps, rng=rng, train=False,
            )
            pos[rep] = _padded(log.pos_error_series(), length)
            rot[rep] = _padded(log.rot_error_series(), length)
            final_pos[rep] = log.final_pos_error_mm
            final_rot[rep] = log.final_rot_error_deg
            success[rep] = log.success
        results.append(
            GoalResult(
                goal=goal, pos_series=pos, rot_series=rot,
                final_pos_mm=final_pos, final_rot_deg=final_rot, success=success,
            )
        )
    return EvalReport(
        label=label, plant_kind=plant_kind, results=tuple(results),
        repetitions=repetitions, max_steps=max_steps,
    )


def _write_series_csv(path: Path, pos: np.ndarray, rot: np.ndarray) -> None:
    lines = [",".join(EVAL_CSV_COLUMNS)]
    for step, (p, r) in enumerate(zip(pos, rot)):
        lines.append(f"{step},{step * SECONDS_PER_STEP:.1f},{p:.6f},{r:.6f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_report_csvs(report: EvalReport, out_dir) -> list[Path]:
    """One CSV per goal plus aggregate.csv; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, result in enumerate(report.results):
        path = out / f"goal_{i:02d}.csv"
        _write_series_csv(path, result.mean_pos_series(), result.mean_rot_series())
        paths.append(path)
    agg = out / "aggregate.csv"
    _write_series_csv(agg, report.aggregate_pos_series(), report.aggregate_rot_series())
    paths.append(agg)
    return paths
