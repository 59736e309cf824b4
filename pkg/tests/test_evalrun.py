import numpy as np
import pytest

from hpnarm import ArmParams, BinningSpec, GoalPose, arm_forward_kinematics
from hpnarm.episode import RewardSpec
from hpnarm.evalrun import (
    EVAL_CSV_COLUMNS,
    EvalReport,
    GoalResult,
    evaluate,
    sample_goals,
    write_report_csvs,
)
from hpnarm.qtable import ActionSpec, FLAG_TRAINED, HyperParams, QTable


@pytest.fixture(scope="module")
def specs():
    return dict(
        params=ArmParams(),
        hp=HyperParams(),
        action_spec=ActionSpec(),
        reward_spec=RewardSpec(),
        binning=BinningSpec(),
    )


def start_pose_goal(params):
    pose = arm_forward_kinematics(np.full(16, params.p_max_kpa / 2.0), params)
    return GoalPose(position=pose[:3, 3].copy(), direction=pose[:3, 2].copy())


def synthetic_result(pos_rows, final=None):
    pos = np.asarray(pos_rows, dtype=float)
    reps, length = pos.shape
    goal = GoalPose(position=np.zeros(3), direction=np.array([0.0, 0.0, 1.0]))
    final_pos = pos[:, -1] if final is None else np.asarray(final, dtype=float)
    return GoalResult(
        goal=goal, pos_series=pos, rot_series=np.zeros_like(pos),
        final_pos_mm=final_pos, final_rot_deg=np.zeros(reps),
        success=np.zeros(reps, dtype=bool),
    )


class TestSampleGoals:
    def test_count_and_unit_directions(self, specs):
        goals = sample_goals(specs["params"], 12, np.random.default_rng(0))
        assert len(goals) == 12
        for g in goals:
            assert np.linalg.norm(g.direction) == pytest.approx(1.0, abs=1e-9)

    def test_deterministic_per_seed(self, specs):
        a = sample_goals(specs["params"], 5, np.random.default_rng(3))
        b = sample_goals(specs["params"], 5, np.random.default_rng(3))
        for ga, gb in zip(a, b):
            assert np.array_equal(ga.position, gb.position)

    def test_rejects_zero(self, specs):
        with pytest.raises(ValueError):
            sample_goals(specs["params"], 0, np.random.default_rng(0))


class TestEvaluate:
    def test_series_are_padded_to_full_length(self, specs):
        goal = start_pose_goal(specs["params"])  # succeeds at step 0
        report = evaluate(None, [goal], max_steps=30, repetitions=2, **specs)
        (result,) = report.results
        assert result.pos_series.shape == (2, 31)
        assert np.all(result.pos_series < 1e-6)
        assert result.success.all()

    def test_nominal_repetitions_are_identical(self, specs):
        goals = sample_goals(specs["params"], 2, np.random.default_rng(1))
        report = evaluate(None, goals, max_steps=20, repetitions=3, **specs)
        for r in report.results:
            assert np.array_equal(r.pos_series[0], r.pos_series[1])
            assert np.array_equal(r.pos_series[0], r.pos_series[2])

    def test_perturbed_repetitions_differ(self, specs):
        goals = sample_goals(specs["params"], 1, np.random.default_rng(1))
        report = evaluate(
            None, goals, max_steps=20, repetitions=2, plant_kind="perturbed", **specs
        )
        (r,) = report.results
        assert not np.array_equal(r.pos_series[0], r.pos_series[1])

    def test_table_unchanged_by_evaluation(self, specs):
        q = QTable()
        rng = np.random.default_rng(4)
        for _ in range(200):
            q.set_entry(int(rng.integers(4**10)), int(rng.integers(32)),
                        float(rng.normal()), FLAG_TRAINED)
        snapshot = q.copy()
        goals = sample_goals(specs["params"], 2, np.random.default_rng(2))
        evaluate(q, goals, max_steps=15, repetitions=1, **specs)
        assert q == snapshot

    def test_zero_init_label_and_rerun_determinism(self, specs):
        goals = sample_goals(specs["params"], 2, np.random.default_rng(5))
        a = evaluate(None, goals, max_steps=15, repetitions=2,
                     plant_kind="perturbed", seed=9, **specs)
        b = evaluate(None, goals, max_steps=15, repetitions=2,
                     plant_kind="perturbed", seed=9, **specs)
        assert a.label == "zero-init"
        for ra, rb in zip(a.results, b.results):
            assert np.array_equal(ra.pos_series, rb.pos_series)

    def test_input_validation(self, specs):
        goal = start_pose_goal(specs["params"])
        with pytest.raises(ValueError):
            evaluate(None, [], **specs)
        with pytest.raises(ValueError):
            evaluate(None, [goal], repetitions=0, **specs)
        with pytest.raises(ValueError):
            evaluate(None, [goal], max_steps=0, **specs)
        with pytest.raises(ValueError):
            evaluate(None, [goal], plant_kind="lunar", **specs)


class TestReportAggregation:
    def test_reaching_uses_the_whole_curve(self):
        dips = synthetic_result([[100.0, 25.0, 80.0]])   # dips below then rises
        flat = synthetic_result([[100.0, 90.0, 80.0]])
        report = EvalReport(label="x", plant_kind="nominal",
                            results=(dips, flat), repetitions=1, max_steps=2)
        assert dips.reaches(30.0) and not flat.reaches(30.0)
        assert report.goals_reaching(30.0) == 1
        assert dips.steps_to(30.0) == 1
        assert flat.steps_to(30.0) is None
        assert report.mean_steps_to(30.0) == pytest.approx(1.0)
        assert report.mean_steps_to(1.0) is None

    def test_final_error_statistics(self):
        results = tuple(
            synthetic_result([[50.0, v]]) for v in (10.0, 20.0, 60.0)
        )
        report = EvalReport(label="x", plant_kind="nominal",
                            results=results, repetitions=1, max_steps=1)
        assert report.median_final_pos_mm() == pytest.approx(20.0)
        assert report.mean_final_pos_mm() == pytest.approx(30.0)
        assert np.allclose(report.aggregate_pos_series(), [50.0, 30.0])

    def test_repetitions_average_within_each_goal(self):
        result = synthetic_result([[40.0, 10.0], [20.0, 30.0]])
        assert np.allclose(result.mean_pos_series(), [30.0, 20.0])
        report = EvalReport(label="x", plant_kind="nominal",
                            results=(result,), repetitions=2, max_steps=1)
        assert report.final_pos_errors() == pytest.approx([20.0])

    def test_summary_mentions_the_key_numbers(self):
        report = EvalReport(label="demo", plant_kind="perturbed",
                            results=(synthetic_result([[50.0, 10.0]]),),
                            repetitions=1, max_steps=1)
        text = report.summary()
        assert "demo" in text and "perturbed" in text
        assert "median final positional error: 10.00 mm" in text


class TestCsvOutput:
    def test_files_and_layout(self, specs, tmp_path):
        goals = sample_goals(specs["params"], 3, np.random.default_rng(6))
        report = evaluate(None, goals, max_steps=8, repetitions=1, **specs)
        paths = write_report_csvs(report, tmp_path / "out")
        names = [p.name for p in paths]
        assert names == ["goal_00.csv", "goal_01.csv", "goal_02.csv", "aggregate.csv"]
        for p in paths:
            lines = p.read_text().strip().split("\n")
            assert lines[0] == ",".join(EVAL_CSV_COLUMNS)
            assert len(lines) == 10
            step, t, pos, rot = lines[3].split(",")
            assert step == "2" and t == "4.0"
            float(pos), float(rot)  # plain dot-decimal numbers
