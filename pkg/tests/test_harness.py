import json

import numpy as np
import pytest

from jobsig.errors import ContractViolation, SchemaError, ValidationError
from jobsig.harness import (
    BaselinePipeline,
    CnnPipeline,
    EvalReport,
    SplitSpec,
    accuracy,
    predict_labels,
    run_channel_ablation,
    run_novel_detection,
    run_partial_signatures,
    run_per_application,
    run_resolution_sweep,
    run_threshold_sweep,
    split_dataset,
    stratified_kfold,
    write_report_csv,
    write_summary_json,
)
from jobsig.ingest import MetricKind
from jobsig.synth import (
    ClassProfile,
    PatternSpec,
    SynthDatasetSpec,
    Waveform,
    generate_dataset,
)

from conftest import make_job


def quick_profiles():
    """Strongly separated classes with short durations for fast tests."""
    return (
        ClassProfile(
            name="alpha",
            power=PatternSpec(150.0),
            ipc=PatternSpec(0.5),
            mem=PatternSpec(1.0e7),
            noise_sigma=0.02,
            duration_range=(60, 90),
        ),
        ClassProfile(
            name="beta",
            power=PatternSpec(400.0, 80.0, Waveform.SQUARE, 0.25),
            ipc=PatternSpec(2.5),
            mem=PatternSpec(5.0e7),
            noise_sigma=0.02,
            duration_range=(60, 90),
        ),
    )


def quick_profiles3():
    third = ClassProfile(
        name="gamma",
        power=PatternSpec(250.0, 100.0, Waveform.SAWTOOTH, 0.5),
        ipc=PatternSpec(1.5),
        mem=PatternSpec(3.0e7),
        noise_sigma=0.02,
        duration_range=(60, 90),
    )
    return quick_profiles() + (third,)


@pytest.fixture(scope="module")
def quick_records():
    records, _ = generate_dataset(SynthDatasetSpec(quick_profiles(), 15, seed=2))
    return records


@pytest.fixture(scope="module")
def quick_records3():
    records, _ = generate_dataset(SynthDatasetSpec(quick_profiles3(), 15, seed=2))
    return records


@pytest.fixture(scope="module")
def fitted_baseline(quick_records):
    train, val, test = split_dataset(quick_records, SplitSpec(seed=0))
    return BaselinePipeline().fit(train), test


class TestSplitDataset:
    def test_single_class_60_20_20(self):
        records = [make_job(job_id=f"j{i}", label="only") for i in range(100)]
        train, val, test = split_dataset(records, SplitSpec(seed=1))
        assert (len(train), len(val), len(test)) == (60, 20, 20)

    def test_stratified_proportions(self, quick_records):
        train, val, test = split_dataset(quick_records, SplitSpec(seed=1))
        for part, expected in ((train, 9), (val, 3), (test, 3)):
            counts = {}
            for r in part:
                counts[r.label] = counts.get(r.label, 0) + 1
            assert counts == {"alpha": expected, "beta": expected}

    def test_partition_properties(self, quick_records):
        train, val, test = split_dataset(quick_records, SplitSpec(seed=5))
        ids = [r.job_id for r in train + val + test]
        assert len(ids) == len(set(ids)) == len(quick_records)
        assert set(ids) == {r.job_id for r in quick_records}

    def test_deterministic(self, quick_records):
        a = split_dataset(quick_records, SplitSpec(seed=7))
        b = split_dataset(quick_records, SplitSpec(seed=7))
        assert [[r.job_id for r in part] for part in a] == [
            [r.job_id for r in part] for part in b
        ]

    def test_small_class_rejected(self):
        records = [make_job(job_id=f"j{i}", label="small") for i in range(4)]
        with pytest.raises(ValidationError, match="small"):
            split_dataset(records, SplitSpec())

    def test_fraction_sum_enforced(self):
        with pytest.raises(ContractViolation):
            SplitSpec(train_frac=0.5, val_frac=0.2, test_frac=0.2)

    def test_unlabelled_record_rejected(self):
        records = [make_job(job_id=f"j{i}", label=None) for i in range(10)]
        with pytest.raises(SchemaError):
            split_dataset(records, SplitSpec())


class TestStratifiedKfold:
    def test_even_folds(self):
        records = [make_job(job_id=f"j{i}", label="only") for i in range(100)]
        folds = stratified_kfold(records, k=10, seed=0)
        assert [len(f) for f in folds] == [10] * 10

    def test_per_class_fold_counts(self):
        records, _ = generate_dataset(SynthDatasetSpec(quick_profiles(), 50, seed=2))
        folds = stratified_kfold(records, k=10, seed=0)
        for fold in folds:
            counts = {}
            for r in fold:
                counts[r.label] = counts.get(r.label, 0) + 1
            assert counts == {"alpha": 5, "beta": 5}

    def test_union_is_input(self, quick_records):
        folds = stratified_kfold(quick_records, k=3, seed=0)
        ids = sorted(r.job_id for fold in folds for r in fold)
        assert ids == sorted(r.job_id for r in quick_records)

    def test_small_class_rejected(self, quick_records):
        with pytest.raises(ValidationError, match="alpha"):
            stratified_kfold(quick_records, k=16, seed=0)


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy(["a", "b"], ["a", "b"]) == 1.0

    def test_novel_mode_counts_unknown_as_correct(self):
        preds = ["unknown"] * 4
        truths = ["removed"] * 4
        assert accuracy(preds, truths, novel_class="removed") == 1.0
        assert accuracy(preds, truths) == 0.0

    def test_as_wrong_never_exceeds_novel_mode(self, rng):
        choices = ["a", "b", "unknown"]
        for _ in range(20):
            preds = [choices[i] for i in rng.integers(0, 3, 30)]
            truths = [choices[i] for i in rng.integers(0, 2, 30)]
            assert accuracy(preds, truths) <= accuracy(preds, truths, novel_class="a")

    def test_length_mismatch(self):
        with pytest.raises(ContractViolation):
            accuracy(["a"], ["a", "b"])


class TestThresholdSweep:
    def test_row_shape_and_monotonicity(self, fitted_baseline):
        pipe, test = fitted_baseline
        thresholds = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
        report = run_threshold_sweep({"baseline": pipe}, test, thresholds)
        assert len(report.rows) == 6
        accs = [r["accuracy"] for r in report.rows]
        assert all(a <= b + 1e-12 for a, b in zip(accs[1:], accs))  # non-increasing
        assert accs[-1] <= accs[0]

    def test_zero_threshold_is_vanilla_argmax(self, fitted_baseline):
        pipe, test = fitted_baseline
        report = run_threshold_sweep({"baseline": pipe}, test, [0.0])
        scores = pipe.scores(test)
        preds = [pipe.class_vocab[i] for i in scores.argmax(axis=1)]
        truths = [r.label for r in test]
        vanilla = sum(p == t for p, t in zip(preds, truths)) / len(test)
        assert report.rows[0]["accuracy"] == vanilla

    def test_threshold_preconditions(self, fitted_baseline):
        pipe, test = fitted_baseline
        with pytest.raises(ContractViolation):
            run_threshold_sweep({"m": pipe}, test, [0.5, 0.2])
        with pytest.raises(ContractViolation):
            run_threshold_sweep({"m": pipe}, test, [-0.1])
        with pytest.raises(ContractViolation):
            run_threshold_sweep({"m": pipe}, test, [])


class TestPerApplication:
    def test_near_perfect_classifier_scores_one(self, quick_records):
        report = run_per_application(BaselinePipeline(), quick_records, k=3,
                                     threshold=0.0, seed=0)
        assert [r["class"] for r in report.rows] == ["alpha", "beta"]
        for row in report.rows:
            assert row["accuracy"] == 1.0

    def test_one_row_per_class(self, quick_records):
        report = run_per_application(BaselinePipeline(), quick_records, k=3, seed=0)
        assert len(report.rows) == 2
        assert report.config["folds"] == 3


class TestNovelDetection:
    def test_zero_threshold_marks_heldout_wrong(self, quick_records3):
        report = run_novel_detection(BaselinePipeline(), quick_records3, "beta",
                                     [0.0], SplitSpec(seed=0))
        row = report.rows[0]
        assert row["heldout_unknown_rate"] == 0.0
        # every held-out sample gets some known label and counts wrong
        assert row["accuracy"] <= 2 / 3 + 1e-12

    def test_unknown_class_name_rejected(self, quick_records3):
        with pytest.raises(ValidationError):
            run_novel_detection(BaselinePipeline(), quick_records3, "nope", [0.5])

    def test_report_includes_per_threshold_rows(self, quick_records3):
        report = run_novel_detection(BaselinePipeline(), quick_records3, "beta",
                                     [0.0, 0.5, 1.0], SplitSpec(seed=0))
        assert [r["threshold"] for r in report.rows] == [0.0, 0.5, 1.0]
        # raising the threshold can only widen the unknown set
        rates = [r["heldout_unknown_rate"] for r in report.rows]
        assert rates == sorted(rates)
        assert rates[0] == 0.0


@pytest.fixture(scope="module")
def tiny_cnn_template():
    return CnnPipeline(side=8, epochs=2, batch_size=8, learning_rate=0.01, seed=0)


class TestChannelAblation:
    def test_single_channel_builds_c1_model(self, quick_records, tiny_cnn_template):
        report = run_channel_ablation(
            tiny_cnn_template, quick_records, [[MetricKind.POWER]],
            threshold=0.0, split=SplitSpec(seed=0),
        )
        assert {r["channels"] for r in report.rows} == {"power"}
        assert len(report.rows) == 2  # one per class

    def test_four_sections(self, quick_records, tiny_cnn_template):
        sets = [
            [MetricKind.POWER],
            [MetricKind.IPC],
            [MetricKind.MEM_USED],
            list(MetricKind),
        ]
        report = run_channel_ablation(tiny_cnn_template, quick_records, sets,
                                      split=SplitSpec(seed=0))
        assert {r["channels"] for r in report.rows} == {
            "power", "ipc", "mem", "power+ipc+mem"
        }
        assert len(report.rows) == 8

    def test_empty_sets_rejected(self, quick_records, tiny_cnn_template):
        with pytest.raises(ContractViolation):
            run_channel_ablation(tiny_cnn_template, quick_records, [])


class TestPartialSignatures:
    def test_full_fraction_equals_standard_eval(self, quick_records, tiny_cnn_template):
        split = SplitSpec(seed=0)
        report = run_partial_signatures(tiny_cnn_template, quick_records,
                                        fractions=[1.0], threshold=0.0, split=split)
        train, val, test = split_dataset(quick_records, split)
        pipe = tiny_cnn_template.clone().fit(train, val)
        preds = predict_labels(pipe, test, 0.0)
        truths = [r.label for r in test]
        expected = {}
        for p, t in zip(preds, truths):
            expected.setdefault(t, []).append(p == t)
        for row in report.rows:
            exp = sum(expected[row["class"]]) / len(expected[row["class"]])
            assert row["accuracy"] == exp

    def test_row_grid(self, quick_records, tiny_cnn_template):
        report = run_partial_signatures(
            tiny_cnn_template, quick_records,
            fractions=[0.25, 0.5, 0.75, 1.0], split=SplitSpec(seed=0),
        )
        assert len(report.rows) == 4 * 2
        assert {r["fraction"] for r in report.rows} == {0.25, 0.5, 0.75, 1.0}

    def test_fraction_bounds(self, quick_records, tiny_cnn_template):
        with pytest.raises(ContractViolation):
            run_partial_signatures(tiny_cnn_template, quick_records, fractions=[0.0])


class TestResolutionSweep:
    def test_three_lengths_three_timings(self, quick_records, tiny_cnn_template):
        report = run_resolution_sweep(tiny_cnn_template, quick_records,
                                      lengths=[8, 16, 32], thresholds=[0.0],
                                      split=SplitSpec(seed=0))
        assert len(report.timings) == 3
        assert len(report.rows) == 3
        payloads = {r["l"]: r["payload_bytes"] for r in report.rows}
        assert payloads[16] == 16 * 16 * 3 * 4
        assert payloads[16] * 4 == payloads[32]

    def test_minimum_length_enforced(self, quick_records, tiny_cnn_template):
        with pytest.raises(ContractViolation):
            run_resolution_sweep(tiny_cnn_template, quick_records, lengths=[4])


class TestReportWriters:
    def test_csv_deterministic_and_well_formed(self, tmp_path):
        report = EvalReport(
            kind="demo",
            rows=[{"model": "m", "threshold": 0.5, "accuracy": 0.25}],
            timings={"train_seconds": 1.0},
            config={"seed": 1},
        )
        p1, p2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
        write_report_csv(report, p1)
        write_report_csv(report, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert p1.read_text() == "model,threshold,accuracy\nm,0.5,0.25\n"

    def test_summary_json(self, tmp_path):
        report = EvalReport(kind="demo", rows=[{"a": 1}], timings={}, config={})
        out = tmp_path / "summary.json"
        write_summary_json([report], out)
        payload = json.loads(out.read_text())
        assert payload[0]["experiment"] == "demo"
        assert payload[0]["rows"] == [{"a": 1}]

    def test_empty_report_rejected(self, tmp_path):
        with pytest.raises(ContractViolation):
            write_report_csv(EvalReport("x", []), tmp_path / "r.csv")

    def test_inconsistent_rows_rejected(self, tmp_path):
        report = EvalReport("x", [{"a": 1}, {"b": 2}])
        with pytest.raises(ContractViolation):
            write_report_csv(report, tmp_path / "r.csv")


def test_cnn_pipeline_clone_resets_state(quick_records):
    template = CnnPipeline(side=8, epochs=1, seed=0)
    train, val, _ = split_dataset(quick_records, SplitSpec(seed=0))
    fitted = template.clone().fit(train, val)
    assert fitted.model is not None
    fresh = fitted.clone(side=16)
    assert fresh.model is None and fresh.side == 16
    assert template.model is None


def test_baseline_pipeline_rejects_partial(quick_records):
    train, val, test = split_dataset(quick_records, SplitSpec(seed=0))
    pipe = BaselinePipeline().fit(train)
    with pytest.raises(ContractViolation):
        pipe.scores(test, fraction=0.5)
