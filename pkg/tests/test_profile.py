import numpy as np
import pytest

from dkd import models as M
from dkd.checkpoint import checkpoint_from_encoder
from dkd.corpus import generate_corpus
from dkd.errors import DataError, ParameterError
from dkd.profiling import format_table, profile, report_csv


@pytest.fixture(scope="module")
def profiled():
    corpus = generate_corpus(seed=3, n_speakers=2, n_contents=2, n_intents=2,
                             utterances_per_cell=2, duration_s=0.5)
    teacher = checkpoint_from_encoder(M.build(M.desk_teacher_config(), seed=0).freeze())
    student = checkpoint_from_encoder(M.build(M.desk_student_config(None), seed=1).freeze())
    reports = profile([("teacher", teacher), ("student", student)], corpus, runs=3, batch=1)
    return reports, corpus


def test_param_counts_exact(profiled):
    reports, _ = profiled
    assert reports[0].params == M.count_params(M.desk_teacher_config())
    assert reports[1].params == M.count_params(M.desk_student_config(None))
    assert reports[0].param_ratio == 1.0
    assert reports[1].param_ratio == pytest.approx(reports[1].params / reports[0].params)


def test_flop_ratio_direction(profiled):
    reports, _ = profiled
    assert reports[0].flop_ratio == 1.0
    assert reports[1].flop_ratio > 1.5  # student is the smaller model


def test_runs_recorded_individually(profiled):
    reports, _ = profiled
    for r in reports:
        assert len(r.run_seconds) == 3
        assert r.mean_seconds == pytest.approx(float(np.mean(r.run_seconds)))
        assert all(t > 0 for t in r.run_seconds)
        assert r.batch == 1 and r.threads >= 1


def test_wallclock_speedup_direction(profiled):
    reports, _ = profiled
    # student computes a strict subset of the teacher's work
    assert reports[1].speedup > 1.0


def test_csv_and_table_layout(profiled, tmp_path):
    reports, _ = profiled
    path = report_csv(reports, tmp_path / "profile.csv")
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[:6] == ["model", "params_millions", "param_ratio",
                                       "inf_time_s", "speedup", "flop_ratio"]
    assert len(lines) == 3
    table = format_table(reports)
    rows = table.splitlines()
    assert rows[0].split() == ["Model", "#", "param.", "Millions", "Inf.", "time", "seconds"]
    assert "(100%)" in rows[2] and "(1.00X)" in rows[2]
    assert "%" in rows[3] and "X)" in rows[3]


def test_empty_corpus_rejected():
    corpus = generate_corpus(seed=3, n_speakers=1, n_contents=1, n_intents=1,
                             utterances_per_cell=1, duration_s=0.5)
    corpus.manifest.utterances = []
    teacher = checkpoint_from_encoder(M.build(M.desk_teacher_config(), seed=0))
    with pytest.raises(DataError):
        profile([("t", teacher)], corpus)


def test_bad_runs_rejected():
    corpus = generate_corpus(seed=3, n_speakers=1, n_contents=1, n_intents=1,
                             utterances_per_cell=1, duration_s=0.5)
    teacher = checkpoint_from_encoder(M.build(M.desk_teacher_config(), seed=0))
    with pytest.raises(ParameterError):
        profile([("t", teacher)], corpus, runs=0)
