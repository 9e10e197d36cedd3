import io

import pytest

from appnetwatch import cli, crossfeature as cf, features, sim


def run(*argv):
    out = io.StringIO()
    return cli.main([str(a) for a in argv], out=out), out.getvalue()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    paths = {k: d / k for k in ("trace.tsv", "vectors.csv", "mail.model", "alarms.log")}
    assert run("simulate", "--profile", "mail", "--duration", 7200, "--seed", 5,
               "--out", paths["trace.tsv"])[0] == 0
    assert run("aggregate", paths["trace.tsv"], "--out", paths["vectors.csv"])[0] == 0
    assert run("train", paths["vectors.csv"], "--model", paths["mail.model"])[0] == 0
    rc, text = run("detect", paths["vectors.csv"], "--model", paths["mail.model"],
                   "--out", paths["alarms.log"])
    assert rc == 0
    return paths, text


def test_file_pipeline_matches_in_process(pipeline):
    _, text = pipeline
    profile = sim.preset_profiles()["mail"]
    vectors = features.build_vectors(sim.simulate_trace(profile, 7200, 5),
                                     days_since_modified={"mail": profile.days_since_modified})
    model = cf.train_and_calibrate(vectors[10:160], features.get_schema("1"))
    want = [f"{v.window_end_ts}\tmail\t{r.log_probability!r}\t{'anomalous' if r.is_anomalous else 'normal'}"
            for v, r in zip(vectors, cf.classify_many(model, vectors))]
    got = [line for line in text.splitlines() if not line.startswith("#")]
    assert got == want


def test_benign_detect_has_empty_alarm_log(pipeline):
    paths, text = pipeline
    assert paths["alarms.log"].read_text() == ""
    assert text.splitlines()[-1].endswith("meaningful deviation: no")


def test_beacon_trace_raises_alarms(pipeline, tmp_path):
    paths, _ = pipeline
    trace, vectors, alarms = tmp_path / "b.tsv", tmp_path / "b.csv", tmp_path / "b.log"
    run("simulate", "--profile", "mail", "--perturbation", "beacon", "--duration", 3600, "--seed", 6,
        "--out", trace)
    run("aggregate", trace, "--out", vectors)
    rc, text = run("detect", vectors, "--model", paths["mail.model"], "--out", alarms)
    assert rc == 0
    assert "three_consecutive" in alarms.read_text()
    assert text.splitlines()[-1].endswith("meaningful deviation: yes")


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["train", "x.csv", "--model", "m", "--subset", "9"],
    ["train", "x.csv", "--model", "m", "--learner", "linear"],
    ["detect", "x.csv", "--model", "m", "--acceptance", "2"],
    ["simulate", "--profile", "nope", "--out", "t.tsv"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert run(*argv)[0] == 1


def test_unknown_ids_list_valid_options(capsys):
    run("train", "x.csv", "--model", "m", "--subset", "9")
    assert "valid: 1, 2, full" in capsys.readouterr().err
    run("train", "x.csv", "--model", "m", "--learner", "linear")
    assert "valid: decision_table, reptree" in capsys.readouterr().err


def test_window_must_be_multiple_of_period(tmp_path, capsys):
    assert run("aggregate", tmp_path / "t.tsv", "--period", 7, "--out", tmp_path / "v.csv")[0] == 1


def test_malformed_vectors_exit_2_with_line(pipeline, tmp_path, capsys):
    paths, _ = pipeline
    lines = paths["vectors.csv"].read_text().splitlines()
    lines[5] = lines[5].replace(",", ",oops", 1)
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    assert run("train", bad, "--model", tmp_path / "m")[0] == 2
    assert ":6" in capsys.readouterr().err


def test_malformed_model_exit_2(pipeline, tmp_path):
    paths, _ = pipeline
    bad = tmp_path / "bad.model"
    bad.write_text("hello\n")
    assert run("detect", paths["vectors.csv"], "--model", bad)[0] == 2


def test_missing_file_exit_2(tmp_path):
    assert run("aggregate", tmp_path / "missing.tsv", "--out", tmp_path / "v.csv")[0] == 2


def test_evaluate_small_manifest_is_deterministic(tmp_path):
    manifest = tmp_path / "m.ini"
    manifest.write_text("[manifest]\nduration_secs = 3600\nacceptance_rates = 0.2\n\n"
                        "[dataset mail_same]\nprofile = mail\nlabel = same_version\nseed = 1\n\n"
                        "[dataset snake_beacon]\nprofile = snake\nlabel = malware\nseed = 1\n"
                        "perturbation = beacon\n")
    rc1, text1 = run("evaluate", "--manifest", manifest, "--out", tmp_path / "a")
    rc2, text2 = run("evaluate", "--manifest", manifest, "--out", tmp_path / "b")
    assert rc1 == rc2 == 0 and text1 == text2
    for name in ("report.csv", "report.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert "Malware" in text1


def test_bench_prints_table():
    rc, text = run("bench", "--repeats", 1, "--n-train", 20)
    assert rc == 0
    assert "train ms/model" in text and "backend" in text
