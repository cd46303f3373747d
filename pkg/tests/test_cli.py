import json
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from anonlink import cli
from anonlink.cli import CSV_HEADER, ConfigError, RunConfig, format_config, main, parse_config
from anonlink.harness import TrialOutcome

DATA = Path(__file__).parent / "data"
MINIMAL = "scenario.k = 5\nscenario.nt = 10\nscenario.nr = 11\nscenario.streams = 4\n"


def test_minimal_config_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.trials == 10000 and cfg.z == 1.96 and cfg.output_format == "csv"
    assert cfg.constellation == "qpsk" and cfg.power_watts == 1.0 and cfg.alias_policy == "all"
    assert cfg.precoders == ("svd", "zf", "mmse", "im_anon", "ci_anon")


def test_paper_geometry_accepted():
    cfg = parse_config(MINIMAL + "scenario.alias.policy = all\n")
    assert cfg.scenario().n_streams == 4


def test_square_channels_rejected():
    with pytest.raises(ConfigError, match="N_t < N_r"):
        parse_config(MINIMAL.replace("scenario.nr = 11", "scenario.nr = 10"))


def test_anonymity_dimension_rejected():
    with pytest.raises(ConfigError, match=r"d <= N_t - \|A\|\(N_r - N_t\)"):
        parse_config(MINIMAL.replace("streams = 4", "streams = 7"))


@pytest.mark.parametrize(
    "text,needle",
    [
        (MINIMAL + "garbage line\n", "line 5"),
        (MINIMAL + "sweep.trials = many\n", "line 5"),
        (MINIMAL + "scenario.colour = red\n", "unknown key"),
        (MINIMAL + "scenario.k = 6\n", "duplicate"),
        ("scenario.k = 5\n", "missing required"),
        (MINIMAL + "precoders = svd, foo\n", "unknown precoder"),
        (MINIMAL + "output.format = xml\n", "output.format"),
        (MINIMAL + "scenario.constellation = 16qam\n", "constellation"),
    ],
)
def test_config_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text)


def test_comments_and_blank_lines():
    cfg = parse_config("# header\n\n" + MINIMAL + "seed = 3  # trailing\n")
    assert cfg.seed == 3


configs = st.builds(
    RunConfig,
    k=st.just(5),
    nt=st.just(10),
    nr=st.just(11),
    streams=st.integers(1, 6),
    constellation=st.sampled_from(["bpsk", "qpsk", "8psk"]),
    power_watts=st.floats(0.01, 100, allow_nan=False),
    snr_db=st.lists(st.floats(-30, 60, allow_nan=False), min_size=1, max_size=5).map(tuple),
    trials=st.integers(1, 10**6),
    z=st.floats(0.5, 4),
    precoders=st.permutations(["svd", "zf", "mmse", "im_anon", "ci_anon"]).map(lambda p: tuple(p[:3])),
    seed=st.integers(0, 2**64 - 1),
    output_format=st.sampled_from(["csv", "json"]),
)


@given(configs)
@settings(max_examples=60, deadline=None)
def test_config_round_trip(cfg):
    assert parse_config(format_config(cfg)) == cfg


def run_to(tmp_path, name, *extra):
    out = tmp_path / name
    rc = main(["run", "--config", str(DATA / "small.cfg"), "--out", str(out), *extra])
    return rc, out


def test_csv_header_and_golden(tmp_path):
    rc, out = run_to(tmp_path, "a.csv")
    assert rc == 0
    text = out.read_bytes()
    assert text.split(b"\n", 1)[0].decode() == CSV_HEADER
    assert b"\r" not in text
    assert text == (DATA / "golden_small.csv").read_bytes()


def test_byte_identical_across_workers(tmp_path):
    _, a = run_to(tmp_path, "a.csv")
    _, b = run_to(tmp_path, "b.csv", "--workers", "2")
    assert a.read_bytes() == b.read_bytes()


def test_seed_override_changes_output(tmp_path):
    _, a = run_to(tmp_path, "a.csv")
    _, b = run_to(tmp_path, "b.csv", "--seed", "5")
    assert a.read_bytes() != b.read_bytes()


def test_json_mirrors_csv(tmp_path):
    cfg = tmp_path / "j.cfg"
    cfg.write_text((DATA / "small.cfg").read_text() + "output.format = json\n")
    out = tmp_path / "o.json"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    rows = json.loads(out.read_text())
    assert list(rows[0]) == CSV_HEADER.split(",")
    csv_lines = (DATA / "golden_small.csv").read_text().splitlines()[1:]
    assert len(rows) == len(csv_lines)
    first = csv_lines[0].split(",")
    assert rows[0]["der"] == float(first[2]) and rows[0]["precoder"] == first[1]


def test_missing_output_directory(tmp_path):
    out = tmp_path / "nope" / "x.csv"
    rc = main(["run", "--config", str(DATA / "small.cfg"), "--out", str(out)])
    assert rc == 2
    assert not out.exists() and not out.parent.exists()


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text(MINIMAL + "oops\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "line 5" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "absent.cfg")]) == 2


def test_all_infeasible_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(
        "anonlink.harness.run_trial",
        lambda *a, **k: TrialOutcome(0, -1, False, 0, 0, 0.0, 0.0, feasible=False),
    )
    rc, out = run_to(tmp_path, "inf.csv")
    assert rc == 3
    lines = out.read_text().splitlines()
    assert all(line.endswith(",0,2024") and ",nan," in line for line in lines[1:])


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_selftest_fault_injection(capsys):
    assert main(["selftest", "--inject-fault", "projector"]) == 1
    out = capsys.readouterr().out
    assert "projector" in out and "FAIL" in out
