import csv
import json
from pathlib import Path

import pytest

from srrm.cli import main
from srrm.config import derive_seeds, load_config, parse_config
from srrm.errors import ConfigError

EXAMPLE = Path(__file__).resolve().parents[1] / "configs" / "example.toml"

SMALL = """
seed = 3

[scene]
rows = 20
cols = 20
n_fields = 5
season_days = 9
subpixel = 2

[[scene.crop_calendar]]
crop = "corn"
plant_day = 3
harvest_day = 8
peak_lai = 3.0

[[scene.rain_events]]
day = 2
mean_mm = 20.0
correlation_length = 3.0

[pipeline]
scale_factor = 5
candidate_clusters = [2]
candidate_entropy_weights = [0.0]
candidate_ridge_weights = [0.01, 0.1]
training_fraction = 0.25

[clustering]
max_iterations = 40

[iterstudy]
every = 10
max_iterations = 40
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestConfig:
    def test_example_parses(self):
        cfg = load_config(EXAMPLE)
        assert cfg.seed == 0
        assert cfg.pipeline.cadence == 3
        assert len(cfg.scene.crop_calendar) == 3 and len(cfg.scene.rain_events) == 10

    def test_only_seed_required(self):
        cfg = parse_config("seed = 1\n")
        assert cfg.pipeline.training_fraction == 0.1

    def test_missing_seed(self):
        with pytest.raises(ConfigError, match="'seed'"):
            parse_config("[scene]\nrows = 10\n")

    def test_unknown_keys_named(self):
        with pytest.raises(ConfigError, match="'pipeline.cadense'"):
            parse_config("seed = 1\n[pipeline]\ncadense = 2\n")
        with pytest.raises(ConfigError, match="'extras'"):
            parse_config("seed = 1\n[extras]\n")
        with pytest.raises(ConfigError, match=r"scene.crop_calendar\[0\].plant"):
            parse_config('seed = 1\n[[scene.crop_calendar]]\ncrop = "corn"\nplant = 3\n')

    def test_type_and_domain_errors(self):
        with pytest.raises(ConfigError, match="scene.rows"):
            parse_config('seed = 1\n[scene]\nrows = "sixty"\n')
        with pytest.raises(ConfigError, match="training_fraction"):
            parse_config("seed = 1\n[pipeline]\ntraining_fraction = 2.0\n")
        with pytest.raises(ConfigError, match="divide"):
            parse_config("seed = 1\n[pipeline]\nscale_factor = 7\n")
        with pytest.raises(ConfigError, match="TOML"):
            parse_config("seed = = 1")

    def test_overrides_and_seeds(self):
        cfg = parse_config("seed = 1\n[pipeline]\ncadence = 2\n", seed=5, cadence=4)
        assert cfg.seed == 5 and cfg.pipeline.cadence == 4
        assert (cfg.scene.seed, cfg.noise.seed, cfg.pipeline.seed) == derive_seeds(5)
        assert len(set(derive_seeds(5))) == 3

    def test_hash_follows_text(self):
        a = parse_config("seed = 1\n")
        b = parse_config("seed = 1\n\n")
        assert a.sha256 != b.sha256
        assert a.sha256 == parse_config("seed = 1\n").sha256


class TestValidate:
    def test_example(self, capsys):
        code, out, _ = run(capsys, "validate", "--config", EXAMPLE)
        assert code == 0
        resolved = json.loads(out)
        assert resolved["pipeline"]["cadence"] == 3 and resolved["seed"] == 0

    def test_bad_config(self, capsys, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("seed = 1\n[noise]\nsd_temp = 3\n")
        code, out, err = run(capsys, "validate", "--config", path)
        assert code == 2
        lines = err.strip().splitlines()
        assert len(lines) == 1
        payload = json.loads(lines[0])
        assert payload["exit_code"] == 2 and "noise.sd_temp" in payload["message"]

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "validate", "--config", tmp_path / "none.toml")
        assert code == 2 and json.loads(err)["error"] == "ConfigError"


def test_generate_then_downscale(capsys, tmp_path, small_config):
    scene_dir = tmp_path / "scene"
    code, _, _ = run(capsys, "generate", "--config", small_config, "--out", scene_dir)
    assert code == 0
    assert (scene_dir / "day_009.grid").exists() and (scene_dir / "scene.json").exists()
    before = {p.name: p.read_bytes() for p in scene_dir.iterdir()}

    out = tmp_path / "run"
    code, _, _ = run(capsys, "downscale", "--config", small_config, "--scene", scene_dir, "--out", out)
    assert code == 0
    assert {p.name: p.read_bytes() for p in scene_dir.iterdir()} == before

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["days"] == {"001": "ok", "004": "ok", "007": "ok"}
    listed = {o["path"] for o in manifest["outputs"]}
    on_disk = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"}
    assert listed == on_disk
    assert {"config_sha256", "seed", "started", "finished", "versions"} <= set(manifest)
    params = json.loads((out / "days" / "day_004" / "params.json").read_text())
    assert params["n_clusters"] == 2 and params["ridge_weight"] in (0.01, 0.1)
    with open(out / "days" / "day_004" / "cost_trace.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "cost"] and len(rows) >= 2


def test_downscale_is_reproducible_across_jobs(capsys, tmp_path, small_config):
    outs = []
    for jobs in (1, 2):
        out = tmp_path / f"run{jobs}"
        code, _, _ = run(capsys, "downscale", "--config", small_config, "--out", out, "--jobs", jobs, "--cadence", 4)
        assert code == 0
        outs.append(out)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file() and p.name != "manifest.json")
    assert files
    for rel in files:
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel


def test_iterstudy(capsys, tmp_path, small_config):
    out = tmp_path / "iter"
    code, _, _ = run(capsys, "iterstudy", "--config", small_config, "--out", out, "--day", 5)
    assert code == 0
    with open(out / "iterstudy.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "rmse", "sd", "bias", "cost"]
    assert [int(r[0]) for r in rows[1:]] == [0, 10, 20, 30, 40]


def test_iterstudy_day_out_of_range(capsys, tmp_path, small_config):
    code, _, err = run(capsys, "iterstudy", "--config", small_config, "--out", tmp_path, "--day", 50)
    assert code == 2 and "outside" in json.loads(err)["message"]


def test_output_root_from_environment(capsys, tmp_path, small_config, monkeypatch):
    monkeypatch.setenv("SRRM_OUTPUT_ROOT", str(tmp_path / "root"))
    code, _, _ = run(capsys, "generate", "--config", small_config)
    assert code == 0
    assert (tmp_path / "root" / "generate" / "manifest.json").exists()


def test_bad_scene_directory_is_data_error(capsys, tmp_path, small_config):
    code, _, err = run(capsys, "downscale", "--config", small_config, "--scene", tmp_path / "nope", "--out", tmp_path)
    assert code == 3 and json.loads(err)["error"] == "ParseError"


def test_jobs_must_be_positive(capsys, tmp_path, small_config):
    code, _, _ = run(capsys, "downscale", "--config", small_config, "--out", tmp_path, "--jobs", 0)
    assert code == 2
