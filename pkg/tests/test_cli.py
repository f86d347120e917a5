import json
import math
from pathlib import Path

import numpy as np
import pytest

from ghostbeam.beamshape import OamSpectrum
from ghostbeam.cli import main
from ghostbeam.config import load_config
from ghostbeam.errors import ConfigError
from ghostbeam.joint import ImageProfile

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
FIG1 = (CONFIGS / "fig1.toml").read_text()


def _cfg(tmp_path, text=FIG1, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _run(tmp_path, *argv, text=FIG1):
    out = tmp_path / "out"
    code = main([argv[0], "--config", _cfg(tmp_path, text), "--out", str(out), *argv[1:]])
    return code, out


def test_config_loads():
    cfg = load_config(CONFIGS / "fig1.toml")
    assert cfg.scene.object.d == 1927.3
    assert cfg.rates.rng_seed == 1
    assert load_config(CONFIGS / "rings.toml").scene.object.n_rings == 5


def test_missing_key_names_line(tmp_path, capsys):
    text = FIG1.replace("lambda_spp = 600.0\n", "")
    code, _ = _run(tmp_path, "forward", text=text)
    assert code == 2
    err = capsys.readouterr().err
    assert "lambda_spp" in err
    line = FIG1.splitlines().index("[scene]") + 1
    assert f":{line}:" in err


def test_bad_value_names_key_line(tmp_path):
    text = FIG1.replace("width_y = 10000.0", 'width_y = "wide"')
    with pytest.raises(ConfigError) as info:
        load_config(_cfg(tmp_path, text))
    line = text.splitlines().index('width_y = "wide"') + 1
    assert f":{line}:" in str(info.value) and "width_y" in str(info.value)


def test_malformed_toml(tmp_path):
    assert _run(tmp_path, "forward", text="[scene\nx=")[0] == 2


def test_wrong_schema(tmp_path):
    assert _run(tmp_path, "forward", text=FIG1.replace("ghostbeam/1", "ghostbeam/9"))[0] == 2


def test_forward(tmp_path):
    code, out = _run(tmp_path, "forward")
    assert code == 0
    img = ImageProfile.from_csv(out / "ungated_defocus_0nm.csv")
    assert not img.gated and img.visibility < 0.05
    manifest = json.loads((out / "manifest.json").read_text())
    names = {a["path"] for a in manifest["artifacts"]}
    assert {"forward_field.gbf", "reverse_field.gbf", "transfer.csv"} <= names
    assert all(len(a["sha256"]) == 64 for a in manifest["artifacts"])


def test_forward_opaque_object(tmp_path):
    text = FIG1.replace('kind = "double_slit"', 'kind = "transmission"\ny = [-1e9, 1e9]\nre = [0.0, 0.0]')
    code, out = _run(tmp_path, "forward", text=text)
    assert code == 0
    img = ImageProfile.from_csv(out / "ungated_defocus_0nm.csv")
    assert np.all(img.intensity == 0)


def test_ghost_axial(tmp_path):
    code, out = _run(tmp_path, "ghost", "--defocus", "0", "1e6")
    assert code == 0
    g0 = ImageProfile.from_csv(out / "gated_defocus_0nm.csv")
    g1 = ImageProfile.from_csv(out / "gated_defocus_1e06nm.csv")
    assert g0.gated and g0.visibility > 0.8
    assert not np.array_equal(g0.intensity, g1.intensity)
    assert (out / "gated_far_field.csv").exists()


def test_ghost_bucket_outside(tmp_path):
    assert _run(tmp_path, "ghost", "--bucket-point", "5000")[0] == 3


def test_ghost_scan(tmp_path):
    code, out = _run(tmp_path, "ghost", "--bucket-scan", "--defocus", "0")
    assert code == 0
    scan = ImageProfile.from_csv(out / "ghost_scan.csv")
    assert scan.axis.size > 10 and np.all(scan.intensity >= 0)
    assert (out / "bucket_summed_defocus_0nm.csv").exists()


def test_coincidence(tmp_path):
    code, out = _run(tmp_path, "coincidence", "--seed", "3")
    assert code == 0
    rep = json.loads((out / "coincidence_report.json").read_text())
    assert rep["theory"]["tau_spp_ns"] == pytest.approx(16021.8, rel=1e-4)
    assert rep["config"]["rng_seed"] == 3
    assert (out / "events.csv").read_text().startswith("timestamp_ns,kind,tag\n")
    assert (out / "histogram.csv").exists()


def test_coincidence_no_accidentals(tmp_path):
    text = FIG1.replace("dark_rate_hz = 100.0", "dark_rate_hz = 0.0").replace(
        "p_ps = 1e-3", "p_ps = 1.0").replace("duration_s = 2.0", "duration_s = 0.01")
    code, out = _run(tmp_path, "coincidence", text=text)
    assert code == 0
    rep = json.loads((out / "coincidence_report.json").read_text())
    assert rep["accidental"] == 0 and rep["true"] > 0


def test_coincidence_too_many_records(tmp_path):
    text = FIG1.replace("duration_s = 2.0", "duration_s = 1e6")
    assert _run(tmp_path, "coincidence", text=text)[0] == 2


def test_coincidence_stream(tmp_path):
    code, out = _run(tmp_path, "coincidence", "--stream", "--chunk-s", "0.5")
    assert code == 0
    assert json.loads((out / "coincidence_report.json").read_text())["streamed"] is True


def test_beamshape(tmp_path):
    rings = (CONFIGS / "rings.toml").read_text()
    code, out = _run(tmp_path, "beamshape", "--l", "-1", text=rings)
    assert code == 0
    assert OamSpectrum.from_csv(out / "oam_spectrum_l_minus.csv").dominant_l == -1
    code, out = _run(tmp_path, "beamshape", "--mixture", text=rings)
    mix = OamSpectrum.from_csv(out / "oam_spectrum_mixture.csv")
    assert abs(mix.mean) < 1e-3 and mix.get(1) == pytest.approx(0.5, abs=0.03)


def test_beamshape_bad_l(tmp_path):
    with pytest.raises(SystemExit) as info:
        _run(tmp_path, "beamshape", "--l", "2", text=(CONFIGS / "rings.toml").read_text())
    assert info.value.code == 2


def test_beamshape_needs_rings(tmp_path):
    assert _run(tmp_path, "beamshape")[0] == 3


def test_resolution(tmp_path):
    code, out = _run(tmp_path, "resolution", "--distances", "40", "20", "10")
    assert code == 0
    rows = np.loadtxt(out / "resolution.csv", delimiter=",", comments="#", skiprows=2)
    assert np.all(np.diff(rows[:, 1]) > 0)


def test_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("GHOSTBEAM_THREADS", "zero")
    assert _run(tmp_path, "resolution", "--distances", "20")[0] == 2
    monkeypatch.setenv("GHOSTBEAM_THREADS", "1")
    assert _run(tmp_path, "resolution", "--distances", "20")[0] == 0


def test_coarse_grid_is_quality_error(tmp_path):
    text = FIG1.replace("grid_step = 75.0", "grid_step = 200.0")
    assert _run(tmp_path, "ghost", text=text)[0] == 4


def test_invalid_geometry(tmp_path):
    text = FIG1.replace("object_x = 7000.0", "object_x = 19000.0")
    assert _run(tmp_path, "forward", text=text)[0] == 3
