import json

import numpy as np
import pytest

from augbound.harness import (ConfigError, EmbeddingTable, emit_plot_data, load_embeddings, parse_config, run,
                              save_embeddings)
from augbound.harness.cli import main
from augbound.harness.io import EmbeddingFormatError, read_plot_data
from augbound.harness.run import optimal_agreement

PIXEL = {"kind": "pixel-distances", "seed": 0, "per_class": 4, "m_a": 4, "m_c": 8,
         "generative": {"toy": {"side": 8}},
         "sweeps": [{"param": "crop_min", "values": [0.2, 0.5, 0.8]}]}
DECOMP = {"kind": "decomp-check", "seed": 0, "world": {"num_worlds": 2, "classes": 2, "K": 2, "images": 2, "augs": 2}}


def write_cfg(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


# -- config ----------------------------------------------------------------------------

@pytest.mark.parametrize("bad,path", [
    ({"kind": "pixel-distances", "sweeps": [{"param": "crop_min", "values": []}]}, "sweeps[0].values"),
    ({"kind": "pixel-distances"}, "sweeps"),
    ({"kind": "bound-report", "train": {"seed": 3}}, "train.seed"),
    ({"kind": "bound-report", "augment": {"crop_scale": [0.9, 0.1]}}, "augment"),
    ({"kind": "bound-report", "m_c": 1}, "m_c"),
    ({"kind": "bound-report", "delta": 1.5}, "delta"),
    ({"kind": "bound-report", "colour": 1}, "colour"),
    ({"kind": "nope"}, "kind"),
])
def test_config_errors_name_the_field(bad, path):
    with pytest.raises(ConfigError) as err:
        parse_config(bad)
    assert str(err.value).startswith(path)


def test_empty_sweep_message():
    with pytest.raises(ConfigError, match="sweep list must be non-empty"):
        parse_config({"kind": "pixel-distances", "sweeps": [{"param": "crop_min", "values": []}]})


def test_kind_must_match_subcommand():
    with pytest.raises(ConfigError, match="kind"):
        parse_config(DECOMP, kind="pixel-distances")


@pytest.mark.parametrize("d", [PIXEL, DECOMP, {"kind": "train-sweep", "encoder": {"arch": "linear"},
                                                 "sweeps": [{"param": "color_prob", "values": [0, 0.5]}]}])
def test_config_round_trip_is_a_fixed_point(d):
    once = parse_config(d)
    twice = parse_config(json.loads(once.to_json()))
    assert once.to_json() == twice.to_json()


# -- runs -----------------------------------------------------------------------------------

def test_decomp_check_gap(tmp_path):
    run(parse_config(DECOMP), tmp_path)
    report = json.loads((tmp_path / "decomp_check.json").read_text())
    assert report["max_gap"] < 1e-10
    assert report["min_inner_slack"] >= -1e-10 and report["min_rbar_slack"] >= -1e-10
    rows = read_plot_data((tmp_path / "decomp_check.csv").read_text())
    assert [int(r["C"]) for r in rows] == [2, 2] and all(float(r["gap"]) < 1e-10 for r in rows)


def test_pixel_distance_sweep_rows(tmp_path):
    run(parse_config(PIXEL), tmp_path)
    rows = read_plot_data((tmp_path / "pixel_distances.csv").read_text())
    assert len(rows) == 3
    maxes = [float(r["max_term"]) for r in rows]
    assert maxes[0] > maxes[1] > maxes[2]


def test_same_config_gives_identical_bytes(tmp_path):
    cfg = parse_config(PIXEL)
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    assert (tmp_path / "a/pixel_distances.csv").read_bytes() == (tmp_path / "b/pixel_distances.csv").read_bytes()


def test_optimal_agreement_ties_go_to_smaller_value():
    rows = [{"value": 0.2, "sum": 1.0, "probe_accuracy": 0.5},
            {"value": 0.5, "sum": 1.0, "probe_accuracy": 0.5},
            {"value": 0.8, "sum": 2.0, "probe_accuracy": 0.4}]
    assert optimal_agreement(rows)["agree"] is True
    rows[0]["probe_accuracy"] = 0.3
    assert optimal_agreement(rows)["agree"] is False


# -- embedding tables ----------------------------------------------------------------------

def test_embedding_round_trip_is_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    t = EmbeddingTable(rng.integers(3, size=7), rng.normal(size=(7, 5)), 3)
    save_embeddings(t, tmp_path / "e.bin")
    back = load_embeddings(tmp_path / "e.bin")
    assert back.vectors.tobytes() == t.vectors.tobytes()
    np.testing.assert_array_equal(back.labels, t.labels)
    save_embeddings(back, tmp_path / "f.bin")
    assert (tmp_path / "e.bin").read_bytes() == (tmp_path / "f.bin").read_bytes()
    save_embeddings(t, tmp_path / "e.csv")
    assert load_embeddings(tmp_path / "e.csv").vectors.tobytes() == t.vectors.tobytes()


def test_hand_written_csv(tmp_path):
    (tmp_path / "h.csv").write_text("0,1.5,-2,0.25\n1,0,3.75,1e-3\n")
    t = load_embeddings(tmp_path / "h.csv")
    assert (t.n, t.d, t.num_classes) == (2, 3, 2)
    np.testing.assert_array_equal(t.labels, [0, 1])
    np.testing.assert_array_equal(t.vectors, np.array([[1.5, -2, 0.25], [0, 3.75, 1e-3]], np.float32))


def test_empty_table_warns(tmp_path):
    save_embeddings(EmbeddingTable(np.zeros(0), np.zeros((0, 4)), 2), tmp_path / "z.bin")
    with pytest.warns(UserWarning, match="no embeddings"):
        t = load_embeddings(tmp_path / "z.bin")
    assert t.n == 0
    (tmp_path / "z.csv").write_text("")
    with pytest.warns(UserWarning):
        assert load_embeddings(tmp_path / "z.csv").n == 0


def test_embedding_format_errors(tmp_path):
    t = EmbeddingTable(np.array([0, 1]), np.ones((2, 3)), 2)
    save_embeddings(t, tmp_path / "e.bin")
    buf = (tmp_path / "e.bin").read_bytes()
    (tmp_path / "m.bin").write_bytes(b"XXXXX" + buf[5:])
    with pytest.raises(EmbeddingFormatError, match="magic"):
        load_embeddings(tmp_path / "m.bin")
    (tmp_path / "t.bin").write_bytes(buf[:-3])
    with pytest.raises(EmbeddingFormatError, match="truncated"):
        load_embeddings(tmp_path / "t.bin")
    bad = bytearray(buf)
    bad[-4:] = np.array([np.nan], "<f4").tobytes()
    (tmp_path / "n.bin").write_bytes(bytes(bad))
    with pytest.raises(EmbeddingFormatError, match="non-finite"):
        load_embeddings(tmp_path / "n.bin")


# -- plot data -------------------------------------------------------------------------------

def test_plot_data():
    assert emit_plot_data([], header=["a", "b"]) == "a,b\n"
    text = emit_plot_data([{"name": "crop, strong", "v": 1}])
    assert text.splitlines()[1] == '"crop, strong",1'
    vals = [0.1 + 0.2, 1 / 3, 2.0**-40, 12345.678901234567]
    back = read_plot_data(emit_plot_data([{"x": v} for v in vals]))
    assert [float(r["x"]) for r in back] == vals
    with pytest.raises(ValueError):
        emit_plot_data([{"a": 1}, {"b": 2}])


# -- CLI -----------------------------------------------------------------------------------

def test_cli_exit_codes(tmp_path, capsys):
    good = write_cfg(tmp_path, DECOMP, "good.json")
    assert main(["decomp-check", "--config", good, "--validate"]) == 0
    assert "ok (decomp-check)" in capsys.readouterr().out
    assert main(["decomp-check", "--config", good, "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o/decomp_check.json").exists()
    bad = write_cfg(tmp_path, {"kind": "pixel-distances", "sweeps": [{"param": "crop_min", "values": []}]}, "bad.json")
    assert main(["pixel-distances", "--config", bad]) == 2
    assert "sweeps[0].values" in capsys.readouterr().err
    assert main(["decomp-check", "--config", str(tmp_path / "missing.json")]) == 2
    big = write_cfg(tmp_path, {"kind": "decomp-check",
                               "world": {"num_worlds": 1, "classes": 8, "K": 8, "images": 3, "augs": 3}}, "big.json")
    assert main(["decomp-check", "--config", big, "--out", str(tmp_path / "b")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["decomp-check", "--config", good, "--out", str(blocker / "sub")]) == 1


def test_cli_seed_override_changes_output(tmp_path):
    good = write_cfg(tmp_path, DECOMP)
    main(["decomp-check", "--config", good, "--out", str(tmp_path / "a")])
    main(["decomp-check", "--config", good, "--out", str(tmp_path / "b"), "--seed", "5"])
    assert (tmp_path / "a/decomp_check.csv").read_bytes() != (tmp_path / "b/decomp_check.csv").read_bytes()
