"""Command-line front end."""

import json

import pandas as pd
import pytest

from eecap import __version__
from eecap.cli import main

HALF_U1 = {"p1": [0.0, 0.5], "p2": [0.0, 0.5]}
LOSSLESS_PAIR = {"buffer_1": 1, "buffer_2": 1, "initial_state": [1, 0]}


def _run_json(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out
    assert code == 0, out
    return json.loads(out)


class TestRates:
    def test_inner_single_unit(self, capsys, write_json):
        model = write_json("u1.json", {"total_units": 1})
        policy = write_json("half.json", HALF_U1)
        result = _run_json(capsys, ["inner", "--model", model, "--policy", policy])
        assert result["sum"] == pytest.approx(1.0)
        assert result["kind"] == "inner-noiseless"

    def test_inner_general(self, capsys, write_json):
        model = write_json("pair.json", LOSSLESS_PAIR)
        policy = write_json(
            "gei.json", {"p1": [[0.0, 0.0], [0.5, 0.5]], "p2": [[0.0, 0.5], [0.0, 0.5]]}
        )
        result = _run_json(capsys, ["inner", "--model", model, "--policy", policy])
        assert result["sum"] == pytest.approx(1.0)
        assert result["pi"]["1_0"] == pytest.approx(0.5)

    def test_outer(self, capsys, write_json):
        model = write_json("u1.json", {"total_units": 1})
        policy = write_json("joint.json", {"phi": [[0.5, 0.5, 0, 0], [0.5, 0, 0.5, 0]]})
        result = _run_json(capsys, ["outer", "--model", model, "--policy", policy])
        assert result["sum"] == pytest.approx(1.0)

    def test_lei_default_bernoulli(self, capsys, write_json):
        model = write_json("pair.json", LOSSLESS_PAIR)
        result = _run_json(capsys, ["lei", "--model", model])
        assert result["r1"] == pytest.approx(0.31128, abs=1e-5)

    def test_baseline_frame(self, capsys):
        result = _run_json(capsys, ["baseline", "--variant", "frame", "--F", "2"])
        assert result["sum"] == 0.5

    def test_baseline_csv(self, capsys):
        assert main(["baseline", "--variant", "variable", "--format", "csv"]) == 0
        header, row = capsys.readouterr().out.strip().splitlines()
        assert header.split(",")[:3] == ["r1", "r2", "sum"]
        assert float(row.split(",")[2]) == pytest.approx(2 / 3)


class TestOptimizeAndSweep:
    def test_optimize_output_feeds_back(self, capsys, write_json, tmp_path):
        model = write_json("u2.json", {"total_units": 2})
        out = tmp_path / "best.json"
        argv = ["optimize", "--model", model, "--mode", "outer-noiseless", "--starts", "2"]
        assert main(argv + ["--output", str(out)]) == 0
        best = json.loads(out.read_text())

        again = _run_json(capsys, ["outer", "--model", model, "--policy", str(out)])
        assert again["sum"] == pytest.approx(best["objective"], abs=1e-9)

    def test_inner_policy_round_trip(self, capsys, write_json, tmp_path):
        model = write_json("u1.json", {"total_units": 1})
        out = tmp_path / "best.json"
        argv = ["optimize", "--model", model, "--mode", "inner-noiseless", "--starts", "1"]
        assert main(argv + ["-o", str(out)]) == 0
        result = _run_json(capsys, ["inner", "--model", model, "--policy", str(out)])
        assert result["sum"] == pytest.approx(1.0, abs=1e-3)

    def test_sweep_rows(self, write_json, tmp_path):
        model = write_json("pair.json", LOSSLESS_PAIR)
        out = tmp_path / "sweep.csv"
        argv = [
            "sweep", "--model", model, "--mode", "inner-general",
            "--param", "link_12.replenish", "--from", "0", "--to", "0.5", "--steps", "26",
            "--mirror", "link_21.replenish", "--starts", "1", "--max-iters", "60",
            "--output", str(out),
        ]
        assert main(argv) == 0
        frame = pd.read_csv(out)
        assert len(frame) == 26
        assert frame["param"].iloc[-1] == pytest.approx(0.5)

    def test_sweep_values_json(self, capsys, write_json):
        model = write_json("u.json", {"total_units": 1})
        argv = [
            "sweep", "--model", model, "--mode", "fixed-noiseless",
            "--param", "total_units", "--values", "1", "2", "--format", "json",
        ]
        rows = _run_json(capsys, argv)
        assert [row["param"] for row in rows] == [1.0, 2.0]
        assert rows[1]["objective"] == pytest.approx(1.5)

    def test_sweep_needs_grid(self, write_json):
        model = write_json("u.json", {"total_units": 1})
        argv = ["sweep", "--model", model, "--mode", "fixed-noiseless", "--param", "total_units"]
        assert main(argv) == 1


class TestSimulate:
    def test_same_seed_same_bytes(self, write_json, tmp_path):
        model = write_json("u2.json", {"total_units": 2})
        outputs = []
        for name in ("a.json", "b.json"):
            target = tmp_path / name
            argv = ["simulate", "--model", model, "--n", "500", "--seed", "4", "-o", str(target)]
            assert main(argv) == 0
            outputs.append(target.read_bytes())
        assert outputs[0] == outputs[1]

    def test_u1_protocol(self, capsys):
        result = _run_json(capsys, ["simulate", "--kind", "u1", "--m", "200"])
        assert result["bits_delivered_1"] == 200

    def test_states_need_model(self):
        assert main(["simulate", "--kind", "states"]) == 1

    def test_coding_run(self, capsys, write_json):
        model = write_json("u1.json", {"total_units": 1})
        argv = ["simulate", "--kind", "coding", "--model", model, "--n", "2000", "--seed", "1"]
        result = _run_json(capsys, argv)
        assert result["decode_ok"] is True
        assert result["achieved_sum_rate"] == pytest.approx(result["nominal_sum_rate"])
        assert [book["list_size"] for book in result["codebooks"]] == [1, 1]

    def test_coding_above_entropy_exit_1(self, write_json):
        model = write_json("u1.json", {"total_units": 1})
        argv = ["simulate", "--kind", "coding", "--model", model, "--n", "200", "--message-bits", "150"]
        assert main(argv) == 1

    def test_frame_simulation_needs_power_of_two(self):
        assert main(["baseline", "--variant", "frame", "--F", "3", "--simulate", "--m", "10"]) == 1


class TestErrors:
    def test_invalid_policy_exit_1(self, write_json, caplog):
        model = write_json("u1.json", {"total_units": 1})
        policy = write_json("bad.json", {"p1": [0.5, 0.5], "p2": [0.0, 0.5]})
        assert main(["inner", "--model", model, "--policy", policy]) == 1
        assert "entry 0" in caplog.text

    def test_policy_model_mismatch_exit_1(self, write_json):
        model = write_json("u2.json", {"total_units": 2})
        policy = write_json("half.json", HALF_U1)
        assert main(["inner", "--model", model, "--policy", policy]) == 1

    def test_lei_on_noiseless_exit_1(self, write_json):
        model = write_json("u1.json", {"total_units": 1})
        assert main(["lei", "--model", model]) == 1

    @pytest.mark.parametrize("q", ["1.5", "-0.2", "nan"])
    def test_lei_bad_bit_probability_exit_1(self, write_json, caplog, q):
        model = write_json("pair.json", LOSSLESS_PAIR)
        assert main(["lei", "--model", model, "--q1", q]) == 1
        assert "'q'" in caplog.text

    def test_missing_file_exit_2(self, tmp_path):
        assert main(["inner", "--model", str(tmp_path / "nope.json"), "--policy", "x.json"]) == 2

    def test_malformed_json_exit_1(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text("{", encoding="utf-8")
        assert main(["optimize", "--model", str(path), "--mode", "inner-noiseless"]) == 1

    def test_usage_error_exit_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["inner", "--model", "m.json"])
        assert exc.value.code == 2

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert __version__ in capsys.readouterr().out
