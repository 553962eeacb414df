import json
import xml.etree.ElementTree as ET

import pytest

from sgdlab.cli import main
from sgdlab.config import ConfigError, config_hash, derive_seed, parse_config, set_path

SGD = {
    "experiment": "sgd",
    "name": "small",
    "objective": {"name": "sinsq", "dim": 2},
    "oracle": {"kind": "exact_noisy", "variance": {"scale": 1.0, "exponent": 0.0}},
    "alpha": {"scale": 0.5, "exponent": 0.9, "offset": 2},
    "horizon": 20000,
    "seeds": 4,
    "verdict": {"min_seeds": 4, "threshold": 0.1},
}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


class TestSeeds:
    def test_known_values(self):
        # SplitMix64 stream from state 0
        assert derive_seed(0, 0) == 0xE220A8397B1DCDAF
        assert derive_seed(0, 1) == 0x6E789E6AA1B965F4

    def test_distinct(self):
        seeds = {derive_seed(b, i) for b in range(5) for i in range(200)}
        assert len(seeds) == 1000

    def test_config_forms(self):
        assert len(parse_config({**SGD, "seeds": [1, 2, 3]}).seeds) == 3
        a = parse_config({**SGD, "seeds": {"base": 7, "count": 2}}).seeds
        assert a == [derive_seed(7, 0), derive_seed(7, 1)]


class TestConfig:
    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            parse_config({**SGD, "learning_rate": 0.1})

    def test_unknown_verdict_key(self):
        with pytest.raises(ConfigError, match="slak"):
            parse_config({**SGD, "verdict": {"slak": 0.1}})

    def test_bad_kind(self):
        with pytest.raises(ConfigError):
            parse_config({**SGD, "experiment": "adam"})

    def test_hash_ignores_output_settings(self):
        assert config_hash(SGD) == config_hash({**SGD, "out": "x", "jobs": 8, "plot": False})
        assert config_hash(SGD) != config_hash({**SGD, "horizon": 10})

    def test_set_path(self):
        out = set_path(SGD, "alpha.exponent", 0.7)
        assert out["alpha"]["exponent"] == 0.7 and SGD["alpha"]["exponent"] == 0.9
        with pytest.raises(ConfigError):
            set_path(SGD, "oracle.increment.exponent", 0.3)


class TestRun:
    def test_pass_and_artifacts(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", write(tmp_path, SGD), "--out", str(out)]) == 0
        got = files(out)
        assert {"verdict.csv", "metadata.json", "plot.svg", "trajectories/seed_000.csv"} <= set(got)
        meta = json.loads(got["metadata.json"])
        assert meta["config_hash"] == config_hash(SGD) and meta["outcome"] == "pass"
        assert "time" not in json.dumps(meta).lower()
        ET.fromstring(got["plot.svg"])
        assert not [p for p in got if p.endswith(".tmp")]

    def test_summable_steps_not_met(self, tmp_path):
        cfg = {**SGD, "alpha": {"scale": 0.5, "exponent": 1.2, "offset": 2}}
        out = tmp_path / "o"
        assert main(["run", write(tmp_path, cfg), "--out", str(out)]) == 3
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["outcome"] == "hypotheses-not-met"
        assert "sum_alpha_infinite" in meta["reason"]

    def test_malformed_key(self, tmp_path, capsys):
        assert main(["run", write(tmp_path, {**SGD, "bogus_key": 1})]) == 1
        assert "bogus_key" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{")
        assert main(["run", str(p)]) == 1

    def test_missing_file(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.json")]) == 1

    def test_failing_conclusion(self, tmp_path):
        cfg = {**SGD, "verdict": {"min_seeds": 4, "threshold": 1e-30}}
        assert main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "f"), "--no-plot"]) == 2
        assert not (tmp_path / "f" / "plot.svg").exists()

    def test_seed_override(self, tmp_path):
        out = tmp_path / "s"
        assert main(["run", write(tmp_path, SGD), "--out", str(out), "--seeds", "5", "--no-plot"]) == 0
        assert len(list((out / "trajectories").glob("*.csv"))) == 5

    def test_reruns_identical_and_parallel_equal(self, tmp_path):
        cfg = write(tmp_path, SGD)
        for name, jobs in (("a", "1"), ("b", "1"), ("c", "3")):
            assert main(["run", cfg, "--out", str(tmp_path / name), "--jobs", jobs]) == 0
        a, b, c = (files(tmp_path / n) for n in "abc")
        assert a == b == c


class TestOtherVerbs:
    def test_rs(self, tmp_path):
        cfg = {"experiment": "rs-process",
               "process": {"alpha": {"scale": 1.0, "exponent": 0.9, "offset": 2},
                           "f": {"scale": 1.0, "exponent": 2.0, "offset": 2},
                           "g": {"scale": 1.0, "exponent": 2.0, "offset": 2}, "u": 0.5},
               "horizon": 20000, "seeds": 5, "verdict": {"tol": 0.01, "threshold": 0.01, "lambda": 0.5}}
        out = tmp_path / "rs"
        assert main(["rs", write(tmp_path, cfg), "--out", str(out)]) == 0
        lines = (out / "verdict.csv").read_text().splitlines()
        assert lines[0] == "seed,final_z,tail_oscillation,tail_min,lambda_hat_z,flag"
        assert lines[-1].startswith("verdict,pass")

    def test_rs_gate(self, tmp_path):
        cfg = {"experiment": "rs-process",
               "process": {"alpha": {"scale": 1.0, "exponent": 0.9, "offset": 2},
                           "f": {"scale": 0.1, "exponent": 0.0}}, "horizon": 100, "seeds": 2}
        assert main(["rs", write(tmp_path, cfg), "--out", str(tmp_path / "g")]) == 3

    def test_rs_verb_wrong_kind(self, tmp_path):
        assert main(["rs", write(tmp_path, SGD)]) == 1

    def test_counterexample(self, tmp_path):
        cfg = {"experiment": "counterexample", "alpha": {"scale": 1.0, "exponent": 1.0},
               "beta": {"inverse_log": 1.0}, "horizon": 1000, "verdict": {"min_lower_bound": 2.0}}
        out = tmp_path / "cx"
        assert main(["run", write(tmp_path, cfg), "--out", str(out)]) == 0
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["drift_summable"] is False

    def test_verify_oracles(self, tmp_path):
        cfg = {"experiment": "oracle-diagnostics", "objective": {"name": "sinsq", "dim": 3},
               "oracle": {"kind": "coordinate_off_policy", "phi0": [0.5, 0.3, 0.2],
                          "decay": {"scale": 1.0, "exponent": 0.5}},
               "theta": [1.0, -0.5, 2.0], "steps": [0, 10, 1000], "samples": 5000, "seeds": 1}
        out = tmp_path / "vo"
        assert main(["verify-oracles", write(tmp_path, cfg), "--out", str(out)]) == 0
        rows = (out / "oracle_diagnostics.csv").read_text().splitlines()
        assert len(rows) == 4 and rows[0].startswith("t,bias_norm")


SPSA = {
    "experiment": "sgd",
    "name": "spsa_small",
    "objective": {"name": "sinsq", "dim": 2},
    "oracle": {"kind": "spsa", "k": 1, "increment": {"scale": 1.0, "exponent": 0.3},
               "noise": {"kind": "gaussian", "std": 0.1}},
    "alpha": {"scale": 0.5, "exponent": 1.0, "offset": 2},
    "horizon": 5000,
    "seeds": 2,
    "verdict": {"min_seeds": 2, "threshold": 1.0, "series": ["J"]},
}


class TestSweep:
    def test_grid_and_overlay(self, tmp_path):
        out = tmp_path / "sw"
        assert main(["sweep", write(tmp_path, SPSA), "--param", "s", "--values", "0.2,0.3", "--out", str(out)]) == 0
        rows = (out / "sweep.csv").read_text().splitlines()
        assert rows[0].startswith("s,nu_predicted,gate,median_lambda_J")
        assert len(rows) == 3
        svg = (out / "sweep.svg").read_text()
        ET.fromstring(svg)
        assert "predicted nu" in svg

    def test_single_point_reference(self, tmp_path):
        cfg = {**SPSA, "oracle": {**SPSA["oracle"], "k": 2}}
        out = tmp_path / "k2"
        assert main(["sweep", write(tmp_path, cfg), "--param", "s", "--values", "0.25", "--out", str(out)]) == 0
        row = (out / "sweep.csv").read_text().splitlines()[1].split(",")
        assert float(row[1]) == pytest.approx(0.5)

    def test_empty_grid(self, tmp_path):
        assert main(["sweep", write(tmp_path, SPSA), "--param", "s", "--values", ""]) == 1

    def test_unknown_path(self, tmp_path):
        assert main(["sweep", write(tmp_path, SGD), "--param", "s", "--values", "0.2"]) == 1
