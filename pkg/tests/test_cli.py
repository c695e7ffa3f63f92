import csv
import json
import time

import numpy as np
import pytest

from ladderembed import dataio
from ladderembed.cli import compare_score_tables, main
from ladderembed.config import KEYS, RunConfig
from ladderembed.errors import ConfigError
from ladderembed.losses import builtin_config

TINY = """\
# tiny two-subject run
n_subjects = 2
n_classes = 2
trials_per_cell_train = 6
trials_per_cell_test = 3
time_steps = 16
channels = 3
seed = 4
embed_dim = 4
steps = 30
batch_size = 8
max_lr = 0.01
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "run.cfg").write_text(TINY, encoding="utf-8")
    return tmp_path


def _run(workdir, *args):
    return main([args[0], str(workdir / "run.cfg"), *args[1:]])


class TestConfig:
    def test_comments_and_types(self):
        cfg = RunConfig.parse("steps = 7  # short\nmax_lr=0.5\nper_channel_baseline = yes\nm_values = 1,3\n")
        assert cfg["steps"] == 7 and cfg["max_lr"] == 0.5
        assert cfg["per_channel_baseline"] is True and cfg["m_values"] == (1, 3)
        assert cfg["seed"] == KEYS["seed"][1]

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="bogus_key"):
            RunConfig.parse("steps = 3\nbogus_key = 1\n")

    def test_bad_value_names_key(self):
        with pytest.raises(ConfigError, match="steps"):
            RunConfig.parse("steps = many\n")

    def test_component_lines_build_loss(self):
        cfg = RunConfig.parse("component = 0.2,1,11,01\ncomponent = 0.2,3,01,10\ncomponent = 0.2,1,10,00\n")
        assert cfg.loss_config() == builtin_config("b") and cfg.config_name() == "custom"

    def test_paths_relative_to_config(self, tmp_path):
        (tmp_path / "sub").mkdir()
        (tmp_path / "sub" / "x.cfg").write_text("data = d\n", encoding="utf-8")
        assert RunConfig.load(tmp_path / "sub" / "x.cfg")["data"] == str((tmp_path / "sub" / "d").resolve())


class TestExitCodes:
    def test_unknown_key_exits_1(self, workdir, capsys):
        assert _run(workdir, "synth", "--out", str(workdir / "d"), "--set", "not_a_key=3") == 1
        assert "not_a_key" in capsys.readouterr().err

    def test_usage_error_exits_1(self, capsys):
        assert main(["eval", "--no-such-flag"]) == 1
        assert main([]) == 1

    def test_missing_path_exits_1(self, workdir):
        assert _run(workdir, "eval") == 1

    def test_bad_data_exits_2(self, workdir, capsys):
        (workdir / "d").mkdir()
        (workdir / "d" / "manifest.csv").write_text("nonsense\n", encoding="utf-8")
        (workdir / "d" / "meta.csv").write_text("nonsense\n", encoding="utf-8")
        (workdir / "d" / "samples.bin").write_bytes(b"")
        assert _run(workdir, "eval", "--data", str(workdir / "d"), "--out", str(workdir / "o")) == 2
        assert "error" in capsys.readouterr().err

    @pytest.mark.parametrize("command", ["synth", "train", "eval", "curve", "embed"])
    def test_help_lists_every_key(self, command, capsys):
        with pytest.raises(SystemExit) as exc:
            main([command, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        assert all(key in text for key in KEYS) and "component" in text


class TestPipeline:
    def test_within_subject_end_to_end(self, workdir):
        start = time.perf_counter()
        assert _run(workdir, "synth", "--out", str(workdir / "d")) == 0
        assert _run(workdir, "eval", "--data", str(workdir / "d"), "--out", str(workdir / "o"),
                    "--set", "scenario=within_subject") == 0
        assert time.perf_counter() - start < 60
        with open(workdir / "o" / "scores.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["subject"] for r in rows] == ["0", "1"] and {r["config"] for r in rows} == {"a"}
        doc = json.loads((workdir / "o" / "scores.json").read_text())
        assert "confusion" in json.dumps(doc)

    def test_train_eval_embed_deterministic(self, workdir):
        assert _run(workdir, "synth", "--out", str(workdir / "d")) == 0
        for tag in ("1", "2"):
            assert _run(workdir, "train", "--data", str(workdir / "d"), "--out", str(workdir / f"c{tag}")) == 0
            assert _run(workdir, "eval", "--data", str(workdir / "d"), "--ckpt", str(workdir / f"c{tag}"),
                        "--out", str(workdir / f"o{tag}"), "--set", "classifier=logreg,1nn") == 0
            assert _run(workdir, "embed", "--data", str(workdir / "d"), "--ckpt", str(workdir / f"c{tag}"),
                        "--out", str(workdir / f"e{tag}.csv"), "--project", "pca2") == 0
        for name in ("c{}/loss_trace.csv", "c{}/params.bin", "c{}/meta.csv", "o{}/scores.csv", "o{}/scores.json", "e{}.csv"):
            assert (workdir / name.format(1)).read_bytes() == (workdir / name.format(2)).read_bytes()
        with open(workdir / "e1.csv", newline="") as fh:
            header = next(csv.reader(fh))
        assert header[:1] == ["trial_id"] and header[-5:] == ["pca1", "pca2", "subject", "im_class", "split"]
        assert len(header) == 1 + 4 + 2 + 3

    def test_curve(self, workdir):
        assert _run(workdir, "synth", "--out", str(workdir / "d")) == 0
        assert _run(workdir, "curve", "--data", str(workdir / "d"), "--out", str(workdir / "cv"),
                    "--set", "m_values=1,2", "--set", "steps=10") == 0
        with open(workdir / "cv" / "curve.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [int(r["m"]) for r in rows] == [1, 2]


class TestStats:
    def _scores(self, path, acc):
        lines = ["subject,scenario,config,classifier,m,accuracy"]
        lines += [f"{s},complete_loso,b,logreg,0,{a!r}" for s, a in enumerate(acc)]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return str(path)

    def test_identical_files_not_applicable(self, tmp_path, capsys):
        a = self._scores(tmp_path / "a.csv", [0.5, 0.6, 0.7])
        assert main(["stats", "--scores", a, "--scores", a]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["tests"][0]["p_value"] == "not-applicable"

    def test_report(self, tmp_path, capsys):
        a = self._scores(tmp_path / "a.csv", [0.5, 0.6, 0.7, 0.8, 0.55, 0.65])
        b = self._scores(tmp_path / "b.csv", [0.6, 0.7, 0.8, 0.9, 0.65, 0.75])
        assert main(["stats", "--scores", a, "--scores", b, "--out", str(tmp_path / "r.json")]) == 0
        test = json.loads((tmp_path / "r.json").read_text())["tests"][0]
        assert test["exact"] and test["p_value"] == pytest.approx(2 / 64)
        assert test["rejected"] is True

    def test_missing_file_exits_2(self, tmp_path):
        assert main(["stats", "--scores", str(tmp_path / "x.csv"), "--scores", str(tmp_path / "y.csv")]) == 2

    def test_one_versus_many_holm(self):
        base = [{"subject": s, "scenario": "complete_loso", "config": "b", "classifier": "logreg", "m": 0,
                 "accuracy": 0.5} for s in range(6)]
        other = [dict(r, config=c, accuracy=0.5 + 0.01 * (r["subject"] + 1)) for c in ("a", "c") for r in base]
        report = compare_score_tables(base, other, 0.05)
        assert len(report["tests"]) == 2
        assert all(t["p_value"] == pytest.approx(2 / 64) for t in report["tests"])
        # adjusted: 2/64 * 2 = 0.0625 > 0.05 for the smallest p, so neither is rejected
        assert [t["rejected"] for t in report["tests"]] == [False, False]
