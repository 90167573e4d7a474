from __future__ import annotations

import argparse
import csv
import io

import pytest

from rm_lab.cli import build_parser, main, parse_int_list
from rm_lab.const import EXIT_CONFIG_ERROR, EXIT_OK


class TestParseIntList:
    def test_comma_list(self):
        assert parse_int_list("4, 16,64") == [4, 16, 64]

    def test_doubling_range(self):
        assert parse_int_list("16..128") == [16, 32, 64, 128]

    @pytest.mark.parametrize("text", ["a,b", "8..4", "0..4"])
    def test_rejects_garbage(self, text):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_int_list(text)


class TestMain:
    def test_counterexample_table(self, capsys, tmp_path):
        out = tmp_path / "ce.csv"
        assert main(["counterexample", "--mr", "4,8", "--out", str(out)]) == EXIT_OK
        rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
        assert rows[0][:3] == ["m_r", "discrete_loss", "continuous_loss"]
        assert [r[0] for r in rows[1:]] == ["4", "8"]
        assert out.read_text().startswith("m_r,")

    def test_bad_config_exits_with_config_code(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text('[problem]\npreset = "nope"\n', encoding="utf-8")
        assert main(["run", str(path)]) == EXIT_CONFIG_ERROR

    def test_missing_config(self, tmp_path):
        assert main(["run", str(tmp_path / "absent.toml")]) == EXIT_CONFIG_ERROR

    def test_probe_constants(self, capsys):
        assert main(["probe-constants", "--preset", "poisson1d_sin", "--family", "2"]) == EXIT_OK
        assert capsys.readouterr().out.startswith("quantity,value\n")

    def test_subcommand_is_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_log_level_is_case_insensitive(self):
        args = build_parser().parse_args(["--log-level", "debug", "counterexample"])
        assert args.log_level == "DEBUG"
