import pytest

from main import build_parser, main


def test_oracle_prints_the_average(small_config_file, capsys, tmp_path):
    out = tmp_path / "oracle.csv"
    assert main(["oracle", "--config", str(small_config_file), "--windows", "2", "--out", str(out)]) == 0
    assert "oracle average reward over 2 windows" in capsys.readouterr().out
    assert len(out.read_text().splitlines()) == 3


def test_train_then_deploy(small_config_file, tmp_path):
    common = ["--config", str(small_config_file), "--out", str(tmp_path)]
    assert main(["train-expert", *common, "--seed", "5"]) == 0
    assert (tmp_path / "policies" / "3slice" / "pattern1" / "seed5.policy").is_file()
    assert main(["deploy", *common, "--mode", "hybrid", "--expert", "3slice/pattern1/seed5",
                 "--gamma", "0.5", "--run-id", "cli"]) == 0
    assert (tmp_path / "runs" / "cli.csv").is_file()


def test_errors_exit_with_one(small_config_file, tmp_path):
    assert main(["deploy", "--config", str(small_config_file), "--out", str(tmp_path),
                 "--mode", "reuse", "--expert", "3slice/missing"]) == 1
    assert main(["report", "--in", str(tmp_path / "nothing"), "--out", str(tmp_path / "r.csv")]) == 1


def test_unknown_mode_is_a_usage_error():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["deploy", "--out", "x", "--mode", "mixed"])


def test_sweep_takes_a_preset(small_config_file, tmp_path):
    args = build_parser().parse_args(["sweep", "--out", "x", "--preset", "reduced"])
    assert args.preset == "reduced"
    assert main(["sweep", "--config", str(small_config_file), "--out", str(tmp_path),
                 "--preset", "missing"]) == 1
