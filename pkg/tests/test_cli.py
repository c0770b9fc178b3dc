import pytest

from colnorm.cli import main

TRAIN = """
[problem]
type = quadratic
m = 6
n = 5
kappa = 10
init_scale = 1
[optimizer]
name = conda
lr = 0.02
update_freq = 3
[run]
steps = 12
spectral_stride = 4
"""


@pytest.fixture
def train_cfg(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text(TRAIN)
    return path


def test_train(train_cfg, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["train", "--config", str(train_cfg), "--out", str(out), "--seed", "3"]) == 0
    assert (out / "scalars.csv").exists()
    assert "run.seed = 3" in (out / "run_meta.txt").read_text()
    assert "final_loss" in capsys.readouterr().out


def test_compare(tmp_path, capsys):
    path = tmp_path / "cmp.cfg"
    path.write_text(TRAIN.split("[optimizer]")[0] + "[run]\nsteps = 5\n[optimizer.adam]\nlr_grid = 0.01, 0.1\n")
    assert main(["compare", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "summary.csv").read_text().startswith("optimizer,best_lr,")
    assert capsys.readouterr().out.splitlines()[1].startswith("adam,")


def test_verify_lemmas(capsys):
    assert main(["verify-lemmas", "--seed", "0", "--trials", "2"]) == 0
    assert capsys.readouterr().out.count(" ok") == 5


def test_verify_rank_deficient(capsys):
    assert main(["verify-lemmas", "--rank-deficient"]) == 1
    assert "error: verification: muon_svd_left: rank-deficient momentum" in capsys.readouterr().err


@pytest.mark.parametrize("problem", ["quadratic", "mlp"])
def test_grad_check(problem):
    assert main(["grad-check", "--problem", problem, "--h", "1e-6"]) == 0


def test_grad_check_from_config(train_cfg):
    assert main(["grad-check", "--config", str(train_cfg)]) == 0


@pytest.mark.parametrize("argv", [
    ["train"],
    ["bogus"],
    ["verify-lemmas", "--trials", "0"],
    ["grad-check", "--h", "-1"],
    ["train", "--config", "/nonexistent/x.cfg"],
])
def test_config_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert capsys.readouterr().err.startswith("error: config:")


def test_unknown_key_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("[optimizer]\nlearnig_rate = 0.1\n")
    assert main(["train", "--config", str(path)]) == 2
    assert "learnig_rate" in capsys.readouterr().err


def test_io_error_exit_1(train_cfg, tmp_path, capsys):
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert main(["train", "--config", str(train_cfg), "--out", str(blocker / "x")]) == 1
    assert capsys.readouterr().err.startswith("error: io:")
