"""Frozen outputs for the checked-in fixture (see scripts/make_regression_fixture.py)."""
from pathlib import Path

import pytest

from flexhdr.cli import main
from flexhdr.model import config_from_params
from flexhdr.numerics import checkpoint
from flexhdr.training import evaluate, ingest_scene_dir

FIXTURE = Path(__file__).parent / "fixtures" / "regression"
PINNED_MU, PINNED_L = 18.8382, 10.7977


def test_pinned_psnr():
    state = checkpoint.load(FIXTURE / "model.bin")
    cfg = config_from_params(state.params, flow_iters=2)
    (_, mu, lin), = evaluate(state.params, cfg, [ingest_scene_dir(FIXTURE / "scene")])
    assert mu == pytest.approx(PINNED_MU, abs=0.01)
    assert lin == pytest.approx(PINNED_L, abs=0.01)


def test_pinned_psnr_through_cli(capsys):
    assert main(["eval", "--ckpt", str(FIXTURE / "model.bin"), "--data", str(FIXTURE / "scene"), "--flow-iters", "2"]) == 0
    _, mu, lin = capsys.readouterr().out.splitlines()[1].split(",")
    assert abs(float(mu) - PINNED_MU) < 0.01 and abs(float(lin) - PINNED_L) < 0.01


def test_fixture_checkpoint_round_trips(tmp_path):
    raw = (FIXTURE / "model.bin").read_bytes()
    checkpoint.save(tmp_path / "again.bin", checkpoint.load(FIXTURE / "model.bin"))
    assert (tmp_path / "again.bin").read_bytes() == raw
