import numpy as np
import pytest

from flexhdr.cli import main
from flexhdr.imaging import read_pfm, write_pfm
from flexhdr.numerics import checkpoint
from flexhdr.training import Scene, make_synthetic_scene, write_scene_dir

SMALL = ["--channels", "4", "--rdb-layers", "1", "--rdb-growth", "2", "--flow-iters", "1"]


def run(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as e:
        code = e.code
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory):
    d = tmp_path_factory.mktemp("ckpt")
    path = d / "m.bin"
    assert main(["train", "--synthetic", "--out", str(path), "--steps", "2", "--batch", "1", "--scenes", "2",
                 "--size", "16", "--crop", "16", "--quiet", "--frames", "any"] + SMALL) == 0
    return path


@pytest.fixture
def scene_dir(tmp_path):
    s = make_synthetic_scene(21, 16, 3, (-2, 0, 2))
    return write_scene_dir(s, tmp_path / "scene")


def test_train_requires_out(capsys):
    code, _, err = run(["train", "--synthetic"], capsys)
    assert code == 2
    assert "usage" in err and "error[config]" in err


def test_train_writes_checkpoint_and_log(ckpt):
    state = checkpoint.load(ckpt)
    assert state.step == 2
    lines = ckpt.with_suffix(".csv").read_text().splitlines()
    assert lines[0] == "step,l_tm,l_phot,l_vgg,l_total,psnr_mu,psnr_l"
    assert len(lines) == 3


@pytest.mark.parametrize("argv", [
    ["--steps", "-1"],
    ["--lr", "0"],
    ["--frames", "sometimes"],
    ["--fusion", "concat", "--frames", "any"],
    ["--crop", "32"],
])
def test_train_config_errors(argv, tmp_path, capsys):
    code, _, err = run(["train", "--synthetic", "--size", "16", "--crop", "16", "--out", str(tmp_path / "x.bin")] + argv, capsys)
    assert code == 2
    assert "error[config]" in err


def test_train_data_errors(tmp_path, capsys):
    code, _, err = run(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "x.bin")], capsys)
    assert code == 3 and "error[data]" in err and "nope" in err
    s = make_synthetic_scene(1, 16)
    write_scene_dir(Scene(s.frame_set, None, name="x"), tmp_path / "d" / "a")
    code, _, err = run(["train", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "x.bin"), "--crop", "16"] + SMALL, capsys)
    assert code == 3 and "gt.pfm" in err


def test_resume_with_other_architecture(ckpt, tmp_path, capsys):
    code, _, err = run(["train", "--synthetic", "--out", str(tmp_path / "r.bin"), "--resume", str(ckpt), "--size", "16",
                        "--crop", "16", "--channels", "6", "--rdb-layers", "1", "--rdb-growth", "2"], capsys)
    assert code == 2 and "architecture" in err


def test_merge_writes_outputs(ckpt, scene_dir, tmp_path, capsys):
    out, ppm = tmp_path / "o.pfm", tmp_path / "o.ppm"
    code, _, _ = run(["merge", "--ckpt", str(ckpt), "--scene", str(scene_dir), "--out", str(out), "--ppm", str(ppm),
                      "--flow-iters", "1"], capsys)
    assert code == 0
    assert read_pfm(out).shape == (16, 16, 3)
    assert ppm.read_bytes().startswith(b"P6\n16 16\n255\n")


@pytest.mark.parametrize("ref", [0, 1, 2])
def test_merge_any_reference(ref, ckpt, scene_dir, tmp_path, capsys):
    code, _, _ = run(["merge", "--ckpt", str(ckpt), "--scene", str(scene_dir), "--out", str(tmp_path / "o.pfm"),
                      "--ref", str(ref), "--flow-iters", "1"], capsys)
    assert code == 0


def test_merge_reference_out_of_range(ckpt, scene_dir, tmp_path, capsys):
    code, _, err = run(["merge", "--ckpt", str(ckpt), "--scene", str(scene_dir), "--out", str(tmp_path / "o.pfm"),
                        "--ref", "3"], capsys)
    assert code == 2 and "--ref 3" in err


def test_merge_ignores_file_order(ckpt, tmp_path, capsys):
    s = make_synthetic_scene(22, 16, 4, (-2, 0, 2, 4))
    a = write_scene_dir(s, tmp_path / "a", order=[0, 1, 2, 3])
    b = write_scene_dir(s, tmp_path / "b", order=[3, 1, 0, 2])
    for d in (a, b):
        assert main(["merge", "--ckpt", str(ckpt), "--scene", str(d), "--out", str(d / "out.pfm"), "--flow-iters", "1"]) == 0
    assert np.abs(read_pfm(a / "out.pfm") - read_pfm(b / "out.pfm")).max() <= 1e-6


def test_merge_single_frame(ckpt, tmp_path):
    s = make_synthetic_scene(23, 16, 1, (0,))
    d = write_scene_dir(s, tmp_path / "one")
    assert main(["merge", "--ckpt", str(ckpt), "--scene", str(d), "--out", str(tmp_path / "o.pfm"), "--flow-iters", "1"]) == 0


def test_merge_malformed_scene(ckpt, scene_dir, tmp_path, capsys):
    (scene_dir / "exposures.txt").write_text("1\n")
    code, _, err = run(["merge", "--ckpt", str(ckpt), "--scene", str(scene_dir), "--out", str(tmp_path / "o.pfm")], capsys)
    assert code == 3 and str(scene_dir) in err


def test_merge_bad_checkpoint(scene_dir, tmp_path, capsys):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nonsense")
    code, _, err = run(["merge", "--ckpt", str(bad), "--scene", str(scene_dir), "--out", str(tmp_path / "o.pfm")], capsys)
    assert code == 3 and "bad.bin" in err


def test_eval_identical_images_hit_cap(tmp_path, capsys):
    img = np.random.default_rng(0).uniform(0, 3, (8, 8, 3))
    write_pfm(tmp_path / "p.pfm", img)
    code, out, _ = run(["eval", "--pred", str(tmp_path / "p.pfm"), "--gt", str(tmp_path / "p.pfm")], capsys)
    assert code == 0
    assert out.splitlines()[1] == "p.pfm,100.0000,100.0000"


def test_eval_scene_rows(ckpt, scene_dir, capsys):
    code, out, _ = run(["eval", "--ckpt", str(ckpt), "--data", str(scene_dir), "--flow-iters", "1"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "scene,psnr_mu,psnr_l"
    assert lines[1].startswith("scene,") and lines[2].startswith("mean,")


def test_eval_without_ground_truth(ckpt, scene_dir, capsys):
    (scene_dir / "gt.pfm").unlink()
    code, _, err = run(["eval", "--ckpt", str(ckpt), "--data", str(scene_dir)], capsys)
    assert code == 3 and "ground truth" in err


def test_eval_needs_a_source(capsys):
    code, _, _ = run(["eval"], capsys)
    assert code == 2


def test_gradcheck_subset(capsys):
    code, out, _ = run(["gradcheck", "--ops", "conv2d,relu"], capsys)
    assert code == 0
    assert "ok relu" in out


def test_gradcheck_fault_is_reported(capsys):
    code, out, err = run(["gradcheck", "--ops", "conv2d", "--inject-fault", "conv2d"], capsys)
    assert code == 1
    assert "error[gradcheck]" in err and "conv2d" in err and " at " in err


def test_gradcheck_unknown_op(capsys):
    code, _, err = run(["gradcheck", "--ops", "fft"], capsys)
    assert code == 2 and "fft" in err


def test_gradcheck_list(capsys):
    code, out, _ = run(["gradcheck", "--list"], capsys)
    assert code == 0 and "end_to_end" in out.split()
