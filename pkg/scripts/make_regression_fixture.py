"""Regenerate tests/fixtures/regression: a small checkpoint and one scene.

The pinned PSNR values in tests/test_regression.py come from this output
and must be updated by hand if the fixture is ever regenerated.
"""
from pathlib import Path

from flexhdr.model import ModelConfig
from flexhdr.training import TrainConfig, evaluate, make_synthetic_scene, synthetic_pool, train, write_scene_dir

MODEL = ModelConfig(channels=4, encoder_widths=(4, 6, 8), refine_width=8, rdb_layers=2, rdb_growth=3, flow_iters=2)

if __name__ == "__main__":
    root = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "regression"
    root.mkdir(parents=True, exist_ok=True)
    cfg = TrainConfig(model=MODEL, steps=30, batch=2, crop=32, lr=1e-3, seed=0, out=str(root / "model.bin"))
    state, _ = train(cfg, synthetic_pool(11, 4, 32))
    scene = make_synthetic_scene(777, 32, 3, (-2, 0, 2))
    write_scene_dir(scene, root / "scene")
    (name, mu, lin), = evaluate(state.params, MODEL, [scene])
    print(f"psnr_mu={mu:.4f} psnr_l={lin:.4f}")
