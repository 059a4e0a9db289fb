"""Frame-count regimes: an M-only model on M versus S+M+L, and one model
trained on random subsets merged at every frame count and reference."""
import argparse

from flexhdr.experiments import M_ONLY_STEPS, flexible_inference, flexible_model, m_only_gap

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--m-steps", type=int, default=M_ONLY_STEPS)
    ap.add_argument("--any-steps", type=int, default=200)
    ap.add_argument("--out", help="checkpoint for the subset-trained model")
    a = ap.parse_args()
    g = m_only_gap(a.m_steps)
    print(f"M-only model: {g['matched']:.2f} dB on M, {g['full']:.2f} dB on S+M+L, drop {g['drop']:.2f} dB")
    state = flexible_model(a.any_steps, a.out)
    for n, ref, score in flexible_inference(state.params):
        print(f"n={n} ref={ref} " + (f"psnr_mu={score:.2f}" if score is not None else "ok"))
