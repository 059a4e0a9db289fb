"""Run the 200-step smoke training once per ablation switch."""
import argparse

from flexhdr.experiments import ABLATIONS, ablation_model, smoke_run

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=200)
    a = ap.parse_args()
    for name in ABLATIONS:
        r = smoke_run(ablation_model(name), a.steps)
        print(f"{name}: drop {r['drop']:.1%}, PSNR-mu {r['psnr_mu']:.2f} dB, {r['seconds']:.0f} s")
