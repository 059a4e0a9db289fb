"""200-step desk-scale training run against the exposure-weighted average baseline."""
import argparse

from flexhdr.experiments import smoke_run

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--out", help="checkpoint path")
    ap.add_argument("--log", help="metrics CSV")
    a = ap.parse_args()
    r = smoke_run(steps=a.steps, out=a.out, log=a.log)
    print(f"l_total drop {r['drop']:.1%} (5-step averages)")
    print(f"held-out PSNR-mu {r['psnr_mu']:.2f} dB, baseline {r['baseline_mu']:.2f} dB, "
          f"margin {r['psnr_mu'] - r['baseline_mu']:+.2f} dB")
    print(f"runtime {r['seconds']:.0f} s")
