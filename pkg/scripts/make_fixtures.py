"""Regenerate the synthetic reference datasets: make_fixtures.py [OUTDIR] [NAME ...]"""
import sys
import time

from vbspin.fixtures import FIXTURES, generate

if __name__ == "__main__":
    outdir = sys.argv[1] if len(sys.argv) > 1 else "fixtures"
    for name in sys.argv[2:] or FIXTURES:
        t0 = time.perf_counter()
        path = generate(outdir, [name])[name]
        print(f"{path}  {time.perf_counter() - t0:.1f} s")
