"""Repeat the EM fit on independent synthetic panels and summarize recovery.

    python scripts/em_study.py --datasets 50 --out em_study.csv
"""

import argparse
import math
import time

import numpy as np

from pcv.datafiles import write_csv
from pcv.verify import EM_TRUTH, em_study_fit


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--datasets", type=int, default=50)
    parser.add_argument("--T", type=int, default=300)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--convention", choices=["book", "price"], default="book")
    parser.add_argument("--out", default="em_study.csv")
    args = parser.parse_args(argv)

    names = ["A", "C_z", "Sigma_vv", "C_k", "Sigma_uu", "Sigma_ww"]
    pick = lambda p: [p.A[0, 0], p.C_z[0, 0], p.Sigma_eta[1, 1], p.C_k[0, 0],  # noqa: E731
                      p.Sigma_eta[0, 0], p.Sigma_ww[0, 0]]
    rows = []
    start = time.perf_counter()
    for k in range(args.datasets):
        _, est, trace = em_study_fit(args.seed * 10_000 + k + 1, T=args.T, conv=args.convention)
        rows.append([k, trace.iterations, trace.loglik[-1], *pick(est)])
    write_csv(args.out, ["dataset", "iterations", "loglik", *names], rows)

    est = np.array([r[3:] for r in rows])
    truth = np.array(pick(EM_TRUTH))
    se = est.std(axis=0, ddof=1) / math.sqrt(len(rows))
    print(f"{len(rows)} fits in {time.perf_counter() - start:.0f}s")
    print(f"{'parameter':>10} {'truth':>10} {'mean':>10} {'sd':>10} {'bias/SE':>8}")
    for name, t, m, s, e in zip(names, truth, est.mean(axis=0), est.std(axis=0, ddof=1), se):
        print(f"{name:>10} {t:10.5f} {m:10.5f} {s:10.5f} {abs(m - t) / e:8.2f}")


if __name__ == "__main__":
    main()
