"""Write a small synthetic data set for trying the command-line tools.

The panel has 24 observed dates followed by 6 future dates whose dividend
schedule and regressors are known but whose book growth and macro values are
blank.  Alongside it go the true parameters and a life table.

    python scripts/make_demo_data.py demo/
"""

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from pcv.datafiles import write_csv, write_panel, write_parameters
from pcv.model import DividendConvention
from pcv.pricing import LifeTable
from pcv.synthetic import random_parameters, synthetic_panel


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out", type=Path)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--observed", type=int, default=24)
    parser.add_argument("--future", type=int, default=6)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    params = random_parameters(rng, n=2, ell=2, p=1, l=1, noise_scale=0.02)
    T = args.observed + args.future
    data = synthetic_panel(params, T, seed=args.seed + 1, conv=DividendConvention.BOOK,
                           pay_prob=0.8).data
    b, z = data.b_tilde.copy(), data.z.copy()
    b[args.observed:] = np.nan
    z[args.observed:] = np.nan
    data = replace(data, b_tilde=b, z=z)

    write_panel(data, args.out, companies=["alpha", "beta"])
    write_parameters(params, args.out / "params.csv")
    # Gompertz-like one-year death probabilities from age 40
    q = np.minimum(0.0005 * np.exp(0.09 * np.arange(T + 1)) * np.exp(0.09 * 10), 1.0)
    table = LifeTable.from_mortality(40.0, q)
    write_csv(args.out / "lifetable.csv", ["x", "t", "tpx"], table.rows())
    print(f"wrote demo data to {args.out}")


if __name__ == "__main__":
    main()
