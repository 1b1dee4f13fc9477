"""Price options and insurance products on a synthetic private company and
compare every closed form with a Monte Carlo estimate.

    python scripts/pricing_demo.py --paths 200000
"""

import argparse

import numpy as np

from pcv.montecarlo import SimConfig, expectation
from pcv.pricing import (InsuranceSpec, LifeTable, Product, bond_price, filtered_pricing_state,
                         insurance_premium, option_quote)
from pcv.verify import pricing_fixture


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--paths", type=int, default=200_000)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--t", type=int, default=2)
    parser.add_argument("--maturity", type=int, default=6)
    args = parser.parse_args(argv)

    fx = pricing_fixture(303, n=1, ell=2, p=1, T=8)
    t, k = args.t, args.maturity
    ps = filtered_pricing_state(fx.params, fx.data, t, fx.conv)
    cfg = SimConfig(args.paths, args.seed, t, k, antithetic=True)
    price_k = lambda P: np.exp(P.log_price[:, k - t, 0])  # noqa: E731
    discount = lambda P: np.exp(P.log_discount[:, k - t])  # noqa: E731

    print(f"pricing date t={t}, maturity {k}")
    mean, se = expectation(ps.system, fx.data, cfg, discount, belief=ps.belief)
    print(f"  bond       closed {bond_price(ps, k):.6f}   MC {mean:.6f} +- {se:.6f}")
    for K in (0.8, 1.0, 1.25):
        q = option_quote(ps, K, k)
        mc = lambda P: discount(P)[:, None] * np.stack(  # noqa: E731
            [np.maximum(price_k(P) - K, 0), np.maximum(K - price_k(P), 0)], axis=1)
        (c, p), (sc, sp) = expectation(ps.system, fx.data, cfg, mc, belief=ps.belief)
        print(f"  K={K:<5} call {q.call[0]:.6f} (MC {c:.6f} +- {sc:.6f})"
              f"  put {q.put[0]:.6f} (MC {p:.6f} +- {sp:.6f})")

    table = LifeTable.from_mortality(45.0, np.linspace(0.004, 0.012, 12))
    print("net single premiums, F*=1, G*=1, age 45:")
    for product in Product:
        spec = InsuranceSpec(product, np.ones(1), np.ones(1), 45.0, k)
        print(f"  {product.value:<10} {insurance_premium(ps, spec, table)[0]:.6f}")


if __name__ == "__main__":
    main()
