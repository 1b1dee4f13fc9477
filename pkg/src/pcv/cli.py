"""Command-line interface: ``pcv <command> [options]``.

Settings come from built-in defaults, then an optional flat ``key = value``
file (``--config``), then command-line flags and ``--set key=value``
overrides.  Reports are CSV files in the output directory; failures print a
single JSON object on stderr and exit with a nonzero status.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import datafiles as df
from .em import EMOptions, em_run, initial_parameters, smoothed_value
from .hedging import hedge_path
from .kalman import kalman_filter, kalman_forecast, kalman_smoother
from .model import DividendConvention, ModelError
from .montecarlo import SimConfig, simulate
from .pricing import (InsuranceSpec, OptionSpec, Product, filtered_pricing_state,
                      insurance_premium, option_quote)
from .stacked import real_measure_system, risk_neutral_system
from .verify import report_text, run_checks

EXIT_FAILED_CHECKS = 1
EXIT_USAGE = 2
EXIT_DOMAIN = 3


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _text(s: str) -> str:
    return s.strip()


# key -> (parser, default); None means unset
SETTINGS = {
    "panel": (_text, None), "macro": (_text, None), "exog": (_text, None),
    "lifetable": (_text, None), "params": (_text, None), "out": (_text, "."),
    "convention": (lambda s: DividendConvention(s.strip()).value, "book"),
    "seed": (int, 0), "paths": (int, 10000), "tol": (float, 1e-7), "max_iter": (int, 500),
    "p": (int, 1), "log_book0": (_floats, None), "z0": (_floats, None), "mu0": (_floats, None),
    "accelerate": (_bool, True), "polish": (_bool, False),
    "t": (int, None), "maturity": (int, None), "strike": (_floats, None),
    "kind": (_text, "call"), "product": (_text, None), "age": (float, None),
    "F_star": (_floats, [1.0]), "G_star": (_floats, None), "horizon": (int, None),
    "measure": (_text, "risk_neutral"), "only": (lambda s: [int(v) for v in _floats(s)], None),
}


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(_render(v) for v in value)
    if isinstance(value, float):
        return df.fmt(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def require(self, key):
        value = self.values.get(key)
        if value is None:
            raise ConfigError(f"setting {key!r} is required for this command")
        return value

    def to_text(self) -> str:
        """Canonical form: sorted keys, unset keys omitted."""
        return "".join(f"{k} = {_render(v)}\n" for k, v in sorted(self.values.items())
                       if v is not None)

    @classmethod
    def from_text(cls, text: str, base: dict | None = None) -> "RunConfig":
        values = dict(base) if base is not None else {k: d for k, (_, d) in SETTINGS.items()}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = parse_setting(key, value, f"config line {lineno}")
        return cls(values)


def parse_setting(key: str, value: str, where: str = "setting"):
    if key not in SETTINGS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        return SETTINGS[key][0](value)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_text("")
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        cfg = RunConfig.from_text(text)
    values = dict(cfg.values)
    for key in ("panel", "macro", "exog", "lifetable", "params", "convention", "seed", "paths",
                "tol", "max_iter", "out"):
        flag = getattr(args, key)
        if flag is not None:
            values[key] = parse_setting(key, str(flag), f"--{key.replace('_', '-')}")
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = parse_setting(key.strip(), value, "--set")
    return RunConfig(values)


# -------------------------------------------------------------------------
# shared loading
# -------------------------------------------------------------------------

def _conv(cfg) -> DividendConvention:
    return DividendConvention(cfg["convention"])


def load_panel(cfg) -> df.Panel:
    log_b0 = cfg["log_book0"]
    return df.read_panel(cfg.require("panel"), cfg.require("macro"), cfg.require("exog"),
                         B0=None if log_b0 is None else np.exp(log_b0), z0_star=cfg["z0"],
                         p=cfg["p"])


def load_parameters(cfg, panel: df.Panel):
    params = df.read_parameters(cfg.require("params"))
    data = panel.data
    if params.n != data.n or params.ell != data.ell or params.l != data.l \
            or params.A.shape[1] != data.z0_star.size:
        raise ConfigError("parameter dimensions do not match the data files (check p and z0)")
    return params


def _out(cfg, name: str) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _pricing_date(cfg, panel: df.Panel) -> int:
    t = cfg["t"] if cfg["t"] is not None else panel.observed
    if not 0 <= t <= panel.observed:
        raise ConfigError(f"pricing date must lie in 0..{panel.observed}")
    return t


# -------------------------------------------------------------------------
# commands
# -------------------------------------------------------------------------

def cmd_estimate(cfg) -> int:
    panel = load_panel(cfg)
    data, conv = panel.sample(), _conv(cfg)
    if cfg["params"] is not None:
        start = load_parameters(cfg, panel)
    else:
        start = initial_parameters(data, conv, mu_0=cfg["mu0"])
    options = EMOptions(tol=cfg["tol"], max_iter=cfg["max_iter"], accelerate=cfg["accelerate"],
                        polish=cfg["polish"])
    est, trace = em_run(start, data, conv, options)
    df.write_parameters(est, _out(cfg, "params.csv"))
    df.write_csv(_out(cfg, "em_trace.csv"), ["iteration", "loglik", "param_change", "halvings"],
                 trace.rows())
    print(f"{trace.message}; log-likelihood {df.fmt(trace.loglik[-1])}")
    return 0


def _smoothed(cfg):
    panel = load_panel(cfg)
    data = panel.sample()
    params = load_parameters(cfg, panel)
    system = real_measure_system(params, data, _conv(cfg))
    return cfg, panel, data, kalman_smoother(kalman_filter(system, data))


def cmd_smooth(cfg) -> int:
    cfg, panel, data, s = _smoothed(cfg)
    n = data.n
    rows = ((t, c, s.mean[t, i], s.cov[t, i, i]) for t in range(data.T + 1)
            for i, c in enumerate(panel.companies))
    df.write_csv(_out(cfg, "smooth.csv"), ["t", "company", "m_tilde", "m_var"], rows)
    print(f"smoothed {n} companies over {data.T} dates; log-likelihood {df.fmt(s.loglik)}")
    return 0


def cmd_value(cfg) -> int:
    cfg, panel, data, s = _smoothed(cfg)
    V = smoothed_value(s, data)
    book = np.exp(data.log_book)
    rows = ((t, c, book[t, i], V[t, i]) for t in range(data.T + 1)
            for i, c in enumerate(panel.companies))
    df.write_csv(_out(cfg, "value.csv"), ["t", "company", "book", "value"], rows)
    print(f"market value estimates for {data.n} companies written")
    return 0


def cmd_forecast(cfg) -> int:
    panel = load_panel(cfg)
    params = load_parameters(cfg, panel)
    sample = panel.sample()
    future = panel.data.T - panel.observed
    horizon = cfg["horizon"] if cfg["horizon"] is not None else future
    if not 0 < horizon <= future:
        raise ConfigError(f"horizon must lie in 1..{future}; add future rows to the panel files")
    system = real_measure_system(params, panel.data, _conv(cfg))
    f = kalman_filter(system, sample)
    fc = kalman_forecast(f, system, sample, horizon)
    n, ell = sample.n, sample.ell
    names = ([("m_tilde", c, k) for k, c in enumerate(panel.companies)],
             [("b_tilde", c, k) for k, c in enumerate(panel.companies)]
             + [("z", f"z{j + 1}", n + j) for j in range(ell)])
    rows = []
    for h in range(horizon):
        t = panel.observed + h + 1
        rows += [(t, kind, c, fc.state_mean[h, k], fc.state_cov[h, k, k]) for kind, c, k in names[0]]
        rows += [(t, kind, c, fc.y_mean[h, k], fc.y_cov[h, k, k]) for kind, c, k in names[1]]
    df.write_csv(_out(cfg, "forecast.csv"), ["t", "series", "name", "mean", "var"], rows)
    print(f"forecast {horizon} dates ahead of {panel.observed}")
    return 0


def _maturity(cfg, panel, t) -> int:
    maturity = cfg.require("maturity")
    if not t < maturity <= panel.data.T:
        raise ConfigError(f"maturity must lie in {t + 1}..{panel.data.T}")
    return maturity


def cmd_price_option(cfg) -> int:
    panel = load_panel(cfg)
    params = load_parameters(cfg, panel)
    t = _pricing_date(cfg, panel)
    maturity = _maturity(cfg, panel, t)
    strike = np.broadcast_to(np.asarray(cfg.require("strike"), float), (panel.data.n,))
    ps = filtered_pricing_state(params, panel.data, t, _conv(cfg), t_end=maturity)
    q = option_quote(ps, strike, maturity)
    rows = ((c, t, maturity, q.strike[i], q.bond, q.forward[i], q.call[i], q.put[i])
            for i, c in enumerate(panel.companies))
    df.write_csv(_out(cfg, "option.csv"),
                 ["company", "t", "maturity", "strike", "bond", "forward", "call", "put"], rows)
    print(f"priced options at t={t} maturing at {maturity}")
    return 0


def _insurance_spec(cfg, maturity: int, product: str | None = None) -> InsuranceSpec:
    product = Product(product or cfg.require("product"))
    return InsuranceSpec(product, np.asarray(cfg["F_star"], float),
                         np.asarray(cfg.require("G_star"), float), cfg.require("age"), maturity)


def cmd_price_insurance(cfg) -> int:
    panel = load_panel(cfg)
    params = load_parameters(cfg, panel)
    table = df.read_life_table(cfg.require("lifetable"))
    t = _pricing_date(cfg, panel)
    maturity = _maturity(cfg, panel, t)
    spec = _insurance_spec(cfg, maturity)
    ps = filtered_pricing_state(params, panel.data, t, _conv(cfg), t_end=maturity)
    premium = insurance_premium(ps, spec, table)
    rows = ((c, spec.product.value, t, maturity, premium[i]) for i, c in enumerate(panel.companies))
    df.write_csv(_out(cfg, "insurance.csv"), ["company", "product", "t", "maturity", "premium"],
                 rows)
    print(f"priced {spec.product.value} at t={t}")
    return 0


def cmd_hedge(cfg) -> int:
    panel = load_panel(cfg)
    params = load_parameters(cfg, panel)
    conv = _conv(cfg)
    maturity = cfg.require("maturity")
    if not 0 < maturity <= panel.observed:
        raise ConfigError(f"hedging runs along the sample; maturity must lie in 1..{panel.observed}")
    kind = cfg["kind"]
    table = None
    if kind in ("call", "put"):
        claim = OptionSpec(kind, np.broadcast_to(np.asarray(cfg.require("strike"), float),
                                                 (panel.data.n,)), maturity)
    else:
        claim = _insurance_spec(cfg, maturity, kind)
        table = df.read_life_table(cfg.require("lifetable"))
    system = risk_neutral_system(params, panel.data, conv)
    f = kalman_filter(system, panel.data, T=maturity)
    beliefs = [f.belief(s) for s in range(maturity + 1)]
    hs = hedge_path(system, panel.data, conv, claim, beliefs, table)
    rows = []
    for s in range(maturity):
        for j, c in enumerate(panel.companies):
            for i, a in enumerate(panel.companies):
                rows.append((s + 1, c, a, hs.h[s, i, j], hs.h0[s, j], hs.V[s + 1, j]))
    df.write_csv(_out(cfg, "hedge.csv"), ["t", "company", "asset", "h", "h0", "V"], rows)
    print(f"hedged {kind} over dates 1..{maturity}")
    return 0


def cmd_simulate(cfg) -> int:
    panel = load_panel(cfg)
    params = load_parameters(cfg, panel)
    conv = _conv(cfg)
    measure = cfg["measure"]
    builders = {"real": real_measure_system, "risk_neutral": risk_neutral_system}
    if measure not in builders:
        raise ConfigError("measure must be real or risk_neutral")
    system = builders[measure](params, panel.data, conv)
    horizon = cfg["horizon"] if cfg["horizon"] is not None else panel.data.T
    P = simulate(system, panel.data, SimConfig(cfg["paths"], cfg["seed"], 0, horizon))
    rows = ((k, t, c, P.b_tilde[k, t, i], P.m[k, t, i], P.log_price[k, t, i], P.log_discount[k, t])
            for k in range(P.n_paths) for t in range(1, horizon + 1)
            for i, c in enumerate(panel.companies))
    df.write_csv(_out(cfg, "simulate.csv"),
                 ["path", "t", "company", "b_tilde", "m_tilde", "log_price", "log_discount"], rows)
    macro = ((k, t, *P.z[k, t]) for k in range(P.n_paths) for t in range(1, horizon + 1))
    df.write_csv(_out(cfg, "simulate_macro.csv"),
                 ["path", "t"] + [f"z{j + 1}" for j in range(panel.data.ell)], macro)
    print(f"simulated {P.n_paths} paths under the {measure} measure")
    return 0


def cmd_verify(cfg) -> int:
    results = run_checks(cfg["seed"], cfg["only"], echo=print)
    _out(cfg, "verify.csv").write_text(report_text(results), encoding="utf-8")
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_FAILED_CHECKS if failed else 0


COMMANDS = {
    "estimate": cmd_estimate, "smooth": cmd_smooth, "forecast": cmd_forecast, "value": cmd_value,
    "price-option": cmd_price_option, "price-insurance": cmd_price_insurance,
    "hedge": cmd_hedge, "simulate": cmd_simulate, "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcv", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config")
    for flag in ("panel", "macro", "exog", "lifetable", "params", "out"):
        parser.add_argument(f"--{flag}")
    parser.add_argument("--convention", choices=["book", "price"])
    parser.add_argument("--seed", type=int)
    parser.add_argument("--paths", type=int)
    parser.add_argument("--tol", type=float)
    parser.add_argument("--max-iter", dest="max_iter", type=int)
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="any other setting, e.g. --set maturity=6")
    return parser


def _fail(command: str, exc: BaseException, code: int) -> int:
    payload = {"command": command, "error": type(exc).__name__, "message": str(exc)}
    for attr in ("path", "line"):
        if getattr(exc, attr, None) is not None:
            payload[attr] = getattr(exc, attr)
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    try:
        cfg = resolve_config(args)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](cfg)
    except (ConfigError, df.DataFileError) as exc:
        return _fail(args.command, exc, EXIT_USAGE)
    except (ModelError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(args.command, exc, EXIT_DOMAIN)


if __name__ == "__main__":
    sys.exit(main())
