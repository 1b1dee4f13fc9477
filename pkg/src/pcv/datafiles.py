"""CSV readers and writers for panels, parameters, life tables and reports.

A blank ``delta_tilde`` cell marks a non-payment; ``pays_dividend`` may be
left blank and is then inferred from it.

Panel files may run past the observed sample: rows whose ``b_tilde`` (and
macro rows whose values) are blank describe future dates for which only the
dividend schedule and regressors are known.  Pricing and forecasting use
those rows; estimation and smoothing stop at the last observed date.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelParameters, PanelData
from .pricing import LifeTable


class DataFileError(ValueError):
    def __init__(self, path, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path, self.line = str(path), line


def fmt(x) -> str:
    """17 significant digits, so every float survives a write/read round trip."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _rows(path):
    """(line number, row dict) pairs; header mandatory."""
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataFileError(path, None, exc.strerror or str(exc)) from None
    with handle:
        reader = csv.DictReader(handle)
        if not reader.fieldnames:
            raise DataFileError(path, 1, "missing header row")
        reader.fieldnames = [f.strip() for f in reader.fieldnames]
        for row in reader:
            yield reader.line_num, {k: (v or "").strip() for k, v in row.items() if k is not None}


def _number(path, line, row, key, blank_ok=False) -> float:
    if key not in row:
        raise DataFileError(path, line, f"missing column {key!r}")
    text = row[key]
    if text == "":
        if blank_ok:
            return math.nan
        raise DataFileError(path, line, f"empty value in column {key!r}")
    try:
        return float(text)
    except ValueError:
        raise DataFileError(path, line, f"not a number in column {key!r}: {text!r}") from None


def _integer(path, line, row, key) -> int:
    value = _number(path, line, row, key)
    if value != int(value):
        raise DataFileError(path, line, f"column {key!r} must be an integer")
    return int(value)


def _numbered_columns(path, fieldnames, prefix) -> list[str]:
    cols = sorted((c for c in fieldnames if c.startswith(prefix) and c[len(prefix):].isdigit()),
                  key=lambda c: int(c[len(prefix):]))
    if not cols or [int(c[len(prefix):]) for c in cols] != list(range(1, len(cols) + 1)):
        raise DataFileError(path, 1, f"expected columns {prefix}1..{prefix}k")
    return cols


def _time_table(path, prefix):
    rows = list(_rows(path))
    if not rows:
        raise DataFileError(path, None, "no data rows")
    cols = _numbered_columns(path, rows[0][1].keys(), prefix)
    out = {}
    for line, row in rows:
        t = _integer(path, line, row, "t")
        if t in out:
            raise DataFileError(path, line, f"duplicate date {t}")
        out[t] = [_number(path, line, row, c, blank_ok=True) for c in cols]
    if sorted(out) != list(range(1, len(out) + 1)):
        raise DataFileError(path, None, "dates must run 1..T without gaps")
    return np.array([out[t] for t in range(1, len(out) + 1)]), len(cols)


@dataclass(frozen=True)
class Panel:
    data: PanelData        # every date in the files, future b_tilde and z are NaN
    companies: list[str]
    observed: int          # last date with observed book growth and macro values

    def sample(self) -> PanelData:
        return self.data.truncate(self.observed)


def read_panel(panel_path, macro_path, exog_path, B0=None, z0_star=None, p: int = 1) -> Panel:
    """Read the three time-indexed files; ``z0_star`` defaults to p lags of zeros."""
    rows = list(_rows(panel_path))
    if not rows:
        raise DataFileError(panel_path, None, "no data rows")
    companies: list[str] = []
    cells: dict[tuple[int, str], tuple[float, float, bool]] = {}
    for line, row in rows:
        t = _integer(panel_path, line, row, "t")
        name = row.get("company", "")
        if name == "":
            raise DataFileError(panel_path, line, "empty company")
        if name not in companies:
            companies.append(name)
        if (t, name) in cells:
            raise DataFileError(panel_path, line, f"duplicate row for ({t}, {name})")
        pays_text = row.get("pays_dividend", "")
        if pays_text not in ("0", "1", "true", "false", "True", "False", ""):
            raise DataFileError(panel_path, line, f"pays_dividend must be 0 or 1, got {pays_text!r}")
        delta = _number(panel_path, line, row, "delta_tilde", blank_ok=True)
        # a blank dividend cell means no dividend, whatever the flag says
        pays = not math.isnan(delta) and pays_text not in ("0", "false", "False")
        cells[(t, name)] = (_number(panel_path, line, row, "b_tilde", blank_ok=True), delta, pays)
    dates = sorted({t for t, _ in cells})
    T = len(dates)
    if dates != list(range(1, T + 1)):
        raise DataFileError(panel_path, None, "dates must run 1..T without gaps")
    n = len(companies)
    b = np.full((T, n), math.nan)
    delta = np.zeros((T, n))
    pays = np.zeros((T, n), dtype=bool)
    for (t, name), (bt, dt, pt) in cells.items():
        i = companies.index(name)
        b[t - 1, i], delta[t - 1, i], pays[t - 1, i] = bt, (0.0 if math.isnan(dt) else dt), pt
    missing = [(t, c) for t in dates for c in companies if (t, c) not in cells]
    if missing:
        raise DataFileError(panel_path, None, f"no row for date {missing[0][0]}, company {missing[0][1]}")

    z, ell = _time_table(macro_path, "z")
    psi, _ = _time_table(exog_path, "psi")
    if z.shape[0] != T or psi.shape[0] != T:
        raise DataFileError(macro_path if z.shape[0] != T else exog_path, None,
                            f"expected {T} dates to match the panel")
    if np.isnan(psi).any():
        raise DataFileError(exog_path, None, "regressors must be known at every date")
    observed_rows = ~np.isnan(b).any(axis=1) & ~np.isnan(z).any(axis=1)
    observed = int(np.argmin(observed_rows)) if not observed_rows.all() else T
    if observed_rows[observed:].any() or np.isnan(b[:observed]).any():
        raise DataFileError(panel_path, None, "observed dates must form a leading block")
    if observed == 0:
        raise DataFileError(panel_path, None, "no observed dates")
    B0 = np.ones(n) if B0 is None else np.asarray(B0, dtype=float)
    z0 = np.zeros(ell * p) if z0_star is None else np.asarray(z0_star, dtype=float)
    if B0.size != n:
        raise ValueError(f"log_book0 needs {n} values")
    if z0.size % ell:
        raise ValueError(f"z0 needs a multiple of {ell} values")
    data = PanelData(B0=B0, b_tilde=b, z=z, z0_star=z0, delta_tilde=delta, pays_dividend=pays,
                     psi=psi)
    return Panel(data, companies, observed)


def write_panel(data: PanelData, directory, companies=None, stem: str = "") -> dict[str, Path]:
    """Write panel, macro and regressor files; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    companies = companies or [f"c{i + 1}" for i in range(data.n)]
    paths = {k: directory / f"{stem}{k}.csv" for k in ("panel", "macro", "exog")}
    with paths["panel"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "company", "b_tilde", "delta_tilde", "pays_dividend"])
        for t in range(data.T):
            for i, name in enumerate(companies):
                b = data.b_tilde[t, i]
                pays = bool(data.pays_dividend[t, i])
                w.writerow([t + 1, name, "" if math.isnan(b) else fmt(b),
                            fmt(data.delta_tilde[t, i]) if pays else "", int(pays)])
    for key, arr, prefix in (("macro", data.z, "z"), ("exog", data.psi, "psi")):
        with paths[key].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"{prefix}{j + 1}" for j in range(arr.shape[1])])
            for t in range(arr.shape[0]):
                w.writerow([t + 1] + ["" if math.isnan(v) else fmt(v) for v in arr[t]])
    return paths


# -------------------------------------------------------------------------
# parameters and life tables
# -------------------------------------------------------------------------

def write_parameters(params: ModelParameters, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block", "row", "col", "value"])
        for name, block in params.blocks().items():
            block = np.atleast_2d(block) if block.ndim < 2 else block
            if name == "mu_0":
                block = block.reshape(-1, 1)
            for (i, j), v in np.ndenumerate(block):
                w.writerow([name, i, j, fmt(v)])


def read_parameters(path) -> ModelParameters:
    entries: dict[str, dict[tuple[int, int], float]] = {}
    for line, row in _rows(path):
        name = row.get("block", "")
        if name not in ModelParameters.__dataclass_fields__:
            raise DataFileError(path, line, f"unknown parameter block {name!r}")
        key = (_integer(path, line, row, "row"), _integer(path, line, row, "col"))
        entries.setdefault(name, {})[key] = _number(path, line, row, "value")
    blocks = {}
    for name in ModelParameters.__dataclass_fields__:
        if name not in entries:
            raise DataFileError(path, None, f"missing parameter block {name!r}")
        cells = entries[name]
        shape = tuple(max(k[d] for k in cells) + 1 for d in range(2))
        if len(cells) != shape[0] * shape[1]:
            raise DataFileError(path, None, f"block {name!r} is incomplete")
        arr = np.zeros(shape)
        for k, v in cells.items():
            arr[k] = v
        blocks[name] = arr.ravel() if name == "mu_0" else arr
    return ModelParameters(**blocks)


def read_life_table(path) -> LifeTable:
    out = []
    for line, row in _rows(path):
        out.append((_number(path, line, row, "x"), _integer(path, line, row, "t"),
                    _number(path, line, row, "tpx")))
    try:
        return LifeTable(out)
    except ValueError as exc:
        raise DataFileError(path, None, str(exc)) from None


def write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else fmt(c) for c in row])
