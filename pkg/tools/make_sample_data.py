"""Regenerate the synthetic 48-step sample day shipped in src/dsmopt/data/series.

The profile is invented: a cheap 00:00-04:00 valley with a small bump at
04:30, a 06:00-09:00 morning peak, a midday dip, an evening peak, a PV bell
centred on 13:00 and a flat 1.0 kW base load. Export earns a flat 0.05/kWh
feed-in tariff.
"""

import math
from pathlib import Path

from dsmopt.timeseries import Series, Unit, write_series

OUT = Path(__file__).resolve().parents[1] / "src" / "dsmopt" / "data" / "series"

PRICE = [
    0.10, 0.095, 0.09, 0.09, 0.085, 0.09, 0.095, 0.10,   # 00:00-04:00 valley
    0.12, 0.14, 0.11, 0.16,                               # 04:00-06:00
    0.32, 0.35, 0.36, 0.34, 0.30, 0.28,                   # 06:00-09:00 morning peak
    0.24, 0.22, 0.21, 0.20, 0.19, 0.18,                   # 09:00-12:00
    0.15, 0.14, 0.13, 0.13, 0.14, 0.16,                   # 12:00-15:00 midday dip
    0.20, 0.22,                                           # 15:00-16:00
    0.30, 0.34, 0.38, 0.40, 0.39, 0.36, 0.32,             # 16:00-19:30 evening peak
    0.28, 0.25, 0.23, 0.21, 0.19, 0.17, 0.15, 0.13, 0.12, # 19:30-24:00
]


def pv(step: int) -> float:
    hour = step * 0.5 + 0.25
    if not 6.0 <= hour <= 20.0:
        return 0.0
    return round(2.0 * math.sin(math.pi * (hour - 6.0) / 14.0) ** 2, 3)


def main() -> None:
    assert len(PRICE) == 48
    OUT.mkdir(parents=True, exist_ok=True)
    series = {
        "import_price": Series("import_price", Unit.PRICE, PRICE),
        "export_price": Series("export_price", Unit.PRICE, [0.05] * 48),
        "pv": Series("pv", Unit.KW, [pv(t) for t in range(48)]),
        "base_load": Series("base_load", Unit.KW, [1.0] * 48),
    }
    for name, s in series.items():
        (OUT / f"{name}.csv").write_text(write_series(s), encoding="utf-8")


if __name__ == "__main__":
    main()
