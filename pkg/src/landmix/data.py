"""Landings CSV ingestion, serialization and the generative simulator.

Input schema: ``country,year,sector,tonnes`` with sector in
{industrial, artisanal, total}.  Years are mapped to integer time indices
relative to the start of the configured span (default 1970-2014) and
tonnage is log-transformed.  Zero-tonnage rows are dropped with a warning
since their logarithm is undefined.
"""

from __future__ import annotations

import csv
import logging
import math
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataFormatError
from .model import (
    Dataset,
    JointEffects,
    JointParams,
    Observation,
    Params,
    Sector,
    TotalEffects,
    TotalParams,
    build_covariance,
)

log = logging.getLogger(__name__)

DEFAULT_SPAN = (1970, 2014)

_SECTORS = {s.value: s for s in Sector}


def _parse_rows(lines: Iterable[str], span: tuple[int, int]):
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None or [h.strip().lower() for h in header] != ["country", "year", "sector", "tonnes"]:
        raise DataFormatError("expected header 'country,year,sector,tonnes'")
    seen = set()
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 4:
            raise DataFormatError(f"line {lineno}: expected 4 fields, got {len(row)}")
        country, year_s, sector_s, tonnes_s = (f.strip() for f in row)
        try:
            year = int(year_s)
            tonnes = float(tonnes_s)
        except ValueError as exc:
            raise DataFormatError(f"line {lineno}: {exc}") from exc
        sector = _SECTORS.get(sector_s.lower())
        if sector is None:
            raise DataFormatError(f"line {lineno}: unknown sector {sector_s!r}")
        if not (span[0] <= year <= span[1]):
            raise DataFormatError(f"line {lineno}: year {year} outside span {span[0]}-{span[1]}")
        if tonnes < 0 or not math.isfinite(tonnes):
            raise DataFormatError(f"line {lineno}: invalid tonnage {tonnes_s!r}")
        key = (country, year, sector)
        if key in seen:
            raise DataFormatError(f"line {lineno}: duplicate row for {key}")
        seen.add(key)
        if tonnes == 0.0:
            log.warning("dropping zero-tonnage row %s/%s/%s (line %d)", country, year, sector.value, lineno)
            continue
        rows.append((country, year, sector, tonnes))
    return rows


def load_landings(path, model_kind: str, span: tuple[int, int] = DEFAULT_SPAN) -> Dataset:
    """Load a landings CSV into a model-ready dataset.

    For the total model, explicit ``total`` rows are used when present;
    otherwise totals are formed by summing sector tonnage per
    (country, year) before the log transform.
    """
    if model_kind not in ("total", "joint"):
        raise ConfigError(f"unknown model kind {model_kind!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = _parse_rows(fh, span)

    labels: list[str] = []
    index: dict[str, int] = {}
    for country, _, _, _ in rows:
        if country not in index:
            index[country] = len(labels)
            labels.append(country)
    if not labels:
        raise DataFormatError("no usable rows in input")
    horizon = span[1] - span[0] + 1

    observations: list[Observation] = []
    if model_kind == "joint":
        for country, year, sector, tonnes in rows:
            if sector is Sector.TOTAL:
                continue
            observations.append(
                Observation(index[country], year - span[0], sector, math.log(tonnes))
            )
    else:
        has_totals = any(sector is Sector.TOTAL for _, _, sector, _ in rows)
        if has_totals:
            for country, year, sector, tonnes in rows:
                if sector is Sector.TOTAL:
                    observations.append(
                        Observation(index[country], year - span[0], Sector.TOTAL, math.log(tonnes))
                    )
        else:
            sums: dict[tuple[str, int], float] = {}
            for country, year, _, tonnes in rows:
                sums[(country, year)] = sums.get((country, year), 0.0) + tonnes
            for (country, year), tonnes in sums.items():
                observations.append(
                    Observation(index[country], year - span[0], Sector.TOTAL, math.log(tonnes))
                )
    observations.sort(key=lambda o: (o.country, o.t, o.sector.value))
    return Dataset(tuple(observations), tuple(labels), horizon)


def dataset_to_rows(data: Dataset, span_start: int = DEFAULT_SPAN[0]):
    """Landings-CSV rows (country, year, sector, tonnes) for a dataset."""
    for obs in data.observations:
        yield data.labels[obs.country], span_start + obs.t, obs.sector.value, math.exp(obs.y)


def write_landings(data: Dataset, path, span_start: int = DEFAULT_SPAN[0]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["country", "year", "sector", "tonnes"])
        for country, year, sector, tonnes in dataset_to_rows(data, span_start):
            writer.writerow([country, year, sector, repr(float(tonnes))])


def _default_labels(n: int) -> tuple[str, ...]:
    return tuple(f"country{i:02d}" for i in range(n))


def simulate_dataset(
    model_kind: str,
    true_params: Params,
    n_countries: int,
    horizon: int,
    availability: Mapping[int, Sequence[Sector]] | None = None,
    seed: int = 0,
    labels: Sequence[str] | None = None,
):
    """Draw a synthetic panel from the generative model.

    Returns (dataset, effects) where effects holds the simulated
    per-country ground truth.  Deterministic under seed.
    """
    if n_countries < 1 or horizon < 1:
        raise ConfigError("need at least one country and one time point")
    rng = np.random.default_rng(seed)
    if labels is None:
        labels = _default_labels(n_countries)
    labels = tuple(labels)
    if len(labels) != n_countries:
        raise ConfigError("label count does not match country count")
    t = np.arange(horizon, dtype=float)

    observations: list[Observation] = []
    if model_kind == "total":
        if not isinstance(true_params, TotalParams):
            raise ConfigError("total model expects TotalParams")
        p = true_params
        if min(p.sigma, p.sigma0, p.sigma1) <= 0:
            raise ConfigError("standard deviations must be positive")
        b0 = rng.normal(0.0, p.sigma0, n_countries)
        b1 = rng.normal(0.0, p.sigma1, n_countries)
        for c in range(n_countries):
            mean = p.beta0 + b0[c] + b1[c] * t
            y = mean + rng.normal(0.0, p.sigma, horizon)
            observations.extend(
                Observation(c, int(ti), Sector.TOTAL, float(yi)) for ti, yi in zip(t, y)
            )
        effects: TotalEffects | JointEffects = TotalEffects(b0, b1)
    elif model_kind == "joint":
        if not isinstance(true_params, JointParams):
            raise ConfigError("joint model expects JointParams")
        p = true_params
        cov0 = build_covariance(p.sigma0_ind, p.sigma0_art, p.rho0)
        cov1 = build_covariance(p.sigma1_ind, p.sigma1_art, p.rho1)
        pairs0 = rng.multivariate_normal([0.0, 0.0], cov0.as_array(), size=n_countries)
        pairs1 = rng.multivariate_normal([0.0, 0.0], cov1.as_array(), size=n_countries)
        effects = JointEffects(pairs0[:, 0], pairs0[:, 1], pairs1[:, 0], pairs1[:, 1])
        if p.sigma <= 0:
            raise ConfigError("sigma must be positive")
        for c in range(n_countries):
            sectors = (
                (Sector.INDUSTRIAL, Sector.ARTISANAL)
                if availability is None
                else tuple(availability.get(c, ()))
            )
            for sector in sectors:
                if sector is Sector.INDUSTRIAL:
                    mean = p.beta0_ind + effects.b0_ind[c] + effects.b1_ind[c] * t
                elif sector is Sector.ARTISANAL:
                    mean = p.beta0_art + effects.b0_art[c] + effects.b1_art[c] * t
                else:
                    raise ConfigError("joint availability must list industrial/artisanal only")
                y = mean + rng.normal(0.0, p.sigma, horizon)
                observations.extend(
                    Observation(c, int(ti), sector, float(yi)) for ti, yi in zip(t, y)
                )
    else:
        raise ConfigError(f"unknown model kind {model_kind!r}")

    return Dataset(tuple(observations), labels, horizon), effects
