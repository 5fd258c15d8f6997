"""Distribution agreement (RMSE, KL divergence) and model scorecards."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import rel_entr

from .base import EmptyDistributionError, IncomparableDistributionsError
from .config import CONFIG, BinningConfig
from .measures import (
    MeasureDistribution,
    MeasureKind,
    Population,
    bin_edges,
    build_distribution,
    histogram,
    measure_samples,
)
from .tessellation import WeightedTessellation

logger = logging.getLogger(__name__)

MEASURE_LABELS = {
    MeasureKind.TRIP_DISTANCE: "Δr",
    MeasureKind.RADIUS_OF_GYRATION: "r_g",
    MeasureKind.ENTROPY: "S_unc",
    MeasureKind.TRIPS_PER_HOUR: "T",
    MeasureKind.TRIPS_PER_DAY: "D",
    MeasureKind.STAY_TIME: "Δt",
    MeasureKind.VISITS_PER_LOCATION: "V",
    MeasureKind.LOCATIONS_PER_USER: "N_u",
    MeasureKind.LOCATION_FREQUENCY: "f(L)",
}


def _redistribute(distribution: MeasureDistribution, edges: np.ndarray) -> np.ndarray:
    """Densities on new edges, spreading each old bin's mass uniformly over its width."""
    old = distribution.edges
    masses = distribution.masses
    new_masses = np.zeros(len(edges) - 1)
    for k in range(len(edges) - 1):
        overlap = np.clip(np.minimum(old[1:], edges[k + 1]) - np.maximum(old[:-1], edges[k]), 0.0, None)
        new_masses[k] = np.sum(masses * overlap / np.diff(old))
    return new_masses / np.diff(edges)


def align(real: MeasureDistribution, synth: MeasureDistribution,
          config: BinningConfig = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Both densities on one edge set: the reference's scheme over the union of supports."""
    if len(real.edges) == len(synth.edges) and np.allclose(real.edges, synth.edges, rtol=0, atol=1e-12):
        return real.edges, real.densities, synth.densities

    low = min(real.edges[0], synth.edges[0])
    high = max(real.edges[-1], synth.edges[-1])
    if real.samples is not None and synth.samples is not None:
        values = np.concatenate([real.samples, synth.samples])
        integral = bool(np.all(values == np.round(values)))
        edges = bin_edges(real.binning, float(values.min()), float(values.max()), integral, config)
        return edges, histogram(real.samples, real.weights, edges), histogram(synth.samples, synth.weights, edges)

    if real.binning.value == "log":
        edges = np.geomspace(low, high, len(real.densities) + 1)
    else:
        edges = np.linspace(low, high, len(real.densities) + 1)
    return edges, _redistribute(real, edges), _redistribute(synth, edges)


def _shared_masses(real: MeasureDistribution, synth: MeasureDistribution,
                   config: BinningConfig = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    edges, p_density, q_density = align(real, synth, config)
    widths = np.diff(edges)
    p, q = p_density * widths, q_density * widths
    if not np.any((p > 0) & (q > 0)):
        raise IncomparableDistributionsError(f"{real.kind.value}: supports do not overlap")
    return widths, p, q


def rmse(real: MeasureDistribution, synth: MeasureDistribution, config: BinningConfig = None) -> float:
    """Root mean squared difference of per-bin densities."""
    edges, p_density, q_density = align(real, synth, config)
    widths = np.diff(edges)
    if not np.any((p_density * widths > 0) & (q_density * widths > 0)):
        raise IncomparableDistributionsError(f"{real.kind.value}: supports do not overlap")
    return float(np.sqrt(np.mean((q_density - p_density) ** 2)))


def kl_divergence(real: MeasureDistribution, synth: MeasureDistribution, config: BinningConfig = None) -> float:
    """KL(real || synth) in nats over shared bins, both sides smoothed by epsilon and renormalized."""
    config = config or CONFIG.binning
    _, p, q = _shared_masses(real, synth, config)
    p = (p + config.smoothing) / (p + config.smoothing).sum()
    q = (q + config.smoothing) / (q + config.smoothing).sum()
    return float(max(0.0, np.sum(rel_entr(p, q))))


def comparable(real: MeasureDistribution, synth: MeasureDistribution, config: BinningConfig = None) -> bool:
    """False when supports are disjoint or most reference mass sits where the synthetic has none."""
    config = config or CONFIG.binning
    try:
        _, p, q = _shared_masses(real, synth, config)
    except IncomparableDistributionsError:
        return False
    return p[q == 0].sum() / p.sum() <= config.incomparable_mass


@dataclass
class FitCell:
    model: str
    measure: MeasureKind
    rmse: Optional[float] = None
    kl: Optional[float] = None

    @property
    def comparable(self) -> bool:
        return self.rmse is not None


@dataclass
class FitReport:
    models: List[str]
    measures: List[MeasureKind]
    cells: Dict[Tuple[str, MeasureKind], FitCell] = field(default_factory=dict)
    best: Dict[MeasureKind, Optional[str]] = field(default_factory=dict)

    def cell(self, model: str, measure: MeasureKind) -> FitCell:
        return self.cells[(model, MeasureKind(measure))]

    def to_frame(self) -> pd.DataFrame:
        rows = [{
            "model": model,
            "measure": measure.value,
            "rmse": self.cells[(model, measure)].rmse,
            "kl": self.cells[(model, measure)].kl,
            "comparable": self.cells[(model, measure)].comparable,
        } for model in self.models for measure in self.measures]
        return pd.DataFrame(rows, columns=["model", "measure", "rmse", "kl", "comparable"])

    def to_text(self) -> str:
        """Models as rows, measures as columns; each model has an RMSE line and a KL line; * marks the best RMSE."""
        headers = ["model", ""] + [MEASURE_LABELS[m] for m in self.measures]
        body = []
        for model in self.models:
            for metric in ("rmse", "kl"):
                row = [model if metric == "rmse" else "", metric]
                for measure in self.measures:
                    cell = self.cells[(model, measure)]
                    value = getattr(cell, metric)
                    if value is None:
                        row.append("-")
                    else:
                        star = "*" if metric == "rmse" and self.best.get(measure) == model else ""
                        row.append(f"{value:.4f}{star}")
                body.append(row)
        widths = [max(len(str(r[i])) for r in [headers] + body) for i in range(len(headers))]
        lines = ["  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip() for r in [headers] + body]
        return "\n".join(lines) + "\n"


def scorecard(models: Sequence[Tuple[str, Population]], reference: Population, t: WeightedTessellation,
              measures: Sequence[MeasureKind] = tuple(MeasureKind), config: BinningConfig = None) -> FitReport:
    """RMSE/KL grid of every model against the reference on every measure."""
    if not models:
        raise ValueError("scorecard needs at least one model")
    config = config or CONFIG.binning
    measures = [MeasureKind(m) for m in measures]
    report = FitReport(models=[label for label, _ in models], measures=measures)

    references: Dict[MeasureKind, Optional[MeasureDistribution]] = {}
    for measure in measures:
        try:
            references[measure] = build_distribution(*_samples(measure, reference, t), config=config)
        except EmptyDistributionError:
            logger.warning(f"⚠️ Reference has no {measure.value} samples; column left incomparable")
            references[measure] = None

    for label, population in models:
        for measure in measures:
            cell = FitCell(label, measure)
            real = references[measure]
            if real is not None:
                try:
                    synth = build_distribution(*_samples(measure, population, t), config=config)
                    if comparable(real, synth, config):
                        cell.rmse = rmse(real, synth, config)
                        cell.kl = kl_divergence(real, synth, config)
                except (EmptyDistributionError, IncomparableDistributionsError) as e:
                    logger.debug(f"{label}/{measure.value} not comparable: {e}")
            report.cells[(label, measure)] = cell

    for measure in measures:
        scored = [(report.cells[(label, measure)].rmse, label) for label in report.models
                  if report.cells[(label, measure)].comparable]
        report.best[measure] = min(scored)[1] if scored else None
    logger.info(f"📋 Scorecard: {len(report.models)} models × {len(measures)} measures")
    return report


def _samples(measure: MeasureKind, population: Population, t: WeightedTessellation):
    values, weights = measure_samples(measure, population, t)
    return values, measure, None, weights
