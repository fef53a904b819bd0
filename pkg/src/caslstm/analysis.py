"""Gate statistics, parameter accounting and multi-seed comparisons."""

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np
from scipy import stats

from .encoder import GateTrace

DEFAULT_BINS = 20


class AnalysisError(ValueError):
    pass


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    total: int

    def __post_init__(self):
        if int(self.counts.sum()) != self.total:
            raise ValueError("histogram counts do not sum to the total")
        if not np.all(np.diff(self.edges) > 0):
            raise ValueError("histogram edges must be strictly increasing")


def _as_traces(traces):
    if isinstance(traces, GateTrace):
        return [traces]
    return list(traces)


def _series(traces, layer, attr="g"):
    out = []
    for tr in _as_traces(traces):
        out.extend(getattr(tr, attr).get(layer, []))
    if not out:
        if attr == "g":
            raise AnalysisError(f"no vertical forget gates recorded for layer {layer}")
        raise AnalysisError(f"no output gates recorded for layer {layer}")
    return out


def gate_layers(traces):
    """Layers that carry a vertical forget gate, ascending."""
    layers = set()
    for tr in _as_traces(traces):
        layers.update(k for k, v in tr.g.items() if v)
    return sorted(layers)


def histogram(values, bins=DEFAULT_BINS):
    """Uniform bins over [0, 1]; the last bin includes 1."""
    values = np.asarray(values, dtype=np.float64).ravel()
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    return Histogram(edges, counts, int(values.size))


def gate_histogram(traces, layer, bins=DEFAULT_BINS):
    """Histogram of every scalar vertical forget-gate value at ``layer``."""
    return histogram(np.concatenate([s.ravel() for s in _series(traces, layer)]), bins)


def range_stat(traces, layer):
    """``max_i g_ti - min_i g_ti`` for every (sentence, t), concatenated."""
    return np.concatenate([s.max(axis=1) - s.min(axis=1) for s in _series(traces, layer)])


def gate_output_divergence(traces, layer):
    """``|g^l - o^(l-1)|`` elementwise, flattened in (sentence, t, i) order."""
    if layer < 2:
        raise AnalysisError("vertical forget gates exist only from layer 2 up")
    g = _series(traces, layer)
    o = _series(traces, layer - 1, "o")
    if len(g) != len(o) or any(a.shape != b.shape for a, b in zip(g, o)):
        raise AnalysisError(f"gate series of layers {layer} and {layer - 1} are not aligned")
    return np.concatenate([np.abs(a - b).ravel() for a, b in zip(g, o)])


def cell_state_range(traces):
    """Observed ``(min, max)`` cell-state value per layer.

    Reported as a diagnostic only: no fixed bound follows from the cell
    equations once sequences get long.
    """
    out = {}
    for tr in _as_traces(traces):
        for layer, series in tr.c.items():
            for s in series:
                lo, hi = out.get(layer, (np.inf, -np.inf))
                out[layer] = (min(lo, float(s.min())), max(hi, float(s.max())))
    return dict(sorted(out.items()))


def gate_values(traces, layer):
    return np.concatenate([s.ravel() for s in _series(traces, layer)])


HIST_HEADER = ("layer", "stat", "bin_lo", "bin_hi", "count")
VALUE_HEADER = ("layer", "stat", "value")


def write_histograms(path, rows):
    """``rows`` is an iterable of ``(layer, stat, Histogram)``."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HIST_HEADER)
        for layer, stat, h in rows:
            for lo, hi, c in zip(h.edges[:-1], h.edges[1:], h.counts):
                w.writerow((layer, stat, repr(float(lo)), repr(float(hi)), int(c)))


def write_values(path, rows):
    """``rows`` is an iterable of ``(layer, stat, values)``; one CSV row per value."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VALUE_HEADER)
        for layer, stat, values in rows:
            for v in np.asarray(values).ravel():
                w.writerow((layer, stat, repr(float(v))))


def analyze_traces(traces, out_dir, bins=DEFAULT_BINS):
    """Write ``gate_histograms.csv`` and ``gate_values.csv`` for every gated layer.

    Value stats: ``g`` and ``divergence`` give one row per gate entry,
    ``range`` one row per (sentence, t).  Returns the two paths.
    """
    layers = gate_layers(traces)
    if not layers:
        raise AnalysisError("no vertical forget gates: the encoder has no gated upper layers")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hists, values = [], []
    for l in layers:
        g, div, rng = gate_values(traces, l), gate_output_divergence(traces, l), range_stat(traces, l)
        hists += [(l, "g", histogram(g, bins)), (l, "divergence", histogram(div, bins)),
                  (l, "range", histogram(rng, bins))]
        values += [(l, "g", g), (l, "divergence", div), (l, "range", rng)]
    hist_path, value_path = out_dir / "gate_histograms.csv", out_dir / "gate_values.csv"
    write_histograms(hist_path, hists)
    write_values(value_path, values)
    return hist_path, value_path


# parameter accounting

@dataclass
class LayerCount:
    layer: int
    d_in: int
    d: int
    plain: int
    shortcut: int
    cas: int
    lam: int = 0


@dataclass
class ParamCount:
    """Encoder parameter counts for one direction, plus the configured total."""

    layers: List[LayerCount]
    directions: int = 1
    configured: int = 0

    def total(self, kind):
        return sum(getattr(r, kind) for r in self.layers)

    @property
    def lam(self):
        return sum(r.lam for r in self.layers)


def plain_layer_count(d_in, d):
    return (d_in + d + 1) * 4 * d


def shortcut_layer_count(dims_below, d):
    return (sum(dims_below) + d + 1) * 4 * d


def cas_layer_count(d_in, d):
    return (d_in + d + 1) * 5 * d


def peephole_layer_count(d_in, d):
    # four LSTM gates, then W_g, b_g and the two peephole vectors
    return plain_layer_count(d_in, d) + (d_in + 3) * d


def count_params(config):
    """Count encoder parameters of ``config`` (an ``EncoderConfig``).

    Every layer row gives the plain, shortcut-stacked and CAS counts; the CAS
    column equals the plain one at layer 1.  Trainable lambda vectors are
    kept in their own column.  ``configured`` is the element count of the
    encoder ``config`` actually builds, both directions included.
    """
    dims = [config.input_dim] + [config.dim] * config.num_layers
    rows = []
    per_dir = 0
    for l in range(1, config.num_layers + 1):
        d_in, d = dims[l - 1], dims[l]
        plain = plain_layer_count(d_in, d)
        cas = plain if l == 1 else cas_layer_count(d_in, d)
        lam = d if l > 1 and config.cell_kind == "cas" and config.lambda_kind == "trainable" else 0
        rows.append(LayerCount(l, d_in, d, plain, shortcut_layer_count(dims[:l], d), cas, lam))
        if l == 1 or config.cell_kind == "plain_stacked":
            per_dir += plain
        elif config.cell_kind == "cas":
            per_dir += cas + lam
        else:
            per_dir += peephole_layer_count(d_in, d)
    directions = 2 if config.bidirectional else 1
    return ParamCount(rows, directions, per_dir * directions)


def format_count_table(count):
    lines = [f"{'layer':>5} {'d_in':>6} {'d':>6} {'plain':>12} {'shortcut':>12} {'cas':>12}"]
    for r in count.layers:
        lines.append(f"{r.layer:>5} {r.d_in:>6} {r.d:>6} {r.plain:>12,} {r.shortcut:>12,} {r.cas:>12,}")
    lines.append(f"{'total':>5} {'':>6} {'':>6} {count.total('plain'):>12,} "
                 f"{count.total('shortcut'):>12,} {count.total('cas'):>12,}")
    lines.append(f"lambda (trainable, not in table): {count.lam:,}")
    lines.append(f"directions: {count.directions}; configured encoder total: {count.configured:,}")
    return "\n".join(lines)


# seed comparisons

@dataclass
class Comparison:
    name_a: str
    name_b: str
    scores_a: List[float]
    scores_b: List[float]
    p_value: float = field(init=False)

    def __post_init__(self):
        self.p_value = paired_ttest(self.scores_a, self.scores_b)

    @staticmethod
    def _summary(x):
        x = np.asarray(x, dtype=np.float64)
        return float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0

    def report(self):
        (ma, sa), (mb, sb) = self._summary(self.scores_a), self._summary(self.scores_b)
        return (f"{self.name_a}: {ma:.4f} ± {sa:.4f}\n"
                f"{self.name_b}: {mb:.4f} ± {sb:.4f}\n"
                f"one-tailed paired t-test ({self.name_a} > {self.name_b}): p = {self.p_value:.4g}")


def paired_ttest(a, b):
    """One-tailed paired t-test p-value for ``mean(a - b) > 0``.

    Differences with zero spread give p = 0 for a positive mean, 1 for a
    negative one and 0.5 when every difference is zero.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("paired t-test needs two equal-length score lists of length >= 2")
    diff = a - b
    if np.all(diff == diff[0]):
        return 0.0 if diff[0] > 0 else (1.0 if diff[0] < 0 else 0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return float(stats.ttest_rel(a, b, alternative="greater").pvalue)


def compare_seeds(run, configs, seeds):
    """Score two named configurations on the same seeds.

    ``configs`` is ``[(name_a, cfg_a), (name_b, cfg_b)]`` and ``run(cfg, seed)``
    returns a score.  Runs are ordered by seed so the pairs line up.
    """
    (name_a, cfg_a), (name_b, cfg_b) = configs
    scores_a, scores_b = [], []
    for seed in seeds:
        scores_a.append(float(run(cfg_a, seed)))
        scores_b.append(float(run(cfg_b, seed)))
    return Comparison(name_a, name_b, scores_a, scores_b)
