"""Two-group comparison: summaries, Mann-Whitney-Wilcoxon test, report tables."""

from __future__ import annotations

import csv
import io
import math
import statistics
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

EXACT_MAX_N = 20
DEFAULT_ALPHA = 0.05
STARS = "***"


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    label: str
    values: tuple[float, ...]

    def __init__(self, label: str, values: Iterable[float]):
        vals = tuple(float(v) for v in values)
        if not vals:
            raise StatsError(f"sample {label!r} is empty")
        if not all(math.isfinite(v) for v in vals):
            raise StatsError(f"sample {label!r} contains NaN or infinite values")
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)


def summarize(s: Sample | Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and median (mean of the two middle values for even n)."""
    values = s.values if isinstance(s, Sample) else tuple(s)
    if not values:
        raise StatsError("cannot summarize an empty sample")
    return math.fsum(values) / len(values), float(statistics.median(values))


def midranks(values: Sequence[float]) -> list[float]:
    """1-based ranks; tied values share the average of the ranks they span."""
    order = sorted(range(len(values)), key=values.__getitem__)
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        shared = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = shared
        i = j + 1
    return ranks


@dataclass(frozen=True)
class StatTestResult:
    metric_name: str
    label_a: str
    mean_a: float
    median_a: float
    label_b: str
    mean_b: float
    median_b: float
    p_value: float
    alpha: float = DEFAULT_ALPHA
    # Unset for rows built from published summaries rather than raw samples.
    u_statistic: float | None = None
    method: str | None = None  # "exact" or "normal_approx"
    n_a: int | None = None
    n_b: int | None = None
    significant: bool = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "significant", self.p_value < self.alpha)


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha < 1:
        raise StatsError(f"alpha must be in (0, 1), got {alpha}")


def _exact_p(doubled_ranks: list[int], n_a: int, observed_twice_u: int) -> float:
    """P(min(U_a, U_b) <= observed) over all equally likely group assignments.

    Counts, for every subset size up to ``n_a``, how many subsets of the pooled
    (doubled, so integral) midranks reach each rank sum.
    """
    n_b = len(doubled_ranks) - n_a
    ways: list[Counter] = [Counter() for _ in range(n_a + 1)]
    ways[0][0] = 1
    for r in doubled_ranks:
        for size in range(n_a, 0, -1):
            below = ways[size - 1]
            if not below:
                continue
            here = ways[size]
            for total, count in below.items():
                here[total + r] += count
    offset = n_a * (n_a + 1)  # doubled n_a(n_a+1)/2
    full = 2 * n_a * n_b
    hits = 0
    for total, count in ways[n_a].items():
        u2 = total - offset
        if min(u2, full - u2) <= observed_twice_u:
            hits += count
    return float(Fraction(hits, math.comb(n_a + n_b, n_a)))


def _normal_p(ranks: list[float], n_a: int, n_b: int, u_a: float) -> float:
    n = n_a + n_b
    ties = Counter(ranks).values()
    tie_term = sum(t**3 - t for t in ties)
    variance = n_a * n_b / 12 * ((n + 1) - tie_term / (n * (n - 1)))
    if variance <= 0:
        return 1.0
    mean = n_a * n_b / 2
    z = (max(u_a, n_a * n_b - u_a) - mean - 0.5) / math.sqrt(variance)
    return min(1.0, math.erfc(z / math.sqrt(2)))


def mann_whitney(
    a: Sample,
    b: Sample,
    alpha: float = DEFAULT_ALPHA,
    *,
    metric_name: str = "",
    method: str = "auto",
) -> StatTestResult:
    """Two-sided Mann-Whitney-Wilcoxon test of ``a`` against ``b``.

    ``u_statistic`` is min(U_a, U_b) computed from pooled midranks. With
    ``method="auto"`` the p-value is exact (full enumeration of group
    assignments) when n_a + n_b <= 20, otherwise the tie-corrected normal
    approximation with continuity correction.
    """
    _check_alpha(alpha)
    if method not in ("auto", "exact", "normal_approx"):
        raise StatsError(f"unknown method {method!r}")
    n_a, n_b = len(a), len(b)
    ranks = midranks(a.values + b.values)
    u_a = math.fsum(ranks[:n_a]) - n_a * (n_a + 1) / 2
    u_b = n_a * n_b - u_a
    u = min(u_a, u_b)

    if method == "auto":
        method = "exact" if n_a + n_b <= EXACT_MAX_N else "normal_approx"
    if method == "exact":
        doubled = [round(2 * r) for r in ranks]
        p = _exact_p(doubled, n_a, round(2 * u))
    else:
        p = _normal_p(ranks, n_a, n_b, u_a)

    mean_a, median_a = summarize(a)
    mean_b, median_b = summarize(b)
    return StatTestResult(
        metric_name=metric_name,
        label_a=a.label,
        mean_a=mean_a,
        median_a=median_a,
        label_b=b.label,
        mean_b=mean_b,
        median_b=median_b,
        n_a=n_a,
        n_b=n_b,
        u_statistic=u,
        p_value=p,
        method=method,
        alpha=alpha,
    )


# --- report tables -----------------------------------------------------------


def format_number(x: float) -> str:
    text = f"{x:.2f}"
    return "0.00" if text == "-0.00" else text


def format_p(p: float) -> str:
    return "< 0.0001" if p < 0.00005 else f"{p:.4f}"


def _table_cells(results: Sequence[StatTestResult]) -> list[list[str]]:
    cells = []
    for r in results:
        star = STARS if r.significant else ""
        cells.append([r.metric_name + star, r.label_a, format_number(r.mean_a),
                      format_number(r.median_a), "-"])
        cells.append(["", r.label_b, format_number(r.mean_b),
                      format_number(r.median_b), format_p(r.p_value) + star])
    return cells


def format_text(results: Sequence[StatTestResult]) -> str:
    header = ["Metric", "Group", "Mean", "Median", "p-value"]
    rows = _table_cells(results)
    widths = [max(len(row[i]) for row in [header, *rows]) for i in range(len(header))]
    right = (False, False, True, True, False)

    def line(row: Sequence[str]) -> str:
        parts = [c.rjust(w) if r else c.ljust(w) for c, w, r in zip(row, widths, right)]
        return "  ".join(parts).rstrip()

    out = [line(header), line(["-" * w for w in widths])]
    out.extend(line(row) for row in rows)
    return "\n".join(out) + "\n"


def _opt(value) -> str:
    return "" if value is None else str(value)


def format_csv(results: Sequence[StatTestResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "group", "n", "mean", "median", "u_statistic", "p_value", "method", "significant"])
    for r in results:
        u = "" if r.u_statistic is None else f"{r.u_statistic:g}"
        writer.writerow([r.metric_name, r.label_a, _opt(r.n_a), format_number(r.mean_a),
                         format_number(r.median_a), "", "", "", ""])
        writer.writerow([r.metric_name, r.label_b, _opt(r.n_b), format_number(r.mean_b),
                         format_number(r.median_b), u, format_p(r.p_value),
                         r.method or "", "true" if r.significant else "false"])
    return buf.getvalue()


def compare_table(
    rows: Sequence[tuple[str, Sample, Sample]],
    alpha: float = DEFAULT_ALPHA,
    fmt: str = "text",
) -> str:
    """Test each (metric, control, treatment) row and format the report."""
    _check_alpha(alpha)
    results = []
    for name, control, treatment in rows:
        if control is None or treatment is None:
            raise StatsError(f"metric {name!r} is missing a group")
        results.append(mann_whitney(control, treatment, alpha, metric_name=name))
    if fmt == "text":
        return format_text(results)
    if fmt == "csv":
        return format_csv(results)
    raise StatsError(f"unknown format {fmt!r}")


# --- CSV ingestion -------------------------------------------------------------


@dataclass
class Ingested:
    rows: list[tuple[str, Sample, Sample]]
    skipped: dict[str, int]
    control: str
    treatment: str


def _parse_cell(cell: str | None) -> float | None:
    if cell is None:
        return None
    try:
        value = float(cell.strip())
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def ingest_csv(
    source,
    metrics: Sequence[str],
    group_col: str = "group",
    control: str | None = None,
    treatment: str | None = None,
) -> Ingested:
    """Split each metric column of a CSV into control/treatment samples.

    ``source`` is a path or an open text file. Cells that are empty or not a
    finite number, and rows with the wrong number of fields, are skipped and
    counted per metric. Without explicit labels the two groups are taken in
    order of first appearance.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="", encoding="utf-8") as fh:
            return ingest_csv(fh, metrics, group_col, control, treatment)

    reader = csv.DictReader(source, restkey="\x00extra")
    columns = reader.fieldnames or []
    missing = [c for c in [group_col, *metrics] if c not in columns]
    if missing:
        raise StatsError(f"missing columns: {', '.join(missing)}")

    values: dict[str, dict[str, list[float]]] = {m: {} for m in metrics}
    skipped = {m: 0 for m in metrics}
    labels: list[str] = []
    for row in reader:
        malformed = "\x00extra" in row or any(v is None for v in row.values())
        label = (row.get(group_col) or "").strip()
        if label and not malformed and label not in labels:
            labels.append(label)
        for m in metrics:
            value = None if malformed or not label else _parse_cell(row.get(m))
            if value is None:
                skipped[m] += 1
            else:
                values[m].setdefault(label, []).append(value)

    if control is None or treatment is None:
        others = [x for x in labels if x not in (control, treatment)]
        if control is None:
            control = others.pop(0) if others else None
        if treatment is None:
            treatment = others.pop(0) if others else None
        if others:
            raise StatsError(
                f"more than two groups in column {group_col!r}: {', '.join(labels)}; "
                "name the control and treatment groups"
            )
    if control is None or treatment is None:
        raise StatsError(f"need two groups in column {group_col!r}, found {labels}")

    rows = []
    for m in metrics:
        a = values[m].get(control, [])
        b = values[m].get(treatment, [])
        if not a or not b:
            empty = control if not a else treatment
            raise StatsError(f"no data for metric {m!r} in group {empty!r}")
        rows.append((m, Sample(control, a), Sample(treatment, b)))
    return Ingested(rows=rows, skipped=skipped, control=control, treatment=treatment)
