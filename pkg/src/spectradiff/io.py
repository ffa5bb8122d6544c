"""Labeled spectra: data model, CSV interchange and a synthetic generator.

CSV layout (UTF-8, LF line endings, ``.`` decimal separator)::

    400.0,401.4,...,1800.0,label
    0.132,0.118,...,0.071,E. coli
    ...

Every header cell except ``label`` is a wavenumber; together they define the
shared grid.  Floats are written in shortest round-trip form (``repr``).
"""

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import FormatError, ParseError

LABEL_COLUMN = "label"


def _readonly(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Spectrum:
    """One intensity trace on an ascending wavenumber grid."""

    wavenumbers: np.ndarray
    intensities: np.ndarray
    label: int | None = None

    def __post_init__(self):
        wn = _readonly(self.wavenumbers)
        it = _readonly(self.intensities)
        if wn.ndim != 1 or it.ndim != 1:
            raise ValueError("wavenumbers and intensities must be 1-d")
        if len(wn) != len(it):
            raise ValueError(f"length mismatch: {len(wn)} wavenumbers, {len(it)} intensities")
        if len(wn) < 2:
            raise ValueError("a spectrum needs at least 2 points")
        if not np.all(np.diff(wn) > 0):
            raise FormatError("wavenumbers must be strictly ascending")
        if not np.all(np.isfinite(it)):
            raise ValueError("intensities must be finite")
        object.__setattr__(self, "wavenumbers", wn)
        object.__setattr__(self, "intensities", it)
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    def __len__(self):
        return len(self.intensities)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """A set of spectra sharing one wavenumber grid.

    Stored column-wise: ``intensities`` is ``(n, K)``, ``labels`` is ``(n,)``
    with values indexing ``class_names``.
    """

    intensities: np.ndarray
    labels: np.ndarray
    class_names: tuple
    wavenumbers: np.ndarray

    def __post_init__(self):
        wn = _readonly(self.wavenumbers)
        if wn.ndim != 1 or len(wn) < 2:
            raise ValueError("grid must be a 1-d array of at least 2 points")
        if not np.all(np.diff(wn) > 0):
            raise FormatError("wavenumber grid must be strictly ascending")
        x = _readonly(np.reshape(self.intensities, (-1, len(wn))))
        y = _readonly(np.reshape(self.labels, (-1,)), dtype=np.intp)
        if len(x) != len(y):
            raise ValueError(f"{len(x)} spectra but {len(y)} labels")
        if not np.all(np.isfinite(x)):
            raise ValueError("intensities must be finite")
        names = tuple(str(c) for c in self.class_names)
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        if len(y) and (y.min() < 0 or y.max() >= len(names)):
            raise ValueError(f"labels must lie in [0, {len(names)})")
        object.__setattr__(self, "wavenumbers", wn)
        object.__setattr__(self, "intensities", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "class_names", names)

    @classmethod
    def from_spectra(cls, spectra, class_names):
        spectra = list(spectra)
        if not spectra:
            raise ValueError("from_spectra needs at least one spectrum to define the grid")
        grid = spectra[0].wavenumbers
        for s in spectra:
            if not np.array_equal(s.wavenumbers, grid):
                raise ValueError("all spectra must share the same grid")
            if s.label is None:
                raise ValueError("all spectra must be labeled")
        return cls(np.stack([s.intensities for s in spectra]),
                   [s.label for s in spectra], class_names, grid)

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return Spectrum(self.wavenumbers, self.intensities[i], int(self.labels[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def spectra(self):
        return list(self)

    @property
    def n_classes(self):
        return len(self.class_names)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, index):
        index = np.asarray(index)
        return LabeledDataset(self.intensities[index], self.labels[index],
                              self.class_names, self.wavenumbers)

    def with_intensities(self, intensities, labels=None):
        """Same grid and classes, new rows."""
        labels = self.labels if labels is None else labels
        return LabeledDataset(intensities, labels, self.class_names, self.wavenumbers)

    def concat(self, other):
        """Append ``other``; its labels are remapped by class name."""
        if not np.array_equal(self.wavenumbers, other.wavenumbers):
            raise ValueError("cannot concatenate datasets on different grids")
        names = list(self.class_names)
        for c in other.class_names:
            if c not in names:
                names.append(c)
        remap = np.array([names.index(c) for c in other.class_names], dtype=np.intp)
        other_labels = remap[other.labels] if len(other) else other.labels
        return LabeledDataset(np.concatenate([self.intensities, other.intensities]),
                              np.concatenate([self.labels, other_labels]),
                              names, self.wavenumbers)

    def equals(self, other):
        return (self.class_names == other.class_names
                and np.array_equal(self.wavenumbers, other.wavenumbers)
                and np.array_equal(self.intensities, other.intensities)
                and np.array_equal(self.labels, other.labels))


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a Gaussian-peak surrogate dataset.

    The grid fields are optional extras: by default spectra are sampled at
    1000 points between 400 and 1800 cm^-1.
    """

    class_count: int = 4
    peaks_per_class: int = 6
    peak_center_range: tuple = (500.0, 1700.0)
    peak_width_range: tuple = (8.0, 30.0)
    noise_sigma: float = 0.05
    samples_per_class: int = 20
    seed: int = 0
    amplitude_range: tuple = (0.3, 1.0)
    grid_start: float = 400.0
    grid_stop: float = 1800.0
    grid_points: int = 1000

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if self.peaks_per_class < 1:
            raise ValueError("peaks_per_class must be >= 1")
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.grid_points < 2 or not self.grid_stop > self.grid_start:
            raise ValueError("grid needs >= 2 points and grid_stop > grid_start")
        for name in ("peak_center_range", "peak_width_range", "amplitude_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} must be (low, high) with low <= high")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.peak_width_range[0] <= 0:
            raise ValueError("peak widths must be positive")


def generate_synthetic(spec):
    """Draw a labeled dataset of noisy Gaussian-peak mixtures.

    Each class owns a fixed peak mixture drawn once from ``spec.seed``;
    samples add i.i.d. Gaussian noise with standard deviation ``noise_sigma``.
    """
    rng = np.random.default_rng(spec.seed)
    grid = np.linspace(spec.grid_start, spec.grid_stop, spec.grid_points)
    k, p = spec.class_count, spec.peaks_per_class
    centers = rng.uniform(*spec.peak_center_range, size=(k, p))
    widths = rng.uniform(*spec.peak_width_range, size=(k, p))
    amps = rng.uniform(*spec.amplitude_range, size=(k, p))
    profiles = np.einsum(
        "kp,kpg->kg", amps,
        np.exp(-0.5 * ((grid[None, None, :] - centers[..., None]) / widths[..., None]) ** 2),
    )
    n = spec.samples_per_class
    x = np.repeat(profiles, n, axis=0)
    if spec.noise_sigma > 0:
        x = x + rng.normal(0.0, spec.noise_sigma, size=x.shape)
    labels = np.repeat(np.arange(k), n)
    names = [f"class_{i}" for i in range(k)]
    return LabeledDataset(x, labels, names, grid)


def _fmt(v):
    return repr(float(v))


def save_csv(dataset, path):
    """Write ``dataset`` in the format read by :func:`load_csv`."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([_fmt(w) for w in dataset.wavenumbers] + [LABEL_COLUMN])
    for row, y in zip(dataset.intensities, dataset.labels):
        writer.writerow([_fmt(v) for v in row] + [dataset.class_names[y]])
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _parse_float(text, row, col):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"row {row}, column {col}: non-numeric value {text!r}", row) from None
    if not math.isfinite(v):
        raise ParseError(f"row {row}, column {col}: non-finite value {text!r}", row)
    return v


def load_csv(path):
    """Parse a labeled-spectra CSV file.

    Labels become contiguous integers in first-appearance order.
    """
    with open(Path(path), encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file (missing header)", 1)
    header = [h.strip() for h in rows[0]]
    if header.count(LABEL_COLUMN) != 1:
        raise ParseError(f"{path}: header must contain exactly one {LABEL_COLUMN!r} column", 1)
    label_col = header.index(LABEL_COLUMN)
    value_cols = [i for i in range(len(header)) if i != label_col]
    grid = []
    for i in value_cols:
        h = header[i]
        if h.startswith("wavenumber_"):
            h = h[len("wavenumber_"):]
        grid.append(_parse_float(h, 1, i + 1))
    grid = np.array(grid)
    if len(grid) < 2:
        raise FormatError(f"{path}: need at least 2 wavenumber columns")
    if not np.all(np.diff(grid) > 0):
        raise FormatError(f"{path}: wavenumber grid in header is not strictly ascending")

    names, labels, values = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(
                f"row {lineno}: expected {len(header)} fields "
                f"({len(grid)} intensities + label), got {len(row)}", lineno)
        values.append([_parse_float(row[i], lineno, i + 1) for i in value_cols])
        name = row[label_col]
        if name not in names:
            names.append(name)
        labels.append(names.index(name))
    x = np.array(values, dtype=np.float64).reshape(-1, len(grid))
    return LabeledDataset(x, np.array(labels, dtype=np.intp), names, grid)
