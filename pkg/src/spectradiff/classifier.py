"""Downstream diagnostic model used to measure the benefit of synthetic spectra.

A small 1-D CNN (three strided conv stages, global average pooling, a
two-layer head) trained with cross-entropy, Adam and early stopping on a
monitor set.  All comparisons hold this classifier fixed, so only the
training data varies between conditions.
"""

import csv
import logging
from dataclasses import dataclass, field, fields

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import nn
from ._validation import check_labels, check_rng, check_spectra
from .exceptions import TrainingError
from .figure import interpolate_rows
from .nn.functional import cross_entropy, softmax

logger = logging.getLogger(__name__)


class _CNN1d(nn.Module):
    def __init__(self, channels, kernel_sizes, strides, hidden, n_classes, rng):
        layers, cin = [], 1
        for c, k, s in zip(channels, kernel_sizes, strides):
            layers += [nn.Conv1d(cin, c, k, stride=s, padding=k // 2, rng=rng), nn.ReLU()]
            cin = c
        self.features = nn.Sequential(*layers)
        self.pool = nn.GlobalAvgPool()
        self.head = nn.Sequential(nn.Linear(cin, hidden, rng=rng), nn.ReLU(),
                                  nn.Linear(hidden, n_classes, rng=rng))

    def forward(self, x):
        return self.head(self.pool(self.features(x[:, None, :])))

    def backward(self, grad):
        self.features.backward(self.pool.backward(self.head.backward(grad)))


class SpectraCNNClassifier(ClassifierMixin, BaseEstimator):
    """1-D CNN classifier over spectra resampled to ``input_length`` points.

    Parameters
    ----------
    channels, kernel_sizes, strides : tuples, one entry per conv stage.
    hidden : int
        Width of the hidden layer of the head.
    max_epochs : int
    patience : int
        Stop after this many consecutive epochs without monitor-loss improvement.
    batch_size, learning_rate : Adam minibatch settings.
    input_length : int, default=1024
    validation_fraction : float, default=0.2
        Held-out share of the training data used as monitor when ``fit`` gets
        no explicit monitor set.
    random_state : int or None

    Attributes
    ----------
    classes_ : ndarray
    best_epoch_ : int
        Epoch whose weights were restored.
    history_ : list of dict
        ``{"epoch", "train_loss", "monitor_loss"}`` per completed epoch.
    """

    def __init__(self, channels=(16, 32, 64), kernel_sizes=(9, 9, 9), strides=(2, 2, 2),
                 hidden=64, max_epochs=100, patience=10, batch_size=32, learning_rate=1e-3,
                 input_length=1024, validation_fraction=0.2, random_state=None):
        self.channels = channels
        self.kernel_sizes = kernel_sizes
        self.strides = strides
        self.hidden = hidden
        self.max_epochs = max_epochs
        self.patience = patience
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.input_length = input_length
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _prepare(self, X):
        X = interpolate_rows(check_spectra(X), self.input_length)
        return (X - self.x_mean_) / self.x_scale_

    def fit(self, X, y, X_monitor=None, y_monitor=None):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        X = check_spectra(X)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError(f"{len(X)} spectra but {len(y)} labels")
        rng = check_rng(self.random_state)
        if X_monitor is None:
            X, y, X_monitor, y_monitor = _stratified_split(X, y, self.validation_fraction, rng)
        self.classes_ = np.unique(np.concatenate([y, np.asarray(y_monitor)]))
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes")
        yt = np.searchsorted(self.classes_, y)
        ym = np.searchsorted(self.classes_, y_monitor)

        Xr = interpolate_rows(X, self.input_length)
        self.x_mean_ = float(Xr.mean())
        self.x_scale_ = float(Xr.std()) or 1.0
        Xt = (Xr - self.x_mean_) / self.x_scale_
        Xm = self._prepare(X_monitor)

        self.net_ = _CNN1d(self.channels, self.kernel_sizes, self.strides, self.hidden,
                           len(self.classes_), rng)
        params = self.net_.parameters()
        opt = nn.AdamState(learning_rate=self.learning_rate)
        best_loss, best_state, since_best = np.inf, self.net_.state_dict(), 0
        self.history_, self.best_epoch_ = [], 0
        for epoch in range(1, int(self.max_epochs) + 1):
            order = rng.permutation(len(Xt))
            running = 0.0
            for start in range(0, len(Xt), int(self.batch_size)):
                b = order[start:start + int(self.batch_size)]
                loss, grad = cross_entropy(self.net_.forward(Xt[b]), yt[b])
                if not np.isfinite(loss):
                    raise TrainingError(f"non-finite classifier loss at epoch {epoch}")
                self.net_.backward(grad)
                nn.adam_step(opt, params)
                running += loss * len(b)
            monitor_loss, _ = cross_entropy(self.net_.forward(Xm), ym)
            self.history_.append({"epoch": epoch, "train_loss": running / len(Xt),
                                  "monitor_loss": monitor_loss})
            if monitor_loss < best_loss:
                best_loss, best_state, since_best = monitor_loss, self.net_.state_dict(), 0
                self.best_epoch_ = epoch
            else:
                since_best += 1
                if since_best >= self.patience:
                    break
        self.net_.load_state_dict(best_state)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "net_")
        return softmax(self.net_.forward(self._prepare(X)))

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


def _stratified_split(X, y, fraction, rng):
    """Hold out ``fraction`` of each class (at least one sample when possible)."""
    train, held = [], []
    for label in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == label))
        k = int(round(fraction * len(idx)))
        k = min(max(k, 1), len(idx) - 1) if len(idx) > 1 else 0
        held.extend(idx[:k])
        train.extend(idx[k:])
    train, held = np.sort(train), np.sort(held)
    if not len(held):
        raise ValueError("training data too small to hold out a monitor split")
    return X[train], y[train], X[held], y[held]


@dataclass(frozen=True)
class ClassifierConfig:
    class_count: int
    channels: tuple = (16, 32, 64)
    kernel_sizes: tuple = (9, 9, 9)
    strides: tuple = (2, 2, 2)
    hidden: int = 64
    max_epochs: int = 100
    patience: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    input_length: int = 1024
    validation_fraction: float = 0.2

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if not len(self.channels) == len(self.kernel_sizes) == len(self.strides):
            raise ValueError("channels, kernel_sizes and strides must have equal length")

    def estimator(self, seed=None):
        kw = {f.name: getattr(self, f.name) for f in fields(self)
              if f.name not in ("class_count", "seed")}
        return SpectraCNNClassifier(random_state=self.seed if seed is None else seed, **kw)


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray
    class_names: tuple = ()


def train_classifier(train, monitor, config, seed=None):
    """Fit on ``train`` with early stopping on ``monitor``; returns ``(clf, history)``."""
    if not len(train) or not len(monitor):
        raise ValueError("train and monitor sets must be non-empty")
    if train.class_names != monitor.class_names:
        raise ValueError(f"class mismatch: {train.class_names} vs {monitor.class_names}")
    if train.n_classes != config.class_count:
        raise ValueError(f"config expects {config.class_count} classes, data has {train.n_classes}")
    clf = config.estimator(seed)
    clf.fit(train.intensities, train.labels, monitor.intensities, monitor.labels)
    return clf, clf.history_


def evaluate(classifier, test):
    """Accuracy, per-class accuracy and confusion matrix (rows true, columns predicted)."""
    if not len(test):
        raise ValueError("cannot evaluate on an empty test set")
    pred = np.asarray(classifier.predict(test.intensities))
    y_pred = check_labels(pred, test.n_classes, len(test))
    k = test.n_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (test.labels, y_pred), 1)
    counts = confusion.sum(axis=1)
    per_class = np.divide(np.diag(confusion), counts, out=np.full(k, np.nan), where=counts > 0)
    return EvalReport(float(np.trace(confusion) / confusion.sum()), per_class, confusion,
                      test.class_names)


@dataclass(frozen=True)
class ExperimentResult:
    mean: float
    sd: float
    accuracies: tuple
    reports: tuple = field(default=(), repr=False)


def augmentation_experiment(real, synthetic, test, config, trials=5, monitor="validation"):
    """Train on ``real`` (plus ``synthetic`` if given) over ``trials`` seeds.

    ``monitor="validation"`` early-stops on a stratified hold-out of the real
    data; ``monitor="test"`` early-stops on the test set itself.
    Trial ``i`` uses seed ``config.seed + i``.
    """
    trials = int(trials)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if monitor not in ("validation", "test"):
        raise ValueError(f"monitor must be 'validation' or 'test', got {monitor!r}")
    accs, reports = [], []
    for i in range(trials):
        seed = config.seed + i
        rng = np.random.default_rng(seed)
        if monitor == "test":
            train_real, mon = real, test
        else:
            Xt, yt, Xm, ym = _stratified_split(real.intensities, real.labels,
                                               config.validation_fraction, rng)
            train_real, mon = real.with_intensities(Xt, yt), real.with_intensities(Xm, ym)
        train = train_real if synthetic is None else train_real.concat(synthetic)
        clf, _ = train_classifier(train, mon, config, seed=seed)
        rep = evaluate(clf, test)
        logger.info("trial %d (seed %d): accuracy %.4f, best epoch %d",
                    i, seed, rep.accuracy, clf.best_epoch_)
        accs.append(rep.accuracy)
        reports.append(rep)
    accs = np.array(accs)
    return ExperimentResult(float(accs.mean()), float(accs.std()), tuple(accs), tuple(reports))


def write_experiment(rows, path):
    """``[(condition, ExperimentResult), ...]`` -> CSV with per-trial accuracies."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["condition", "trial", "accuracy"])
        for name, res in rows:
            for i, a in enumerate(res.accuracies):
                w.writerow([name, i, repr(float(a))])
            w.writerow([name, "mean", repr(res.mean)])
            w.writerow([name, "sd", repr(res.sd)])


def write_confusion(report, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred"] + list(report.class_names))
        for name, row in zip(report.class_names, report.confusion):
            w.writerow([name] + [int(v) for v in row])


def format_table(rows):
    """Human-readable accuracy table."""
    lines = [f"{'condition':<20} {'mean':>8} {'sd':>8}  trials"]
    for name, res in rows:
        trials = " ".join(f"{a:.3f}" for a in res.accuracies)
        lines.append(f"{name:<20} {res.mean:>8.4f} {res.sd:>8.4f}  {trials}")
    return "\n".join(lines)
