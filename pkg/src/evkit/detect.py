"""Closed-form Bayesian detection of a known waveform in multichannel noise.

Data model: ``x_m(t) = alpha * C_m * s(t) + n_m(t)`` with white Gaussian noise
of std ``sigma_n`` and a Gaussian amplitude prior ``N(alpha_hat, sigma_alpha**2)``,
either on the whole line or truncated to ``alpha > 0``.  Integrating the
amplitude out yields log odds of signal-plus-noise against noise alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal, special, stats

from .core import RngHandle

DEFAULT_SNRS = tuple(range(-6, 8)) + (10, 15, 20)
DEFAULT_COUPLINGS = (1.0, 0.8, 0.5)
# per-channel noise gains standing in for a forward-model channel weighting
NOISE_GAINS = (1.0, 0.85, 0.7)
AR2_COEFFS = (1.7, -0.8)
EPOCH_LEN = 200
TEMPLATE_FRACTION = 0.3
BURN_IN = 200


def raised_cosine(u):
    u = np.asarray(u, dtype=float)
    return np.where((u >= 0) & (u <= 1), 0.5 * (1.0 - np.cos(2.0 * np.pi * u)), 0.0)


def default_template(epoch_len: int = EPOCH_LEN, fraction: float = TEMPLATE_FRACTION):
    """Biphasic pulse: a raised-cosine positive lobe and a smaller negative one."""
    L = int(round(fraction * epoch_len))
    t = np.arange(L) / L
    return raised_cosine(t / 0.65) - 0.4 * raised_cosine((t - 0.65) / 0.35)


@dataclass(frozen=True)
class DetectionProblem:
    template: np.ndarray
    couplings: np.ndarray
    sigma_n: float = 1.0
    sigma_alpha: float = 0.5
    alpha_hat: float = 1.0
    alpha_range: str = "positive"

    def __post_init__(self):
        s = np.asarray(self.template, dtype=float).ravel()
        c = np.asarray(self.couplings, dtype=float).ravel()
        object.__setattr__(self, "template", s)
        object.__setattr__(self, "couplings", c)
        if not (self.sigma_n > 0 and self.sigma_alpha > 0):
            raise ValueError("sigma_n and sigma_alpha must be positive")
        if self.alpha_range not in ("positive", "full"):
            raise ValueError("alpha_range must be 'positive' or 'full'")
        if np.any(c != 0) and not np.any(s != 0):
            raise ValueError("template is identically zero")

    @property
    def M(self) -> int:
        return self.couplings.size

    @property
    def T(self) -> int:
        return self.template.size

    @property
    def s2(self) -> float:
        return (self.sigma_n / self.sigma_alpha) ** 2

    @property
    def signal_energy(self) -> float:
        return float(np.sum(self.couplings**2) * np.sum(self.template**2))


def default_problem(epoch_len: int = EPOCH_LEN, **kw) -> DetectionProblem:
    return DetectionProblem(default_template(epoch_len), np.array(DEFAULT_COUPLINGS), **kw)


def _check_window(x, p: DetectionProblem) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (p.M, p.T):
        raise ValueError(f"window shape {x.shape} does not match ({p.M}, {p.T})")
    return x


def detection_statistics(x, p: DetectionProblem):
    """Return ``(D, E, F, S2)`` for one ``M x T`` window."""
    x = _check_window(x, p)
    S2 = p.s2
    D = S2 + p.signal_energy
    E = S2 * p.alpha_hat + float(p.couplings @ x @ p.template)
    F = S2 * p.alpha_hat**2 + float(np.sum(x * x))
    return D, E, F, S2


def _pm_from(E, D, p: DetectionProblem):
    E = np.asarray(E, dtype=float)
    return 0.5 * (E**2 / (D * p.sigma_n**2) - (p.alpha_hat / p.sigma_alpha) ** 2
                  + math.log(p.s2 / D))


def _plus_from(E, D, p: DetectionProblem):
    # log(1 + erf(z / sqrt 2)) = log 2 + log_ndtr(z); the log 2 cancels
    core = _pm_from(E, D, p)
    return (core + special.log_ndtr(np.asarray(E) / (math.sqrt(D) * p.sigma_n))
            - special.log_ndtr(p.alpha_hat / p.sigma_alpha))


def log_or_pm(x, p: DetectionProblem) -> float:
    """Log odds for an amplitude prior on the whole real line."""
    if p.alpha_range != "full":
        raise ValueError("log_or_pm needs alpha_range='full'")
    D, E, _, _ = detection_statistics(x, p)
    return float(_pm_from(E, D, p))


def log_or_plus(x, p: DetectionProblem) -> float:
    """Log odds for an amplitude prior truncated to ``alpha > 0``."""
    if p.alpha_range != "positive":
        raise ValueError("log_or_plus needs alpha_range='positive'")
    D, E, _, _ = detection_statistics(x, p)
    return float(_plus_from(E, D, p))


def correlation_stat(x, p: DetectionProblem) -> float:
    """Cross-correlation ``sum_m sum_t C_m x_m(t) s(t)``."""
    x = _check_window(x, p)
    return float(p.couplings @ x @ p.template)


# ---------------------------------------------------------------------------
# Synthetic epochs


def ar2_stationary_std(coeffs=AR2_COEFFS) -> float:
    a1, a2 = coeffs
    var = (1.0 - a2) / ((1.0 + a2) * ((1.0 - a2) ** 2 - a1**2))
    if not var > 0:
        raise ValueError("AR(2) coefficients are not stationary")
    return math.sqrt(var)


def synth_noise(rng, n_epochs: int, M: int, T: int, noise_model: str = "ar2",
                ar_coeffs=AR2_COEFFS, gains=NOISE_GAINS) -> np.ndarray:
    """Unit-variance (before channel gains) noise of shape ``(n_epochs, M, T)``."""
    g = np.resize(np.asarray(gains, dtype=float), M)
    if noise_model == "white":
        noise = rng.standard_normal((n_epochs, M, T))
    elif noise_model == "ar2":
        e = rng.standard_normal((n_epochs, M, T + BURN_IN))
        a1, a2 = ar_coeffs
        noise = signal.lfilter([1.0], [1.0, -a1, -a2], e, axis=-1)[..., BURN_IN:]
        noise /= ar2_stationary_std(ar_coeffs)
    else:
        raise ValueError(f"unknown noise model {noise_model!r}")
    return noise * g[None, :, None]


def amplitude_unit(snr_db: float, p: DetectionProblem, gains=NOISE_GAINS) -> float:
    """Amplitude whose template RMS matches the nominal noise RMS at ``snr_db``."""
    g = np.resize(np.asarray(gains, dtype=float), p.M)
    noise_rms = p.sigma_n * math.sqrt(float(np.mean(g**2)))
    sig_rms = math.sqrt(float(np.mean(np.outer(p.couplings, p.template) ** 2)))
    return 10.0 ** (snr_db / 20.0) * noise_rms / sig_rms


def problem_for_snr(snr_db: float, p: DetectionProblem | None = None, alpha_hat: float = 1.0,
                    sigma_alpha: float = 0.5) -> DetectionProblem:
    """Prior hyperparameters expressed in units of the generated amplitude."""
    p = p or default_problem()
    u = amplitude_unit(snr_db, p)
    return replace(p, alpha_hat=alpha_hat * u, sigma_alpha=sigma_alpha * u)


def synth_dataset(rng, snr_db: float, n_epochs: int = 300, n_targets: int = 30,
                  p: DetectionProblem | None = None, noise_model: str = "ar2",
                  epoch_len: int = EPOCH_LEN, ar_coeffs=AR2_COEFFS, return_info: bool = False):
    """Noise epochs with ``n_targets`` of them hosting the template at a random latency.

    Each inserted amplitude is set from the realized noise RMS on the
    template's support so that ``20 log10(A_signal / A_noise) = snr_db``.
    """
    p = p or default_problem(epoch_len)
    if p.T > epoch_len:
        raise ValueError("template longer than epoch")
    if not 0 <= n_targets <= n_epochs:
        raise ValueError("need 0 <= n_targets <= n_epochs")
    if not math.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    gen = rng.generator if isinstance(rng, RngHandle) else rng
    noise = synth_noise(gen, n_epochs, p.M, epoch_len, noise_model, ar_coeffs)
    epochs = noise.copy()
    labels = np.zeros(n_epochs, dtype=int)
    targets = np.sort(gen.choice(n_epochs, n_targets, replace=False)) if n_targets else \
        np.zeros(0, dtype=int)
    labels[targets] = 1
    shape = np.outer(p.couplings, p.template)
    sig_rms = math.sqrt(float(np.mean(shape**2)))
    latencies, alphas = [], []
    for j in targets:
        lat = int(gen.integers(0, epoch_len - p.T + 1))
        seg = noise[j, :, lat:lat + p.T]
        alpha = 10.0 ** (snr_db / 20.0) * math.sqrt(float(np.mean(seg**2))) / sig_rms
        epochs[j, :, lat:lat + p.T] += alpha * shape
        latencies.append(lat)
        alphas.append(alpha)
    if return_info:
        info = {"noise": noise, "targets": targets, "latencies": np.array(latencies, dtype=int),
                "alphas": np.array(alphas)}
        return epochs, labels, info
    return epochs, labels


# ---------------------------------------------------------------------------
# Scoring and ROC


@dataclass(frozen=True)
class EpochScores:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float).ravel()
        lab = np.asarray(self.labels).ravel().astype(int)
        if s.shape != lab.shape:
            raise ValueError("scores and labels differ in length")
        if not np.all(np.isin(lab, (0, 1))):
            raise ValueError("labels must be 0 or 1")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", lab)


@dataclass(frozen=True)
class RocCurve:
    one_minus_specificity: np.ndarray
    sensitivity: np.ndarray
    thresholds: np.ndarray
    auc: float


def window_correlations(epochs, p: DetectionProblem) -> np.ndarray:
    """Correlation at every latency: shape ``(n_epochs, T_epoch - T + 1)``."""
    epochs = np.asarray(epochs, dtype=float)
    if epochs.ndim != 3 or epochs.shape[1] != p.M:
        raise ValueError("epochs must have shape (n_epochs, M, T_epoch)")
    y = np.einsum("emt,m->et", epochs, p.couplings)
    return sliding_window_view(y, p.T, axis=-1) @ p.template


def score_epochs(epochs, labels, p: DetectionProblem, aggregate: str = "max") -> dict:
    """Per-epoch scores for the three detectors.

    Window scores are taken at every latency.  ``aggregate="max"`` keeps the
    largest window score; ``"marginal"`` averages the odds over latencies in
    the log domain.  The correlation baseline always uses the max.
    """
    r = window_correlations(epochs, p)
    D = p.s2 + p.signal_energy
    E = p.s2 * p.alpha_hat + r
    plus, pm = _plus_from(E, D, p), _pm_from(E, D, p)
    if aggregate == "max":
        agg = lambda z: z.max(axis=1)
    elif aggregate == "marginal":
        agg = lambda z: special.logsumexp(z, axis=1) - math.log(z.shape[1])
    else:
        raise ValueError(f"unknown aggregate {aggregate!r}")
    return {"correlation": EpochScores(r.max(axis=1), labels),
            "log_or_plus": EpochScores(agg(plus), labels),
            "log_or_pm": EpochScores(agg(pm), labels)}


def roc_curve(scores: EpochScores) -> RocCurve:
    """Operating points at each distinct score and the Mann-Whitney AUC."""
    s, lab = scores.scores, scores.labels
    n_pos = int(lab.sum())
    n_neg = lab.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present")
    thresholds = np.unique(s)[::-1]
    order = np.argsort(-s, kind="stable")
    s_sorted, l_sorted = s[order], lab[order]
    # counts at or above each distinct threshold
    ends = np.searchsorted(-s_sorted, -thresholds, side="right")
    tp = np.cumsum(l_sorted)[ends - 1]
    fp = ends - tp
    fpr = np.concatenate([[0.0], fp / n_neg])
    tpr = np.concatenate([[0.0], tp / n_pos])
    ranks = stats.rankdata(s)
    auc = (float(ranks[lab == 1].sum()) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    return RocCurve(fpr, tpr, np.concatenate([[math.inf], thresholds]), float(auc))


def auc_table_row(snr_db: float, rep: int, seed: int, stream: int, n_epochs: int = 300,
                  n_targets: int = 30, noise_model: str = "ar2", aggregate: str = "max") -> dict:
    p = problem_for_snr(snr_db)
    epochs, labels = synth_dataset(RngHandle(seed, stream), snr_db, n_epochs, n_targets, p,
                                   noise_model)
    sc = score_epochs(epochs, labels, p, aggregate)
    return {"snr_db": float(snr_db), "rep": int(rep),
            "auc_corr": roc_curve(sc["correlation"]).auc,
            "auc_or_plus": roc_curve(sc["log_or_plus"]).auc,
            "auc_or_pm": roc_curve(sc["log_or_pm"]).auc}


def _row_job(args):
    return auc_table_row(*args)


def snr_sweep(snrs=DEFAULT_SNRS, reps: int = 1, seed: int = 0, n_epochs: int = 300,
              n_targets: int = 30, noise_model: str = "ar2", aggregate: str = "max",
              workers: int = 1) -> list:
    """AUC rows ``(snr_db, rep, auc_corr, auc_or_plus, auc_or_pm)``.

    Dataset ``(rep, i)`` uses stream ``1000 * rep + i`` of ``seed``, so rows do
    not depend on the worker count; they are returned sorted by SNR then rep.
    """
    jobs = [(float(snr), rep, seed, 1000 * rep + i, n_epochs, n_targets, noise_model, aggregate)
            for i, snr in enumerate(snrs) for rep in range(reps)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_row_job, jobs))
    else:
        rows = [_row_job(j) for j in jobs]
    return rows
