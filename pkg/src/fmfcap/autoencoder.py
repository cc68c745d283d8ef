"""End-to-end pre-coder / detector training through the fading channel.

Pipeline per batch::

    x -> precode -> MZM(P = softmax(theta) P_tot) -> H (fresh per sample) + w
      -> standardise -> detector(s) -> cross-entropy

Pre-coders: ``Prec1`` (fixed scaling ``v = v_pi x / (M-1)``), ``Prec2``
(linear ``v = A x~``) and ``Prec3`` (MLP on ``x~``), with ``x~ = x / (M-1)``.
Detectors: ``Det1`` (one classifier per mode, cost = max_i CE_i), ``Det2``
(one joint classifier over ``M^N`` labels) and ``GaussianAux`` (Det1 is used
to train the transmitter, then a per-mode Gaussian likelihood is fitted and
used for the reported rate).

Every gradient is analytic; the channel matrix and noise are constants of
the sample.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ConfigError, LinkConfig, draw_channels
from .nn import AdamState, as_float, MlpModel, adam_step, log_softmax, mlp_backward, mlp_forward, softmax

log = logging.getLogger(__name__)

PRECODERS = ("Prec1", "Prec2", "Prec3")
DETECTORS = ("Det1", "Det2", "GaussianAux")
LN2 = np.log(2.0)


class TrainingDivergedError(RuntimeError):
    def __init__(self, msg, snapshot):
        super().__init__(msg)
        self.snapshot = snapshot


class FitError(RuntimeError):
    pass


def topology(kind: str, m: int, n_modes: int = 2) -> tuple:
    """Layer widths; reproduces the published 8-PAM / 16-PAM table for N = 2."""
    if kind == "Prec3":
        return (n_modes, 16, 16, n_modes)
    if kind == "Det1":
        return (1, m * m, m * m, m)
    if kind == "Det2":
        k = m**n_modes
        return (n_modes, 2 * k, 2 * k, k)
    raise ConfigError(f"no topology for {kind!r}")


@dataclass
class TrainConfig:
    precoder_kind: str = "Prec1"
    detector_kind: str = "GaussianAux"
    batch_size: int = 200
    n_train_symbols: int = 1_000_000
    n_test_symbols: int = 100_000
    n_fit_symbols: int = 100_000
    learn_power: bool = True
    lr: float = 1e-3
    seed: int = 0
    warm_start_steps: int = 2000  # Prec3: fit v = v_pi x~ first; 0 keeps the raw init

    def __post_init__(self):
        if self.precoder_kind not in PRECODERS:
            raise ConfigError(f"unknown pre-coder {self.precoder_kind!r}")
        if self.detector_kind not in DETECTORS:
            raise ConfigError(f"unknown detector {self.detector_kind!r}")
        for name in ("batch_size", "n_train_symbols", "n_test_symbols", "n_fit_symbols"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def n_steps(self) -> int:
        return max(1, self.n_train_symbols // self.batch_size)


@dataclass
class GaussianReceiverParams:
    mu: np.ndarray  # (N, M) conditional means
    sigma_hat: np.ndarray  # (N,) pooled variance
    prior: np.ndarray  # (N, M)

    def __post_init__(self):
        if np.any(self.sigma_hat <= 0):
            raise FitError("variance estimate must be positive")
        if np.any(np.abs(self.prior.sum(axis=1) - 1) > 1e-9):
            raise FitError("priors must lie on the simplex")

    def log_posterior(self, y):
        """``(n, N, M)`` log q(x_i = m | y_i); the exponent divides by the variance."""
        y = np.asarray(y, dtype=float)
        ll = -0.5 * (y[:, :, None] - self.mu[None]) ** 2 / self.sigma_hat[None, :, None]
        return log_softmax(ll + np.log(self.prior)[None], axis=-1)


@dataclass
class RateReport:
    per_mode_rate: np.ndarray
    reported_rate: float
    detector: str
    precoder: str
    settings: dict = field(default_factory=dict)


@dataclass
class AeModels:
    """Everything a trained transmitter/receiver pair needs at test time."""

    precoder_kind: str
    detector_kind: str
    m: int
    n_modes: int
    v_pi: float
    p_tot: float
    power_logits: np.ndarray
    matrix: np.ndarray | None = None  # Prec2
    net: MlpModel | None = None  # Prec3
    detectors: list = field(default_factory=list)
    y_mean: np.ndarray | None = None
    y_scale: np.ndarray | None = None
    gaussian: GaussianReceiverParams | None = None

    @property
    def powers(self):
        return power_allocation_forward(self.power_logits, self.p_tot)

    def trainable(self, learn_power=True) -> list:
        out = []
        if self.precoder_kind == "Prec2":
            out.append(self.matrix)
        elif self.precoder_kind == "Prec3":
            out += self.net.params()
        if learn_power:
            out.append(self.power_logits)
        for det in self.detectors:
            out += det.params()
        return out


# ------------------------------------------------------------------ pieces


def precode(kind: str, model, x, m: int, v_pi: float = 1.0):
    """Symbol indices ``(…, N)`` to drive voltages; output is not clipped."""
    xt = np.asarray(x, dtype=float) / (m - 1)
    if kind == "Prec1":
        if model is not None:
            raise ConfigError("Prec1 takes no model")
        return v_pi * xt
    if kind == "Prec2":
        a = np.asarray(model, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[1] != xt.shape[-1]:
            raise ConfigError("Prec2 needs an N x N matrix")
        return xt @ a.T
    if kind == "Prec3":
        if not isinstance(model, MlpModel):
            raise ConfigError("Prec3 needs an MlpModel")
        return mlp_forward(model, xt)[0]
    raise ConfigError(f"unknown pre-coder {kind!r}")


def power_allocation_forward(theta, p_tot):
    """``P = softmax(theta) * P_tot``."""
    return softmax(as_float(theta)) * p_tot


def power_allocation_backward(theta, p_tot, grad_p):
    p = power_allocation_forward(theta, p_tot)
    return p * (grad_p - (p * grad_p).sum() / p_tot)


def loss_det1(ce):
    """``max_i CE_i`` and the one-hot routing of its subgradient (ties -> lowest index)."""
    ce = as_float(ce)
    i = int(np.argmax(ce))
    route = np.zeros_like(ce)
    route[i] = 1.0
    return ce[i], route


def loss_det2(probs_or_logits, labels, from_logits=False):
    """Mean categorical cross-entropy in nats."""
    z = as_float(probs_or_logits)
    labels = np.asarray(labels)
    if np.any(labels < 0) or np.any(labels >= z.shape[-1]):
        raise ValueError("label out of range")
    if from_logits:
        lp = log_softmax(z)
    else:
        with np.errstate(divide="ignore"):
            lp = np.log(z)
    return -lp[np.arange(labels.size), labels].mean()


def joint_label(x, m):
    """Mixed-radix label, first mode most significant."""
    x = np.asarray(x)
    lab = np.zeros(x.shape[0], dtype=np.int64)
    for i in range(x.shape[1]):
        lab = lab * m + x[:, i]
    return lab


# ------------------------------------------------------------- end to end


def _transmit(models: AeModels, x):
    xt = x / (models.m - 1)
    cache = {"xt": xt}
    if models.precoder_kind == "Prec1":
        v = models.v_pi * xt
    elif models.precoder_kind == "Prec2":
        v = xt @ models.matrix.T
    else:
        v, cache["net"] = mlp_forward(models.net, xt)
    p = models.powers
    phase = 0.5 * np.pi * v / models.v_pi
    c2 = np.cos(phase) ** 2
    cache.update(v=v, p=p, phase=phase, c2=c2)
    return p * c2, cache


def _standardise(models, y):
    return (y - models.y_mean) / models.y_scale


def forward_loss(models: AeModels, x, h, noise, sigma_w, need_grad=True, learn_power=True):
    """Loss (nats) for a batch with the channel and noise held fixed.

    Returns ``(loss, grads, aux)`` with ``grads`` aligned to
    ``models.trainable(learn_power)`` (``None`` when ``need_grad`` is false).
    """
    x = np.asarray(x)
    B, N = x.shape
    s, tx = _transmit(models, x)
    y = np.einsum("bij,bj->bi", h, s) + sigma_w * noise
    yn = _standardise(models, y)
    det_grads = []
    if models.detector_kind == "Det2":
        out, dc = mlp_forward(models.detectors[0], yn)
        lab = joint_label(x, models.m)
        logits = dc["pre"][-1]
        loss = loss_det2(logits, lab, from_logits=True)
        aux = {"ce": np.array([loss])}
        if need_grad:
            g = out.copy()
            g[np.arange(B), lab] -= 1.0
            g /= B
            pg, dyn = mlp_backward(models.detectors[0], dc, g, wrt="logits")
            det_grads += pg
    else:
        ces, caches, outs = [], [], []
        for i, det in enumerate(models.detectors):
            out, dc = mlp_forward(det, yn[:, i:i + 1])
            lp = log_softmax(dc["pre"][-1])
            ces.append(-lp[np.arange(B), x[:, i]].mean())
            caches.append(dc)
            outs.append(out)
        loss, route = loss_det1(ces)
        aux = {"ce": np.array(ces)}
        if need_grad:
            dyn = np.zeros_like(yn)
            for i, det in enumerate(models.detectors):
                if route[i] == 0.0:
                    det_grads += [np.zeros_like(p) for p in det.params()]
                    continue
                g = outs[i].copy()
                g[np.arange(B), x[:, i]] -= 1.0
                g /= B
                pg, dyi = mlp_backward(det, caches[i], g, wrt="logits")
                det_grads += pg
                dyn[:, i:i + 1] = dyi
    if not need_grad:
        return loss, None, aux
    dy = dyn / models.y_scale
    ds = np.einsum("bji,bj->bi", h, dy)
    grads = []
    dv = -ds * tx["p"] * np.sin(2.0 * tx["phase"]) * (0.5 * np.pi / models.v_pi)
    if models.precoder_kind == "Prec2":
        grads.append(dv.T @ tx["xt"])
    elif models.precoder_kind == "Prec3":
        pg, _ = mlp_backward(models.net, tx["net"], dv)
        grads += pg
    if learn_power:
        dp = (ds * tx["c2"]).sum(axis=0)
        grads.append(power_allocation_backward(models.power_logits, models.p_tot, dp))
    return loss, grads + det_grads, aux


def warm_start(net: MlpModel, m: int, n_modes: int, v_pi: float, steps: int, lr: float = 1e-3):
    """Regress the network onto the fixed scaling pre-coder over the full symbol grid."""
    grid = np.stack(np.meshgrid(*([np.arange(m)] * n_modes), indexing="ij"), axis=-1).reshape(-1, n_modes)
    xt = grid / (m - 1)
    target = v_pi * xt
    state = AdamState(net.params(), lr=lr)
    for _ in range(steps):
        v, cache = mlp_forward(net, xt)
        grads, _ = mlp_backward(net, cache, 2.0 * (v - target) / len(xt))
        adam_step(state, grads)
    return float(((mlp_forward(net, xt)[0] - target) ** 2).mean())


def cast_models(models: AeModels, dtype) -> AeModels:
    """Deep copy with every trainable tensor and the standardisation in ``dtype``."""
    out = replace(
        models,
        power_logits=np.array(models.power_logits, dtype=dtype),
        matrix=None if models.matrix is None else np.array(models.matrix, dtype=dtype),
        net=None if models.net is None else models.net.copy(dtype),
        detectors=[d.copy(dtype) for d in models.detectors],
        y_mean=None if models.y_mean is None else np.array(models.y_mean, dtype=dtype),
        y_scale=None if models.y_scale is None else np.array(models.y_scale, dtype=dtype),
    )
    return out


def init_models(link: LinkConfig, cfg: TrainConfig, rng) -> AeModels:
    m, n = link.mod_order, link.n_modes
    models = AeModels(cfg.precoder_kind, cfg.detector_kind, m, n, link.v_pi, link.p_tot,
                      np.zeros(n))
    if cfg.precoder_kind == "Prec2":
        models.matrix = link.v_pi * np.eye(n)
    elif cfg.precoder_kind == "Prec3":
        models.net = MlpModel.init(topology("Prec3", m, n), rng)
        if cfg.warm_start_steps:
            warm_start(models.net, m, n, link.v_pi, cfg.warm_start_steps, cfg.lr)
    if cfg.detector_kind == "Det2":
        models.detectors = [MlpModel.init(topology("Det2", m, n), rng, head="softmax")]
    else:
        models.detectors = [MlpModel.init(topology("Det1", m, n), rng, head="softmax") for _ in range(n)]
    return models


def _sample(link, rng, n, m):
    x = rng.integers(0, m, size=(n, link.n_modes))
    h = draw_channels(link, rng, n)
    w = rng.standard_normal((n, link.n_modes))
    return x, h, w


def received(models: AeModels, link: LinkConfig, x, h, w):
    s, _ = _transmit(models, x)
    return np.einsum("bij,bj->bi", h, s) + link.sigma_w * w


def _streams(seed):
    ss = np.random.SeedSequence(seed)
    init, train, calib, fit, test = ss.spawn(5)
    return {k: np.random.default_rng(s) for k, s in
            zip(("init", "train", "calib", "fit", "test"), (init, train, calib, fit, test))}


def train(link: LinkConfig, cfg: TrainConfig, log_every: int = 0):
    """Train the configured pair; returns ``(models, report, loss_history)``."""
    rngs = _streams(cfg.seed)
    models = init_models(link, cfg, rngs["init"])
    # fixed input standardisation from the initial transmitter
    xc, hc, wc = _sample(link, rngs["calib"], 20 * cfg.batch_size, link.mod_order)
    yc = received(models, link, xc, hc, wc)
    models.y_mean = yc.mean(axis=0)
    models.y_scale = yc.std(axis=0) + 1e-12
    state = AdamState(models.trainable(cfg.learn_power), lr=cfg.lr)
    history = np.empty(cfg.n_steps)
    for step in range(cfg.n_steps):
        x, h, w = _sample(link, rngs["train"], cfg.batch_size, link.mod_order)
        loss, grads, _ = forward_loss(models, x, h, w, link.sigma_w, learn_power=cfg.learn_power)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingDivergedError(
                f"non-finite loss at step {step}",
                {"step": step, "loss": loss, "params": [p.copy() for p in state.params]},
            )
        adam_step(state, grads)
        history[step] = loss
        if log_every and step % log_every == 0:
            log.info("step %d loss %.4f P=%s", step, loss, models.powers)
    if cfg.detector_kind == "GaussianAux":
        models.gaussian = fit_gaussian_receiver(models, link, cfg.n_fit_symbols, rngs["fit"])
    report = evaluate_rate(models, link, cfg.n_test_symbols, rngs["test"])
    report.settings.update(seed=cfg.seed, snr_db=link.snr_db, m=link.mod_order,
                           n_train=cfg.n_train_symbols, learn_power=cfg.learn_power)
    return models, report, history


def fit_gaussian_receiver(models: AeModels, link: LinkConfig, n_fit_symbols: int, rng) -> GaussianReceiverParams:
    """Per-mode class means, pooled variance and empirical priors from fresh data."""
    m = link.mod_order
    if n_fit_symbols < 100 * m:
        raise FitError(f"need at least {100 * m} fitting symbols")
    x, h, w = _sample(link, rng, n_fit_symbols, m)
    y = received(models, link, x, h, w)
    N = link.n_modes
    mu = np.empty((N, m))
    prior = np.empty((N, m))
    var = np.empty(N)
    for i in range(N):
        counts = np.bincount(x[:, i], minlength=m)
        if np.any(counts == 0):
            raise FitError(f"mode {i}: empty symbol class")
        mu[i] = np.bincount(x[:, i], weights=y[:, i], minlength=m) / counts
        resid = y[:, i] - mu[i][x[:, i]]
        var[i] = resid @ resid / x.shape[0]
        prior[i] = counts / counts.sum()
    return GaussianReceiverParams(mu, var, prior)


def evaluate_rate(models: AeModels, link: LinkConfig, n_test_symbols: int, rng, chunk: int = 20_000) -> RateReport:
    """Achievable rate ``log2 M - CE`` on fresh test symbols (clamped at 0)."""
    m, N = link.mod_order, link.n_modes
    ce_modes = np.zeros(N)
    ce_joint = 0.0
    done = 0
    while done < n_test_symbols:
        n = min(chunk, n_test_symbols - done)
        x, h, w = _sample(link, rng, n, m)
        y = received(models, link, x, h, w)
        if models.detector_kind == "GaussianAux":
            if models.gaussian is None:
                raise FitError("Gaussian receiver has not been fitted")
            lp = models.gaussian.log_posterior(y)
            for i in range(N):
                ce_modes[i] -= lp[np.arange(n), i, x[:, i]].sum()
        elif models.detector_kind == "Det1":
            yn = _standardise(models, y)
            for i, det in enumerate(models.detectors):
                _, dc = mlp_forward(det, yn[:, i:i + 1])
                lp = log_softmax(dc["pre"][-1])
                ce_modes[i] -= lp[np.arange(n), x[:, i]].sum()
        else:
            _, dc = mlp_forward(models.detectors[0], _standardise(models, y))
            lp = log_softmax(dc["pre"][-1])
            ce_joint -= lp[np.arange(n), joint_label(x, m)].sum()
            pj = np.exp(lp).reshape((n,) + (m,) * N)
            for i in range(N):
                axes = tuple(a + 1 for a in range(N) if a != i)
                marg = pj.sum(axis=axes)
                with np.errstate(divide="ignore"):
                    ce_modes[i] -= np.log(marg[np.arange(n), x[:, i]]).sum()
        done += n
    log2m = np.log2(m)
    per_mode = np.maximum(log2m - ce_modes / n_test_symbols / LN2, 0.0)
    if models.detector_kind == "Det2":
        reported = max(N * log2m - ce_joint / n_test_symbols / LN2, 0.0)
    else:
        reported = N * float(per_mode.min())
    return RateReport(per_mode, float(reported), models.detector_kind, models.precoder_kind,
                      {"n_test": n_test_symbols})


def with_detector(cfg: TrainConfig, kind: str) -> TrainConfig:
    return replace(cfg, detector_kind=kind)
