"""Neural topic models over bags of words or document embeddings.

Three variants share one architecture and differ only in input / loss:

* ``prodlda``   - bag-of-words input, ELBO loss
* ``ctm``       - embedding input, ELBO loss (reconstruction target is
  still the pivot-language bag of words, which is what pins topics to the
  pivot vocabulary and enables zero-shot transfer)
* ``tcctm``     - ctm plus a linear classification head on theta; the loss
  adds ``lam * NLL(head(theta), label)`` with labels bootstrapped from LDA

The inference network is dense(input, 100) -> softplus -> dense(100, 100)
-> softplus -> dropout -> {mu, log-var} heads with batch normalization;
theta = softmax(z) with z reparameterized in training and z = mu at eval
time, so evaluation is deterministic. The prior is the logistic-normal
Laplace approximation of a symmetric Dirichlet. Backpropagation is
analytic and verified against central finite differences in the tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import BowVector, Document, Vocab
from .errors import ModelStateError, PolytopicError
from .nnkernel import (
    DTYPES,
    BatchNorm,
    Dense,
    Dropout,
    Param,
    RngStream,
    adam_step,
    log_softmax,
    mix_seed,
    sample_gaussian,
    softmax,
    softmax_backward,
)

LOG_VAR_CLAMP = 10.0
_SIMPLEX_TOL = 1e-6


@dataclass(frozen=True)
class PriorParams:
    """Logistic-normal prior: componentwise mean and variance."""

    mu0: np.ndarray
    var0: np.ndarray

    def __post_init__(self):
        if (self.var0 <= 0).any():
            raise PolytopicError("prior variances must be positive")


def laplace_prior(alpha: float, tau: int) -> PriorParams:
    """Laplace approximation of a symmetric Dirichlet(alpha) in softmax
    basis: mu0 = 0 and var0 = (1/alpha)(1 - 2/tau) + tau/(alpha tau^2)."""
    if alpha <= 0:
        raise PolytopicError(f"alpha must be positive, got {alpha}")
    if tau < 2:
        raise PolytopicError(f"need tau >= 2, got {tau}")
    mu0 = np.zeros(tau)
    var0 = np.full(tau, (1.0 / alpha) * (1.0 - 2.0 / tau) + tau / (alpha * tau * tau))
    return PriorParams(mu0=mu0, var0=var0)


def gauss_kl(mu: np.ndarray, log_var: np.ndarray, prior: PriorParams) -> np.ndarray:
    """KL(q(mu, exp(log_var)) || N(mu0, var0)) per row, closed form."""
    var0 = prior.var0
    diff = prior.mu0 - mu
    return 0.5 * np.sum(
        np.exp(log_var) / var0 + diff * diff / var0 - 1.0
        + np.log(var0) - log_var, axis=-1)


def elbo_loss(bow, recon: np.ndarray, mu: np.ndarray, log_var: np.ndarray,
              prior: PriorParams) -> float:
    """Negated ELBO for one document: -sum_w count_w log recon_w + KL."""
    if isinstance(bow, BowVector):
        rec = -sum(c * np.log(recon[w]) for w, c in bow.counts.items())
    else:
        counts = np.asarray(bow)
        nz = counts > 0
        rec = -float(np.sum(counts[nz] * np.log(recon[nz])))
    return float(rec + gauss_kl(mu, log_var, prior))


def tcctm_loss(elbo: float, logits: np.ndarray, label: int, lam: float) -> float:
    """elbo + lam * NLL(softmax(logits), label). With lam = 0 this returns
    ``elbo`` unchanged (bit-identical)."""
    if lam < 0:
        raise PolytopicError(f"lambda must be >= 0, got {lam}")
    if not 0 <= label < logits.shape[-1]:
        raise PolytopicError(f"label {label} out of range [0, {logits.shape[-1]})")
    if lam == 0.0:
        return elbo
    return float(elbo - lam * log_softmax(logits)[label])


def _check_simplex(arr: np.ndarray, what: str) -> None:
    if (arr < 0).any() or np.abs(arr.sum(axis=-1) - 1.0).max() > _SIMPLEX_TOL:
        raise PolytopicError(f"{what} is not a probability simplex point")


@dataclass(frozen=True)
class NtmConfig:
    kind: str  # prodlda | ctm | tcctm
    tau: int
    vocab_size: int
    input_dim: Optional[int] = None  # embedding width; ignored for prodlda
    hidden: tuple[int, int] = (100, 100)
    dropout: float = 0.2
    tau_labels: Optional[int] = None  # tcctm head width; defaults to tau
    prior_alpha: Optional[float] = None  # defaults to 1/tau
    batchnorm: bool = True
    dtype: str = "f64"

    def __post_init__(self):
        if self.kind not in ("prodlda", "ctm", "tcctm"):
            raise PolytopicError(f"unknown model kind {self.kind!r}")
        if self.kind != "prodlda" and self.input_dim is None:
            raise PolytopicError(f"{self.kind} needs input_dim (the embedding width)")
        if self.dtype not in DTYPES:
            raise PolytopicError(f"dtype must be one of {sorted(DTYPES)}")

    @property
    def input_mode(self) -> str:
        return "bow" if self.kind == "prodlda" else "embedding"

    @property
    def in_width(self) -> int:
        return self.vocab_size if self.kind == "prodlda" else self.input_dim

    @property
    def head_width(self) -> int:
        return self.tau_labels if self.tau_labels is not None else self.tau


class NtmModel:
    """Encoder, decoder and optional classification head, plus the prior."""

    def __init__(self, config: NtmConfig, seed: int = 0, vocab: Optional[Vocab] = None,
                 prior: Optional[PriorParams] = None):
        self.config = config
        self.vocab = vocab
        self.seed = seed
        dtype = DTYPES[config.dtype]
        rng = RngStream(mix_seed(seed, 0xA111))
        h1, h2 = config.hidden
        self.enc1 = Dense(config.in_width, h1, rng, activation="softplus", dtype=dtype)
        self.enc2 = Dense(h1, h2, rng, activation="softplus", dtype=dtype)
        self.drop = Dropout(config.dropout)
        self.mu_head = Dense(h2, config.tau, rng, dtype=dtype)
        self.lv_head = Dense(h2, config.tau, rng, dtype=dtype)
        bn = config.batchnorm
        self.bn_mu = BatchNorm(config.tau, dtype=dtype) if bn else None
        self.bn_lv = BatchNorm(config.tau, dtype=dtype) if bn else None
        self.dec = Dense(config.tau, config.vocab_size, rng, bias=False, dtype=dtype)
        self.bn_dec = BatchNorm(config.vocab_size, dtype=dtype) if bn else None
        self.head = Dense(config.tau, config.head_width, rng, dtype=dtype) \
            if config.kind == "tcctm" else None
        if prior is None:
            alpha = config.prior_alpha if config.prior_alpha is not None else 1.0 / config.tau
            prior = laplace_prior(alpha, config.tau)
        self.prior = PriorParams(mu0=prior.mu0.astype(dtype),
                                 var0=prior.var0.astype(dtype))
        self._cache = None

    @property
    def dtype(self):
        return DTYPES[self.config.dtype]

    def params(self) -> list[Param]:
        layers = [self.enc1, self.enc2, self.mu_head, self.lv_head,
                  self.bn_mu, self.bn_lv, self.dec, self.bn_dec, self.head]
        out: list[Param] = []
        for layer in layers:
            if layer is not None:
                out.extend(layer.params())
        return out

    @property
    def beta(self) -> np.ndarray:
        """Topic-word weight matrix (tau, |V|)."""
        return self.dec.W.value

    # ----- forward pieces -------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=self.dtype))
        if x.shape[1] != self.config.in_width:
            raise ModelStateError(
                f"input width {x.shape[1]} does not match model width {self.config.in_width}")
        return x

    def encode(self, x: np.ndarray, rng: Optional[RngStream] = None,
               train: bool = False, update_stats: Optional[bool] = None):
        """Map inputs to (mu, log_var, z, theta) for a batch.

        Training mode samples z by reparameterization (``rng`` required);
        eval mode uses z = mu, so theta = softmax(mu) deterministically.
        """
        x = self._check_input(x)
        if update_stats is None:
            update_stats = train
        h = self.enc1.forward(x)
        h = self.enc2.forward(h)
        h = self.drop.forward(h, rng, train) if train else self.drop.forward(h, None, False)
        mu = self.mu_head.forward(h)
        lv = self.lv_head.forward(h)
        if self.bn_mu is not None:
            mu = self.bn_mu.forward(mu, train, update_stats)
            lv = self.bn_lv.forward(lv, train, update_stats)
        lv_raw = lv
        lv = np.clip(lv_raw, -LOG_VAR_CLAMP, LOG_VAR_CLAMP)
        if train:
            if rng is None:
                raise ModelStateError("training-mode encode needs an RngStream")
            z, eps = sample_gaussian(mu, lv, rng)
        else:
            z, eps = mu, None
        theta = softmax(z, axis=-1)
        _check_simplex(theta, "theta")
        self._cache = {"x": x, "mu": mu, "lv": lv, "lv_raw": lv_raw,
                       "z": z, "eps": eps, "theta": theta, "train": train}
        return mu, lv, z, theta

    def decode(self, theta: np.ndarray, train: bool = False,
               update_stats: Optional[bool] = None) -> np.ndarray:
        """Word distribution softmax(bn(theta @ beta)); rows sum to 1."""
        theta = np.atleast_2d(np.asarray(theta, dtype=self.dtype))
        if update_stats is None:
            update_stats = train
        u = self.dec.forward(theta)
        if self.bn_dec is not None:
            u = self.bn_dec.forward(u, train, update_stats)
        log_p = log_softmax(u, axis=-1)
        p = np.exp(log_p)
        _check_simplex(p, "decoder output")
        if self._cache is not None:
            self._cache["log_p"] = log_p
            self._cache["p"] = p
        return p

    def classify_logits(self, theta: np.ndarray) -> np.ndarray:
        if self.head is None:
            raise ModelStateError("model has no classification head (plain CTM/ProdLDA)")
        return self.head.forward(np.atleast_2d(theta))

    # ----- training loss --------------------------------------------------

    def loss_batch(self, x: np.ndarray, counts: np.ndarray,
                   labels: Optional[np.ndarray], lam: float, rng: RngStream,
                   update_stats: bool = True):
        """Mean training loss over a batch; returns (total, elbo, nll).

        Forward caches everything :meth:`backward_batch` needs.
        """
        mu, lv, z, theta = self.encode(x, rng=rng, train=True, update_stats=update_stats)
        self.decode(theta, train=True, update_stats=update_stats)
        cache = self._cache
        log_p = cache["log_p"]
        counts = np.asarray(counts, dtype=self.dtype)
        rec = -np.sum(counts * log_p, axis=1)
        kl = gauss_kl(mu, lv, self.prior)
        elbo_part = float(np.mean(rec + kl))
        nll_part = 0.0
        if self.head is not None and lam > 0.0:
            if labels is None:
                raise ModelStateError("tcctm training needs labels")
            logits = self.classify_logits(theta)
            logq = log_softmax(logits, axis=-1)
            nll = -logq[np.arange(len(labels)), labels]
            nll_part = float(np.mean(nll))
            cache["cls_probs"] = np.exp(logq)
            cache["labels"] = np.asarray(labels)
        cache["counts"] = counts
        cache["lam"] = lam
        return elbo_part + lam * nll_part, elbo_part, nll_part

    def backward_batch(self) -> None:
        """Analytic gradients for the last :meth:`loss_batch` call."""
        cache = self._cache
        if cache is None or "counts" not in cache:
            raise ModelStateError("backward_batch called before loss_batch")
        counts, p, theta = cache["counts"], cache["p"], cache["theta"]
        mu, lv, lv_raw, eps = cache["mu"], cache["lv"], cache["lv_raw"], cache["eps"]
        n = counts.shape[0]
        inv_n = 1.0 / n

        # reconstruction: d/du_bn of -sum(counts * log_softmax(u_bn))
        du = inv_n * (p * counts.sum(axis=1, keepdims=True) - counts)
        if self.bn_dec is not None:
            du = self.bn_dec.backward(du)
        dtheta = self.dec.backward(du)

        # classification head
        lam = cache["lam"]
        if self.head is not None and lam > 0.0:
            probs, labels = cache["cls_probs"], cache["labels"]
            dlogits = probs.copy()
            dlogits[np.arange(len(labels)), labels] -= 1.0
            dlogits *= lam * inv_n
            dtheta = dtheta + self.head.backward(dlogits)

        dz = softmax_backward(theta, dtheta)

        # KL closed-form terms act on mu and clamped log-var directly
        dmu = dz + inv_n * (mu - self.prior.mu0) / self.prior.var0
        dlv = 0.5 * inv_n * (np.exp(lv) / self.prior.var0 - 1.0)
        dlv = dlv + dz * eps * 0.5 * np.exp(0.5 * lv)
        dlv = dlv * (np.abs(lv_raw) < LOG_VAR_CLAMP)  # clamp blocks gradient outside

        if self.bn_mu is not None:
            dmu = self.bn_mu.backward(dmu)
            dlv = self.bn_lv.backward(dlv)
        dh = self.mu_head.backward(dmu) + self.lv_head.backward(dlv)
        dh = self.drop.backward(dh)
        dh = self.enc2.backward(dh)
        self.enc1.backward(dh)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    lr: float = 2e-3
    batch_size: int = 64
    lam: float = 1.0
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


class TrainingData:
    """Bags of words (always: they are the reconstruction target), plus
    optional embedding features and optional topic labels."""

    def __init__(self, bows: Sequence[BowVector], vocab: Vocab,
                 embeddings: Optional[np.ndarray] = None,
                 labels: Optional[np.ndarray] = None):
        self.vocab = vocab
        n = len(bows)
        indptr = np.zeros(n + 1, dtype=np.int64)
        cols, vals = [], []
        for i, bow in enumerate(bows):
            for pos in sorted(bow.counts):
                cols.append(pos)
                vals.append(bow.counts[pos])
            indptr[i + 1] = len(cols)
        self.indptr = indptr
        self.cols = np.array(cols, dtype=np.int64)
        self.vals = np.array(vals, dtype=np.float64)
        self.embeddings = None if embeddings is None else np.asarray(embeddings)
        if self.embeddings is not None and len(self.embeddings) != n:
            raise PolytopicError(f"{len(self.embeddings)} embedding rows for {n} documents")
        self.labels = None if labels is None else np.asarray(labels, dtype=np.int64)
        if self.labels is not None and len(self.labels) != n:
            raise PolytopicError(f"{len(self.labels)} labels for {n} documents")

    def __len__(self) -> int:
        return len(self.indptr) - 1

    def bow_dense(self, idx: np.ndarray, dtype=np.float64) -> np.ndarray:
        out = np.zeros((len(idx), len(self.vocab)), dtype=dtype)
        for row, i in enumerate(idx):
            lo, hi = self.indptr[i], self.indptr[i + 1]
            out[row, self.cols[lo:hi]] = self.vals[lo:hi]
        return out

    def features(self, idx: np.ndarray, mode: str, dtype=np.float64) -> np.ndarray:
        if mode == "bow":
            return self.bow_dense(idx, dtype=dtype)
        if self.embeddings is None:
            raise PolytopicError("embedding-input model but TrainingData has no embeddings")
        return self.embeddings[idx].astype(dtype, copy=False)


def make_training_data(docs: Sequence[Document], vocab: Vocab,
                       embeddings: Optional[np.ndarray] = None,
                       labels: Optional[np.ndarray] = None) -> TrainingData:
    from .corpus import vectorize_all

    return TrainingData(vectorize_all(docs, vocab), vocab,
                        embeddings=embeddings, labels=labels)


def train(data: TrainingData, config: NtmConfig,
          train_config: TrainConfig = TrainConfig(),
          log_path: Optional[str | Path] = None) -> NtmModel:
    """Train a model for ``train_config.epochs`` epochs of Adam.

    Deterministic given the seed: initialization, shuffling, dropout and
    reparameterization noise all come from counter-based streams keyed by
    (seed, epoch/batch index). Per-epoch mean losses are appended to
    ``log_path`` as JSON lines when given. Batches that would hold a
    single document are skipped (batch normalization needs >= 2 rows).
    """
    if len(data) == 0:
        raise PolytopicError("empty dataset")
    if config.kind == "tcctm" and data.labels is None:
        raise PolytopicError("tcctm requires topic labels; attach them to the TrainingData")
    tc = train_config
    model = NtmModel(config, seed=tc.seed, vocab=data.vocab)
    noise = RngStream(mix_seed(tc.seed, 1))
    dropout_rng = RngStream(mix_seed(tc.seed, 2))
    shuffle = RngStream(mix_seed(tc.seed, 3))
    n = len(data)
    batch = min(tc.batch_size, n)
    n_batches = (n + batch - 1) // batch
    params = model.params()
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(tc.epochs):
            order = shuffle.at(epoch).permutation(n)
            sums = np.zeros(3)
            seen = 0
            for b in range(n_batches):
                idx = order[b * batch:(b + 1) * batch]
                if len(idx) < 2:
                    continue
                step = epoch * n_batches + b
                x = data.features(idx, config.input_mode, dtype=model.dtype)
                counts = data.bow_dense(idx, dtype=model.dtype)
                labels = data.labels[idx] if data.labels is not None else None
                total, elbo_part, nll_part = model.loss_batch(
                    x, counts, labels, tc.lam, rng=_BatchRng(noise, dropout_rng, step))
                model.backward_batch()
                adam_step(params, tc.lr, tc.adam_beta1, tc.adam_beta2, tc.adam_eps)
                sums += np.array([total, elbo_part, nll_part]) * len(idx)
                seen += len(idx)
            if log_fh:
                mean = sums / max(seen, 1)
                log_fh.write(json.dumps({"epoch": epoch, "mean_loss": mean[0],
                                         "elbo_part": mean[1], "nll_part": mean[2]}) + "\n")
    finally:
        if log_fh:
            log_fh.close()
    return model


class _BatchRng:
    """RngStream facade that addresses noise draws by global batch index.

    The reparameterization draw and the dropout mask for batch ``step``
    are always the same values, however many times the batch is replayed.
    """

    def __init__(self, noise: RngStream, dropout_rng: RngStream, step: int):
        # 16 counter slots of headroom per batch per stream
        self._noise = noise.at(step * 16)
        self._dropout = dropout_rng.at(step * 16)

    def normal(self, shape, dtype=np.float64):
        return self._noise.normal(shape, dtype)

    def uniform(self, shape, dtype=np.float64):
        return self._dropout.uniform(shape, dtype)


def infer_theta(model: NtmModel, features: np.ndarray) -> np.ndarray:
    """Eval-mode theta = softmax(mu); deterministic, no sampling.

    Accepts a single feature vector (returns shape (tau,)) or a matrix
    (returns (n, tau)).
    """
    single = np.asarray(features).ndim == 1
    _, _, _, theta = model.encode(features, train=False)
    return theta[0] if single else theta


def classify_topic(model: NtmModel, features: np.ndarray) -> np.ndarray:
    """Predicted label = argmax of the classification head over theta."""
    single = np.asarray(features).ndim == 1
    theta = infer_theta(model, np.atleast_2d(features))
    logits = model.classify_logits(theta)
    labels = np.argmax(logits, axis=-1)
    return int(labels[0]) if single else labels


def topic_word_distributions(model: NtmModel) -> np.ndarray:
    """Row k = the word distribution the decoder assigns to a pure topic k
    (decode of the one-hot theta, eval-mode batch norm)."""
    eye = np.eye(model.config.tau, dtype=model.dtype)
    return model.decode(eye, train=False)


def ntm_top_words(model: NtmModel, k: int) -> list[list[str]]:
    """Top-k tokens per topic from the decoder distributions, ties
    lexicographic."""
    if model.vocab is None:
        raise PolytopicError("model has no vocabulary attached")
    dists = topic_word_distributions(model)
    tokens = model.vocab.tokens
    out = []
    for row in dists:
        order = sorted(range(len(tokens)), key=lambda w: (-row[w], tokens[w]))
        out.append([tokens[w] for w in order[:k]])
    return out


_CKPT_FORMAT = "polytopic-ntm-v1"


def save_ntm(model: NtmModel, path: str | Path) -> None:
    arrays = {
        "enc1.W": model.enc1.W.value, "enc1.b": model.enc1.b.value,
        "enc2.W": model.enc2.W.value, "enc2.b": model.enc2.b.value,
        "mu_head.W": model.mu_head.W.value, "mu_head.b": model.mu_head.b.value,
        "lv_head.W": model.lv_head.W.value, "lv_head.b": model.lv_head.b.value,
        "dec.W": model.dec.W.value,
        "prior.mu0": model.prior.mu0, "prior.var0": model.prior.var0,
    }
    for name, bn in (("bn_mu", model.bn_mu), ("bn_lv", model.bn_lv), ("bn_dec", model.bn_dec)):
        if bn is not None:
            arrays[f"{name}.beta"] = bn.beta.value
            arrays[f"{name}.running_mean"] = bn.running_mean
            arrays[f"{name}.running_var"] = bn.running_var
    if model.head is not None:
        arrays["head.W"] = model.head.W.value
        arrays["head.b"] = model.head.b.value
    vocab_tokens = np.array(model.vocab.tokens, dtype=str) if model.vocab else np.array([], dtype=str)
    np.savez(path, format=_CKPT_FORMAT, config=json.dumps(model.config.__dict__),
             seed=model.seed, vocab=vocab_tokens, **arrays)


def load_ntm(path: str | Path) -> NtmModel:
    with np.load(path, allow_pickle=False) as data:
        if str(data["format"]) != _CKPT_FORMAT:
            raise PolytopicError(f"{path}: not an NTM checkpoint")
        raw = json.loads(str(data["config"]))
        raw["hidden"] = tuple(raw["hidden"])
        config = NtmConfig(**raw)
        tokens = [str(t) for t in data["vocab"]]
        vocab = Vocab(entries=tuple((t, 0) for t in tokens)) if tokens else None
        model = NtmModel(config, seed=int(data["seed"]), vocab=vocab)
        model.enc1.W.value = data["enc1.W"]; model.enc1.b.value = data["enc1.b"]
        model.enc2.W.value = data["enc2.W"]; model.enc2.b.value = data["enc2.b"]
        model.mu_head.W.value = data["mu_head.W"]; model.mu_head.b.value = data["mu_head.b"]
        model.lv_head.W.value = data["lv_head.W"]; model.lv_head.b.value = data["lv_head.b"]
        model.dec.W.value = data["dec.W"]
        model.prior = PriorParams(mu0=data["prior.mu0"], var0=data["prior.var0"])
        for name, bn in (("bn_mu", model.bn_mu), ("bn_lv", model.bn_lv),
                         ("bn_dec", model.bn_dec)):
            if bn is not None:
                bn.beta.value = data[f"{name}.beta"]
                bn.running_mean = data[f"{name}.running_mean"]
                bn.running_var = data[f"{name}.running_var"]
        if model.head is not None:
            model.head.W.value = data["head.W"]
            model.head.b.value = data["head.b"]
        return model
