"""The latent skill space: mixture prior, amortized posterior, KL, exports.

Components are 1-based: ids 1..D are training datasets, id D+1 is the
generalist component reserved for unseen datasets. Log-variances are
clamped to [-8, 8]; clamp activation is logged, never silently absorbed.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, apply
from .tokenizer import SEP

log = logging.getLogger("skillseq.latent")

LOGVAR_LIMIT = 8.0
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PosteriorEstimate:
    """Diagonal-Gaussian posterior parameters produced by the inference net."""

    mu: Tensor        # [B, latent_dim]
    logvar: Tensor    # [B, latent_dim], clamped

    @property
    def batch(self):
        return self.mu.shape[0]


@dataclass
class MixturePrior:
    """Read-only view of the D+1 diagonal Gaussians over the skill space."""

    means: np.ndarray     # [D+1, latent_dim]
    logvars: np.ndarray
    names: list

    @property
    def n_components(self):
        return self.means.shape[0]


def prior_view(params, config, dataset_names):
    names = list(dataset_names) + ["unseen"]
    if config.variant == "full":
        return MixturePrior(params["prior_mean"].data.copy(),
                            params["prior_logvar"].data.copy(), names)
    if config.variant == "nodataset":
        shape = (1, config.latent_dim)
        return MixturePrior(np.zeros(shape), np.zeros(shape), ["shared"])
    raise ValueError(f"variant {config.variant} has no Gaussian prior")


def component_mean(prior, component_id):
    """Mean of the 1-based component; D+1 is the unseen-dataset component."""
    if not 1 <= component_id <= prior.n_components:
        raise ValueError(f"component id {component_id} out of range [1, {prior.n_components}]")
    return prior.means[component_id - 1].copy()


def one_hot_components(component_ids, n_components, dtype):
    """[B, D+1] one-hot rows; None -> all-zero rows (dataset index removed)."""
    if component_ids is None:
        return None
    ids = np.asarray(component_ids)
    if ids.size and (ids.min() < 1 or ids.max() > n_components):
        raise ValueError(f"component ids must lie in [1, {n_components}], got "
                         f"range [{ids.min()}, {ids.max()}]")
    out = np.zeros((ids.shape[0], n_components), dtype=dtype)
    out[np.arange(ids.shape[0]), ids - 1] = 1.0
    return out


def infer_posterior(params, config, x_ids, x_mask, y_ids, y_mask, component_ids,
                    stop_embed_grad=False):
    """q(z | x, y, d): embed x ++ SEP ++ y, mean-pool, feed-forward to (mu, logvar).

    component_ids are 1-based; None feeds an all-zero one-hot (the
    `nodataset` variant). PAD positions never contribute to the pooled
    representation. stop_embed_grad detaches the shared embedding table on
    the inference path.
    """
    x_ids = np.atleast_2d(np.asarray(x_ids))
    y_ids = np.atleast_2d(np.asarray(y_ids))
    b = x_ids.shape[0]
    x_mask = np.ones_like(x_ids, dtype=np.float64) if x_mask is None else np.atleast_2d(np.asarray(x_mask))
    y_mask = np.ones_like(y_ids, dtype=np.float64) if y_mask is None else np.atleast_2d(np.asarray(y_mask))
    dtype = params["tok_embed"].dtype

    sep = np.full((b, 1), SEP, dtype=np.int64)
    ids = np.concatenate([x_ids, sep, y_ids], axis=1)
    mask = np.concatenate([x_mask, np.ones((b, 1)), y_mask], axis=1).astype(dtype)

    table = params["tok_embed"]
    if stop_embed_grad:
        table = Tensor(table.data)
    emb = apply("embedding-gather", table, ids=ids)
    weighted = apply("multiply", emb, Tensor(mask[:, :, None]))
    denom = mask.sum(axis=1, keepdims=True)
    pooled = apply("multiply", weighted.sum(axis=1), Tensor((1.0 / denom).astype(dtype)))

    onehot = one_hot_components(component_ids, config.n_components, dtype)
    if onehot is None:
        onehot = np.zeros((b, config.n_components), dtype=dtype)
    joint = apply("concat-last-axis", pooled, Tensor(onehot))
    hidden = apply("relu", apply("add", apply("matmul", joint, params["inf_w1"]), params["inf_b1"]))
    out = apply("add", apply("matmul", hidden, params["inf_w2"]), params["inf_b2"])
    l = config.latent_dim
    mu = out[:, :l]
    raw_logvar = out[:, l:]
    clipped = np.abs(raw_logvar.data) > LOGVAR_LIMIT
    if clipped.any():
        log.warning("log-variance clamp active on %d of %d entries",
                    int(clipped.sum()), raw_logvar.data.size)
    return PosteriorEstimate(mu=mu, logvar=apply("clip", raw_logvar, lo=-LOGVAR_LIMIT, hi=LOGVAR_LIMIT))


def sample_reparam(est, rng):
    """z = mu + exp(logvar / 2) * eps with eps ~ N(0, I); differentiable in q."""
    eps = rng.standard_normal(est.mu.shape).astype(est.mu.dtype)
    std = apply("exponential", est.logvar * 0.5)
    return apply("add", est.mu, apply("multiply", std, Tensor(eps)))


def kl_diag_gaussians(q_mu, q_logvar, p_mu, p_logvar):
    """Closed-form KL(q || p) between diagonal Gaussians, summed over dims.

    Accepts tensors or arrays; returns a Tensor of per-row KLs (scalar rows
    collapse to shape [B]).
    """
    q_mu = q_mu if isinstance(q_mu, Tensor) else Tensor(np.atleast_2d(q_mu))
    q_logvar = q_logvar if isinstance(q_logvar, Tensor) else Tensor(np.atleast_2d(q_logvar))
    p_mu = p_mu if isinstance(p_mu, Tensor) else Tensor(np.atleast_2d(p_mu))
    p_logvar = p_logvar if isinstance(p_logvar, Tensor) else Tensor(np.atleast_2d(p_logvar))
    if q_mu.shape[-1] != p_mu.shape[-1]:
        raise ValueError(f"latent dims differ: {q_mu.shape} vs {p_mu.shape}")
    diff = apply("add", q_mu, apply("negate", p_mu))
    var_ratio = apply("exponential", apply("add", q_logvar, apply("negate", p_logvar)))
    scaled_sq = apply("multiply", apply("multiply", diff, diff),
                      apply("exponential", apply("negate", p_logvar)))
    terms = (apply("add", p_logvar, apply("negate", q_logvar)) * 0.5
             + (var_ratio + scaled_sq) * 0.5
             - 0.5)
    return terms.sum(axis=-1)


def gaussian_logpdf(z, mean, logvar):
    """log N(z; mean, diag(exp(logvar))), summed over dims; graph-friendly in z."""
    z = z if isinstance(z, Tensor) else Tensor(np.atleast_2d(z))
    mean_t = mean if isinstance(mean, Tensor) else Tensor(np.atleast_2d(mean))
    logvar_a = logvar.data if isinstance(logvar, Tensor) else np.atleast_2d(np.asarray(logvar, dtype=np.float64))
    diff = apply("add", z, apply("negate", mean_t))
    sq = apply("multiply", apply("multiply", diff, diff),
               Tensor(np.exp(-logvar_a).astype(z.dtype)))
    const = -0.5 * (LOG_2PI * logvar_a.shape[-1] + logvar_a.sum(axis=-1))
    return apply("add", sq.sum(axis=-1) * -0.5, Tensor(const.astype(z.dtype)))


def mixture_logpdf(z, prior, weights):
    """log sum_d w_d N(z; mu_d, Sigma_d) via log-sum-exp; z may carry gradients."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (prior.n_components,):
        raise ValueError(f"weights shape {weights.shape} must be ({prior.n_components},)")
    if (weights < 0).any():
        raise ValueError("mixture weights must be non-negative")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(f"mixture weights must sum to 1, got {weights.sum()!r}")
    zt = z if isinstance(z, Tensor) else Tensor(np.atleast_2d(z))
    live = np.nonzero(weights > 0)[0]
    comp_lps = []
    for d in live:
        lp = gaussian_logpdf(zt, prior.means[d][None, :], prior.logvars[d][None, :])
        comp_lps.append(lp + float(np.log(weights[d])))
    if len(comp_lps) == 1:
        return comp_lps[0]
    stacked = apply("concat-last-axis", *[lp.reshape(lp.shape[0], 1) for lp in comp_lps])
    shift = np.max(stacked.data, axis=-1, keepdims=True)  # constant max-shift
    shifted = apply("add", stacked, Tensor(-shift))
    lse = apply("logarithm", apply("exponential", shifted).sum(axis=-1))
    return apply("add", lse, Tensor(shift[:, 0]))


# -- Fig-style means export --------------------------------------------------


def pca_project(means):
    """Project component means onto their top-2 principal axes."""
    centered = means - means.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / max(1, means.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    top = eigvecs[:, ::-1][:, :2]
    # deterministic sign: largest-magnitude loading positive
    for j in range(top.shape[1]):
        k = np.argmax(np.abs(top[:, j]))
        if top[k, j] < 0:
            top[:, j] = -top[:, j]
    return centered @ top


def export_means(prior, path):
    """CSV of raw component means and their top-2 PCA projections."""
    proj = pca_project(prior.means)
    l = prior.means.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "name"] + [f"dim_{i}" for i in range(l)] + ["pc1", "pc2"])
        for idx, name in enumerate(prior.names):
            w.writerow([idx + 1, name]
                       + [f"{v:.8f}" for v in prior.means[idx]]
                       + [f"{proj[idx, 0]:.8f}", f"{proj[idx, 1]:.8f}"])
    return proj
