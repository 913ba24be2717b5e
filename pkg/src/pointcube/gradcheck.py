"""
Finite-difference verification of the backward pass.

Central differences (f(x + eps) - f(x - eps)) / 2 eps are compared with the
tape's gradients on randomly sampled scalar parameters, with relative error
|a - n| / max(|a|, |n|, 1e-5). ReLU and max-pool are only piecewise smooth:
a sample whose forward and backward one-sided differences disagree sits on a
kink, is skipped, and another sample is drawn in its place.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .blocks import soft_indicator
from .errors import GradcheckFailure
from .geometry import PointCloud
from .labels import TextEmbeddingSet
from .losses import LossConfig
from .model import ModelConfig, init_params
from .training import TrainConfig, batch_loss, prepare_object

logger = logging.getLogger(__name__)

REL_ERR_FLOOR = 1e-5
KINK_TOL = 1e-2


@dataclass
class GradcheckReport:
    max_rel_err: float
    worst: str
    checked: int
    skipped: int
    tol: float
    samples: int

    @property
    def passed(self):
        return self.checked >= self.samples and self.max_rel_err < self.tol


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_ERR_FLOOR)


def check_gradients(loss_fn, params, samples, rng, eps=1e-6, tol=1e-3, max_draws=None):
    """
    Compare analytic and numeric derivatives on sampled parameter entries.

    Args:
        loss_fn: Callable building a scalar loss Tensor from the current parameter values
        params: name -> Tensor; entries are perturbed in place and restored
        samples: Number of smooth entries to check
        rng: numpy Generator choosing the entries
        eps: Finite-difference step
        tol: Relative-error tolerance reported in the result
        max_draws: Upper bound on draws including skipped kinks (default 4 x samples)

    Returns:
        GradcheckReport
    """
    for p in params.values():
        p.zero_grad()
        p.data = np.array(p.data, copy=True)
    loss = loss_fn()
    loss.backward()
    f0 = loss.item()
    analytic = {name: np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for name, p in params.items()}

    names = list(params)
    sizes = np.array([params[n].data.size for n in names], dtype=np.float64)
    weights = sizes / sizes.sum()
    max_draws = max_draws or 4 * samples

    worst, worst_name, checked, skipped = 0.0, '', 0, 0
    for _ in range(max_draws):
        if checked >= samples:
            break
        name = names[rng.choice(len(names), p=weights)]
        p = params[name]
        index = int(rng.integers(p.data.size))
        original = p.data.flat[index]

        p.data.flat[index] = original + eps
        f_plus = loss_fn().item()
        p.data.flat[index] = original - eps
        f_minus = loss_fn().item()
        p.data.flat[index] = original

        forward_diff = (f_plus - f0) / eps
        backward_diff = (f0 - f_minus) / eps
        if relative_error(forward_diff, backward_diff) > KINK_TOL:
            skipped += 1
            continue

        numeric = (f_plus - f_minus) / (2 * eps)
        err = relative_error(float(analytic[name].flat[index]), numeric)
        checked += 1
        if err > worst:
            worst, worst_name = err, f"{name}[{index}]"

    logger.info(f"Gradient check: {checked} entries, {skipped} skipped at kinks, "
                f"max rel err {worst:.3e} ({worst_name or 'n/a'})")
    return GradcheckReport(worst, worst_name, checked, skipped, tol, samples)


def model_gradcheck(seed=0, local_mode='hard', samples=200, tol=1e-3, kernel_mode='standard'):
    """
    Check d(L_total)/d(theta) of the full model on a seeded 2-object batch.

    The batch has 32 points per object, d_E=16, d_out=8, 2 heads, float64.

    Raises:
        GradcheckFailure: If the max relative error reaches tol, or kinks left fewer than
            `samples` checkable entries
    """
    rng = np.random.default_rng(seed)
    model_cfg = ModelConfig(d_e=16, d_out=8, d_et=12, heads=2, hidden=[16], ff_mult=2)
    cfg = TrainConfig(dtype='float64', model=model_cfg,
                      loss=LossConfig(kernel_mode=kernel_mode, local_mode=local_mode))
    params = init_params(model_cfg, rng, np.float64)

    batch = []
    embeddings = {}
    for name in ('a', 'b'):
        cloud = PointCloud(rng.normal(size=(32, 3)), id=f"obj-{name}", class_name=name)
        batch.append(prepare_object(cloud, cfg.loss.min_points, cfg.frame))
        embeddings[name] = TextEmbeddingSet(name, rng.normal(size=(1, model_cfg.d_et)),
                                            rng.normal(size=(9, model_cfg.d_et)))
    label_choice = {obj.id: 0 for obj in batch}
    soft_tables = {name: soft_indicator(s.local_vectors) for name, s in embeddings.items()}

    def loss_fn():
        return batch_loss(params, batch, label_choice, embeddings, cfg, soft_tables).total

    report = check_gradients(loss_fn, params.named_tensors(), samples, rng, tol=tol)
    if not report.passed:
        raise GradcheckFailure(report.max_rel_err, tol, report.checked, samples)
    return report
