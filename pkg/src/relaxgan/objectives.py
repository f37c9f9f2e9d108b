"""Adversarial objectives, critic constraints and the critic schedule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

KINDS = ("gan", "lsgan", "wgan", "wgan-gp", "gan-gp")


@dataclass(frozen=True)
class ObjectiveConfig:
    kind: str = "wgan-gp"
    clip: float = 0.01
    penalty_weight: float = 10.0
    n_critic: int = 5
    penalty_point: str = "interpolate"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown objective {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.kind == "wgan" and not self.clip > 0:
            raise ValueError("wgan needs a positive clip bound")
        if self.uses_penalty and not self.penalty_weight > 0:
            raise ValueError(f"{self.kind} needs a positive penalty weight")
        if self.n_critic < 1:
            raise ValueError("n_critic must be >= 1")
        if self.penalty_point not in ("interpolate", "at-fake"):
            raise ValueError(f"unknown penalty point {self.penalty_point!r}")

    @property
    def uses_penalty(self) -> bool:
        return self.kind.endswith("-gp")

    @property
    def head(self) -> str:
        """Output head of the discriminator: probabilities or raw scores."""
        return "sigmoid" if self.kind in ("gan", "gan-gp") else "raw"


@dataclass
class LossPair:
    d_loss: Tensor
    g_loss: Tensor

    def __post_init__(self):
        for name in ("d_loss", "g_loss"):
            v = getattr(self, name)
            if v is not None and not np.isfinite(v.data).all():
                raise ad.NonFiniteError(f"{name} is not finite")


def gan_losses(d_real, d_fake) -> LossPair:
    """Log loss on probabilities; the generator maximizes log D(G(z))."""
    d_real, d_fake = ad.as_tensor(d_real), ad.as_tensor(d_fake)
    for t in (d_real, d_fake):
        if np.any(t.data <= 0) or np.any(t.data >= 1):
            raise ValueError("gan_losses needs scores strictly inside (0, 1); is the head a sigmoid?")
    d = -ad.mean(ad.log(d_real)) - ad.mean(ad.log(1.0 - d_fake))
    g = -ad.mean(ad.log(d_fake))
    return LossPair(d, g)


def gan_losses_from_logits(l_real, l_fake) -> LossPair:
    """Same losses written on logits: -log sigmoid(l) = softplus(-l)."""
    l_real, l_fake = ad.as_tensor(l_real), ad.as_tensor(l_fake)
    d = ad.mean(ad.softplus(-l_real)) + ad.mean(ad.softplus(l_fake))
    g = ad.mean(ad.softplus(-l_fake))
    return LossPair(d, g)


def lsgan_losses(d_real, d_fake) -> LossPair:
    d_real, d_fake = ad.as_tensor(d_real), ad.as_tensor(d_fake)
    d = 0.5 * ad.mean((d_real - 1.0) ** 2) + 0.5 * ad.mean(d_fake ** 2)
    g = 0.5 * ad.mean((d_fake - 1.0) ** 2)
    return LossPair(d, g)


def wgan_losses(d_real, d_fake) -> LossPair:
    d_real, d_fake = ad.as_tensor(d_real), ad.as_tensor(d_fake)
    return LossPair(-ad.mean(d_real) + ad.mean(d_fake), -ad.mean(d_fake))


def losses(kind: str, s_real, s_fake) -> LossPair:
    """Dispatch on objective kind.  GAN kinds take logits here."""
    if kind in ("gan", "gan-gp"):
        return gan_losses_from_logits(s_real, s_fake)
    if kind == "lsgan":
        return lsgan_losses(s_real, s_fake)
    if kind in ("wgan", "wgan-gp"):
        return wgan_losses(s_real, s_fake)
    raise ValueError(f"unknown objective {kind!r}")


def clip_weights(params, c: float):
    """Project every entry into [-c, c] in place."""
    if not c > 0:
        raise ValueError("clip bound must be positive")
    items = params.values() if isinstance(params, dict) else params
    for t in items:
        np.clip(t.data, -c, c, out=t.data)


def penalty_points(real, fake, point: str, rng: np.random.Generator | None = None) -> np.ndarray:
    real = real.data if isinstance(real, Tensor) else np.asarray(real, dtype=np.float64)
    fake = fake.data if isinstance(fake, Tensor) else np.asarray(fake, dtype=np.float64)
    if real.shape != fake.shape:
        raise ad.ShapeError(f"gradient_penalty: real {real.shape} and fake {fake.shape} differ")
    if point == "at-fake":
        return fake.copy()
    if point != "interpolate":
        raise ValueError(f"unknown penalty point {point!r}")
    if rng is None:
        raise ValueError("interpolated penalty points need an rng")
    eps = rng.uniform(0.0, 1.0, size=(real.shape[0],) + (1,) * (real.ndim - 1))
    return eps * real + (1.0 - eps) * fake


def gradient_penalty(critic, real, fake, lam: float, point: str = "interpolate",
                     rng: np.random.Generator | None = None, graph: ad.Graph | None = None) -> Tensor:
    """lam * mean((||grad_x D(x_hat)||_2 - 1)^2) over the batch.

    ``critic`` maps a (batch, ...) array to one raw score per sample.  The result
    is a node of ``graph`` (default: the active graph) and can be backpropagated
    to the critic's parameters.
    """
    graph = graph if graph is not None else ad.active_graph()
    if graph is None:
        raise RuntimeError("gradient_penalty needs an active graph")
    x_hat = Tensor(penalty_points(real, fake, point, rng), requires_grad=True)
    scores = critic(x_hat)
    grad = ad.grad_as_node(graph, ad.sum(scores), x_hat)
    bsz = grad.shape[0]
    norms = ad.l2_norm(ad.reshape(grad, (bsz, -1)), axis=1)
    return lam * ad.mean((norms - 1.0) ** 2)


def critic_schedule(step: int, n_critic: int) -> str:
    """Steps count from 1: n_critic discriminator updates, then one generator update."""
    if n_critic < 1:
        raise ValueError("n_critic must be >= 1")
    if step < 1:
        raise ValueError("steps are counted from 1")
    return "generator" if step % (n_critic + 1) == 0 else "discriminator"
