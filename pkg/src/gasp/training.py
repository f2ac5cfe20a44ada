"""Adversarial training of a hypernetwork generator against a PointConv discriminator."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import CheckpointError, ConfigError, DimensionError, NumericError
from .function_rep import MlpArchitecture
from .hypernet import Hypernetwork
from .optim import AdamState, adam_step
from .pointcloud import PointCloud
from .pointconv import DiscriminatorStack
from .rff import from_matrix
from .rng import get_state, make_rng, set_state, standard_normal
from .tensor import Tensor

_EPS = 1e-12


@dataclass
class TrainingConfig:
    lr_generator: float = 1e-4
    lr_discriminator: float = 4e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 16
    epochs: int = 1
    K_subsample: Optional[int] = None
    r1_weight: float = 10.0
    seed: int = 0
    max_steps: Optional[int] = None

    def __post_init__(self):
        if not (self.lr_generator > 0 and self.lr_discriminator > 0):
            raise ConfigError("learning rates must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.K_subsample is not None and self.K_subsample < 1:
            raise ConfigError("K_subsample must be positive")
        if self.r1_weight < 0:
            raise ConfigError("r1_weight must be non-negative")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps must be non-negative")

    def to_text(self) -> Dict[str, str]:
        return {f"training.{k}": ("" if v is None else repr(v)) for k, v in asdict(self).items()}

    @classmethod
    def from_text(cls, cfg: Dict[str, str]) -> "TrainingConfig":
        kw = {}
        for f in fields(cls):
            raw = cfg.get(f"training.{f.name}")
            if raw is None or raw == "":
                continue
            kw[f.name] = int(raw) if f.name in ("batch_size", "epochs", "K_subsample", "seed", "max_steps") else float(raw)
        return cls(**kw)


# -- losses ---------------------------------------------------------------------

def _prob_logit(p) -> Tensor:
    p = np.clip(np.asarray(T._as_tensor(p).data, dtype=np.float64), _EPS, 1.0 - _EPS)
    return T.constant(np.log(p) - np.log1p(-p))


def g_loss(d_fake) -> float:
    """Non-saturating generator loss -log D(fake), averaged over the batch."""
    return g_loss_logits(_prob_logit(d_fake)).item()


def d_loss(d_real, d_fake) -> float:
    """Discriminator loss -log D(real) - log(1 - D(fake)), averaged over the batch."""
    return d_loss_logits(_prob_logit(d_real), _prob_logit(d_fake)).item()


def g_loss_logits(fake_logits) -> Tensor:
    return T.mean(T.softplus(T.neg(fake_logits)))


def d_loss_logits(real_logits, fake_logits) -> Tensor:
    return T.add(T.mean(T.softplus(T.neg(real_logits))), T.mean(T.softplus(fake_logits)))


def _r1_from_probs(probs: Tensor, feats: Tensor) -> Tensor:
    (g,) = T.backward(T.sum(probs), [feats], create_graph=True)
    per_example = T.sum(T.reshape(T.square(g), (g.shape[0], -1)), axis=1)
    return T.mul(T.mean(per_example), 0.5)


def r1_penalty(disc, pc: PointCloud, training: bool = False) -> Tensor:
    """Half the squared gradient norm of D(pc) with respect to the feature rows.

    ``disc`` is a DiscriminatorStack or any callable mapping coordinates
    (1, n, d) and a feature tensor (1, n, k) to probabilities (1,). The result
    stays connected to the discriminator parameters.
    """
    feats = Tensor(pc.features[None], requires_grad=True)
    if isinstance(disc, DiscriminatorStack):
        probs = disc.probabilities(pc.coords[None], feats, training)
    else:
        probs = disc(pc.coords[None], feats)
    return _r1_from_probs(probs, feats)


# -- data -----------------------------------------------------------------------

def check_dataset(dataset: Sequence[PointCloud], K: Optional[int]) -> None:
    if not dataset:
        raise DimensionError("the dataset is empty")
    d, k = dataset[0].d, dataset[0].k
    for i, pc in enumerate(dataset):
        if pc.d != d or pc.k != k:
            raise DimensionError(f"example {i} has d={pc.d}, k={pc.k}; example 0 has d={d}, k={k}")
    sizes = {pc.n for pc in dataset}
    if K is None and len(sizes) > 1:
        raise DimensionError("examples differ in size; set K_subsample so batches can be stacked")
    if K is not None and K > min(sizes):
        raise DimensionError(f"K_subsample={K} exceeds the smallest example ({min(sizes)} points)")


@dataclass
class StepRecord:
    step: int
    d_loss: float
    g_loss: float
    r1: float
    d_real: float
    d_fake: float


class Trainer:
    """Stateful alternating optimizer; ``step`` performs one D update then one G update.

    All randomness (epoch order, subsampling, latents) is drawn from one
    seeded stream held by the trainer, so a checkpoint of the trainer fixes
    every later step.
    """

    def __init__(self, dataset: Sequence[PointCloud], generator: Hypernetwork,
                 stack: DiscriminatorStack, config: TrainingConfig):
        check_dataset(dataset, config.K_subsample)
        d, k = dataset[0].d, dataset[0].k
        if generator.coord_dim != d or generator.target_arch.output_dim != k:
            raise DimensionError(f"generator produces d={generator.coord_dim}, k={generator.target_arch.output_dim}; data has d={d}, k={k}")
        if stack.coord_dim != d or stack.feature_dim != k:
            raise DimensionError(f"discriminator takes d={stack.coord_dim}, k={stack.feature_dim}; data has d={d}, k={k}")
        self.dataset = list(dataset)
        self.generator = generator
        self.stack = stack
        self.config = config
        self.rng = make_rng(config.seed)
        self.g_state = AdamState.create(generator.params)
        self.d_state = AdamState.create(stack.params)
        self.batch_size = min(config.batch_size, len(self.dataset))
        self.steps_per_epoch = len(self.dataset) // self.batch_size
        self.step_count = 0
        self.order = np.zeros(0, dtype=np.int64)
        self.cursor = 0
        self.history: List[StepRecord] = []

    @property
    def total_steps(self) -> int:
        total = self.config.epochs * self.steps_per_epoch
        return total if self.config.max_steps is None else min(total, self.config.max_steps)

    def next_batch(self):
        if self.cursor + self.batch_size > len(self.order):
            self.order = self.rng.permutation(len(self.dataset))
            self.cursor = 0
        idx = self.order[self.cursor:self.cursor + self.batch_size]
        self.cursor += self.batch_size
        K = self.config.K_subsample
        coords, feats = [], []
        for i in idx:
            pc = self.dataset[int(i)]
            if K is not None:
                pc = pc.take(self.rng.permutation(pc.n)[:K])
            coords.append(pc.coords)
            feats.append(pc.features)
        return np.stack(coords), np.stack(feats)

    def step(self, update_generator: bool = True) -> StepRecord:
        cfg = self.config
        coords, real = self.next_batch()
        B = coords.shape[0]
        z_d = standard_normal(self.rng, (B, self.generator.latent_dim))
        z_g = standard_normal(self.rng, (B, self.generator.latent_dim))
        snapshot = self._snapshot()

        # discriminator: non-saturating loss plus R1 on the real batch
        with T.no_grad():
            fake = self.generator.generate_features(z_d, coords).data
        real_t = Tensor(real, requires_grad=True)
        real_logits = self.stack.logits(coords, real_t, training=True)
        r1 = _r1_from_probs(T.sigmoid(real_logits), real_t)
        fake_logits = self.stack.logits(coords, fake, training=True)
        dl = d_loss_logits(real_logits, fake_logits)
        total = T.add(dl, T.mul(r1, cfg.r1_weight)) if cfg.r1_weight else dl
        d_params = self.stack.params
        if not np.isfinite(total.item()):
            self._restore(snapshot)
            raise NumericError(f"discriminator loss is not finite at step {self.step_count}")
        grads = T.backward(total, list(d_params.values()))
        adam_step(d_params, {k: g.data for k, g in zip(d_params, grads)}, self.d_state,
                  cfg.lr_discriminator, cfg.beta1, cfg.beta2)

        # generator: -log D(G(z)) at the real coordinates
        gl_value = float("nan")
        if update_generator:
            g_params = self.generator.params
            gen = self.generator.generate_features(z_g, coords)
            gl = g_loss_logits(self.stack.logits(coords, gen, training=True))
            gl_value = gl.item()
            if not np.isfinite(gl_value):
                self._restore(snapshot)
                raise NumericError(f"generator loss is not finite at step {self.step_count}")
            grads = T.backward(gl, list(g_params.values()))
            adam_step(g_params, {k: g.data for k, g in zip(g_params, grads)}, self.g_state,
                      cfg.lr_generator, cfg.beta1, cfg.beta2)

        self.step_count += 1
        rec = StepRecord(self.step_count, dl.item(), gl_value, r1.item(),
                         float(T._sigmoid_np(real_logits.data).mean()),
                         float(T._sigmoid_np(fake_logits.data).mean()))
        self.history.append(rec)
        return rec

    def run(self, steps: Optional[int] = None, checkpoint_path=None, checkpoint_every: int = 0,
            progress: Optional[Callable[[StepRecord], None]] = None) -> List[StepRecord]:
        """Train until ``steps`` more steps (default: the configured total) have run.

        On a non-finite loss the models are left at the last good step, a
        checkpoint of that state is written when a path is given, and
        NumericError is raised.
        """
        target = self.total_steps if steps is None else self.step_count + steps
        try:
            while self.step_count < target:
                rec = self.step()
                if progress is not None:
                    progress(rec)
                if checkpoint_path and checkpoint_every and self.step_count % checkpoint_every == 0:
                    self.save(checkpoint_path)
        except NumericError:
            if checkpoint_path:
                self.save(checkpoint_path)
            raise
        if checkpoint_path:
            self.save(checkpoint_path)
        return self.history

    # -- state ----------------------------------------------------------------------
    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = model_arrays(self.generator, self.stack)
        out.update(self.g_state.arrays("adam.g"))
        out.update(self.d_state.arrays("adam.d"))
        out["trainer.order"] = self.order.astype(np.float64)
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        self.generator.mlp.load_arrays(arrays, "generator")
        self.stack.load_arrays(arrays, "discriminator")
        self.g_state.load_arrays(arrays, "adam.g")
        self.d_state.load_arrays(arrays, "adam.d")
        self.order = arrays["trainer.order"].astype(np.int64)

    def _snapshot(self):
        # parameters, statistics and moments are rebound, never mutated, so references suffice
        return dict(self.state_arrays()), get_state(self.rng), self.cursor

    def _restore(self, snap) -> None:
        arrays, rng_state, cursor = snap
        self.load_state_arrays(arrays)
        set_state(self.rng, rng_state)
        self.cursor = cursor

    def save(self, path, extra: Optional[Dict[str, object]] = None) -> None:
        cfg = model_config(self.generator, self.stack)
        cfg.update(self.config.to_text())
        cfg.update({"trainer.step": self.step_count, "trainer.cursor": self.cursor})
        cfg.update(extra or {})
        save_checkpoint(path, self.state_arrays(), cfg, get_state(self.rng))

    @classmethod
    def load(cls, path, dataset: Sequence[PointCloud]) -> "Trainer":
        ck = load_checkpoint(path)
        generator, stack = build_models(ck)
        trainer = cls(dataset, generator, stack, TrainingConfig.from_text(ck.config))
        trainer.load_state_arrays(ck.tensors)
        trainer.step_count = int(ck.config["trainer.step"])
        trainer.cursor = int(ck.config["trainer.cursor"])
        set_state(trainer.rng, ck.rng_state)
        return trainer


def train(dataset: Sequence[PointCloud], generator: Hypernetwork, stack: DiscriminatorStack,
          config: TrainingConfig, **run_kw):
    """Train in place; returns (generator, stack, history)."""
    trainer = Trainer(dataset, generator, stack, config)
    trainer.run(**run_kw)
    return generator, stack, trainer.history


HISTORY_COLUMNS = ("step", "d_loss", "g_loss", "r1")


def write_history_csv(path, history: Sequence[StepRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for rec in history:
            w.writerow([rec.step, repr(rec.d_loss), repr(rec.g_loss), repr(rec.r1)])


# -- model (de)serialization ------------------------------------------------------------

def _ints(text: str) -> tuple:
    return tuple(int(t) for t in text.split(",") if t)


def _join(values) -> str:
    return ",".join(str(int(v)) for v in values)


def model_arrays(generator: Hypernetwork, stack: Optional[DiscriminatorStack] = None) -> Dict[str, np.ndarray]:
    out = generator.mlp.arrays("generator")
    if generator.encoding is not None:
        out["encoding.B"] = generator.encoding.B
    if stack is not None:
        out.update(stack.arrays("discriminator"))
    return out


def model_config(generator: Hypernetwork, stack: Optional[DiscriminatorStack] = None) -> Dict[str, object]:
    arch = generator.target_arch
    cfg = {
        "model": "gasp",
        "generator.coord_dim": generator.coord_dim,
        "generator.input_dim": arch.input_dim,
        "generator.hidden_dims": _join(arch.hidden_dims),
        "generator.output_dim": arch.output_dim,
        "generator.latent_dim": generator.latent_dim,
        "generator.hyper_hidden": _join(generator.hidden_dims),
        "generator.encoding": "rff" if generator.encoding is not None else "none",
    }
    if generator.encoding is not None:
        cfg["generator.sigma"] = repr(generator.encoding.sigma)
    if stack is not None:
        cfg.update({
            "discriminator.channels": _join(stack.channels),
            "discriminator.k_neighbors": stack.k_neighbors,
            "discriminator.pool_factor": stack.pool_factor,
            "discriminator.norm_p": repr(stack.norm_p),
            "discriminator.weight_hidden": _join(stack.weight_hidden),
        })
    return cfg


def build_generator(ck: Checkpoint) -> Hypernetwork:
    c = ck.config
    if c.get("model") != "gasp":
        raise CheckpointError(f"checkpoint holds a {c.get('model', 'unknown')!r} model, not a generator")
    try:
        arch = MlpArchitecture(int(c["generator.input_dim"]), _ints(c["generator.hidden_dims"]),
                               int(c["generator.output_dim"]))
        enc = None
        if c["generator.encoding"] == "rff":
            enc = from_matrix(ck.tensors["encoding.B"], sigma=float(c["generator.sigma"]))
        gen = Hypernetwork(arch, enc, int(c["generator.latent_dim"]), _ints(c["generator.hyper_hidden"]))
        gen.mlp.load_arrays(ck.tensors, "generator")
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"incomplete generator description in checkpoint: {exc}") from exc
    return gen


def build_models(ck: Checkpoint):
    gen = build_generator(ck)
    c = ck.config
    try:
        stack = DiscriminatorStack(gen.coord_dim, gen.target_arch.output_dim, _ints(c["discriminator.channels"]),
                                   int(c["discriminator.k_neighbors"]), int(c["discriminator.pool_factor"]),
                                   float(c["discriminator.norm_p"]), _ints(c["discriminator.weight_hidden"]))
        stack.load_arrays(ck.tensors, "discriminator")
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"incomplete discriminator description in checkpoint: {exc}") from exc
    return gen, stack
