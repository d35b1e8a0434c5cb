"""Training loops (joint, two-stage, retrieval-only), inference and evaluation."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import losses as L
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    ImageDataset,
    SyntheticShapeSpec,
    ZeroShotSplit,
    generate_synthetic_dataset,
    iterate_epoch,
    load_image_folder,
    make_zero_shot_split,
)
from .models import (
    Discriminator,
    DiscriminatorConfig,
    Encoder,
    EncoderConfig,
    Generator,
    GeneratorConfig,
)
from .optim import Adam
from .retrieval import ALL, EmbeddingSet, chance_map, evaluate, rank_gallery
from .tensor import Tensor, concat, no_grad

log = logging.getLogger(__name__)

TRAINING_MODES = ("joint", "two_stage", "retrieval_only")
LOSS_TYPES = ("normsoftmax", "triplet")
WARMUP_MODES = ("lr_ramp", "staged")
LOSS_KEYS = ("loss_d", "adv_g", "identity", "chainer", "norm_sketch", "norm_photo", "total")


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid config: " + "; ".join(self.problems))


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    # objective
    lam: float = 10.0
    gamma: float = 0.1
    temperature: float = 0.05
    triplet_margin: float = 0.2
    loss_type: str = "normsoftmax"
    gan_loss: str = "nonsaturating"
    normalize_proxies: bool = True
    # ablation toggles, one per objective term
    use_adv_cha: bool = True
    use_identity: bool = True
    use_sketch_norm: bool = True
    use_photo_norm: bool = True
    # optimisation
    training_mode: str = "joint"
    lr: float = 1e-3
    epochs: int = 10
    warmup_epochs: int = 1
    warmup_mode: str = "lr_ramp"
    stage1_epochs: int | None = None
    batch_size: int = 32
    class_aligned: bool = True
    # architecture
    base_channels: int = 8
    n_res_blocks: int = 8
    disc_channels: int | None = None
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128)
    embedding_dim: int = 64
    # data
    side: int = 64
    n_classes: int = 12
    n_unseen: int = 4
    per_class_sketches: int = 40
    per_class_photos: int = 40
    heldout_fraction: float = 0.1
    data_dir: str | None = None
    data_seed: int = 0
    split_seed: int = 0
    # evaluation
    map_ks: tuple = (ALL, 10, 50, 200)
    prec_ks: tuple = (10, 50, 100, 200)
    map_normalizer: str = "min"
    hash_bits: int = 64
    eval_every_epoch: bool = True
    chance_trials: int = 100
    # randomness
    seed: int = 0

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        if "lambda" in raw:
            raw["lam"] = raw.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError([f"unknown field {k!r}" for k in unknown])
        for key in ("encoder_channels", "map_ks", "prec_ks"):
            if key in raw and isinstance(raw[key], list):
                raw[key] = tuple(raw[key])
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig.from_dict({**self.to_dict(), **changes})

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("encoder_channels", "map_ks", "prec_ks"):
            out[key] = list(out[key])
        return out

    def problems(self) -> list[str]:
        p = []

        def need(cond, msg):
            if not cond:
                p.append(msg)

        need(self.lam >= 0, f"lam must be >= 0 (got {self.lam})")
        need(self.gamma >= 0, f"gamma must be >= 0 (got {self.gamma})")
        need(self.temperature > 0, f"temperature must be > 0 (got {self.temperature})")
        need(self.triplet_margin >= 0, f"triplet_margin must be >= 0 (got {self.triplet_margin})")
        need(self.loss_type in LOSS_TYPES, f"loss_type must be one of {LOSS_TYPES} (got {self.loss_type!r})")
        need(self.gan_loss in L.GAN_LOSSES, f"gan_loss must be one of {L.GAN_LOSSES} (got {self.gan_loss!r})")
        need(self.training_mode in TRAINING_MODES,
             f"training_mode must be one of {TRAINING_MODES} (got {self.training_mode!r})")
        need(self.warmup_mode in WARMUP_MODES, f"warmup_mode must be one of {WARMUP_MODES} (got {self.warmup_mode!r})")
        need(self.lr >= 0, f"lr must be >= 0 (got {self.lr})")
        need(self.epochs >= 1, f"epochs must be >= 1 (got {self.epochs})")
        need(self.warmup_epochs >= 0, f"warmup_epochs must be >= 0 (got {self.warmup_epochs})")
        need(self.stage1_epochs is None or self.stage1_epochs >= 1, "stage1_epochs must be >= 1")
        need(self.batch_size >= 1, f"batch_size must be >= 1 (got {self.batch_size})")
        need(self.base_channels >= 1, f"base_channels must be >= 1 (got {self.base_channels})")
        need(self.disc_channels is None or self.disc_channels >= 1, "disc_channels must be >= 1")
        need(self.n_res_blocks >= 0, f"n_res_blocks must be >= 0 (got {self.n_res_blocks})")
        need(len(self.encoder_channels) >= 1 and min(self.encoder_channels) >= 1,
             "encoder_channels must be a non-empty list of positive ints")
        need(self.embedding_dim >= 1, f"embedding_dim must be >= 1 (got {self.embedding_dim})")
        need(self.side % 4 == 0 and self.side >= 24, f"side must be divisible by 4 and >= 24 (got {self.side})")
        need(self.n_classes >= 2, f"n_classes must be >= 2 (got {self.n_classes})")
        need(0 < self.n_unseen < self.n_classes, f"n_unseen must be in [1, n_classes-1] (got {self.n_unseen})")
        need(self.per_class_sketches >= 1 and self.per_class_photos >= 1, "per-class counts must be >= 1")
        need(0 <= self.heldout_fraction < 1, f"heldout_fraction must be in [0, 1) (got {self.heldout_fraction})")
        need(self.map_normalizer in ("min", "R"), f"map_normalizer must be 'min' or 'R' (got {self.map_normalizer!r})")
        for name in ("map_ks", "prec_ks"):
            for k in getattr(self, name):
                ok = (k == ALL and name == "map_ks") or (isinstance(k, int) and not isinstance(k, bool) and k >= 1)
                allowed = "positive ints or 'all'" if name == "map_ks" else "positive ints"
                need(ok, f"{name} entries must be {allowed} (got {k!r})")
        need(self.hash_bits >= 1, f"hash_bits must be >= 1 (got {self.hash_bits})")
        need(self.use_sketch_norm or self.use_photo_norm or self.use_adv_cha,
             "at least one retrieval term must be enabled")
        if self.loss_type == "triplet":
            need(self.class_aligned, "triplet loss needs class_aligned batches for its positives")
        return p

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    @property
    def uses_generator(self) -> bool:
        if self.training_mode == "retrieval_only":
            return False
        if self.training_mode == "two_stage":
            return True
        return self.use_adv_cha or self.use_identity


@dataclass
class TrainLog:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)

    def record(self, **entry) -> None:
        entry = {k: _plain(v) for k, v in entry.items()}
        if self.steps and entry["step"] <= self.steps[-1]["step"]:
            raise AssertionError("step index must increase")
        self.steps.append(entry)

    def lines(self) -> list[str]:
        out = [json.dumps({"kind": "step", **s}, sort_keys=True) for s in self.steps]
        out += [json.dumps({"kind": "epoch", **e}, sort_keys=True) for e in self.epochs]
        out += [json.dumps({"kind": "event", **e}, sort_keys=True) for e in self.events]
        return out

    def write_jsonl(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n")

    def column(self, key: str) -> list:
        return [s.get(key) for s in self.steps]


def _plain(v):
    if isinstance(v, Tensor):
        return float(v.data)
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def _grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


class ACNetTrainer:
    """Owns the data, models, optimizers and log for one run."""

    def __init__(self, config: ExperimentConfig, dataset: ImageDataset | None = None,
                 split: ZeroShotSplit | None = None, run_dir=None):
        config.validate()
        self.config = cfg = config
        if dataset is None and cfg.data_dir is not None:
            dataset = load_image_folder(cfg.data_dir, side=cfg.side)
        if dataset is None:
            dataset = generate_synthetic_dataset(
                SyntheticShapeSpec(seed=cfg.data_seed), cfg.n_classes, cfg.per_class_sketches,
                cfg.per_class_photos, cfg.side)
        self.dataset = dataset
        self.split = split or make_zero_shot_split(dataset, cfg.n_unseen, cfg.split_seed, cfg.heldout_fraction)
        self.split.check(dataset)
        self.run_dir = Path(run_dir) if run_dir is not None else None

        seeds = np.random.SeedSequence(cfg.seed).generate_state(5)
        self.generator = Generator(GeneratorConfig(cfg.base_channels, cfg.n_res_blocks), seed=int(seeds[0]))
        self.discriminator = Discriminator(DiscriminatorConfig(cfg.disc_channels or cfg.base_channels),
                                           seed=int(seeds[1]))
        self.encoder = Encoder(EncoderConfig(cfg.encoder_channels, embedding_dim=cfg.embedding_dim),
                               seed=int(seeds[2]))
        self.bank = L.ProxyBank(self.split.seen_classes, cfg.embedding_dim, cfg.temperature,
                                normalize=cfg.normalize_proxies, seed=int(seeds[3]))
        self.rng = np.random.default_rng(int(seeds[4]))
        self.weights = L.LossWeights(cfg.lam, cfg.gamma, cfg.triplet_margin)

        self.opt_d = Adam(self.discriminator.parameters(), lr=cfg.lr)
        self.opt_g = Adam(self.generator.parameters(), lr=cfg.lr)
        self.opt_retrieval = Adam(self.encoder.parameters() + self.bank.parameters(), lr=cfg.lr)
        self.log = TrainLog()
        self.step_index = 0
        self.generator_frozen = False
        self._synth_cache: np.ndarray | None = None

    # ------------------------------------------------------------- schedules
    def _steps_per_epoch(self) -> int:
        return max(1, len(self.split.train_sketches) // self.config.batch_size)

    def _lr_at(self, epoch: int, step_in_epoch: int) -> float:
        cfg = self.config
        if cfg.warmup_mode != "lr_ramp" or epoch >= cfg.warmup_epochs:
            return cfg.lr
        total = cfg.warmup_epochs * self._steps_per_epoch()
        done = epoch * self._steps_per_epoch() + step_in_epoch + 1
        return cfg.lr * done / total

    def _set_lr(self, lr: float) -> None:
        for opt in (self.opt_d, self.opt_g, self.opt_retrieval):
            opt.lr = lr

    def _zero_all(self) -> None:
        for m in (self.generator, self.discriminator, self.encoder, self.bank):
            m.zero_grad()

    # ---------------------------------------------------------- loss pieces
    def _retrieval_terms(self, sketch_emb, synth_emb, photo_emb, labels, photo_labels) -> dict:
        cfg = self.config
        if cfg.loss_type == "normsoftmax":
            return L.normsoftmax_terms(sketch_emb, synth_emb, photo_emb, labels, self.bank, photo_labels)
        m = cfg.triplet_margin
        terms = {}
        if synth_emb is not None:
            terms["chainer"] = L.triplet_loss(synth_emb, photo_emb, photo_emb, m, labels, photo_labels)
        if sketch_emb is not None:
            terms["norm_sketch"] = L.triplet_loss(sketch_emb, photo_emb, photo_emb, m, labels, photo_labels)
        if cfg.use_photo_norm:
            anchor_pos = sketch_emb if sketch_emb is not None else synth_emb
            terms["norm_photo"] = L.triplet_loss(photo_emb, anchor_pos, anchor_pos, m, photo_labels, labels)
        return terms

    def _check_finite(self, parts: dict) -> None:
        vals = {k: _plain(v) for k, v in parts.items() if v is not None}
        if not all(math.isfinite(v) for v in vals.values()):
            raise TrainingDiverged(f"non-finite loss at step {self.step_index}: {vals}")

    # ------------------------------------------------------------- one step
    def train_step(self, batch, lr: float, epoch: int, stage: str = "joint", retrieval_only: bool = False) -> dict:
        """One optimisation step; ``stage`` selects which networks/terms are active."""
        cfg = self.config
        sketch_idx, photo_idx, labels, photo_labels = batch
        sketches = Tensor(self.dataset.images[sketch_idx])
        photos = Tensor(self.dataset.images[photo_idx])
        self._set_lr(lr)
        b = len(sketch_idx)
        parts: dict = {k: None for k in LOSS_KEYS}

        use_gan = stage in ("joint", "synthesis") and not retrieval_only and cfg.use_adv_cha
        use_ide = stage in ("joint", "synthesis") and not retrieval_only and cfg.use_identity
        use_cha = stage == "joint" and not retrieval_only and cfg.use_adv_cha
        train_retrieval = stage in ("joint", "retrieval")

        synth = recon = None
        if use_gan or use_ide or use_cha:
            g_out = self.generator(concat([sketches, photos]) if use_ide else sketches)
            synth = g_out[:b]
            recon = g_out[b:] if use_ide else None

        if use_gan:
            self.discriminator.zero_grad()
            loss_d = L.adversarial_loss_d(self.discriminator(photos), self.discriminator(synth.detach()))
            self._check_finite({"loss_d": loss_d})
            loss_d.backward()
            self.opt_d.step()
            parts["loss_d"] = loss_d

        adv_g = L.adversarial_loss_g(self.discriminator(synth), cfg.gan_loss) if use_gan else None
        ide = L.identity_loss(recon, photos) if use_ide else None

        norm = None
        if stage == "retrieval":
            # two-stage second half: sketches were pre-translated by a frozen G
            synth_in = Tensor(self._synth_cache[sketch_idx])
            emb = self.encoder(concat([synth_in, photos]))
            terms = self._retrieval_terms(None, emb[:b], emb[b:], labels, photo_labels)
        elif train_retrieval:
            inputs, slots = [], []
            if cfg.use_sketch_norm or retrieval_only:
                inputs.append(sketches)
                slots.append("sketch")
            if use_cha:
                inputs.append(synth)
                slots.append("synth")
            inputs.append(photos)
            slots.append("photo")
            emb = self.encoder(concat(inputs))
            chunks = dict(zip(slots, (emb[i * b:(i + 1) * b] for i in range(len(slots)))))
            photo_emb = chunks["photo"]
            terms = self._retrieval_terms(chunks.get("sketch"), chunks.get("synth"), photo_emb,
                                          labels, photo_labels)
            if not cfg.use_photo_norm:
                terms.pop("norm_photo", None)
        else:
            terms = {}
        if terms:
            norm = terms[next(iter(terms))]
            for key in list(terms)[1:]:
                norm = norm + terms[key]
        parts.update({k: v for k, v in terms.items()})

        total = L.total_objective(adv_g, norm, ide, self.weights)
        parts.update(adv_g=adv_g, identity=ide, total=total)
        self._check_finite(parts)

        for m in (self.generator, self.encoder, self.bank):
            m.zero_grad()
        if total.requires_grad:
            total.backward()
        g_norm = _grad_norm(self.generator.parameters())
        if not self.generator_frozen and (use_gan or use_ide or use_cha):
            self.opt_g.step()
        if train_retrieval:
            self.opt_retrieval.step()
            self.bank.renormalize()
        self.discriminator.zero_grad()

        self.step_index += 1
        entry = {"step": self.step_index, "epoch": epoch, "stage": stage, "lr": lr,
                 "g_grad_norm": g_norm, **{k: _plain(v) for k, v in parts.items()}}
        self.log.record(**entry)
        return entry

    # ---------------------------------------------------------------- loops
    def _run_epochs(self, n_epochs: int, stage: str, retrieval_only: bool = False, epoch_offset: int = 0) -> None:
        cfg = self.config
        for e in range(n_epochs):
            epoch = epoch_offset + e
            staged_warmup = cfg.warmup_mode == "staged" and e < cfg.warmup_epochs and stage == "joint"
            for i, batch in enumerate(iterate_epoch(self.dataset, self.split, cfg.batch_size, self.rng,
                                                    cfg.class_aligned)):
                lr = self._lr_at(e, i)
                self.train_step(batch, lr, epoch, stage, retrieval_only=retrieval_only or staged_warmup)
            record = {"epoch": epoch, "stage": stage, "step": self.step_index}
            if cfg.eval_every_epoch and stage != "synthesis":
                record.update({f"unseen_{k}": v for k, v in self.evaluate("unseen", with_chance=False).items()})
                if len(self.split.heldout_sketches) and len(self.split.heldout_photos):
                    record.update({f"seen_{k}": v for k, v in self.evaluate("seen", with_chance=False).items()})
            self.log.epochs.append({k: _plain(v) for k, v in record.items()})
            if self.run_dir is not None:
                self.save(self.run_dir / "checkpoints" / f"epoch_{epoch + 1:03d}.ckpt")
            log.info("epoch %d (%s) done: %s", epoch + 1, stage, record)

    def train(self) -> TrainLog:
        cfg = self.config
        if cfg.training_mode == "joint":
            self._run_epochs(cfg.epochs, "joint")
        elif cfg.training_mode == "retrieval_only":
            self._run_epochs(cfg.epochs, "joint", retrieval_only=True)
        else:
            self.log.events.append({"event": "stage_start", "stage": "synthesis", "step": self.step_index})
            self._run_epochs(cfg.stage1_epochs or cfg.epochs, "synthesis")
            self.log.events.append({"event": "stage_end", "stage": "synthesis", "step": self.step_index})
            self.freeze_generator()
            self.log.events.append({"event": "stage_start", "stage": "retrieval", "step": self.step_index})
            self._run_epochs(cfg.epochs, "retrieval", epoch_offset=cfg.stage1_epochs or cfg.epochs)
            self.log.events.append({"event": "stage_end", "stage": "retrieval", "step": self.step_index})
        if self.run_dir is not None:
            self.save(self.run_dir / "checkpoints" / "final.ckpt")
        return self.log

    def freeze_generator(self) -> None:
        """Stop G's updates and translate every sketch once."""
        self.generator_frozen = True
        for p in self.generator.parameters():
            p.requires_grad = False
        self._synth_cache = self.translate(self.dataset.images, self.dataset.domains == "sketch")

    def translate(self, images: np.ndarray, mask: np.ndarray | None = None, batch: int = 64) -> np.ndarray:
        out = images.copy()
        idx = np.arange(len(images)) if mask is None else np.nonzero(mask)[0]
        with no_grad():
            for start in range(0, len(idx), batch):
                sel = idx[start:start + batch]
                out[sel] = self.generator(Tensor(images[sel])).data
        return out

    # ------------------------------------------------------------ inference
    @property
    def query_uses_generator(self) -> bool:
        cfg = self.config
        if cfg.training_mode == "retrieval_only":
            return False
        if cfg.training_mode == "two_stage":
            return True
        return cfg.use_adv_cha

    def embed_query(self, sketches: np.ndarray, batch: int = 64) -> np.ndarray:
        return embed_query(sketches, self.generator if self.query_uses_generator else None, self.encoder, batch)

    def embed_gallery(self, photos: np.ndarray, batch: int = 64) -> np.ndarray:
        return embed_gallery(photos, self.encoder, batch)

    def embedding_sets(self, which: str = "unseen") -> tuple[EmbeddingSet, EmbeddingSet]:
        if which == "unseen":
            qi, gi = self.split.test_sketches, self.split.test_photos
        elif which == "seen":
            qi, gi = self.split.heldout_sketches, self.split.heldout_photos
        else:
            raise ValueError(f"split must be 'unseen' or 'seen', got {which!r}")
        ds = self.dataset
        q = EmbeddingSet(self.embed_query(ds.images[qi]), ds.labels[qi], np.full(len(qi), "sketch"))
        g = EmbeddingSet(self.embed_gallery(ds.images[gi]), ds.labels[gi], np.full(len(gi), "photo"))
        return q, g

    def evaluate(self, which: str = "unseen", with_chance: bool = True) -> dict:
        cfg = self.config
        q, g = self.embedding_sets(which)
        metrics = evaluate(rank_gallery(q, g), cfg.map_ks, cfg.prec_ks, cfg.map_normalizer)
        if with_chance:
            metrics["chance_mAP@all"] = chance_map(q.labels, g.labels, ALL, cfg.chance_trials, cfg.seed,
                                                   cfg.map_normalizer)
        return metrics

    # ----------------------------------------------------------- checkpoint
    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, m in (("generator", self.generator), ("discriminator", self.discriminator),
                          ("encoder", self.encoder), ("proxy_bank", self.bank)):
            out.update({f"{prefix}.{k}": v for k, v in m.state_dict().items()})
        return out

    def save(self, path) -> None:
        meta = {"config": self.config.to_dict(), "class_index": {str(k): v for k, v in self.bank.class_index.items()},
                "step": self.step_index, "generator_frozen": self.generator_frozen,
                "split": {"seen_classes": self.split.seen_classes, "unseen_classes": self.split.unseen_classes}}
        save_checkpoint(path, self.state_tensors(), meta)

    def load(self, path) -> dict:
        tensors, meta = load_checkpoint(path)
        for prefix, m in (("generator", self.generator), ("discriminator", self.discriminator),
                          ("encoder", self.encoder), ("proxy_bank", self.bank)):
            m.load_state_dict({k[len(prefix) + 1:]: v for k, v in tensors.items() if k.startswith(prefix + ".")})
        self.step_index = meta.get("step", 0)
        return meta

    @classmethod
    def from_checkpoint(cls, path, dataset: ImageDataset | None = None, run_dir=None) -> "ACNetTrainer":
        _, meta = load_checkpoint(path)
        trainer = cls(ExperimentConfig.from_dict(meta["config"]), dataset=dataset, run_dir=run_dir)
        trainer.load(path)
        return trainer


# -------------------------------------------------------------- inference api
def embed_query(sketches: np.ndarray, generator: Generator | None, encoder: Encoder, batch: int = 64) -> np.ndarray:
    """Sketch -> G -> encoder; with ``generator=None`` the sketch goes straight to the encoder."""
    out = []
    with no_grad():
        for start in range(0, len(sketches), batch):
            x = Tensor(np.asarray(sketches[start:start + batch], dtype=np.float32))
            if generator is not None:
                x = generator(x)
            out.append(encoder(x).data)
    return np.concatenate(out) if out else np.zeros((0, encoder.config.embedding_dim), np.float32)


def embed_gallery(photos: np.ndarray, encoder: Encoder, batch: int = 64) -> np.ndarray:
    return embed_query(photos, None, encoder, batch)


# ----------------------------------------------------------------- top level
def train_joint(config: ExperimentConfig, dataset: ImageDataset | None = None, run_dir=None) -> ACNetTrainer:
    if config.training_mode != "joint":
        raise ConfigError([f"train_joint needs training_mode='joint', got {config.training_mode!r}"])
    trainer = ACNetTrainer(config, dataset, run_dir=run_dir)
    trainer.train()
    return trainer


def train_two_stage(config: ExperimentConfig, dataset: ImageDataset | None = None, run_dir=None) -> ACNetTrainer:
    if config.training_mode != "two_stage":
        raise ConfigError([f"train_two_stage needs training_mode='two_stage', got {config.training_mode!r}"])
    trainer = ACNetTrainer(config, dataset, run_dir=run_dir)
    trainer.train()
    return trainer


def train_and_evaluate(config: ExperimentConfig, dataset: ImageDataset | None = None, run_dir=None) -> tuple[ACNetTrainer, dict]:
    trainer = ACNetTrainer(config, dataset, run_dir=run_dir)
    trainer.train()
    return trainer, trainer.evaluate("unseen")


# --------------------------------------------------------------- ablations
TOGGLE_ROWS: dict[str, dict] = {
    "norm_baseline": {"training_mode": "retrieval_only"},
    "adv_cha": {"use_identity": False, "use_sketch_norm": False},
    "adv_cha_ide": {"use_sketch_norm": False},
    "adv_cha_sketch": {"use_identity": False},
    "full": {},
}
CHANNEL_SWEEP = (4, 8, 16, 32, 64)
BLOCK_SWEEP = (4, 6, 8, 9)
WEIGHT_SWEEP = ((0.1, 10.0), (1.0, 1.0), (10.0, 0.1))


def grid_cells(axes) -> list[tuple[str, dict]]:
    """Expand an axis spec into named override dicts.

    ``axes`` is either a mapping ``{field: [values]}`` (cartesian product) or a
    mapping ``{cell_name: {field: value}}`` of explicit cells.
    """
    if not axes:
        return [("base", {})]
    if all(isinstance(v, dict) for v in axes.values()):
        return [(name, dict(over)) for name, over in axes.items()]
    cells = [("", {})]
    for key, values in axes.items():
        nxt = []
        for name, over in cells:
            for v in values:
                if isinstance(v, (list, tuple)) and key in ("lam_gamma",):
                    extra = {"lam": v[0], "gamma": v[1]}
                else:
                    extra = {key: v}
                label = f"{key}={v}"
                nxt.append(((name + "," if name else "") + label, {**over, **extra}))
        cells = nxt
    return cells


def run_ablation_grid(base: ExperimentConfig, axes, out_dir=None, dataset: ImageDataset | None = None,
                      on_cell=None) -> list[dict]:
    """Train and evaluate one run per grid cell; failures are recorded, not raised.

    ``on_cell(name, trainer, metrics)`` is called after each successful cell,
    e.g. to keep trained models around for further analysis.
    """
    rows = []
    for name, overrides in grid_cells(axes):
        row = {"cell": name, **{k: _plain(v) for k, v in overrides.items()}}
        try:
            cfg = base.replace(**overrides)
            start = time.perf_counter()
            trainer, metrics = train_and_evaluate(cfg, dataset)
            row.update(metrics)
            row["train_seconds"] = round(time.perf_counter() - start, 3)
            row["status"] = "ok"
            if on_cell is not None:
                on_cell(name, trainer, metrics)
        except Exception as exc:  # noqa: BLE001 - a failing cell must not stop the grid
            log.exception("grid cell %s failed", name)
            row["status"] = "error"
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    if out_dir is not None:
        write_grid(rows, out_dir)
    return rows


def write_grid(rows: list[dict], out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "grid.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    keys: list[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(out_dir / "grid.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow(r)
