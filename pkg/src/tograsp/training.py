"""Target rasterization, the composite grasp loss, the training loop and
an optional contrastive pretraining stage for the two encoders."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image

from . import autodiff as ad
from .autodiff import AdamState, Tape, Tensor, adam_step, read_arrays, write_arrays
from .autodiff.ops import BCE_EPS
from .errors import CheckpointError, ConfigurationError, NumericalError, SamplingError, TrainingError
from .geometry import GraspRect, OrientationBins, bin_encode, rasterize_rect
from .language import Instruction, Vocabulary, build_vocab, generate_instruction, load_templates
from .model import GraspNet, ModelConfig, Outputs, PredictionMaps, save_checkpoint
from .model.checkpoint import check_params, read_sidecar
from .synth import SPLIT_TYPES, Dataset

ENCODER_PREFIXES = ("vis.", "txt.")
SHRINK = 2.0 / 3.0
MAX_SKIP_RATE = 0.05
METRIC_FIELDS = ("iteration", "loss", "L_loc", "L_ori", "L_width", "wall_ms")


@dataclass
class TrainConfig:
    dataset: str = ""
    out: str = "runs/train"
    split: str = "scene"
    variant: str = "graspclip"
    iterations: int = 20000
    lr: float = 1e-4
    weight_decay: float = 1e-5
    beta: float = 1.0
    gamma: float = 1.0
    seed: int = 0
    checkpoint_every: int = 1000
    shrink: float = SHRINK
    task_only_prob: float = 0.25
    max_scenes: int | None = None  # train on the first N training scenes only
    freeze_encoders: bool = False
    encoder_ckpt: str | None = None
    resume: bool = False
    log_every: int = 0

    def validate(self) -> None:
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if self.beta < 0 or self.gamma < 0 or self.weight_decay < 0:
            raise ConfigurationError("beta, gamma and weight_decay must be >= 0")
        if self.iterations < 0 or self.checkpoint_every < 1:
            raise ConfigurationError("need iterations >= 0 and checkpoint_every >= 1")
        if self.split not in SPLIT_TYPES:
            raise ConfigurationError(f"unknown split {self.split!r}; choose from {SPLIT_TYPES}")
        if not 0.0 <= self.shrink < 1.0 or not 0.0 <= self.task_only_prob <= 1.0:
            raise ConfigurationError("shrink must lie in [0, 1) and task_only_prob in [0, 1]")
        if self.freeze_encoders and not self.encoder_ckpt:
            raise ConfigurationError("freeze_encoders requires an encoder checkpoint")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- targets


@dataclass
class TargetMaps:
    """Ground truth for one (scene, instruction) tuple.

    Orientation is stored as a bin index per pixel (-1 off the positives);
    :attr:`M_theta` expands it to the dense one-hot map on demand.
    """

    M_q: np.ndarray  # S x S, 0/1
    theta_bin: np.ndarray  # S x S, int, -1 where M_q == 0
    M_w: np.ndarray  # S x S, width / W_max on positives
    bins: int

    @property
    def loss_mask(self) -> np.ndarray:
        return self.M_q > 0

    @property
    def positives(self) -> np.ndarray:
        """Flat row-major indices of the positive pixels."""
        return np.flatnonzero(self.loss_mask)

    @property
    def M_theta(self) -> np.ndarray:
        S = self.M_q.shape[0]
        out = np.zeros((S, S, self.bins), dtype=np.float32)
        r, c = np.nonzero(self.loss_mask)
        out[r, c, self.theta_bin[r, c]] = 1.0
        return out

    def theta_rows(self, index: np.ndarray) -> np.ndarray:
        """One-hot orientation targets at the given flat pixel indices."""
        b = self.theta_bin.reshape(-1)[np.asarray(index)]
        if (b < 0).any():
            raise SamplingError("orientation rows requested off the positive mask")
        out = np.zeros((len(b), self.bins), dtype=np.float32)
        out[np.arange(len(b)), b] = 1.0
        return out


def compatible_grasps(
    grasps: Sequence[GraspRect], owner_categories: Sequence[str], instruction: Instruction
) -> list[GraspRect]:
    """Grasps that serve the instruction's task on its named object (or any object if task-only)."""
    task, obj = instruction.target_task, instruction.target_object
    return [
        g
        for g, cat in zip(grasps, owner_categories)
        if task in g.tasks and (obj is None or cat == obj)
    ]


def rasterize_targets(
    grasps: Sequence[GraspRect],
    owner_categories: Sequence[str],
    instruction: Instruction,
    config: ModelConfig,
    shrink: float = SHRINK,
) -> TargetMaps:
    """Paint the central band of every compatible grasp; later grasps win overlaps."""
    S = config.size
    bins = OrientationBins(config.bins)
    comp = compatible_grasps(grasps, owner_categories, instruction)
    if not comp:
        raise SamplingError(f"no grasp in the scene is compatible with {instruction.text!r}")
    q = np.zeros((S, S), dtype=np.float32)
    tb = np.full((S, S), -1, dtype=np.int32)
    w = np.zeros((S, S), dtype=np.float32)
    for g in comp:
        m = rasterize_rect(g, S, S, shrink=shrink)
        q[m] = 1.0
        tb[m] = bin_encode(g.theta, bins)
        w[m] = min(g.w / config.w_max, 1.0)
    if not q.any():
        raise SamplingError(f"compatible grasps for {instruction.text!r} rasterize to no pixels")
    return TargetMaps(q, tb, w, config.bins)


# ------------------------------------------------------------------- loss


@dataclass
class LossTerms:
    total: Tensor
    L_loc: float
    L_ori: float
    L_width: float

    @property
    def value(self) -> float:
        return float(self.total.data[0])


def _as_tensor(x) -> Tensor | None:
    if x is None or isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float32))


def target_entropy(t: np.ndarray, mask: np.ndarray) -> float:
    """Mean binary entropy of soft targets over ``mask``; 0 for an empty mask."""
    v = np.clip(t[mask].astype(np.float64), BCE_EPS, 1 - BCE_EPS)
    if v.size == 0:
        return 0.0
    return float(np.mean(-(v * np.log(v) + (1 - v) * np.log1p(-v))))


def loss(maps, targets: TargetMaps, beta: float = 1.0, gamma: float = 1.0) -> LossTerms:
    """``beta * L_loc + gamma * L_ori + L_width`` with orientation and width masked to positives.

    ``maps`` may be network :class:`Outputs` (dense or sparse orientation)
    or plain :class:`PredictionMaps`.
    """
    if isinstance(maps, PredictionMaps):
        maps = Outputs(_as_tensor(maps.M_q), _as_tensor(maps.M_w), _as_tensor(maps.M_theta))
    mask = targets.loss_mask
    l_loc = ad.bce(maps.M_q, targets.M_q)
    if maps.theta_rows is not None:
        idx = np.asarray(maps.theta_index)
        if not np.array_equal(np.sort(idx), targets.positives):
            raise SamplingError("sparse orientation rows must cover exactly the positive pixels")
        l_ori = ad.bce(maps.theta_rows, targets.theta_rows(idx))
    elif maps.M_theta is not None:
        l_ori = ad.bce(maps.M_theta, targets.M_theta, mask=mask)
    else:
        raise SamplingError("outputs carry no orientation prediction")
    # soft width targets: subtract their entropy so a perfect map scores 0
    floor = Tensor(np.array([-target_entropy(targets.M_w, mask)], dtype=np.float32))
    l_w = ad.add(ad.bce(maps.M_w, targets.M_w, mask=mask), floor)
    total = ad.add(ad.add(ad.scale(l_loc, beta), ad.scale(l_ori, gamma)), l_w)
    return LossTerms(total, float(l_loc.data[0]), float(l_ori.data[0]), float(l_w.data[0]))


# --------------------------------------------------------------- sampling


def vocabulary_for(dataset: Dataset, templates: Sequence[str] | None = None) -> Vocabulary:
    templates = load_templates() if templates is None else templates
    return build_vocab(templates, dataset.tasks, [c.name for c in dataset.categories])


def model_config_for(dataset: Dataset, vocab: Vocabulary, variant: str, base: ModelConfig | None = None) -> ModelConfig:
    base = base or ModelConfig()
    kw = dict(size=dataset.size, vocab_size=len(vocab), variant=variant)
    if base.size != dataset.size:
        kw.update(w_max=None, grasp_h=None)
    cfg = replace(base, **kw)  # __post_init__ re-derives w_max and grasp_h when reset
    cfg.validate()
    return cfg


def excluded_pairs(dataset: Dataset, split: str) -> set[tuple[str, str]]:
    """(category, task) pairs that training instructions must never ground."""
    if split != "category_task":
        return set()
    return {tuple(p) for p in dataset.held_out["category_task"]}


def sample_instruction(
    dataset: Dataset,
    scene_id: int,
    rng: np.random.Generator,
    templates: Sequence[str],
    vocab: Vocabulary,
    t_max: int,
    task_only_prob: float,
    exclude: set[tuple[str, str]] = frozenset(),
) -> Instruction:
    """A training instruction for one scene.

    Task-only instructions are drawn only for tasks where no object in the
    scene would turn an excluded (category, task) pair into a positive.
    """
    e = dataset.entries[scene_id]
    cats = e.categories()
    pairs = sorted((o, t) for o, t in e.targets() if (cats[o], t) not in exclude)
    if not pairs:
        raise SamplingError(f"scene {scene_id} has no admissible target")
    if rng.random() < task_only_prob:
        tasks = sorted({t for _, t in pairs})
        tasks = [t for t in tasks if not any((cats[o], t) in exclude for o, tt in e.targets() if tt == t)]
        if tasks:
            t = tasks[int(rng.integers(len(tasks)))]
            return generate_instruction(templates, t, None, rng, vocab, t_max)
    o, t = pairs[int(rng.integers(len(pairs)))]
    return generate_instruction(templates, t, cats[o], rng, vocab, t_max)


def sample_tuple(
    ds: Dataset,
    ids: Sequence[int],
    rng: np.random.Generator,
    templates: Sequence[str],
    vocab: Vocabulary,
    model_config: ModelConfig,
    config: TrainConfig,
    exclude: set[tuple[str, str]] = frozenset(),
) -> tuple[int, Instruction, TargetMaps]:
    """One (scene, instruction, targets) training tuple; raises :class:`SamplingError` to skip."""
    sid = ids[int(rng.integers(len(ids)))]
    e = ds.entries[sid]
    inst = sample_instruction(ds, sid, rng, templates, vocab, model_config.t_max, config.task_only_prob, exclude)
    cats = e.categories()
    targets = rasterize_targets(e.grasps, [cats[o] for o in e.owners], inst, model_config, config.shrink)
    return sid, inst, targets


# ------------------------------------------------------------ persistence


def _save_optimizer(path: Path, state: AdamState) -> None:
    arrays = {f"m/{k}": v for k, v in state.m.items()}
    arrays.update({f"v/{k}": v for k, v in state.v.items()})
    write_arrays(path, arrays)


def _load_optimizer(path: Path, step: int) -> AdamState:
    arrays = read_arrays(path)
    st = AdamState(step=step)
    for k, v in arrays.items():
        kind, name = k.split("/", 1)
        (st.m if kind == "m" else st.v)[name] = v
    return st


def _write_json(path: Path, doc: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1, sort_keys=True))
    os.replace(tmp, path)


def load_encoders(model: GraspNet, path: str | os.PathLike, vocab: Vocabulary | None = None) -> None:
    """Copy encoder parameters from an encoder-only checkpoint into ``model``."""
    doc = read_sidecar(path)
    if vocab is not None and doc.get("vocab") and Vocabulary.from_json(doc["vocab"]) != vocab:
        raise CheckpointError(f"{path}: encoder vocabulary differs from the training vocabulary")
    arrays = read_arrays(path)
    expected = {k: t for k, t in model.params.items() if k.startswith(ENCODER_PREFIXES)}
    check_params(arrays, expected, path)
    for k in expected:
        model.params[k].data = arrays[k].copy()


# ------------------------------------------------------------------- loop


@dataclass
class TrainResult:
    out_dir: Path
    model: GraspNet
    vocab: Vocabulary
    losses: list[float]
    sampled: int
    skipped: int

    @property
    def skip_rate(self) -> float:
        return self.skipped / max(self.sampled, 1)


def _read_metrics(path: Path, before: int) -> list[dict]:
    if not path.exists():
        return []
    with path.open(newline="") as fh:
        return [r for r in csv.DictReader(fh) if int(r["iteration"]) < before]


def train(
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    dataset: Dataset | None = None,
    callback: Callable[[int, LossTerms], None] | None = None,
) -> TrainResult:
    """Single-sample Adam training on the chosen split's training scenes.

    Writes ``metrics.csv``, ``model.ckpt`` (+ ``model.json``), the optimizer
    moments ``optim.ckpt`` and ``state.json`` under ``config.out``. With
    ``resume`` set, an existing checkpoint there is continued bit-exactly.
    """
    config.validate()
    ds = dataset if dataset is not None else Dataset(config.dataset)
    templates = load_templates()
    vocab = vocabulary_for(ds, templates)
    mcfg = model_config_for(ds, vocab, config.variant, model_config)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)

    model = GraspNet(mcfg, seed=config.seed)
    if config.encoder_ckpt:
        load_encoders(model, config.encoder_ckpt, vocab)
    frozen = {k for k in model.params if config.freeze_encoders and k.startswith(ENCODER_PREFIXES)}
    for k in frozen:
        model.params[k].requires_grad = False
    trainable = {k: t for k, t in model.params.items() if k not in frozen}

    state = AdamState()
    start, sampled, skipped = 0, 0, 0
    state_path = out / "state.json"
    if config.resume and state_path.exists():
        st = json.loads(state_path.read_text())
        arrays = read_arrays(out / "model.ckpt")
        check_params(arrays, model.params, out / "model.ckpt")
        for k, t in model.params.items():
            t.data = arrays[k]
        state = _load_optimizer(out / "optim.ckpt", st["adam_step"])
        start, sampled, skipped = st["iteration"], st["sampled"], st["skipped"]

    ids = ds.ids(config.split, "train")
    if config.max_scenes:
        ids = ids[: config.max_scenes]
    if not ids:
        raise ConfigurationError(f"split {config.split!r} has no training scenes")
    exclude = excluded_pairs(ds, config.split)

    metrics_path = out / "metrics.csv"
    kept = _read_metrics(metrics_path, start)
    losses = [float(r["loss"]) for r in kept]
    fh = metrics_path.open("w", newline="")
    writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
    writer.writeheader()
    writer.writerows(kept)

    def checkpoint(it: int) -> None:
        meta = {"iteration": it, "train": config.to_json()}
        save_checkpoint(model, out / "model.ckpt", vocab=vocab, meta=meta)
        _save_optimizer(out / "optim.ckpt", state)
        _write_json(
            state_path,
            {"iteration": it, "adam_step": state.step, "sampled": sampled, "skipped": skipped},
        )

    try:
        for it in range(start, config.iterations):
            t0 = time.perf_counter()
            rng = np.random.default_rng([config.seed, it])
            sampled += 1
            try:
                sid, inst, targets = sample_tuple(ds, ids, rng, templates, vocab, mcfg, config, exclude)
            except SamplingError:
                skipped += 1
                continue
            pos = targets.positives
            for t in trainable.values():
                t.grad = None
            with Tape() as tape:
                outs = model.forward(ds.image(sid), inst.ids(), theta_index=pos, full_theta=False)
                terms = loss(outs, targets, config.beta, config.gamma)
                if not math.isfinite(terms.value):
                    raise TrainingError(f"non-finite loss at iteration {it}")
                try:
                    tape.backward(terms.total)
                except NumericalError as exc:
                    raise TrainingError(f"non-finite gradient at iteration {it}: {exc}") from exc
            try:
                adam_step(trainable, None, state, config.lr, weight_decay=config.weight_decay)
            except TrainingError as exc:
                raise TrainingError(f"iteration {it}: {exc}") from exc
            losses.append(terms.value)
            writer.writerow(
                {
                    "iteration": it,
                    "loss": repr(terms.value),
                    "L_loc": repr(terms.L_loc),
                    "L_ori": repr(terms.L_ori),
                    "L_width": repr(terms.L_width),
                    "wall_ms": f"{(time.perf_counter() - t0) * 1e3:.2f}",
                }
            )
            if callback is not None:
                callback(it, terms)
            if config.log_every and (it + 1) % config.log_every == 0:
                recent = losses[-config.log_every :]
                print(f"iter {it + 1}/{config.iterations} loss {np.mean(recent):.4f} skipped {skipped}/{sampled}", flush=True)
            if (it + 1) % config.checkpoint_every == 0:
                fh.flush()
                checkpoint(it + 1)
    finally:
        fh.close()
    checkpoint(max(config.iterations, start))
    if sampled and skipped / sampled > MAX_SKIP_RATE:
        print(f"warning: skipped {skipped} of {sampled} sampled tuples", flush=True)
    return TrainResult(out, model, vocab, losses, sampled, skipped)


# ------------------------------------------------------------ pretraining


@dataclass
class PretrainConfig:
    dataset: str = ""
    out: str = "runs/pretrain"
    iterations: int = 300
    batch: int = 8
    lr: float = 1e-3
    weight_decay: float = 1e-5
    temperature: float = 0.07
    seed: int = 0
    split: str = "scene"
    margin: int = 2  # px around the footprint box
    max_scenes: int | None = None

    def validate(self) -> None:
        if self.batch < 2:
            raise ConfigurationError(f"contrastive batches need at least 2 pairs, got {self.batch}")
        if not (self.lr > 0 and self.temperature > 0):
            raise ConfigurationError("lr and temperature must be > 0")
        if self.split not in SPLIT_TYPES:
            raise ConfigurationError(f"unknown split {self.split!r}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "PretrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown pretrain config keys: {sorted(unknown)}")
        return cls(**d)


def object_crop(ds: Dataset, scene_id: int, object_index: int, margin: int = 2) -> np.ndarray:
    """Square crop around one object's footprint, resized back to the scene size."""
    S = ds.size
    m = ds.footprint(scene_id, object_index)
    rows, cols = np.nonzero(m)
    if rows.size == 0:
        raise SamplingError(f"object {object_index} of scene {scene_id} has an empty footprint")
    cy, cx = (rows.min() + rows.max()) / 2.0, (cols.min() + cols.max()) / 2.0
    half = max(rows.max() - rows.min(), cols.max() - cols.min()) / 2.0 + margin
    pad = int(math.ceil(half)) + 1  # crops may run past the border
    box = (cx - half + pad, cy - half + pad, cx + half + 1 + pad, cy + half + 1 + pad)
    padded = np.pad(ds.image(scene_id), ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    img = Image.fromarray((padded * 255).round().astype(np.uint8))
    crop = img.resize((S, S), Image.BILINEAR, box=box)
    return np.asarray(crop, dtype=np.float32) / 255.0


@dataclass
class EncoderPair:
    """Encoders plus the pooled-embedding heads used only during pretraining."""

    model: GraspNet
    log_scale: Tensor

    def image_embedding(self, image) -> Tensor:
        _, _, v_high = self.model.visual_encoder(image)
        return ad.mean(ad.reshape(v_high, (-1, v_high.shape[-1])), axis=0)

    def text_embedding(self, ids) -> Tensor:
        return self.model.text_encoder(ids).l_sen


def _stack(rows: list[Tensor]) -> Tensor:
    return ad.concat([ad.reshape(r, (1, r.shape[0])) for r in rows], axis=0)


def contrastive_logits(pair: EncoderPair, images: list, token_ids: list) -> Tensor:
    img = ad.l2_normalize(_stack([pair.image_embedding(x) for x in images]))
    txt = ad.l2_normalize(_stack([pair.text_embedding(t) for t in token_ids]))
    return ad.mul(ad.matmul(img, ad.transpose(txt)), ad.exp(pair.log_scale))


def info_nce(logits: Tensor) -> Tensor:
    """Symmetric cross entropy with the diagonal as the matching pairs."""
    n = logits.shape[0]
    labels = np.arange(n)
    both = ad.add(ad.cross_entropy(logits, labels), ad.cross_entropy(ad.transpose(logits), labels))
    return ad.scale(both, 0.5)


def sample_pairs(
    ds: Dataset,
    ids: Sequence[int],
    rng: np.random.Generator,
    batch: int,
    templates: Sequence[str],
    vocab: Vocabulary,
    t_max: int,
    margin: int,
) -> tuple[list[np.ndarray], list[np.ndarray], list[str]]:
    """``batch`` (object crop, object-form instruction) pairs from distinct scenes."""
    picks = rng.choice(len(ids), size=min(batch, len(ids)), replace=False)
    images, tokens, cats = [], [], []
    for k in picks:
        sid = ids[int(k)]
        e = ds.entries[sid]
        pairs = sorted(e.targets())
        o, t = pairs[int(rng.integers(len(pairs)))]
        cat = e.objects[o]["category"]
        images.append(object_crop(ds, sid, o, margin))
        tokens.append(generate_instruction(templates, t, cat, rng, vocab, t_max).ids())
        cats.append(cat)
    return images, tokens, cats


def pretrain_contrastive(
    config: PretrainConfig, model_config: ModelConfig | None = None, dataset: Dataset | None = None
) -> tuple[Path, EncoderPair, list[float]]:
    """Align pooled visual features with sentence embeddings; writes ``encoder.ckpt``.

    The checkpoint holds only ``vis.*`` and ``txt.*`` parameters and loads
    into :func:`train` via ``encoder_ckpt``.
    """
    config.validate()
    ds = dataset if dataset is not None else Dataset(config.dataset)
    templates = load_templates()
    vocab = vocabulary_for(ds, templates)
    mcfg = model_config_for(ds, vocab, "graspclip", model_config)
    ids = ds.ids(config.split, "train")
    if config.max_scenes:
        ids = ids[: config.max_scenes]
    if len(ids) < config.batch:
        raise ConfigurationError(f"need at least {config.batch} training scenes, found {len(ids)}")
    model = GraspNet(mcfg, seed=config.seed)
    enc = {k: t for k, t in model.params.items() if k.startswith(ENCODER_PREFIXES)}
    pair = EncoderPair(model, Tensor(np.array([math.log(1.0 / config.temperature)], dtype=np.float32), requires_grad=True))
    params = dict(enc, log_scale=pair.log_scale)
    state = AdamState()
    losses = []
    for it in range(config.iterations):
        rng = np.random.default_rng([config.seed, 0xC0, it])
        images, tokens, _ = sample_pairs(ds, ids, rng, config.batch, templates, vocab, mcfg.t_max, config.margin)
        for t in params.values():
            t.grad = None
        with Tape() as tape:
            l = info_nce(contrastive_logits(pair, images, tokens))
            if not np.isfinite(l.data).all():
                raise TrainingError(f"non-finite contrastive loss at iteration {it}")
            tape.backward(l)
        adam_step(params, None, state, config.lr, weight_decay=config.weight_decay)
        losses.append(float(l.data[0]))
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "encoder.ckpt"
    write_arrays(path, {k: t.data for k, t in enc.items()})
    meta = {"kind": "encoder", "pretrain": config.to_json(), "temperature": float(np.exp(-pair.log_scale.data[0]))}
    _write_json(path.with_suffix(".json"), {"model": mcfg.to_json(), "vocab": vocab.to_json(), "meta": meta})
    return path, pair, losses


def retrieval_probe(pair: EncoderPair, images: list, token_ids: list) -> tuple[float, float]:
    """Mean cosine similarity of matched pairs and of mismatched pairs."""
    sim = contrastive_logits(pair, images, token_ids).data / np.exp(pair.log_scale.data[0])
    n = sim.shape[0]
    off = ~np.eye(n, dtype=bool)
    return float(np.diag(sim).mean()), float(sim[off].mean())
