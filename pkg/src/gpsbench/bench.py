"""Task streams, the single-pass online protocol, and evaluation metrics.

A class-incremental stream is an ordered list of tasks with disjoint class
sets; the runner visits every stream item exactly once, mixes each incoming
mini-batch with a replay batch, trains, then compresses and offers the
incoming items to the buffer. After each task it fills one row of the
accuracy matrix by evaluating on all test sets seen so far.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import learner as L
from .assembly import draw_replay_batch
from .buffer import MODE_GPS, ReplayBuffer
from .errors import ConfigError, FormatError, NumericalError, StateError
from .imaging import DOMAIN_REPLAY, DOMAIN_STREAM, Image, Rng
from .sampler import gps_sample

CIFAR_RECORD_BYTES = 2 + 32 * 32 * 3

HEAD_NCM = "ncm"
HEAD_SOFTMAX = "softmax"


@dataclass
class Dataset:
    """Labeled train/test images from one source."""

    train: list[Image]
    test: list[Image]

    def class_ids(self):
        return sorted({img.label for img in self.train})


@dataclass
class TaskStream:
    """Ordered tasks with mutually disjoint class sets and per-task test sets."""

    train_tasks: list[list[Image]]
    test_tasks: list[list[Image]]
    class_sets: list[frozenset[int]]

    @property
    def task_count(self):
        return len(self.train_tasks)

    @property
    def stream_length(self):
        return sum(len(t) for t in self.train_tasks)

    def check_invariants(self):
        seen = set()
        for t, classes in enumerate(self.class_sets):
            if seen & classes:
                raise ValueError(f"task {t} shares classes {seen & classes} with earlier tasks")
            seen |= classes
            for img in self.train_tasks[t] + self.test_tasks[t]:
                if img.label not in classes:
                    raise ValueError(f"task {t} holds an image labeled {img.label}")


class AccuracyMatrix:
    """Lower-triangular record: entry (t, i) is accuracy on task i after task t."""

    def __init__(self, task_count):
        if task_count < 1:
            raise ValueError(f"task count must be >= 1, got {task_count}")
        self.task_count = task_count
        self.values = np.full((task_count, task_count), np.nan)

    def set(self, t, i, accuracy):
        if not (0 <= i <= t < self.task_count):
            raise ValueError(f"entry ({t}, {i}) outside the lower triangle")
        if not (0.0 <= accuracy <= 1.0):
            raise ValueError(f"accuracy must lie in [0, 1], got {accuracy}")
        self.values[t, i] = accuracy

    def get(self, t, i):
        return float(self.values[t, i])

    def entries(self):
        """All filled (t, i, accuracy) triples in row-major order."""
        out = []
        for t in range(self.task_count):
            for i in range(t + 1):
                if not math.isnan(self.values[t, i]):
                    out.append((t, i, float(self.values[t, i])))
        return out

    @property
    def final_row_complete(self):
        last = self.values[self.task_count - 1, : self.task_count]
        return not np.isnan(last).any()

    def end_row(self):
        return [float(v) for v in self.values[self.task_count - 1]]


def average_end_accuracy(matrix: AccuracyMatrix) -> float:
    """Mean of the final row: accuracy over all tasks after the last one."""
    if not matrix.final_row_complete:
        raise StateError("final accuracy row is incomplete")
    return float(np.mean(matrix.end_row()))


# --- dataset construction ---


@dataclass(frozen=True)
class SyntheticSpec:
    """Desk-scale dataset: smooth per-class patterns plus per-sample noise."""

    num_classes: int
    resolution: int
    channels: int = 3
    train_per_class: int = 100
    test_per_class: int = 20
    noise_amplitude: float = 20.0
    pattern_seed: int = 7
    pattern_contrast: float = 25.0
    # Dark baseline keeps [0,1]-scaled inputs small enough that SGD at the
    # default learning rate stays stable on a plain ReLU net.
    pattern_baseline: float = 32.0

    def __post_init__(self):
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.resolution < 1:
            raise ConfigError(f"resolution must be >= 1, got {self.resolution}")
        if self.channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {self.channels}")
        if self.noise_amplitude < 0:
            raise ConfigError(f"noise amplitude must be >= 0, got {self.noise_amplitude}")
        if not 0.0 <= self.pattern_baseline <= 255.0:
            raise ConfigError(
                f"pattern baseline must lie in [0, 255], got {self.pattern_baseline}"
            )


# Low spatial frequencies only, so class evidence survives patch sampling.
_PATTERN_WAVES = ((0, 1), (1, 0), (1, 1), (1, -1), (0, 2), (2, 0))


def class_pattern(spec: SyntheticSpec, label) -> np.ndarray:
    """The smooth mean pattern of one class as a float64 HxWxC array."""
    rng = Rng(spec.pattern_seed).split(label)
    r = spec.resolution
    ys, xs = np.mgrid[0:r, 0:r].astype(np.float64)
    channels = []
    for _ in range(spec.channels):
        amps = rng.normal((len(_PATTERN_WAVES),))
        phases = rng.uniform(0.0, 2.0 * np.pi, (len(_PATTERN_WAVES),))
        acc = np.zeros((r, r))
        for (p, q), a, phi in zip(_PATTERN_WAVES, amps, phases):
            acc += a * np.cos(2.0 * np.pi * (p * ys + q * xs) / r + phi)
        scale = acc.std()
        if scale > 0:
            acc /= scale
        channels.append(spec.pattern_baseline + spec.pattern_contrast * acc)
    return np.clip(np.stack(channels, axis=-1), 0.0, 255.0)


def generate_synthetic(spec: SyntheticSpec, rng: Rng) -> Dataset:
    """Seeded noisy samples around each class pattern; train/test drawn separately."""
    patterns = [class_pattern(spec, c) for c in range(spec.num_classes)]

    def draw(count, noise_rng):
        images = []
        for c in range(spec.num_classes):
            for _ in range(count):
                noisy = patterns[c] + spec.noise_amplitude * noise_rng.normal(patterns[c].shape)
                arr = np.clip(np.rint(noisy), 0, 255).astype(np.uint8)
                images.append(Image(arr, c))
        return images

    train = draw(spec.train_per_class, rng.split(0))
    test = draw(spec.test_per_class, rng.split(1))
    return Dataset(train, test)


def load_cifar100(path) -> list[Image]:
    """Parse one CIFAR-100 binary file: per record, coarse byte + fine byte + 3072
    channel-planar bytes. The fine label becomes the class id."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) % CIFAR_RECORD_BYTES != 0:
        raise FormatError(
            f"file length {len(data)} is not a multiple of {CIFAR_RECORD_BYTES}"
        )
    records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 1]
    pixels = records[:, 2:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return [Image(pixels[i].copy(), int(labels[i])) for i in range(len(records))]


def load_cifar100_dataset(train_path, test_path) -> Dataset:
    return Dataset(load_cifar100(train_path), load_cifar100(test_path))


def split_tasks(dataset: Dataset, task_count, classes_per_task, rng: Rng) -> TaskStream:
    """Assign classes to tasks by seeded shuffle; shuffle within-task sample order."""
    classes = dataset.class_ids()
    needed = task_count * classes_per_task
    if needed > len(classes):
        raise ConfigError(
            f"need {needed} classes for {task_count} tasks x {classes_per_task}, "
            f"dataset has {len(classes)}"
        )
    order = rng.shuffled(classes)
    train_tasks, test_tasks, class_sets = [], [], []
    for t in range(task_count):
        chosen = frozenset(order[t * classes_per_task : (t + 1) * classes_per_task])
        train = [img for img in dataset.train if img.label in chosen]
        test = [img for img in dataset.test if img.label in chosen]
        train_tasks.append(rng.shuffled(train))
        test_tasks.append(test)
        class_sets.append(chosen)
    stream = TaskStream(train_tasks, test_tasks, class_sets)
    stream.check_invariants()
    return stream


# --- the online protocol ---


@dataclass
class OnlineConfig:
    """Knobs of one single-pass run (seed-independent; pass the Rng separately)."""

    stream_batch: int = 10
    replay_batch: int = 100
    replay_units: str = "samples"  # or "images": whether replay_batch counts
    # stored exemplars or finished replay images
    learning_rate: float = 0.1
    replay_weight: float = 1.0
    head: str = HEAD_NCM
    normalize_embeddings: bool = False

    def __post_init__(self):
        if self.stream_batch < 1:
            raise ConfigError(f"stream_batch must be >= 1, got {self.stream_batch}")
        if self.replay_batch < 0:
            raise ConfigError(f"replay_batch must be >= 0, got {self.replay_batch}")
        if self.replay_units not in ("samples", "images"):
            raise ConfigError(f"replay_units must be 'samples' or 'images', got {self.replay_units!r}")
        if self.head not in (HEAD_NCM, HEAD_SOFTMAX):
            raise ConfigError(f"head must be 'ncm' or 'softmax', got {self.head!r}")


@dataclass
class RunResult:
    matrix: AccuracyMatrix
    visit_counts: np.ndarray
    offer_count: int
    step_count: int
    final_params: L.ModelParams = None
    buffer: ReplayBuffer = None


def _replay_images(buf, cfg, replay_rng):
    if buf is None or cfg.replay_batch == 0:
        return []
    if buf.mode == MODE_GPS:
        group_size = buf.factor ** 2
        if cfg.replay_units == "samples":
            groups = cfg.replay_batch // group_size
        else:
            groups = cfg.replay_batch
        if groups == 0:
            return []
        return [g.image for g in draw_replay_batch(buf, groups, replay_rng)]
    occupied = buf.occupied_indices
    if not occupied:
        return []
    take = min(cfg.replay_batch, len(occupied))
    chosen = replay_rng.choose(len(occupied), take)
    return [buf.slots[occupied[i]] for i in chosen]


def _evaluate_row(matrix, t, stream, params, buf, cfg):
    if cfg.head == HEAD_NCM:
        prototypes = L.ncm_prototypes(params, buf, normalize=cfg.normalize_embeddings)
    for i in range(t + 1):
        test = stream.test_tasks[i]
        if not test:
            raise StateError(f"task {i} has an empty test set")
        truth = np.array([img.label for img in test])
        if cfg.head == HEAD_NCM:
            preds = L.classify_batch(prototypes, params, test,
                                     normalize=cfg.normalize_embeddings)
        else:
            preds = L.softmax_classify_batch(params, test)
        matrix.set(t, i, float(np.mean(preds == truth)))


def run_online(stream: TaskStream, params: L.ModelParams, buf: ReplayBuffer | None,
               cfg: OnlineConfig, rng: Rng) -> RunResult:
    """Single pass over the task stream; returns the accuracy matrix and counters.

    Per mini-batch: draw replay, take one SGD step on stream + replay, then
    compress (gps mode) and offer each incoming image. On a numerical
    failure the partial result is attached to the raised error.
    """
    if cfg.head == HEAD_NCM and buf is None:
        raise ConfigError("ncm head requires a replay buffer; use head=softmax")
    if buf is not None and buf.mode == MODE_GPS and buf.budget.resolution % buf.factor:
        raise ConfigError(
            f"factor {buf.factor} must divide resolution {buf.budget.resolution} "
            f"for replay training"
        )
    matrix = AccuracyMatrix(stream.task_count)
    visits = np.zeros(stream.stream_length, dtype=np.int64)
    replay_rng = rng.split(DOMAIN_REPLAY)
    result = RunResult(matrix, visits, 0, 0, params, buf)
    position = 0
    for t, task in enumerate(stream.train_tasks):
        for start in range(0, len(task), cfg.stream_batch):
            batch = task[start : start + cfg.stream_batch]
            replay = _replay_images(buf, cfg, replay_rng)
            try:
                L.train_step(params, batch, replay, cfg.replay_weight,
                             cfg.learning_rate, step=result.step_count)
            except NumericalError as exc:
                exc.partial_result = result
                raise
            result.step_count += 1
            for img in batch:
                visits[position] += 1
                if buf is not None:
                    if buf.mode == MODE_GPS:
                        item = gps_sample(img, buf.factor, rng.split(DOMAIN_STREAM, position))
                    else:
                        item = img
                    buf.offer(item)
                    result.offer_count += 1
                position += 1
        _evaluate_row(matrix, t, stream, params, buf, cfg)
    return result
