"""The covert channel: boundary-example calibration, frame estimation,
bit transmission by targeted poisoning, and label-difference decoding.

One frame of `frame_size` FL rounds carries one bit per channel. The sender
holds the global model's label on the crafted example to send 0 and flips it
between the two calibrated labels to send 1; the receiver compares the labels
it observes at the first and last round of the frame (a differential
Manchester scheme over model state).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import cycle
from typing import Iterator

import numpy as np

from . import nn
from .data import Dataset, TransformKind, transform
from .nn import LayerSpec, TrainConfig


class EdgeSearchFailure(Exception):
    """The bisection cannot start or proceed (both endpoints classify alike)."""


class BitSourceExhausted(RuntimeError):
    """The sender ran out of bits while a frame was still open."""


@dataclass(frozen=True)
class EdgeFragment:
    """A crafted input sitting on a decision boundary between two labels.

    edge_label is what the model assigns to the example itself; flip_label is
    what it assigns just past the boundary. multi_class marks searches where a
    third label surfaced during bisection (interference risk).
    """
    example: np.ndarray
    edge_label: int
    flip_label: int
    alpha: float
    kind: TransformKind | None = None
    multi_class: bool = False


@dataclass(frozen=True)
class ChannelParams:
    """What receiver shares with sender: frame size plus one edge fragment."""
    frame_size: int
    example: np.ndarray
    edge_label: int
    flip_label: int
    alpha: float = 0.0
    kind: TransformKind | None = None

    def __post_init__(self):
        if self.frame_size < 2:
            raise ValueError("frame size must be >= 2 (read at r=1 and r=f)")
        if self.edge_label == self.flip_label:
            raise ValueError("channel labels must differ")

    @classmethod
    def from_fragment(cls, frame_size: int, frag: EdgeFragment) -> "ChannelParams":
        return cls(frame_size, frag.example, frag.edge_label, frag.flip_label,
                   frag.alpha, frag.kind)


@dataclass
class FrameLog:
    frame_index: int
    round_first: int
    round_last: int
    decoded_bit: int
    score_h_first: float
    score_l_first: float
    score_h_last: float
    score_l_last: float
    sent_bit: int | None = None


def edge_search(model: np.ndarray, spec: list[LayerSpec], kind: TransformKind,
                inputs, eps: float, interval: tuple[float, float] = (0.0, 0.5),
                image_side: int | None = None) -> EdgeFragment:
    """Bisect the transform parameter until it straddles a decision boundary.

    Mirrors the calibration search exactly: classify at both interval ends,
    fail if they agree, otherwise halve toward the half whose endpoints still
    disagree, stopping once the interval is narrower than eps. When a third
    class shows up mid-interval the search keeps the lower half and the
    result is flagged multi_class.
    """
    alpha_high, alpha_low = interval
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not alpha_high < alpha_low:
        raise ValueError("interval must satisfy H < L")

    multi_class = False
    guard = 0
    while True:
        x_high = transform(kind, inputs, alpha_high, image_side)
        y_high = nn.predict_label(model, spec, x_high)
        x_low = transform(kind, inputs, alpha_low, image_side)
        y_low = nn.predict_label(model, spec, x_low)
        if y_high == y_low:
            raise EdgeSearchFailure("cannot be equal")
        alpha_mid = (alpha_low + alpha_high) / 2.0
        x_mid = transform(kind, inputs, alpha_mid, image_side)
        y_mid = nn.predict_label(model, spec, x_mid)
        if y_mid != y_high and y_mid != y_low:
            multi_class = True
        if y_high != y_mid:
            alpha_low = alpha_mid
        else:
            alpha_high = alpha_mid
        if alpha_low - alpha_high < eps:
            return EdgeFragment(x_high, y_high, y_low, alpha_high, kind, multi_class)
        guard += 1
        if guard > 10_000:
            raise EdgeSearchFailure("interval failed to shrink")


@dataclass
class HarvestResult:
    fragments: list[EdgeFragment]
    pairs_tried: int
    successes: int

    @property
    def yield_ratio(self) -> float:
        return self.successes / self.pairs_tried if self.pairs_tried else 0.0


def harvest_edges(model: np.ndarray, spec: list[LayerSpec], dataset: Dataset,
                  kinds, pair_budget: int, seed: int,
                  eps: float | None = None,
                  interval: tuple[float, float] = (0.0, 0.5),
                  same_class: bool = True) -> HarvestResult:
    """Sample example pairs and run the boundary search with each transform.

    eps defaults to one feature position (1/d). Pairs default to same-class
    because cross-class mixes flip the prediction almost surely, which makes
    for fragile channels and an uninformative yield figure.
    """
    if pair_budget < 0:
        raise ValueError("pair budget must be >= 0")
    rng = np.random.default_rng(seed)
    if eps is None:
        eps = 1.0 / dataset.dim
    fragments: list[EdgeFragment] = []
    successes = 0
    by_label = None
    if same_class:
        by_label = {c: np.flatnonzero(dataset.labels == c)
                    for c in range(dataset.n_classes)}
        by_label = {c: idx for c, idx in by_label.items() if len(idx) >= 2}
        if not by_label:
            raise ValueError("no class has two examples to pair")
    for _ in range(pair_budget):
        if same_class:
            label = int(rng.choice(sorted(by_label)))
            i, j = rng.choice(by_label[label], size=2, replace=False)
        else:
            i, j = rng.choice(len(dataset), size=2, replace=False)
        pair = [dataset.features[int(i)], dataset.features[int(j)]]
        for kind in kinds:
            try:
                frag = edge_search(model, spec, kind, pair, eps, interval)
            except EdgeSearchFailure:
                continue
            fragments.append(frag)
            successes += 1
    return HarvestResult(fragments, pair_budget, successes)


def estimate_frame(selection_events, times_selected: int) -> int:
    """Rounds until the client has been selected `times_selected` times."""
    if times_selected < 1:
        raise ValueError("need a positive selection count")
    seen = 0
    for rounds, selected in enumerate(selection_events, start=1):
        if selected:
            seen += 1
            if seen == times_selected:
                return rounds
    raise ValueError(
        f"selection stream ended after {seen} of {times_selected} selections")


def pattern_bits(pattern: str) -> Iterator[int]:
    """Endless repetition of a 0/1 pattern string."""
    if not pattern or any(c not in "01" for c in pattern):
        raise ValueError(f"bit pattern must match (0|1)+, got {pattern!r}")
    return cycle(int(c) for c in pattern)


def random_bits(seed: int) -> Iterator[int]:
    rng = np.random.default_rng(seed)
    while True:
        yield int(rng.integers(0, 2))


def poison_dataset(example: np.ndarray, target_label: int, copies: int,
                   n_classes: int | None = None) -> Dataset:
    """`copies` replicas of the crafted example, all labeled target_label."""
    if copies < 1:
        raise ValueError("need at least one copy")
    features = np.tile(np.asarray(example, dtype=np.float64), (copies, 1))
    labels = np.full(copies, target_label, dtype=np.int64)
    return Dataset(features, labels, n_classes or target_label + 1)


@dataclass
class SenderState:
    """Sender agent: latches a bit and the observed label at each frame start,
    then poisons toward hold (bit 0) or flip (bit 1) whenever selected."""
    spec: list[LayerSpec]
    channels: list[ChannelParams]
    bit_sources: list[Iterator[int]]
    train_cfg: TrainConfig
    copies: int
    start_round: int
    max_update_distance: float | None = None  # optional stealth throttle
    current_bits: list = field(default_factory=list)
    frame_levels: list = field(default_factory=list)
    sent_bits: list = field(default_factory=list)  # per channel

    def __post_init__(self):
        if len(self.bit_sources) != len(self.channels):
            raise ValueError("one bit source per channel")
        sizes = {c.frame_size for c in self.channels}
        if len(sizes) > 1:
            raise ValueError("all channels must share one frame size")
        self.current_bits = [None] * len(self.channels)
        self.frame_levels = [None] * len(self.channels)
        self.sent_bits = [[] for _ in self.channels]

    @property
    def frame_size(self) -> int:
        return self.channels[0].frame_size

    def round_in_frame(self, round_index: int) -> int:
        return (round_index - self.start_round) % self.frame_size + 1

    def step(self, ctx):
        return sender_step(self, ctx)


def sender_step(state: SenderState, ctx):
    """One sender round; returns the model to upload when selected, else None.

    Poisoning cases, per (bit, label now vs frame-start label):
      bit 0, unchanged -> do nothing (upload the received model untrained)
      bit 0, changed   -> train toward the frame-start label
      bit 1, unchanged -> train toward the complementary label
      bit 1, changed   -> do nothing
    """
    m = ctx.model
    r = state.round_in_frame(ctx.round_index)
    if r == 1:
        for i, ch in enumerate(state.channels):
            try:
                b = next(state.bit_sources[i])
            except StopIteration:
                raise BitSourceExhausted(f"channel {i} has no bit for a new frame")
            v = nn.predict_label(m, state.spec, ch.example)
            v_not = ch.flip_label if v == ch.edge_label else ch.edge_label
            state.current_bits[i] = b
            state.frame_levels[i] = (v, v_not)
            state.sent_bits[i].append(b)

    if not ctx.selected:
        return None

    needed = []
    for i, ch in enumerate(state.channels):
        v, v_not = state.frame_levels[i]
        b = state.current_bits[i]
        v_r = nn.predict_label(m, state.spec, ch.example)
        if b == 0 and v_r != v:
            needed.append((ch.example, v))
        elif b == 1 and v_r != v_not:
            needed.append((ch.example, v_not))
    if not needed:
        return m.copy()

    n_classes = state.spec[-1].output_dim
    parts = [poison_dataset(x, t, state.copies, n_classes) for x, t in needed]
    poison = Dataset(
        np.vstack([p.features for p in parts]),
        np.concatenate([p.labels for p in parts]),
        n_classes,
    )
    local = nn.train_local(m, state.spec, poison, state.train_cfg)
    if state.max_update_distance is not None:
        dist = nn.param_distance(local, m)
        if dist > state.max_update_distance:
            local = m + (local - m) * (state.max_update_distance / dist)
    return local


@dataclass
class ReceiverState:
    """Receiver agent: samples the broadcast model's label on each channel's
    example at the first and last round of every frame and decodes by change."""
    spec: list[LayerSpec]
    channels: list[ChannelParams]
    start_round: int
    v_first: list = field(default_factory=list)
    scores_first: list = field(default_factory=list)
    decoded_bits: list = field(default_factory=list)
    frame_logs: list = field(default_factory=list)
    _frame_round_first: int | None = None

    def __post_init__(self):
        k = len(self.channels)
        self.v_first = [None] * k
        self.scores_first = [None] * k
        self.decoded_bits = [[] for _ in range(k)]
        self.frame_logs = [[] for _ in range(k)]

    @property
    def frame_size(self) -> int:
        return self.channels[0].frame_size

    def round_in_frame(self, round_index: int) -> int:
        return (round_index - self.start_round) % self.frame_size + 1

    def step(self, ctx):
        receiver_step(self, ctx)
        # a receiver never trains: when selected it uploads the model it was sent
        return ctx.model.copy() if ctx.selected else None


def receiver_step(state: ReceiverState, ctx):
    """One receiver round; returns the per-channel decoded bits at frame end."""
    m = ctx.model
    r = state.round_in_frame(ctx.round_index)
    if r == 1:
        state._frame_round_first = ctx.round_index
        for i, ch in enumerate(state.channels):
            scores = nn.forward(m, state.spec, ch.example)
            state.v_first[i] = int(np.argmax(scores))
            state.scores_first[i] = (scores[ch.edge_label], scores[ch.flip_label])
        return None
    if r == state.frame_size:
        out = []
        for i, ch in enumerate(state.channels):
            scores = nn.forward(m, state.spec, ch.example)
            v_f = int(np.argmax(scores))
            bit = 0 if state.v_first[i] == v_f else 1
            state.decoded_bits[i].append(bit)
            sh_first, sl_first = state.scores_first[i]
            state.frame_logs[i].append(FrameLog(
                frame_index=len(state.decoded_bits[i]) - 1,
                round_first=state._frame_round_first,
                round_last=ctx.round_index,
                decoded_bit=bit,
                score_h_first=float(sh_first),
                score_l_first=float(sl_first),
                score_h_last=float(scores[ch.edge_label]),
                score_l_last=float(scores[ch.flip_label]),
            ))
            out.append(bit)
        return out
    return None
