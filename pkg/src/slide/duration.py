"""Two-tower phoneme duration predictor.

Training is teacher-forced next-frame prediction over spoken phoneme streams
with losses restricted to run edges: cross-entropy on the token that starts
each run, plus an L1 penalty on the duration head, supervised a fixed number
of frames after the edge so the token identity precedes its duration.

Generation emits one frame per step. A new token is sampled whenever the
current run's predicted duration is exhausted; in between, the run token is
repeated and fed back through the model. Constrained generation additionally
applies the script replacement rule at sampling events: a candidate that
differs from the frame emitted ``offset`` steps earlier (default 2, the
penultimate frame; frames before the start count as silence) is replaced by
the next unconsumed written phoneme.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from ._accel import rle_encode_core
from .errors import InputError
from .timeline import (
    CHANNELS,
    FRAME_S,
    FrameTimeline,
    SpokenPhonemeSequence,
    WrittenPhonemeSequence,
)


# ---------------------------------------------------------------------------
# training examples and loss
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DurationTrainingExample:
    """Edge supervision derived from a timeline.

    Frame t is an edge iff t == 0 or token[t] != token[t-1]; the duration
    target at an edge is the length of the run starting there. Off-edge
    entries of duration_targets are zero.
    """

    timeline: FrameTimeline
    edge_mask: dict[str, np.ndarray]
    duration_targets: dict[str, np.ndarray]


def make_training_example(timeline: FrameTimeline) -> DurationTrainingExample:
    if len(timeline) < 1:
        raise InputError("timeline must contain at least one frame")
    edge_mask = {}
    duration_targets = {}
    for ch in CHANNELS:
        frames = timeline.channel(ch).frames
        values, lengths = rle_encode_core(frames)
        starts = np.cumsum(lengths) - lengths
        mask = np.zeros(len(frames), dtype=bool)
        mask[starts] = True
        targets = np.zeros(len(frames), dtype=np.float64)
        targets[starts] = lengths
        edge_mask[ch] = mask
        duration_targets[ch] = targets
    return DurationTrainingExample(timeline, edge_mask, duration_targets)


@dataclass(frozen=True)
class DurationLoss:
    total: float
    edge_ce: float
    duration_l1: float
    edge_terms: int
    duration_terms: int


def duration_loss(
    logits: dict[str, np.ndarray],
    durations: dict[str, np.ndarray],
    example: DurationTrainingExample,
    delay: int = 1,
    lam: float = 0.5,
    want_grads: bool = False,
):
    """Edge cross-entropy plus delayed duration L1.

    The duration of the edge at frame e is supervised at frame e + delay;
    terms whose delayed index falls past the sequence end are skipped.
    Returns (DurationLoss, d_logits, d_durations); gradient dicts are None
    unless want_grads.
    """
    if delay < 0:
        raise InputError(f"delay must be >= 0, got {delay}")
    ce_sum = 0.0
    l1_sum = 0.0
    n_edges = 0
    n_dur = 0
    dlogits = {ch: np.zeros_like(logits[ch]) for ch in CHANNELS} if want_grads else None
    ddurs = {ch: np.zeros_like(durations[ch]) for ch in CHANNELS} if want_grads else None

    per_channel = {}
    for ch in CHANNELS:
        frames = example.timeline.channel(ch).frames
        mask = example.edge_mask[ch]
        t = len(frames)
        edges = np.flatnonzero(mask)
        logp = nn.log_softmax(logits[ch])
        ce_sum += -logp[edges, frames[edges]].sum()
        n_edges += len(edges)
        delayed = edges + delay
        keep = delayed < t
        dur_pos = delayed[keep]
        dur_tgt = example.duration_targets[ch][edges[keep]]
        resid = durations[ch][dur_pos] - dur_tgt
        l1_sum += np.abs(resid).sum()
        n_dur += len(dur_pos)
        per_channel[ch] = (edges, logp, dur_pos, resid)

    edge_ce = ce_sum / n_edges if n_edges else 0.0
    dur_l1 = l1_sum / n_dur if n_dur else 0.0
    loss = DurationLoss(edge_ce + lam * dur_l1, edge_ce, dur_l1, n_edges, n_dur)
    if want_grads:
        for ch in CHANNELS:
            frames = example.timeline.channel(ch).frames
            edges, logp, dur_pos, resid = per_channel[ch]
            if n_edges:
                probs = np.exp(logp[edges])
                probs[np.arange(len(edges)), frames[edges]] -= 1.0
                dlogits[ch][edges] = probs / n_edges
            if n_dur:
                ddurs[ch][dur_pos] = lam * np.sign(resid) / n_dur
    return loss, dlogits, ddurs


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DurationTrainSchedule:
    epochs: int = 30
    lr: float = 1e-3
    window: int = 256
    lam: float = 0.5
    delay: int = 1
    seed: int = 0


def _shifted_inputs(timeline: FrameTimeline, sil: int) -> dict[str, np.ndarray]:
    out = {}
    for ch in CHANNELS:
        frames = timeline.channel(ch).frames
        out[ch] = np.concatenate(([sil], frames[:-1])).astype(np.int64)
    return out


def _crop_window(timeline: FrameTimeline, window: int, rng: np.random.Generator) -> FrameTimeline:
    t = len(timeline)
    if t <= window:
        return timeline
    start = int(rng.integers(0, t - window + 1))
    return FrameTimeline.from_frames(
        timeline.channel_a.frames[start : start + window],
        timeline.channel_b.frames[start : start + window],
    )


def train_duration_model(
    corpus: list[FrameTimeline],
    config: nn.ModelConfig,
    schedule: DurationTrainSchedule,
    sil: int,
    params: dict[str, np.ndarray] | None = None,
) -> tuple[dict[str, np.ndarray], list[dict]]:
    """Teacher-forced training over random windows; returns (params, log)."""
    if not corpus:
        raise InputError("training corpus is empty")
    for tl in corpus:
        if len(tl) < 2:
            raise InputError("corpus timelines must have at least 2 frames")
    if params is None:
        params = nn.init_params(config)
    opt = nn.Adam(params, lr=schedule.lr)
    rng = np.random.default_rng(schedule.seed)
    window_len = min(schedule.window, config.max_positions)
    log = []
    for epoch in range(schedule.epochs):
        order = rng.permutation(len(corpus))
        losses = []
        for idx in order:
            window = _crop_window(corpus[idx], window_len, rng)
            example = make_training_example(window)
            inputs = _shifted_inputs(window, sil)
            res = nn.forward(params, config, inputs["A"], inputs["B"], want_cache=True)
            loss, dlogits, ddurs = duration_loss(
                res.logits, res.durations, example,
                delay=schedule.delay, lam=schedule.lam, want_grads=True,
            )
            nn.backward_and_step(params, config, res.cache, dlogits, opt, ddurs)
            losses.append(loss)
        log.append(
            {
                "epoch": epoch,
                "loss": float(np.mean([l.total for l in losses])),
                "edge_ce": float(np.mean([l.edge_ce for l in losses])),
                "duration_l1": float(np.mean([l.duration_l1 for l in losses])),
            }
        )
    return params, log


def edge_token_accuracy(
    params: dict[str, np.ndarray],
    config: nn.ModelConfig,
    timelines: list[FrameTimeline],
    sil: int,
) -> float:
    """Teacher-forced argmax accuracy on edge positions."""
    hits = 0
    total = 0
    for tl in timelines:
        example = make_training_example(tl)
        inputs = _shifted_inputs(tl, sil)
        res = nn.forward(params, config, inputs["A"], inputs["B"])
        for ch in CHANNELS:
            frames = tl.channel(ch).frames
            edges = np.flatnonzero(example.edge_mask[ch])
            pred = res.logits[ch][edges].argmax(axis=1)
            hits += int((pred == frames[edges]).sum())
            total += len(edges)
    return hits / total if total else 0.0


def majority_edge_baseline(
    train: list[FrameTimeline], heldout: list[FrameTimeline]
) -> float:
    """Accuracy of always predicting the training corpus' most frequent edge
    token."""
    counts: dict[int, int] = {}
    for tl in train:
        for ch in CHANNELS:
            values, _ = rle_encode_core(tl.channel(ch).frames)
            for v in values.tolist():
                counts[v] = counts.get(v, 0) + 1
    majority = max(counts, key=counts.get)
    hits = 0
    total = 0
    for tl in heldout:
        for ch in CHANNELS:
            values, _ = rle_encode_core(tl.channel(ch).frames)
            hits += int((values == majority).sum())
            total += len(values)
    return hits / total if total else 0.0


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

@dataclass
class ConstrainedDecodeState:
    """Cursor bookkeeping for script-constrained generation."""

    cursors: dict[str, int] = field(default_factory=lambda: {"A": 0, "B": 0})
    offset: int = 2


@dataclass(frozen=True)
class ReplacementEvent:
    """One firing of the replacement rule; written_index is None once the
    script is exhausted and silence is emitted instead."""

    frame: int
    channel: str
    written_index: int | None


class _ChannelRun:
    __slots__ = ("token", "left", "pending")

    def __init__(self, sil: int):
        self.token = sil
        self.left = 0
        self.pending = 0  # steps until the duration head is read


def _generate(
    predictor,
    sil: int,
    length: int,
    temperature: float,
    rng: np.random.Generator,
    written: dict[str, np.ndarray] | None = None,
    state: ConstrainedDecodeState | None = None,
    delay: int = 1,
) -> tuple[FrameTimeline, list[ReplacementEvent], ConstrainedDecodeState]:
    if length < 1:
        raise InputError(f"length must be >= 1, got {length}")
    state = state or ConstrainedDecodeState()
    offset = state.offset
    emitted = {ch: np.empty(length, dtype=np.int32) for ch in CHANNELS}
    runs = {ch: _ChannelRun(sil) for ch in CHANNELS}
    prev = {ch: sil for ch in CHANNELS}
    events: list[ReplacementEvent] = []

    for t in range(length):
        logits, durs = predictor.step(prev["A"], prev["B"])
        for ch in CHANNELS:
            run = runs[ch]
            if run.pending > 0:
                run.pending -= 1
                if run.pending == 0:
                    d = max(1, int(round(durs[ch])))
                    run.left = max(d - delay, 0)
                else:
                    emitted[ch][t] = run.token
                    continue
            if run.left > 0:
                run.left -= 1
                tok = run.token
            else:
                candidate = nn.sample_token(np.asarray(logits[ch]), temperature, rng)
                tok = candidate
                if written is not None:
                    ref = emitted[ch][t - offset] if t - offset >= 0 else sil
                    if candidate != ref:
                        cursor = state.cursors[ch]
                        if cursor < len(written[ch]):
                            tok = int(written[ch][cursor])
                            events.append(ReplacementEvent(t, ch, cursor))
                            state.cursors[ch] = cursor + 1
                        else:
                            tok = sil
                            events.append(ReplacementEvent(t, ch, None))
                run.token = tok
                run.pending = delay
            emitted[ch][t] = tok
        prev = {ch: int(emitted[ch][t]) for ch in CHANNELS}
    timeline = FrameTimeline.from_frames(emitted["A"], emitted["B"])
    return timeline, events, state


def _session(params, config: nn.ModelConfig, length: int) -> nn.DecodeSession:
    # training crops windows to max_positions, so longer generations reuse
    # position indices cyclically (random crops leave position 0 unbiased)
    positions = np.arange(length, dtype=np.int64) % config.max_positions
    return nn.DecodeSession(params, config, max_len=length, positions=positions)


def generate_unconditional(
    params: dict[str, np.ndarray],
    config: nn.ModelConfig,
    sil: int,
    length: int,
    temperature: float = 1.0,
    seed: int = 0,
    delay: int = 1,
) -> FrameTimeline:
    """Joint two-channel ancestral generation, duration head driving run
    lengths."""
    session = _session(params, config, length)
    rng = np.random.default_rng(seed)
    timeline, _, _ = _generate(session, sil, length, temperature, rng, delay=delay)
    return timeline


def generate_constrained(
    params: dict[str, np.ndarray],
    config: nn.ModelConfig,
    written: dict[str, WrittenPhonemeSequence],
    sil: int,
    length: int,
    temperature: float = 1.0,
    seed: int = 0,
    state: ConstrainedDecodeState | None = None,
    delay: int = 1,
    predictor=None,
) -> tuple[FrameTimeline, list[ReplacementEvent], ConstrainedDecodeState]:
    """Script-constrained generation; see the module docstring for the rule.

    ``predictor`` overrides the model session (any object with a
    DecodeSession-compatible ``step``), which is how the cooperative test
    stubs drive the rule.
    """
    for ch in CHANNELS:
        if ch not in written or len(written[ch]) == 0:
            raise InputError(f"written sequence for channel {ch} must be non-empty")
    scripts = {ch: np.asarray(written[ch].phonemes, dtype=np.int64) for ch in CHANNELS}
    if predictor is None:
        predictor = _session(params, config, length)
    rng = np.random.default_rng(seed)
    return _generate(
        predictor, sil, length, temperature, rng, written=scripts, state=state, delay=delay
    )


def cursor_coverage(state: ConstrainedDecodeState, written: dict[str, WrittenPhonemeSequence]) -> float:
    """Fraction of written phonemes consumed, over both channels."""
    consumed = sum(state.cursors[ch] for ch in CHANNELS)
    total = sum(len(written[ch]) for ch in CHANNELS)
    return consumed / total if total else 1.0


# ---------------------------------------------------------------------------
# overlap post-processing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OverlapPolicy:
    """Silence insertion policy: overlaps strictly longer than trigger_s are
    cut back to cap_s."""

    trigger_s: float = 0.6
    cap_s: float = 0.3

    def __post_init__(self):
        if self.cap_s > self.trigger_s:
            raise InputError("cap_s must not exceed trigger_s")
        for name in ("trigger_s", "cap_s"):
            val = getattr(self, name)
            if val <= 0 or abs(val / FRAME_S - round(val / FRAME_S)) > 1e-9:
                raise InputError(f"{name} must be a positive multiple of {FRAME_S}s, got {val}")

    @property
    def trigger_frames(self) -> int:
        return round(self.trigger_s / FRAME_S)

    @property
    def cap_frames(self) -> int:
        return round(self.cap_s / FRAME_S)


def _region_bounds(active: np.ndarray, idx: int) -> tuple[int, int]:
    """Bounds [start, end) of the contiguous active region containing idx."""
    start = idx
    while start > 0 and active[start - 1]:
        start -= 1
    end = idx
    n = len(active)
    while end < n and active[end]:
        end += 1
    return start, end


def postprocess_overlaps(
    timeline: FrameTimeline, sil: int, policy: OverlapPolicy | None = None
) -> FrameTimeline:
    """Insert silence before late-starting speech so long overlaps shrink.

    Overlap runs strictly longer than the trigger get silence inserted, in
    the channel whose speech region started later (ties break toward B), at
    that region's onset. The shift is sized so the run's residual overlap is
    exactly the cap even when the later region is fully contained in the
    other channel's speech. Channels are truncated back to the original
    length afterwards.
    """
    policy = policy or OverlapPolicy()
    trigger = policy.trigger_frames
    cap = policy.cap_frames
    frames = {ch: timeline.channel(ch).frames.copy() for ch in CHANNELS}
    orig_len = len(timeline)

    while True:
        n = min(len(frames["A"]), len(frames["B"]))
        active = {ch: frames[ch][:n] != sil for ch in CHANNELS}
        both = active["A"] & active["B"]
        values, lengths = rle_encode_core(both.astype(np.int32))
        starts = np.cumsum(lengths) - lengths
        hit = None
        for v, s, ln in zip(values, starts, lengths):
            if v == 1 and ln > trigger:
                hit = (int(s), int(ln))
                break
        if hit is None:
            break
        s, _ = hit
        onset = {ch: _region_bounds(active[ch], s)[0] for ch in CHANNELS}
        later = "B" if onset["B"] >= onset["A"] else "A"
        other = "A" if later == "B" else "B"
        other_end = _region_bounds(active[other], s)[1]
        shift = (other_end - s) - cap
        frames[later] = np.insert(frames[later], s, np.full(shift, sil, dtype=np.int32))

    return FrameTimeline.from_frames(
        _pad_to(frames["A"], orig_len, sil), _pad_to(frames["B"], orig_len, sil)
    )


def _pad_to(arr: np.ndarray, n: int, sil: int) -> np.ndarray:
    if len(arr) >= n:
        return arr[:n]
    return np.concatenate([arr, np.full(n - len(arr), sil, dtype=np.int32)])


def overlap_runs(timeline: FrameTimeline, sil: int) -> list[tuple[int, int]]:
    """[(start, end)) frame spans where both channels are non-silent."""
    both = (timeline.channel_a.frames != sil) & (timeline.channel_b.frames != sil)
    values, lengths = rle_encode_core(both.astype(np.int32))
    starts = np.cumsum(lengths) - lengths
    return [(int(s), int(s + ln)) for v, s, ln in zip(values, starts, lengths) if v == 1]


def events_to_json(events: list[ReplacementEvent]) -> list[dict]:
    return [
        {"frame": e.frame, "channel": e.channel, "written_index": e.written_index}
        for e in events
    ]


def silence_fraction(timeline: FrameTimeline, sil: int) -> float:
    total = 2 * len(timeline)
    if total == 0:
        return 0.0
    n_sil = int((timeline.channel_a.frames == sil).sum() + (timeline.channel_b.frames == sil).sum())
    return n_sil / total


def seconds_to_frames(seconds: float) -> int:
    return int(round(seconds / FRAME_S))
