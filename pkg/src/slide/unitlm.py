"""Phoneme-conditioned unit language model with a synthetic invertible codec.

The codec stands in for pretrained speech-to-unit and unit-to-speech models:
each phoneme owns a disjoint set of unit ids, frames map to units by cycling
through the owner's set along the run, and decoding maps units back to their
owners (with optional majority smoothing when the codec is noisy). Because
ownership is disjoint, the noiseless codec is exactly invertible.

Training concatenates, per channel, a phoneme half and a unit half into one
stream of length 2H; the halves get distinct positional tables and the loss
is restricted to the unit half. Generation teacher-forces the H condition
tokens and samples H unit tokens, masked to the unit id range.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from ._accel import majority_filter, rle_encode_core, run_positions
from .errors import DecodeError, InputError
from .timeline import (
    CHANNELS,
    FRAME_MS,
    FrameTimeline,
    PhonemeInventory,
    SpokenPhonemeSequence,
    crop_or_pad,
)

MAJORITY_WIDTH = 5


# ---------------------------------------------------------------------------
# codec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UnitCodecSpec:
    """Phoneme -> unit mapping with disjoint unit sets per phoneme."""

    unit_vocab_size: int
    mapping: tuple[tuple[int, ...], ...]  # indexed by phoneme id
    units_per_phoneme: int = 3
    noise_rate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.noise_rate < 1:
            raise InputError(f"noise_rate must be in [0, 1), got {self.noise_rate}")
        if self.units_per_phoneme < 1:
            raise InputError("units_per_phoneme must be >= 1")
        seen: set[int] = set()
        for phoneme, units in enumerate(self.mapping):
            if len(units) != self.units_per_phoneme:
                raise InputError(
                    f"phoneme {phoneme} has {len(units)} units, expected {self.units_per_phoneme}"
                )
            for u in units:
                if not 0 <= u < self.unit_vocab_size:
                    raise InputError(f"unit id {u} outside [0, {self.unit_vocab_size})")
                if u in seen:
                    raise InputError(f"unit id {u} mapped to more than one phoneme")
                seen.add(u)

    @property
    def n_phonemes(self) -> int:
        return len(self.mapping)

    def owner_table(self) -> np.ndarray:
        """unit id -> owning phoneme id, -1 for unmapped units."""
        owner = np.full(self.unit_vocab_size, -1, dtype=np.int32)
        for phoneme, units in enumerate(self.mapping):
            for u in units:
                owner[u] = phoneme
        return owner

    def unit_matrix(self) -> np.ndarray:
        return np.array(self.mapping, dtype=np.int32)


def build_codec_spec(
    inventory: PhonemeInventory,
    units_per_phoneme: int = 3,
    noise_rate: float = 0.05,
    seed: int = 0,
) -> UnitCodecSpec:
    """Contiguous unit blocks per phoneme; invertible by construction."""
    k = units_per_phoneme
    mapping = tuple(tuple(range(p * k, (p + 1) * k)) for p in range(len(inventory)))
    return UnitCodecSpec(
        unit_vocab_size=len(inventory) * k,
        mapping=mapping,
        units_per_phoneme=k,
        noise_rate=noise_rate,
        seed=seed,
    )


def codec_spec_to_json(spec: UnitCodecSpec, inventory: PhonemeInventory) -> str:
    doc = {
        "unit_vocab_size": spec.unit_vocab_size,
        "units_per_phoneme": spec.units_per_phoneme,
        "noise_rate": spec.noise_rate,
        "seed": spec.seed,
        "mapping": {inventory.symbol_of(p): list(units) for p, units in enumerate(spec.mapping)},
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def codec_spec_from_json(text: str, inventory: PhonemeInventory) -> UnitCodecSpec:
    doc = json.loads(text)
    mapping_doc = doc["mapping"]
    if set(mapping_doc) != set(inventory.symbols):
        raise InputError("codec mapping symbols do not match the inventory")
    mapping = tuple(
        tuple(int(u) for u in mapping_doc[inventory.symbol_of(p)]) for p in range(len(inventory))
    )
    return UnitCodecSpec(
        unit_vocab_size=int(doc["unit_vocab_size"]),
        mapping=mapping,
        units_per_phoneme=int(doc["units_per_phoneme"]),
        noise_rate=float(doc["noise_rate"]),
        seed=int(doc.get("seed", 0)),
    )


def codec_encode(frames, spec: UnitCodecSpec, seed: int = 0) -> np.ndarray:
    """Map each frame to one of its phoneme's units, cycling along the run,
    then corrupt each unit independently with probability noise_rate."""
    if isinstance(frames, SpokenPhonemeSequence):
        frames = frames.frames
    frames = np.ascontiguousarray(frames, dtype=np.int32)
    if frames.size == 0:
        return np.empty(0, dtype=np.int32)
    if frames.min() < 0 or frames.max() >= spec.n_phonemes:
        raise InputError("frame ids outside the codec's phoneme range")
    cycle = (run_positions(frames) % spec.units_per_phoneme).astype(np.int64)
    units = spec.unit_matrix()[frames, cycle]
    if spec.noise_rate > 0:
        rng = np.random.default_rng(seed)
        corrupt = rng.random(units.shape) < spec.noise_rate
        units = units.copy()
        units[corrupt] = rng.integers(0, spec.unit_vocab_size, int(corrupt.sum()), dtype=np.int32)
    return units.astype(np.int32)


def codec_decode(units, spec: UnitCodecSpec, channel: str = "A") -> SpokenPhonemeSequence:
    """Map units to their owning phonemes; smooth with a width-5 majority
    filter when the codec is noisy (a noiseless codec decodes exactly, so
    smoothing is skipped to preserve the identity)."""
    units = np.ascontiguousarray(units, dtype=np.int64)
    owner = spec.owner_table()
    if units.size and (units.min() < 0 or units.max() >= spec.unit_vocab_size):
        raise DecodeError("unit id outside the codec's unit vocabulary")
    phonemes = owner[units].astype(np.int32)
    if (phonemes < 0).any():
        bad = int(units[phonemes < 0][0])
        raise DecodeError(f"unit id {bad} is not mapped to any phoneme")
    if spec.noise_rate > 0:
        phonemes = majority_filter(phonemes, MAJORITY_WIDTH)
    return SpokenPhonemeSequence(channel, phonemes)


# ---------------------------------------------------------------------------
# conditioned sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SegmentConfig:
    """Segment length; H = frames per half (4000 at the paper-scale 80 s)."""

    segment_s: float = 80.0
    frame_ms: int = FRAME_MS

    def __post_init__(self):
        if self.frame_ms != FRAME_MS:
            raise InputError(f"frame_ms is fixed at {FRAME_MS}")
        h = self.segment_s * 1000.0 / self.frame_ms
        if h < 1 or abs(h - round(h)) > 1e-9:
            raise InputError(f"segment_s {self.segment_s} is not a whole positive frame count")

    @property
    def half_len(self) -> int:
        return round(self.segment_s * 1000.0 / self.frame_ms)


DESK_SEGMENT = SegmentConfig(segment_s=8.0)  # H = 400 for tests and demos


@dataclass(frozen=True, eq=False)
class ConditionedSequence:
    """[phoneme half | unit half] token stream for one channel.

    Phoneme tokens keep their inventory ids; unit tokens are offset by
    n_phonemes so the two ranges are disjoint in one vocabulary.
    """

    channel: str
    tokens: np.ndarray
    half_len: int
    n_phonemes: int

    def __post_init__(self):
        tokens = np.ascontiguousarray(self.tokens, dtype=np.int64)
        object.__setattr__(self, "tokens", tokens)
        h = self.half_len
        if tokens.shape != (2 * h,):
            raise InputError(f"conditioned sequence must have 2H={2*h} tokens, got {tokens.shape}")
        p = self.n_phonemes
        if tokens[:h].size and (tokens[:h].min() < 0 or tokens[:h].max() >= p):
            raise InputError("condition half contains non-phoneme tokens")
        if tokens[h:].size and tokens[h:].min() < p:
            raise InputError("content half contains phoneme-range tokens")

    @property
    def phoneme_half(self) -> np.ndarray:
        return self.tokens[: self.half_len]

    @property
    def unit_half(self) -> np.ndarray:
        return self.tokens[self.half_len :] - self.n_phonemes


def combined_vocab_size(inventory: PhonemeInventory, spec: UnitCodecSpec) -> int:
    return len(inventory) + spec.unit_vocab_size


def lm_positions(half_len: int) -> tuple[np.ndarray, np.ndarray]:
    """(pos_kind, positions): condition table indexed 0..H-1, content table
    re-indexed from 0 so matching positions share an index across halves."""
    kind = np.concatenate(
        [np.full(half_len, nn.CONDITION, dtype=np.int64), np.full(half_len, nn.CONTENT, dtype=np.int64)]
    )
    positions = np.concatenate([np.arange(half_len), np.arange(half_len)]).astype(np.int64)
    return kind, positions


def build_conditioned_example(
    timeline: FrameTimeline,
    spec: UnitCodecSpec,
    seg: SegmentConfig,
    inventory: PhonemeInventory,
    seed: int = 0,
    mask_condition: bool = False,
) -> dict[str, ConditionedSequence]:
    """Per channel: [crop_or_pad(phonemes, H) | codec_encode of the same
    frames]. With mask_condition the phoneme half is replaced by silence
    (the unconditioned ablation)."""
    h = seg.half_len
    p = len(inventory)
    out = {}
    for i, ch in enumerate(CHANNELS):
        ph = crop_or_pad(timeline.channel(ch), h, inventory.sil).frames
        units = codec_encode(ph, spec, seed=seed + i)
        cond = np.full(h, inventory.sil, dtype=np.int64) if mask_condition else ph.astype(np.int64)
        tokens = np.concatenate([cond, units.astype(np.int64) + p])
        out[ch] = ConditionedSequence(ch, tokens, h, p)
    return out


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UnitLMSchedule:
    epochs: int = 20
    lr: float = 1e-3
    seed: int = 0
    loss_on_condition: bool = False  # condition half is given at inference


def segment_timeline(timeline: FrameTimeline, seg: SegmentConfig) -> list[FrameTimeline]:
    """Non-overlapping H-frame segments; a short timeline yields one padded
    segment."""
    h = seg.half_len
    t = len(timeline)
    if t <= h:
        return [timeline]
    out = []
    for start in range(0, t - h + 1, h):
        out.append(
            FrameTimeline.from_frames(
                timeline.channel_a.frames[start : start + h],
                timeline.channel_b.frames[start : start + h],
            )
        )
    return out


def _lm_step_arrays(example: ConditionedSequence, sil: int):
    tokens = example.tokens
    inputs = np.concatenate(([sil], tokens[:-1]))
    return inputs, tokens


def train_unit_lm(
    corpus: list[FrameTimeline],
    spec: UnitCodecSpec,
    seg: SegmentConfig,
    config: nn.ModelConfig,
    schedule: UnitLMSchedule,
    inventory: PhonemeInventory,
    mask_condition: bool = False,
    params: dict[str, np.ndarray] | None = None,
) -> tuple[dict[str, np.ndarray], list[dict]]:
    """Teacher-forced next-token training over the concatenated streams."""
    if not corpus:
        raise InputError("training corpus is empty")
    if config.vocab_size != combined_vocab_size(inventory, spec):
        raise InputError(
            f"config.vocab_size must be {combined_vocab_size(inventory, spec)} "
            f"(phonemes + units), got {config.vocab_size}"
        )
    h = seg.half_len
    if config.max_positions < h:
        raise InputError(f"max_positions {config.max_positions} < half length {h}")
    examples = []
    idx = 0
    for tl in corpus:
        for segment in segment_timeline(tl, seg):
            examples.append(
                build_conditioned_example(
                    segment, spec, seg, inventory, seed=schedule.seed * 100003 + idx,
                    mask_condition=mask_condition,
                )
            )
            idx += 1
    if params is None:
        params = nn.init_params(config)
    opt = nn.Adam(params, lr=schedule.lr)
    rng = np.random.default_rng(schedule.seed)
    kind, positions = lm_positions(h)
    loss_mask = np.ones(2 * h, dtype=bool)
    if not schedule.loss_on_condition:
        loss_mask[:h] = False
    log = []
    for epoch in range(schedule.epochs):
        order = rng.permutation(len(examples))
        losses = []
        for i in order:
            pair = examples[i]
            inputs, targets, dlogits = {}, {}, {}
            for ch in CHANNELS:
                inputs[ch], targets[ch] = _lm_step_arrays(pair[ch], inventory.sil)
            res = nn.forward(
                params, config, inputs["A"], inputs["B"],
                pos_kind=kind, positions=positions, want_cache=True,
            )
            loss = 0.0
            for ch in CHANNELS:
                ce, dl = nn.cross_entropy(res.logits[ch], targets[ch], mask=loss_mask)
                loss += 0.5 * ce
                dlogits[ch] = 0.5 * dl
            nn.backward_and_step(params, config, res.cache, dlogits, opt)
            losses.append(loss)
        log.append({"epoch": epoch, "unit_ce": float(np.mean(losses))})
    return params, log


def unit_half_cross_entropy(
    params: dict[str, np.ndarray],
    config: nn.ModelConfig,
    examples: list[dict[str, ConditionedSequence]],
    sil: int,
) -> float:
    """Mean nats/token on the unit half (perplexity = exp of this)."""
    if not examples:
        raise InputError("no evaluation examples")
    h = examples[0]["A"].half_len
    kind, positions = lm_positions(h)
    mask = np.zeros(2 * h, dtype=bool)
    mask[h:] = True
    total = 0.0
    count = 0
    for pair in examples:
        inputs, targets = {}, {}
        for ch in CHANNELS:
            inputs[ch], targets[ch] = _lm_step_arrays(pair[ch], sil)
        res = nn.forward(params, config, inputs["A"], inputs["B"], pos_kind=kind, positions=positions)
        for ch in CHANNELS:
            ce, _ = nn.cross_entropy(res.logits[ch], targets[ch], mask=mask)
            total += ce * h
            count += h
    return total / count


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def generate_units(
    params: dict[str, np.ndarray],
    config: nn.ModelConfig,
    condition: dict[str, SpokenPhonemeSequence],
    spec: UnitCodecSpec,
    seg: SegmentConfig,
    inventory: PhonemeInventory,
    temperature: float = 1.0,
    seed: int = 0,
) -> dict[str, np.ndarray]:
    """Teacher-force the H condition tokens, then sample H unit tokens.

    Sampling is masked to the unit id range so generated content can never
    contain phoneme tokens. Returns raw unit ids (offset removed), length H
    per channel.
    """
    h = seg.half_len
    p = len(inventory)
    cond_tokens = {}
    for ch in CHANNELS:
        seq = condition[ch]
        cond_tokens[ch] = crop_or_pad(seq, h, inventory.sil).frames.astype(np.int64)
    kind, positions = lm_positions(h)
    session = nn.DecodeSession(params, config, max_len=2 * h, pos_kind=kind, positions=positions)
    rng = np.random.default_rng(seed)
    allowed = np.zeros(config.vocab_size, dtype=bool)
    allowed[p:] = True
    prev = {ch: int(inventory.sil) for ch in CHANNELS}
    out = {ch: np.empty(h, dtype=np.int32) for ch in CHANNELS}
    for t in range(2 * h):
        logits, _ = session.step(prev["A"], prev["B"])
        for ch in CHANNELS:
            if t < h:
                tok = int(cond_tokens[ch][t])
            else:
                tok = nn.sample_token(logits[ch], temperature, rng, allowed=allowed)
                out[ch][t - h] = tok - p
            prev[ch] = tok
    return out


def decoded_match_fraction(
    units: dict[str, np.ndarray],
    condition: dict[str, SpokenPhonemeSequence],
    spec: UnitCodecSpec,
    seg: SegmentConfig,
    inventory: PhonemeInventory,
) -> float:
    """Fraction of frames whose decoded phoneme equals the conditioning
    phoneme, over both channels."""
    h = seg.half_len
    hits = 0
    for ch in CHANNELS:
        decoded = codec_decode(units[ch], spec, channel=ch).frames
        ref = crop_or_pad(condition[ch], h, inventory.sil).frames
        hits += int((decoded == ref).sum())
    return hits / (2 * h)


def units_to_json(units: dict[str, np.ndarray]) -> str:
    doc = {}
    for ch in CHANNELS:
        arr = np.ascontiguousarray(units[ch], dtype=np.int32)
        values, lengths = rle_encode_core(arr)
        doc[ch] = [[int(v), int(n)] for v, n in zip(values, lengths)]
    return json.dumps({"units": doc}, sort_keys=True, separators=(",", ":"))


def units_from_json(text: str) -> dict[str, np.ndarray]:
    doc = json.loads(text)["units"]
    out = {}
    for ch in CHANNELS:
        runs = doc[ch]
        if runs:
            out[ch] = np.repeat(
                np.array([v for v, _ in runs], dtype=np.int32),
                np.array([n for _, n in runs], dtype=np.int64),
            )
        else:
            out[ch] = np.empty(0, dtype=np.int32)
    return out
