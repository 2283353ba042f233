"""Frame-level data model for two-channel phoneme timelines.

Time is discretized into 20 ms frames. A spoken phoneme sequence holds one
phoneme id per frame (repeats encode duration); a written phoneme sequence is
the deduplicated stream a G2P front end produces. Run-length codecs convert
between the two forms, and alignment ingestion turns aligner output (seconds)
into frame streams.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _accel
from .errors import AlignmentError, InputError, InventoryError

FRAME_MS = 20
FRAME_S = 0.020
SIL = "SIL"
CHANNELS = ("A", "B")


def _as_frames(values) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.int32)
    if arr.ndim != 1:
        raise InputError(f"expected a 1-d token sequence, got shape {arr.shape}")
    return arr


class PhonemeInventory:
    """Ordered phoneme symbol set with a reserved silence entry."""

    def __init__(self, symbols: Sequence[str]):
        symbols = tuple(symbols)
        if len(set(symbols)) != len(symbols):
            raise InventoryError("inventory symbols must be unique")
        if SIL not in symbols:
            raise InventoryError(f"inventory must contain the silence symbol {SIL!r}")
        self.symbols = symbols
        self.sil_index = symbols.index(SIL)
        self._index = {s: i for i, s in enumerate(symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, PhonemeInventory) and self.symbols == other.symbols

    def id_of(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise InventoryError(f"unknown phoneme symbol {symbol!r}") from None

    def symbol_of(self, phoneme_id: int) -> str:
        if not 0 <= phoneme_id < len(self.symbols):
            raise InventoryError(f"phoneme id {phoneme_id} outside inventory of size {len(self.symbols)}")
        return self.symbols[phoneme_id]

    @property
    def sil(self) -> int:
        return self.sil_index

    @classmethod
    def from_text(cls, text: str) -> "PhonemeInventory":
        symbols = [line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")]
        return cls(symbols)

    @classmethod
    def from_file(cls, path) -> "PhonemeInventory":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def to_file(self, path) -> None:
        Path(path).write_text("".join(s + "\n" for s in self.symbols), encoding="utf-8")


def _check_channel(channel: str) -> str:
    if channel not in CHANNELS:
        raise InputError(f"channel must be one of {CHANNELS}, got {channel!r}")
    return channel


@dataclass(frozen=True, eq=False)
class WrittenPhonemeSequence:
    """Deduplicated phoneme stream for one channel (duplicates across word
    boundaries are legal)."""

    channel: str
    phonemes: np.ndarray

    def __post_init__(self):
        _check_channel(self.channel)
        object.__setattr__(self, "phonemes", _as_frames(self.phonemes))
        self.phonemes.flags.writeable = False

    def __len__(self) -> int:
        return len(self.phonemes)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, WrittenPhonemeSequence)
            and self.channel == other.channel
            and np.array_equal(self.phonemes, other.phonemes)
        )


@dataclass(frozen=True, eq=False)
class SpokenPhonemeSequence:
    """One phoneme id per 20 ms frame; consecutive repeats encode duration."""

    channel: str
    frames: np.ndarray

    def __post_init__(self):
        _check_channel(self.channel)
        object.__setattr__(self, "frames", _as_frames(self.frames))
        self.frames.flags.writeable = False

    def __len__(self) -> int:
        return len(self.frames)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SpokenPhonemeSequence)
            and self.channel == other.channel
            and np.array_equal(self.frames, other.frames)
        )

    def deduplicate(self) -> WrittenPhonemeSequence:
        values, _ = _accel.rle_encode_core(self.frames)
        return WrittenPhonemeSequence(self.channel, values)


@dataclass(frozen=True, eq=False)
class FrameTimeline:
    """Both channels on the shared 20 ms frame grid."""

    channel_a: SpokenPhonemeSequence
    channel_b: SpokenPhonemeSequence
    frame_ms: int = FRAME_MS

    def __post_init__(self):
        if self.frame_ms != FRAME_MS:
            raise InputError(f"frame_ms is fixed at {FRAME_MS}, got {self.frame_ms}")
        if len(self.channel_a) != len(self.channel_b):
            raise InputError(
                f"channel lengths differ: {len(self.channel_a)} vs {len(self.channel_b)}"
            )
        if self.channel_a.channel != "A" or self.channel_b.channel != "B":
            raise InputError("channel_a must carry channel 'A' and channel_b channel 'B'")

    def __len__(self) -> int:
        return len(self.channel_a)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FrameTimeline)
            and self.channel_a == other.channel_a
            and self.channel_b == other.channel_b
        )

    def channel(self, name: str) -> SpokenPhonemeSequence:
        _check_channel(name)
        return self.channel_a if name == "A" else self.channel_b

    @classmethod
    def from_frames(cls, frames_a, frames_b) -> "FrameTimeline":
        return cls(SpokenPhonemeSequence("A", frames_a), SpokenPhonemeSequence("B", frames_b))

    @property
    def duration_s(self) -> float:
        return len(self) * FRAME_S


@dataclass(frozen=True)
class AlignmentEntry:
    """One aligned phoneme segment from a forced aligner."""

    channel: str
    start_s: float
    duration_s: float
    symbol: str

    def __post_init__(self):
        _check_channel(self.channel)
        if self.start_s < 0:
            raise AlignmentError(f"start_s must be >= 0, got {self.start_s}")
        if self.duration_s < 0:
            raise AlignmentError(f"duration_s must be >= 0, got {self.duration_s}")

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s


@dataclass(frozen=True)
class Turn:
    channel: str
    start_s: float
    end_s: float
    text: str

    def __post_init__(self):
        _check_channel(self.channel)
        if self.end_s < self.start_s:
            raise InputError(f"turn end_s {self.end_s} precedes start_s {self.start_s}")


@dataclass(frozen=True)
class DialogueTranscript:
    """Time-ordered turns across both channels."""

    turns: tuple[Turn, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(sorted(self.turns, key=lambda t: t.start_s)))

    def __len__(self) -> int:
        return len(self.turns)

    def channel_turns(self, channel: str) -> list[Turn]:
        _check_channel(channel)
        return [t for t in self.turns if t.channel == channel]


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def quantize_duration(duration_s: float, is_silence: bool = False) -> int:
    """Number of 20 ms frame repetitions for a segment duration.

    Half-up rounding of duration_s / 20 ms; non-silence segments never round
    to zero so constrained decoding can realize every written phoneme. The
    duration is snapped to an integer microsecond grid first: dividing the
    raw float can land one ulp below an exact half (e.g. 0.290 s / 0.020)
    and flip the rounding.
    """
    if duration_s < 0:
        raise InputError(f"duration_s must be >= 0, got {duration_s}")
    us = int(round(duration_s * 1e6))
    count = (us + 10_000) // 20_000
    if not is_silence and count < 1:
        count = 1
    return count


def rle_encode(frames) -> list[tuple[int, int]]:
    """Collapse a frame stream into (phoneme id, run length) pairs."""
    if isinstance(frames, SpokenPhonemeSequence):
        frames = frames.frames
    values, lengths = _accel.rle_encode_core(_as_frames(frames))
    return list(zip(values.tolist(), lengths.tolist()))


def rle_decode(runs: Iterable[tuple[int, int]]) -> np.ndarray:
    """Expand (phoneme id, run length) pairs back into a frame stream."""
    runs = list(runs)
    if not runs:
        return np.empty(0, dtype=np.int32)
    values = np.array([v for v, _ in runs], dtype=np.int32)
    lengths = np.array([n for _, n in runs], dtype=np.int64)
    if (lengths < 1).any():
        raise InputError("run lengths must be >= 1")
    return np.repeat(values, lengths)


def crop_or_pad(seq: SpokenPhonemeSequence, target_len: int, sil: int) -> SpokenPhonemeSequence:
    """Truncate the tail or append silence frames until len == target_len."""
    if target_len < 0:
        raise InputError(f"target_len must be >= 0, got {target_len}")
    frames = seq.frames
    if len(frames) > target_len:
        frames = frames[:target_len]
    elif len(frames) < target_len:
        frames = np.concatenate([frames, np.full(target_len - len(frames), sil, dtype=np.int32)])
    return SpokenPhonemeSequence(seq.channel, frames)


def parse_alignment_file(content: str) -> list[AlignmentEntry]:
    """Parse the whitespace-separated alignment format.

    One entry per line: ``<channel A|B> <start_s> <duration_s> <symbol>``.
    Lines starting with ``#`` and blank lines are ignored. Entries are sorted
    per channel and rejected if segments overlap within a channel.
    """
    entries: list[AlignmentEntry] = []
    for lineno, raw in enumerate(content.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise AlignmentError(f"line {lineno}: expected 4 fields, got {len(parts)}: {raw!r}")
        channel, start_text, dur_text, symbol = parts
        if channel not in CHANNELS:
            raise AlignmentError(f"line {lineno}: channel must be A or B, got {channel!r}")
        try:
            start_s = float(start_text)
            duration_s = float(dur_text)
        except ValueError:
            raise AlignmentError(f"line {lineno}: bad numeric field in {raw!r}") from None
        try:
            entries.append(AlignmentEntry(channel, start_s, duration_s, symbol))
        except AlignmentError as exc:
            raise AlignmentError(f"line {lineno}: {exc}") from None

    ordered: list[AlignmentEntry] = []
    for channel in CHANNELS:
        per = sorted((e for e in entries if e.channel == channel), key=lambda e: e.start_s)
        for prev, cur in zip(per, per[1:]):
            if cur.start_s < prev.end_s - 1e-9:
                raise AlignmentError(
                    f"channel {channel}: segment at {cur.start_s:.3f}s overlaps previous "
                    f"segment ending at {prev.end_s:.3f}s"
                )
        ordered.extend(per)
    return ordered


def alignment_to_spoken(
    entries: Sequence[AlignmentEntry],
    inventory: PhonemeInventory,
    total_frames: int,
) -> FrameTimeline:
    """Expand aligned segments into per-channel frame streams.

    Each segment contributes quantize_duration repetitions of its phoneme;
    silence between segments contributes SIL repetitions. The result is
    padded or cropped to exactly total_frames per channel.
    """
    if total_frames < 0:
        raise InputError(f"total_frames must be >= 0, got {total_frames}")
    sil = inventory.sil
    streams = {}
    for channel in CHANNELS:
        per = sorted((e for e in entries if e.channel == channel), key=lambda e: e.start_s)
        chunks: list[np.ndarray] = []
        cursor = 0.0
        for entry in per:
            gap = entry.start_s - cursor
            if gap > 0:
                n = quantize_duration(gap, is_silence=True)
                if n:
                    chunks.append(np.full(n, sil, dtype=np.int32))
            pid = inventory.id_of(entry.symbol)
            reps = quantize_duration(entry.duration_s, is_silence=(pid == sil))
            if reps:
                chunks.append(np.full(reps, pid, dtype=np.int32))
            cursor = entry.end_s
        frames = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int32)
        streams[channel] = crop_or_pad(SpokenPhonemeSequence(channel, frames), total_frames, sil)
    return FrameTimeline(streams["A"], streams["B"])


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def timeline_to_json(timeline: FrameTimeline, inventory: PhonemeInventory) -> str:
    """Serialize as run-length arrays of phoneme symbols."""
    channels = {}
    for name in CHANNELS:
        runs = rle_encode(timeline.channel(name))
        channels[name] = [[inventory.symbol_of(v), n] for v, n in runs]
    doc = {"frame_ms": FRAME_MS, "channels": channels}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def timeline_from_json(text: str, inventory: PhonemeInventory) -> FrameTimeline:
    doc = json.loads(text)
    if doc.get("frame_ms") != FRAME_MS:
        raise InputError(f"timeline frame_ms must be {FRAME_MS}, got {doc.get('frame_ms')}")
    frames = {}
    for name in CHANNELS:
        runs = [(inventory.id_of(sym), int(n)) for sym, n in doc["channels"][name]]
        frames[name] = rle_decode(runs)
    return FrameTimeline.from_frames(frames["A"], frames["B"])


def save_timeline(timeline: FrameTimeline, inventory: PhonemeInventory, path) -> None:
    Path(path).write_text(timeline_to_json(timeline, inventory) + "\n", encoding="utf-8")


def load_timeline(path, inventory: PhonemeInventory) -> FrameTimeline:
    return timeline_from_json(Path(path).read_text(encoding="utf-8"), inventory)


def transcript_to_jsonl(transcript: DialogueTranscript) -> str:
    lines = []
    for turn in transcript.turns:
        lines.append(
            json.dumps(
                {"channel": turn.channel, "start_s": turn.start_s, "end_s": turn.end_s, "text": turn.text},
                sort_keys=True,
                separators=(",", ":"),
            )
        )
    return "".join(line + "\n" for line in lines)


def transcript_from_jsonl(text: str) -> DialogueTranscript:
    turns = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
            turns.append(Turn(doc["channel"], float(doc["start_s"]), float(doc["end_s"]), str(doc["text"])))
        except (KeyError, ValueError, TypeError) as exc:
            raise InputError(f"transcript line {lineno}: {exc}") from None
    return DialogueTranscript(tuple(turns))


def save_transcript(transcript: DialogueTranscript, path) -> None:
    Path(path).write_text(transcript_to_jsonl(transcript), encoding="utf-8")


def load_transcript(path) -> DialogueTranscript:
    return transcript_from_jsonl(Path(path).read_text(encoding="utf-8"))
