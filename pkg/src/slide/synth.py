"""Synthetic two-channel dialogue corpora with controllable turn-taking.

Dialogues are built event-first: an alternating-floor skeleton of IPUs,
pauses, gaps, and overlaps is sampled at the target per-minute rates, then
phoneme frames are realized inside the IPUs from a word vocabulary. The
stored event list is frame-exact ground truth for the analytics module, by
construction: IPU interiors contain no silence, same-channel IPUs are kept at
least the merge threshold apart, and overlaps only occur at floor changes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import SpecError
from .evalsuite import TurnTakingEvent, events_from_json, events_to_json
from .timeline import (
    CHANNELS,
    FRAME_S,
    DialogueTranscript,
    FrameTimeline,
    PhonemeInventory,
    Turn,
    load_timeline,
    load_transcript,
    save_timeline,
    save_transcript,
)

# words available to the realizer: (word, phoneme symbols)
DEFAULT_WORDS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("yeah", ("Y", "AE")),
    ("right", ("R", "AY", "T")),
    ("okay", ("OW", "K", "EY")),
    ("so", ("S", "OW")),
    ("well", ("W", "EH", "L")),
    ("know", ("N", "OW")),
    ("think", ("TH", "IH", "NG", "K")),
    ("good", ("G", "UH", "D")),
    ("really", ("R", "IH", "L", "IY")),
    ("that", ("DH", "AE", "T")),
    ("was", ("W", "AA", "Z")),
    ("fun", ("F", "AH", "N")),
    ("sure", ("SH", "UH", "R")),
    ("maybe", ("M", "EY", "B", "IY")),
    ("time", ("T", "AY", "M")),
    ("home", ("HH", "OW", "M")),
)

MERGE_THRESHOLD_FRAMES = 10  # 200 ms; must match the analytics default

# Sampled transition means are inflated to offset two downward biases:
# feasibility clamping (overlaps must fit inside both adjacent IPUs and keep
# same-channel IPUs mergeable-free) and dialogue-end clipping (transitions
# crossing the boundary become trailing silence). Calibrated at the default
# targets.
_MEAN_INFLATION = {"pause": 1.04, "gap": 1.0, "overlap": 1.02}


@dataclass(frozen=True)
class CorpusSpec:
    """Targets default to the reference conversational statistics: IPU
    27.3/min, pause 9.9, gap 8.9, overlap 8.2; cumulated 54.5 / 5.8 / 3.7 /
    4.0 s per minute."""

    dialogues: int = 50
    frames_per_dialogue: int = 3000  # one minute
    ipu_rate: float = 27.3
    pause_rate: float = 9.9
    gap_rate: float = 8.9
    overlap_rate: float = 8.2
    ipu_seconds_per_min: float = 54.5
    pause_seconds_per_min: float = 5.8
    gap_seconds_per_min: float = 3.7
    overlap_seconds_per_min: float = 4.0
    ipu_log_sigma: float = 0.45  # log-normal spread of IPU durations
    run_min_frames: int = 2
    run_max_frames: int = 7
    vocabulary: tuple[tuple[str, tuple[str, ...]], ...] = DEFAULT_WORDS
    seed: int = 0

    def __post_init__(self):
        if self.dialogues < 1 or self.frames_per_dialogue < 1:
            raise SpecError("dialogues and frames_per_dialogue must be >= 1")
        for name in ("ipu_rate", "pause_rate", "gap_rate", "overlap_rate"):
            if getattr(self, name) < 0:
                raise SpecError(f"{name} must be >= 0")
        if self.ipu_rate <= 0:
            raise SpecError("ipu_rate must be positive")
        if not 1 <= self.run_min_frames <= self.run_max_frames:
            raise SpecError("run length bounds must satisfy 1 <= min <= max")
        if not self.vocabulary:
            raise SpecError("vocabulary must be non-empty")
        occupied = (
            self.ipu_seconds_per_min
            - self.overlap_seconds_per_min
            + self.pause_seconds_per_min
            + self.gap_seconds_per_min
        )
        if occupied > 60.0:
            raise SpecError(
                f"infeasible targets: speech + pauses + gaps = {occupied:.1f}s per minute"
            )
        for kind, rate, cum in (
            ("pause", self.pause_rate, self.pause_seconds_per_min),
            ("gap", self.gap_rate, self.gap_seconds_per_min),
            ("overlap", self.overlap_rate, self.overlap_seconds_per_min),
        ):
            if rate > 0 and cum <= 0:
                raise SpecError(f"{kind} rate positive but cumulated target is zero")

    @property
    def mean_ipu_frames(self) -> float:
        return self.ipu_seconds_per_min / self.ipu_rate / FRAME_S

    def mean_frames(self, kind: str) -> float:
        rate = getattr(self, f"{kind}_rate")
        cum = getattr(self, f"{kind}_seconds_per_min")
        if rate <= 0:
            return 0.0
        return cum / rate / FRAME_S * _MEAN_INFLATION[kind]

    def to_json(self) -> str:
        doc = {
            "dialogues": self.dialogues,
            "frames_per_dialogue": self.frames_per_dialogue,
            "ipu_rate": self.ipu_rate,
            "pause_rate": self.pause_rate,
            "gap_rate": self.gap_rate,
            "overlap_rate": self.overlap_rate,
            "ipu_seconds_per_min": self.ipu_seconds_per_min,
            "pause_seconds_per_min": self.pause_seconds_per_min,
            "gap_seconds_per_min": self.gap_seconds_per_min,
            "overlap_seconds_per_min": self.overlap_seconds_per_min,
            "ipu_log_sigma": self.ipu_log_sigma,
            "run_min_frames": self.run_min_frames,
            "run_max_frames": self.run_max_frames,
            "vocabulary": [[w, list(ph)] for w, ph in self.vocabulary],
            "seed": self.seed,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "CorpusSpec":
        doc = json.loads(text)
        doc["vocabulary"] = tuple((w, tuple(ph)) for w, ph in doc["vocabulary"])
        return cls(**doc)


@dataclass(frozen=True)
class DialogueSample:
    timeline: FrameTimeline
    transcript: DialogueTranscript
    events: tuple[TurnTakingEvent, ...]


def _sample_ipu_frames(spec: CorpusSpec, rng: np.random.Generator) -> int:
    sigma = spec.ipu_log_sigma
    mu = np.log(spec.mean_ipu_frames) - 0.5 * sigma * sigma
    d = int(round(float(rng.lognormal(mu, sigma))))
    return int(np.clip(d, MERGE_THRESHOLD_FRAMES, 12 * spec.mean_ipu_frames))


def _sample_shifted_gamma(mean: float, minimum: int, rng: np.random.Generator) -> int:
    """Gamma(shape=2) above a floor: exponential-like but with half the
    variance, which keeps corpus-level cumulated durations near target."""
    if mean <= minimum:
        return minimum
    return minimum + int(round(float(rng.gamma(2.0, (mean - minimum) / 2.0))))


def _build_skeleton(
    spec: CorpusSpec, rng: np.random.Generator
) -> tuple[list[tuple[str, int, int]], list[TurnTakingEvent]]:
    """Sample the IPU/transition walk; returns (ipus, events)."""
    t_end = spec.frames_per_dialogue
    rates = np.array([spec.pause_rate, spec.gap_rate, spec.overlap_rate])
    if rates.sum() <= 0:
        rates = np.array([1.0, 0.0, 0.0])  # monologue fallback: pauses only
    probs = rates / rates.sum()
    # deficit scheduler: transition kinds track their target ratios exactly
    # instead of drifting with iid sampling noise
    kind_names = ("pause", "gap", "overlap")
    kind_counts = np.zeros(3)
    thr = MERGE_THRESHOLD_FRAMES

    channel = str(rng.choice(CHANNELS))
    start = int(rng.integers(0, thr + 5))
    dur = _sample_ipu_frames(spec, rng)
    last_end = {c: None for c in CHANNELS}
    ipus: list[tuple[str, int, int]] = []
    events: list[TurnTakingEvent] = []

    while start < t_end and len(ipus) < 10 * spec.frames_per_dialogue:
        end = min(start + dur, t_end)
        if end - start >= 1:
            ipus.append((channel, start, end))
            events.append(TurnTakingEvent("IPU", channel, start, end))
            last_end[channel] = end
        if start + dur >= t_end:
            break
        frontier = start + dur
        deficit = probs * (kind_counts.sum() + 1) - kind_counts
        kind_idx = int(np.argmax(deficit))
        kind_counts[kind_idx] += 1
        kind = kind_names[kind_idx]
        next_dur = _sample_ipu_frames(spec, rng)
        if kind == "pause":
            p = _sample_shifted_gamma(spec.mean_frames("pause"), thr, rng)
            nxt_start, nxt_channel = frontier + p, channel
            if nxt_start < t_end:
                events.append(TurnTakingEvent("pause", channel, frontier, nxt_start))
        elif kind == "gap":
            other = "B" if channel == "A" else "A"
            g = _sample_shifted_gamma(spec.mean_frames("gap"), 1, rng)
            if last_end[other] is not None:
                g = max(g, thr - (frontier - last_end[other]))
            nxt_start, nxt_channel = frontier + g, other
            if nxt_start < t_end:
                events.append(TurnTakingEvent("gap", "both", frontier, nxt_start))
        else:  # overlap
            other = "B" if channel == "A" else "A"
            o = _sample_shifted_gamma(spec.mean_frames("overlap"), 1, rng)
            o = min(o, dur - 1, next_dur - 1)
            if last_end[other] is not None:
                o = min(o, frontier - thr - last_end[other])
            if o < 1:
                # no room to overlap without merging the other channel's
                # IPUs; degrade to a minimal gap
                g = 1 if last_end[other] is None else max(1, thr - (frontier - last_end[other]))
                nxt_start, nxt_channel = frontier + g, other
                if nxt_start < t_end:
                    events.append(TurnTakingEvent("gap", "both", frontier, nxt_start))
            else:
                nxt_start, nxt_channel = frontier - o, other
                ov_end = min(frontier, t_end)
                ov_start = nxt_start
                if ov_end - ov_start >= 1 and nxt_start < t_end:
                    events.append(TurnTakingEvent("overlap", "both", ov_start, ov_end))
        start, dur, channel = nxt_start, next_dur, nxt_channel

    # events whose IPU got clipped entirely must not dangle
    events = [
        ev
        for ev in events
        if ev.end_frame <= t_end or ev.kind == "IPU"
    ]
    events.sort(key=lambda ev: (ev.start_frame, ev.kind, ev.channel))
    return ipus, events


def _fill_ipu(
    length: int,
    spec: CorpusSpec,
    inventory: PhonemeInventory,
    rng: np.random.Generator,
) -> tuple[np.ndarray, list[str]]:
    """Speech frames for one IPU: words realized as phoneme runs."""
    frames: list[int] = []
    words: list[str] = []
    vocab = spec.vocabulary
    while len(frames) < length:
        word, symbols = vocab[int(rng.integers(0, len(vocab)))]
        words.append(word)
        for sym in symbols:
            n = int(rng.integers(spec.run_min_frames, spec.run_max_frames + 1))
            frames.extend([inventory.id_of(sym)] * n)
            if len(frames) >= length:
                break
    return np.array(frames[:length], dtype=np.int32), words


def generate_dialogue(
    spec: CorpusSpec, inventory: PhonemeInventory, rng: np.random.Generator
) -> DialogueSample:
    ipus, events = _build_skeleton(spec, rng)
    t = spec.frames_per_dialogue
    sil = inventory.sil
    frames = {ch: np.full(t, sil, dtype=np.int32) for ch in CHANNELS}
    turns = []
    for channel, s, e in ipus:
        speech, words = _fill_ipu(e - s, spec, inventory, rng)
        frames[channel][s:e] = speech
        turns.append(Turn(channel, s * FRAME_S, e * FRAME_S, " ".join(words)))
    timeline = FrameTimeline.from_frames(frames["A"], frames["B"])
    return DialogueSample(timeline, DialogueTranscript(tuple(turns)), tuple(events))


def generate_corpus(spec: CorpusSpec, inventory: PhonemeInventory) -> list[DialogueSample]:
    """Deterministic: each dialogue draws from a seed derived from
    (spec.seed, index)."""
    samples = []
    for i in range(spec.dialogues):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=spec.seed, spawn_key=(i,)))
        samples.append(generate_dialogue(spec, inventory, rng))
    return samples


def measure_rates(samples: list[DialogueSample]) -> dict[str, dict[str, float]]:
    """Corpus-level occurrences/min and cumulated s/min per event kind."""
    total_minutes = sum(len(s.timeline) for s in samples) * FRAME_S / 60.0
    out: dict[str, dict[str, float]] = {}
    for kind in ("IPU", "pause", "gap", "overlap"):
        evs = [ev for s in samples for ev in s.events if ev.kind == kind]
        out[kind] = {
            "count_per_min": len(evs) / total_minutes,
            "seconds_per_min": sum(ev.duration_s for ev in evs) / total_minutes,
        }
    return out


# ---------------------------------------------------------------------------
# corpus directory layout
# ---------------------------------------------------------------------------

def save_corpus(
    samples: list[DialogueSample], spec: CorpusSpec, directory, inventory: PhonemeInventory
) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "corpus_spec.json").write_text(spec.to_json() + "\n", encoding="utf-8")
    for i, sample in enumerate(samples):
        stem = f"{i:04d}"
        save_timeline(sample.timeline, inventory, directory / f"{stem}.timeline.json")
        save_transcript(sample.transcript, directory / f"{stem}.transcript.jsonl")
        (directory / f"{stem}.events.json").write_text(
            events_to_json(list(sample.events)) + "\n", encoding="utf-8"
        )


def load_corpus(directory, inventory: PhonemeInventory) -> tuple[list[DialogueSample], CorpusSpec]:
    directory = Path(directory)
    spec = CorpusSpec.from_json((directory / "corpus_spec.json").read_text(encoding="utf-8"))
    samples = []
    for tl_path in sorted(directory.glob("*.timeline.json")):
        stem = tl_path.name.removesuffix(".timeline.json")
        timeline = load_timeline(tl_path, inventory)
        transcript = load_transcript(directory / f"{stem}.transcript.jsonl")
        events = tuple(
            events_from_json((directory / f"{stem}.events.json").read_text(encoding="utf-8"))
        )
        samples.append(DialogueSample(timeline, transcript, events))
    return samples, spec


def small_inventory() -> PhonemeInventory:
    """Compact inventory for fast-learning demos and tests."""
    symbols = ["SIL"] + sorted({sym for _, phs in DEFAULT_WORDS[:6] for sym in phs})
    return PhonemeInventory(symbols)


def small_vocabulary() -> tuple[tuple[str, tuple[str, ...]], ...]:
    return DEFAULT_WORDS[:6]


def desk_spec(**overrides) -> CorpusSpec:
    """50 one-minute dialogues at the reference targets."""
    return replace(CorpusSpec(), **overrides) if overrides else CorpusSpec()
