"""Objective evaluation: turn-taking analytics and transcript perplexity.

Event conventions: an IPU is a maximal per-channel speech stretch whose
internal silences are shorter than the threshold (those silences are absorbed
into the IPU). Silence intervals where neither channel holds an IPU are
pauses when the same channel speaks on both sides and gaps when the floor
changes; leading and trailing silence is neither. Overlaps are maximal
stretches of simultaneous raw speech.
"""

from __future__ import annotations

import json
import math
import os
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from ._accel import rle_encode_core
from ._http import post_json
from .errors import InputError, NumericError
from .timeline import CHANNELS, FRAME_MS, FRAME_S, DialogueTranscript, FrameTimeline

EVENT_KINDS = ("IPU", "pause", "gap", "overlap")
SCORER_ENDPOINT_ENV = "SLIDE_SCORER_ENDPOINT"


# ---------------------------------------------------------------------------
# voice activity and events
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VadTrack:
    active: dict[str, np.ndarray]  # per channel, bool per frame

    def __post_init__(self):
        if len(self.active["A"]) != len(self.active["B"]):
            raise InputError("VAD channels must have equal length")

    def __len__(self) -> int:
        return len(self.active["A"])


def derive_vad(timeline: FrameTimeline, sil: int) -> VadTrack:
    """A frame is speech iff its phoneme is not silence."""
    return VadTrack({ch: timeline.channel(ch).frames != sil for ch in CHANNELS})


@dataclass(frozen=True)
class TurnTakingEvent:
    kind: str
    channel: str  # "A", "B", or "both" (overlap, gap)
    start_frame: int
    end_frame: int  # exclusive

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise InputError(f"unknown event kind {self.kind!r}")
        if self.end_frame <= self.start_frame:
            raise InputError("event end must exceed start")

    @property
    def duration_s(self) -> float:
        return (self.end_frame - self.start_frame) * FRAME_S


def _bool_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    values, lengths = rle_encode_core(mask.astype(np.int32))
    starts = np.cumsum(lengths) - lengths
    return [(int(s), int(s + n)) for v, s, n in zip(values, starts, lengths) if v == 1]


def _ipu_spans(active: np.ndarray, threshold_frames: int) -> list[tuple[int, int]]:
    """Merge speech runs separated by sub-threshold silences."""
    runs = _bool_runs(active)
    spans: list[list[int]] = []
    for s, e in runs:
        if spans and s - spans[-1][1] < threshold_frames:
            spans[-1][1] = e
        else:
            spans.append([s, e])
    return [(s, e) for s, e in spans]


def extract_events(vad: VadTrack, ipu_gap_threshold_ms: int = 200) -> list[TurnTakingEvent]:
    if ipu_gap_threshold_ms < FRAME_MS or ipu_gap_threshold_ms % FRAME_MS:
        raise InputError(f"threshold must be a positive multiple of {FRAME_MS} ms")
    thr = ipu_gap_threshold_ms // FRAME_MS
    t = len(vad)
    events: list[TurnTakingEvent] = []
    ipus: dict[str, list[tuple[int, int]]] = {}
    union = np.zeros(t, dtype=bool)
    for ch in CHANNELS:
        ipus[ch] = _ipu_spans(vad.active[ch], thr)
        for s, e in ipus[ch]:
            events.append(TurnTakingEvent("IPU", ch, s, e))
            union[s:e] = True

    for s, e in _bool_runs(vad.active["A"] & vad.active["B"]):
        events.append(TurnTakingEvent("overlap", "both", s, e))

    ends = {}  # frame -> channel whose IPU ends there (ties prefer A)
    starts = {}
    for ch in reversed(CHANNELS):  # A written last wins ties
        for s, e in ipus[ch]:
            ends[e] = ch
            starts[s] = ch
    for s, e in _bool_runs(~union):
        if s == 0 or e == t:
            continue  # leading/trailing silence
        prev_ch = ends[s]
        next_ch = starts[e]
        if prev_ch == next_ch:
            events.append(TurnTakingEvent("pause", prev_ch, s, e))
        else:
            events.append(TurnTakingEvent("gap", "both", s, e))

    events.sort(key=lambda ev: (ev.start_frame, ev.kind, ev.channel))
    return events


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistSummary:
    min: float
    q1: float
    median: float
    mean: float
    q3: float
    max: float

    @classmethod
    def of(cls, values: list[float]) -> "DistSummary":
        lo, q1, med, q3, hi = np.percentile(values, [0, 25, 50, 75, 100])
        return cls(float(lo), float(q1), float(med), float(np.mean(values)), float(q3), float(hi))


@dataclass(frozen=True)
class KindStats:
    count_per_min: float
    seconds_per_min: float
    summary: DistSummary | None


@dataclass(frozen=True)
class TurnTakingReport:
    kinds: dict[str, KindStats]
    total_frames: int

    @property
    def minutes(self) -> float:
        return self.total_frames * FRAME_S / 60.0


def report(events: list[TurnTakingEvent], total_frames: int) -> TurnTakingReport:
    """Per-minute counts, cumulated seconds, and duration distributions."""
    if total_frames <= 0:
        raise InputError("total_frames must be positive")
    minutes = total_frames * FRAME_S / 60.0
    kinds = {}
    for kind in EVENT_KINDS:
        durations = [ev.duration_s for ev in events if ev.kind == kind]
        kinds[kind] = KindStats(
            count_per_min=len(durations) / minutes,
            seconds_per_min=sum(durations) / minutes,
            summary=DistSummary.of(durations) if durations else None,
        )
    return TurnTakingReport(kinds, total_frames)


def report_to_csv(rep: TurnTakingReport) -> str:
    lines = ["kind,count_per_min,seconds_per_min"]
    for kind in EVENT_KINDS:
        st = rep.kinds[kind]
        lines.append(f"{kind},{st.count_per_min:.6f},{st.seconds_per_min:.6f}")
    return "".join(line + "\n" for line in lines)


def report_to_json(rep: TurnTakingReport) -> str:
    doc = {"total_frames": rep.total_frames, "minutes": rep.minutes, "kinds": {}}
    for kind in EVENT_KINDS:
        st = rep.kinds[kind]
        doc["kinds"][kind] = {
            "count_per_min": st.count_per_min,
            "seconds_per_min": st.seconds_per_min,
            "durations": None
            if st.summary is None
            else {
                "min": st.summary.min,
                "q1": st.summary.q1,
                "median": st.summary.median,
                "mean": st.summary.mean,
                "q3": st.summary.q3,
                "max": st.summary.max,
            },
        }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def durations_to_csv(events: list[TurnTakingEvent]) -> str:
    """Per-event durations for external box plotting."""
    lines = ["kind,channel,duration_s"]
    for ev in events:
        lines.append(f"{ev.kind},{ev.channel},{ev.duration_s:.6f}")
    return "".join(line + "\n" for line in lines)


def events_to_json(events: list[TurnTakingEvent]) -> str:
    return json.dumps(
        [
            {"kind": ev.kind, "channel": ev.channel, "start_frame": ev.start_frame, "end_frame": ev.end_frame}
            for ev in events
        ],
        sort_keys=True,
        separators=(",", ":"),
    )


def events_from_json(text: str) -> list[TurnTakingEvent]:
    return [
        TurnTakingEvent(d["kind"], d["channel"], int(d["start_frame"]), int(d["end_frame"]))
        for d in json.loads(text)
    ]


# ---------------------------------------------------------------------------
# transcripts and perplexity
# ---------------------------------------------------------------------------

ST_TOKEN = "<st>"
_TOKEN_KEEP = re.compile(r"[^a-z0-9'<>]+")


def serialize_transcript(transcript: DialogueTranscript) -> str:
    """Concatenate utterances in time order with a speaker-turn token at
    every speaker change; same-speaker turns join with a space."""
    if len(transcript) == 0:
        raise InputError("transcript is empty")
    parts: list[str] = []
    prev_channel: str | None = None
    for turn in transcript.turns:
        if prev_channel is not None and turn.channel != prev_channel:
            parts.append(ST_TOKEN)
        parts.append(turn.text.strip())
        prev_channel = turn.channel
    return " ".join(p for p in parts if p)


def tokenize(text: str) -> list[str]:
    """Whitespace tokens, case-folded, punctuation stripped; the <st> token
    survives intact."""
    out = []
    for raw in text.lower().split():
        tok = _TOKEN_KEEP.sub("", raw)
        if tok:
            out.append(tok)
    return out


UNK = "<unk>"
_BOS = "<s>"


class NgramScorer:
    """Word-level n-gram model with additive smoothing over a closed
    vocabulary plus an unknown token."""

    def __init__(self, order: int, smoothing: float, vocab: set[str],
                 counts: dict[tuple[str, ...], Counter], totals: dict[tuple[str, ...], int]):
        self.order = order
        self.smoothing = smoothing
        self.vocab = vocab
        self._counts = counts
        self._totals = totals

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)  # includes <unk>

    def _map(self, token: str) -> str:
        return token if token in self.vocab else UNK

    def logprob_sum(self, tokens: list[str]) -> tuple[float, int]:
        if not tokens:
            raise InputError("nothing to score: no tokens")
        k = self.smoothing
        v = self.vocab_size
        history = [_BOS] * (self.order - 1)
        total = 0.0
        for token in tokens:
            word = self._map(token)
            ctx = tuple(history[len(history) - (self.order - 1):]) if self.order > 1 else ()
            num = self._counts.get(ctx, Counter()).get(word, 0) + k
            den = self._totals.get(ctx, 0) + k * v
            if num <= 0 or den <= 0:
                raise NumericError(
                    f"zero probability for {word!r} after context {ctx}; "
                    "use additive smoothing > 0 for open text"
                )
            total += math.log(num / den)
            history.append(word)
        return total, len(tokens)


def ngram_train(corpus: list[str], order: int, smoothing: float = 1.0) -> NgramScorer:
    if order < 1:
        raise InputError(f"order must be >= 1, got {order}")
    if smoothing < 0:
        raise InputError("smoothing must be >= 0")
    docs = [tokenize(text) for text in corpus]
    docs = [d for d in docs if d]
    if not docs:
        raise InputError("training corpus is empty")
    vocab = {UNK}
    for doc in docs:
        vocab.update(doc)
    counts: dict[tuple[str, ...], Counter] = {}
    totals: dict[tuple[str, ...], int] = {}
    for doc in docs:
        history = [_BOS] * (order - 1)
        for word in doc:
            ctx = tuple(history[len(history) - (order - 1):]) if order > 1 else ()
            counts.setdefault(ctx, Counter())[word] += 1
            totals[ctx] = totals.get(ctx, 0) + 1
            history.append(word)
    return NgramScorer(order, smoothing, vocab, counts, totals)


@dataclass(frozen=True)
class ExternalScorer:
    """POST /v1/score client; response carries logprob_sum and token_count."""

    endpoint: str
    timeout: float = 30.0
    retries: int = 1

    @classmethod
    def from_env(cls) -> "ExternalScorer | None":
        endpoint = os.environ.get(SCORER_ENDPOINT_ENV, "").strip()
        return cls(endpoint) if endpoint else None

    def logprob_sum(self, text: str) -> tuple[float, int]:
        doc = post_json(
            self.endpoint.rstrip("/") + "/v1/score",
            {"text": text},
            timeout=self.timeout,
            retries=self.retries,
        )
        try:
            return float(doc["logprob_sum"]), int(doc["token_count"])
        except (KeyError, TypeError, ValueError):
            raise InputError(f"scorer response missing fields: {doc}") from None


def perplexity(scorer, text: str, first_n_words: int = 50) -> float:
    """exp(-mean log-probability) over the first first_n_words words."""
    if not text.strip():
        raise InputError("text is empty")
    if isinstance(scorer, ExternalScorer):
        clipped = " ".join(text.split()[:first_n_words])
        total, count = scorer.logprob_sum(clipped)
    else:
        tokens = tokenize(text)[:first_n_words]
        total, count = scorer.logprob_sum(tokens)
    if count == 0:
        raise InputError("no tokens to score")
    return math.exp(-total / count)
