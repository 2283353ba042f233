"""Textual dialogue continuation via an external chat endpoint or an offline
Markov stub.

The prompt is the sample dialogue rendered as channel-tagged lines followed
by a fixed instruction block. Responses are parsed back into transcripts;
lines without a channel tag attach to the previous turn. Timestamps are
sequential placeholders (one second per turn): real timing is owned by the
duration predictor downstream.
"""

from __future__ import annotations

import json
import os
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._http import post_json
from .errors import FormatError, InputError
from .timeline import CHANNELS, DialogueTranscript, Turn

INSTRUCTION = (
    "Generate conversations in a similar style but on different topics. "
    "The conversations should maintain a casual, conversational tone with "
    "ample use of fillers and backchannels. Short utterances may consist of "
    "single words like 'yes,' 'okay,' 'right,' and so on. Each conversation "
    "should include at least 20 turns of dialogue."
)

ENDPOINT_ENV = "SLIDE_LLM_ENDPOINT"
TOKEN_ENV = "SLIDE_LLM_TOKEN"

_MARKER = re.compile(r"\[[^\]]*\]")
_TURN_LINE = re.compile(r"^\s*([ABab])\s*:\s*(.*)$")


@dataclass(frozen=True)
class PromptTemplate:
    """Sample dialogue plus the instruction block appended to every prompt."""

    sample_transcript: str
    instruction: str = INSTRUCTION

    def __post_init__(self):
        if "at least 20 turns" not in self.instruction:
            raise InputError("instruction must request at least 20 turns")

    @property
    def text(self) -> str:
        return f"{self.sample_transcript}\n\n{self.instruction}"


def strip_markers(text: str) -> str:
    """Remove bracketed dialogue event markers like [laughter]."""
    return " ".join(_MARKER.sub(" ", text).split())


def render_tagged(transcript: DialogueTranscript) -> str:
    lines = []
    for turn in transcript.turns:
        text = strip_markers(turn.text)
        lines.append(f"{turn.channel}: {text}")
    return "\n".join(lines)


def build_prompt(transcript: DialogueTranscript, instruction: str = INSTRUCTION) -> str:
    if len(transcript) == 0:
        raise InputError("prompt transcript is empty")
    return PromptTemplate(render_tagged(transcript), instruction).text


def parse_dialogue_text(text: str) -> DialogueTranscript:
    """Channel-tagged lines into turns; untagged lines attach to the
    previous turn, leading untagged lines are dropped."""
    turns: list[tuple[str, list[str]]] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        m = _TURN_LINE.match(line)
        if m:
            turns.append((m.group(1).upper(), [m.group(2).strip()]))
        elif turns:
            turns[-1][1].append(line)
    if not turns:
        raise FormatError(f"no channel-tagged turns in response: {text[:500]!r}")
    built = []
    for i, (channel, parts) in enumerate(turns):
        built.append(Turn(channel, float(i), float(i + 1), " ".join(p for p in parts if p)))
    return DialogueTranscript(tuple(built))


# ---------------------------------------------------------------------------
# backends
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HttpChatBackend:
    """POST /v1/generate client with a configurable auth header."""

    endpoint: str
    token: str = ""
    auth_header: str = "Authorization"
    timeout: float = 60.0
    retries: int = 1

    @classmethod
    def from_env(cls) -> "HttpChatBackend | None":
        endpoint = os.environ.get(ENDPOINT_ENV, "").strip()
        if not endpoint:
            return None
        return cls(endpoint, token=os.environ.get(TOKEN_ENV, ""))

    def generate(self, prompt: str, max_turns: int = 24, temperature: float = 1.0,
                 seed: int = 0) -> str:
        headers = {self.auth_header: self.token} if self.token else None
        doc = post_json(
            self.endpoint.rstrip("/") + "/v1/generate",
            {"prompt": prompt, "max_turns": max_turns, "temperature": temperature},
            headers=headers,
            timeout=self.timeout,
            retries=self.retries,
        )
        if "text" not in doc or not isinstance(doc["text"], str):
            raise FormatError(f"generate response missing 'text': {doc}")
        return doc["text"]


_START = "<s>"
_END = "</s>"


class MarkovStub:
    """Hermetic chat backend: a word-level Markov chain over corpus turns.

    The training stream interleaves turn-switch tokens (<turn:A>, <turn:B>)
    with lowercased words; each dialogue is wrapped in start/end sentinels
    and generation restarts at the start context whenever the end sentinel
    is drawn, so every emitted transition inside a dialogue was observed in
    the corpus.
    """

    def __init__(self, order: int, transitions: dict[tuple[str, ...], Counter]):
        self.order = order
        self.transitions = transitions

    def generate(self, prompt: str, max_turns: int = 24, temperature: float = 1.0,
                 seed: int = 0) -> str:
        del prompt, temperature  # the stub is unconditional
        rng = np.random.default_rng(seed)
        lines: list[str] = []
        current_channel: str | None = None
        current_words: list[str] = []

        def flush() -> int:
            nonlocal current_channel, current_words
            emitted = 0
            if current_channel is not None and current_words:
                lines.append(f"{current_channel}: {' '.join(current_words)}")
                emitted = 1
            current_channel, current_words = None, []
            return emitted

        context = (_START,) * self.order
        turns = 0
        guard = 0
        while turns < max_turns and guard < 500 * max_turns:
            guard += 1
            options = self.transitions.get(context)
            if not options:
                context = (_START,) * self.order
                continue
            words = sorted(options)
            weights = np.array([options[w] for w in words], dtype=np.float64)
            token = words[int(rng.choice(len(words), p=weights / weights.sum()))]
            if token == _END:
                turns += flush()
                context = (_START,) * self.order
                continue
            if token.startswith("<turn:"):
                turns += flush()
                current_channel = token[6:-1]
            else:
                current_words.append(token)
            context = (*context[1:], token)
        flush()
        return "\n".join(lines)

    def generate_tokens(self, max_tokens: int, seed: int = 0) -> list[str]:
        """Raw token stream including sentinels, for containment checks."""
        rng = np.random.default_rng(seed)
        context = (_START,) * self.order
        out = []
        while len(out) < max_tokens:
            options = self.transitions.get(context)
            if not options:
                break
            words = sorted(options)
            weights = np.array([options[w] for w in words], dtype=np.float64)
            token = words[int(rng.choice(len(words), p=weights / weights.sum()))]
            out.append(token)
            context = (_START,) * self.order if token == _END else (*context[1:], token)
        return out


def dialogue_token_stream(transcript: DialogueTranscript) -> list[str]:
    tokens = [_START]
    for turn in transcript.turns:
        tokens.append(f"<turn:{turn.channel}>")
        tokens.extend(strip_markers(turn.text).lower().split())
    tokens.append(_END)
    return tokens


def train_markov_stub(corpus: list[DialogueTranscript], order: int = 1) -> MarkovStub:
    if order < 1:
        raise InputError(f"order must be >= 1, got {order}")
    if not corpus:
        raise InputError("stub training corpus is empty")
    transitions: dict[tuple[str, ...], Counter] = {}
    for transcript in corpus:
        tokens = dialogue_token_stream(transcript)
        padded = [_START] * (order - 1) + tokens
        for i in range(len(padded) - order):
            ctx = tuple(padded[i : i + order])
            transitions.setdefault(ctx, Counter())[padded[i + order]] += 1
    return MarkovStub(order, transitions)


def generate_dialogue(backend, prompt: str, max_turns: int = 24, temperature: float = 1.0,
                      seed: int = 0) -> DialogueTranscript:
    """Run the backend and parse its response into a transcript."""
    text = backend.generate(prompt, max_turns=max_turns, temperature=temperature, seed=seed)
    return parse_dialogue_text(text)


def append_audit(path, record: dict) -> None:
    """One JSON line per prompt/response exchange."""
    with open(Path(path), "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")


def sample_transcripts() -> list[DialogueTranscript]:
    """Built-in seed dialogues (prompt samples and stub training data)."""
    from importlib import resources

    from .timeline import transcript_from_jsonl

    out = []
    data = resources.files("slide.data")
    for name in sorted(p.name for p in data.iterdir() if p.name.startswith("sample_dialogue_")):
        out.append(transcript_from_jsonl(data.joinpath(name).read_text(encoding="utf-8")))
    return out
