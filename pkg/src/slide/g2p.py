"""Grapheme-to-phoneme conversion via lexicon lookup with a rule fallback.

Words are looked up in a CMU-style pronunciation lexicon; out-of-vocabulary
words fall back to a deterministic per-letter sound table so the pipeline
never stalls on unseen text. Silence phonemes are inserted at sentence
boundaries (turn changes and terminal punctuation).
"""

from __future__ import annotations

import json
import re
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InputError, InventoryError
from .timeline import (
    CHANNELS,
    DialogueTranscript,
    PhonemeInventory,
    WrittenPhonemeSequence,
)

# Per-letter fallback sounds for OOV words. Digraphs and context rules are
# deliberately out of scope; this only has to be deterministic and non-empty.
LETTER_SOUNDS = {
    "A": ("AE",),
    "B": ("B",),
    "C": ("K",),
    "D": ("D",),
    "E": ("EH",),
    "F": ("F",),
    "G": ("G",),
    "H": ("HH",),
    "I": ("IH",),
    "J": ("JH",),
    "K": ("K",),
    "L": ("L",),
    "M": ("M",),
    "N": ("N",),
    "O": ("AA",),
    "P": ("P",),
    "Q": ("K",),
    "R": ("R",),
    "S": ("S",),
    "T": ("T",),
    "U": ("AH",),
    "V": ("V",),
    "W": ("W",),
    "X": ("K", "S"),
    "Y": ("Y",),
    "Z": ("Z",),
}

_WORD_KEEP = re.compile(r"[^A-Z']+")
_SENTENCE_END = (".", "?", "!")


def normalize_word(word: str) -> str:
    """Uppercase and strip everything but letters and apostrophes."""
    return _WORD_KEEP.sub("", word.upper()).strip("'")


class Lexicon:
    """Immutable word -> phoneme-id pronunciation table."""

    def __init__(self, entries: dict[str, tuple[str, ...]], inventory: PhonemeInventory):
        self.inventory = inventory
        self._ids: dict[str, tuple[int, ...]] = {}
        for word, symbols in entries.items():
            if not word:
                raise InputError("lexicon words must be non-empty")
            if not symbols:
                raise InputError(f"lexicon entry for {word!r} has no phonemes")
            self._ids[word.upper()] = tuple(inventory.id_of(s) for s in symbols)

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, word: str) -> bool:
        return word.upper() in self._ids

    def lookup(self, word: str) -> tuple[int, ...] | None:
        return self._ids.get(word.upper())

    @classmethod
    def from_text(cls, text: str, inventory: PhonemeInventory) -> "Lexicon":
        """Parse ``WORD  PH1 PH2 ...`` lines (whitespace-separated)."""
        entries: dict[str, tuple[str, ...]] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith(("#", ";;;")):
                continue
            parts = line.split()
            if len(parts) < 2:
                raise InputError(f"lexicon line {lineno}: expected WORD and phonemes: {raw!r}")
            entries[parts[0]] = tuple(parts[1:])
        return cls(entries, inventory)

    @classmethod
    def from_file(cls, path, inventory: PhonemeInventory) -> "Lexicon":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), inventory)


def default_inventory() -> PhonemeInventory:
    text = resources.files("slide.data").joinpath("inventory.txt").read_text(encoding="utf-8")
    return PhonemeInventory.from_text(text)


def seed_lexicon(inventory: PhonemeInventory | None = None) -> Lexicon:
    inventory = inventory or default_inventory()
    text = resources.files("slide.data").joinpath("lexicon.txt").read_text(encoding="utf-8")
    return Lexicon.from_text(text, inventory)


def phonemize_word(word: str, lexicon: Lexicon) -> list[int]:
    """Pronounce one word: lexicon hit, else per-letter fallback."""
    norm = normalize_word(word)
    if not norm:
        raise InputError(f"word {word!r} is empty after normalization")
    hit = lexicon.lookup(norm)
    if hit is not None:
        return list(hit)
    inventory = lexicon.inventory
    out: list[int] = []
    for letter in norm:
        for symbol in LETTER_SOUNDS.get(letter, ()):
            out.append(inventory.id_of(symbol))
    if not out:
        # normalized word was all apostrophes-free letters, so this cannot
        # happen with the table above; guard anyway for custom inventories
        raise InventoryError(f"fallback produced no phonemes for {word!r}")
    return out


def _sentences(text: str) -> list[list[str]]:
    """Split a turn's text into sentences on terminal punctuation."""
    sentences: list[list[str]] = []
    current: list[str] = []
    for token in text.split():
        current.append(token)
        if token.endswith(_SENTENCE_END):
            sentences.append(current)
            current = []
    if current:
        sentences.append(current)
    return sentences


def phonemize_dialogue(
    transcript: DialogueTranscript, lexicon: Lexicon
) -> dict[str, WrittenPhonemeSequence]:
    """Per-channel written phoneme sequences with silence at boundaries.

    Each channel independently concatenates its turns in time order. One SIL
    separates consecutive sentences (turn changes and terminal punctuation),
    and a leading SIL is prepended so every script starts from silence.
    """
    sil = lexicon.inventory.sil
    out: dict[str, WrittenPhonemeSequence] = {}
    for channel in CHANNELS:
        sentences: list[list[str]] = []
        for turn in transcript.channel_turns(channel):
            sentences.extend(_sentences(turn.text))
        sentences = [s for s in sentences if any(normalize_word(w) for w in s)]
        ids: list[int] = [sil]
        for i, words in enumerate(sentences):
            if i > 0:
                ids.append(sil)
            for word in words:
                if not normalize_word(word):
                    continue  # punctuation-only token
                ids.extend(phonemize_word(word, lexicon))
        out[channel] = WrittenPhonemeSequence(channel, np.array(ids, dtype=np.int32))
    return out


def written_to_json(scripts: dict[str, WrittenPhonemeSequence], inventory: PhonemeInventory) -> str:
    doc = {
        ch: [inventory.symbol_of(int(p)) for p in scripts[ch].phonemes] for ch in CHANNELS
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def written_from_json(text: str, inventory: PhonemeInventory) -> dict[str, WrittenPhonemeSequence]:
    doc = json.loads(text)
    return {
        ch: WrittenPhonemeSequence(
            ch, np.array([inventory.id_of(s) for s in doc[ch]], dtype=np.int32)
        )
        for ch in CHANNELS
    }
