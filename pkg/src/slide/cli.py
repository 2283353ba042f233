"""Command-line entry point: each pipeline stage standalone, plus an
end-to-end ``pipeline`` run.

Configuration is one JSON file (``--config``) merged over built-in defaults,
with ``--seed`` as a flag override; endpoints and tokens come from the
environment (SLIDE_LLM_ENDPOINT, SLIDE_LLM_TOKEN, SLIDE_SCORER_ENDPOINT).
Every run writes a manifest (inputs, config hash, seed, outputs) and removes
partial outputs on failure. One run at a time per output directory, enforced
by a lock file.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import duration as dm
from . import evalsuite as ev
from . import nn, synth, textgen, unitlm
from .errors import InputError, SlideError
from .g2p import (
    Lexicon,
    default_inventory,
    phonemize_dialogue,
    seed_lexicon,
    written_from_json,
    written_to_json,
)
from .timeline import (
    CHANNELS,
    FrameTimeline,
    PhonemeInventory,
    alignment_to_spoken,
    load_timeline,
    load_transcript,
    parse_alignment_file,
    save_timeline,
    save_transcript,
)

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "inventory": None,  # path; null means the builtin ARPAbet set
    "lexicon": None,
    "corpus": {"dialogues": 50, "frames_per_dialogue": 3000},
    "duration_model": {"embed_dim": 64, "layers": 2, "heads": 2, "ffn_dim": 128, "max_positions": 512},
    "duration_train": {"epochs": 30, "lr": 1e-3, "window": 256, "lam": 0.5, "delay": 1},
    "unit_model": {"embed_dim": 64, "layers": 2, "heads": 2, "ffn_dim": 128},
    "unit_train": {"epochs": 20, "lr": 1e-3},
    "codec": {"units_per_phoneme": 3, "noise_rate": 0.0},
    "segment_s": 8.0,
    "overlap": {"trigger_s": 0.6, "cap_s": 0.3},
    "textgen": {"max_turns": 24, "temperature": 1.0, "order": 1},
    "ppl": {"order": 2, "smoothing": 1.0, "first_n_words": 50},
    "pipeline": {"length_frames": 1500, "temperature": 1.0},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None, seed: int | None) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        config = _merge(config, json.loads(Path(path).read_text(encoding="utf-8")))
    if seed is not None:
        config["seed"] = seed
    return config


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _load_inventory(config: dict) -> PhonemeInventory:
    return PhonemeInventory.from_file(config["inventory"]) if config["inventory"] else default_inventory()


def _load_lexicon(config: dict, inventory: PhonemeInventory) -> Lexicon:
    return Lexicon.from_file(config["lexicon"], inventory) if config["lexicon"] else seed_lexicon(inventory)


class Run:
    """Tracks outputs so failures leave no partial artifacts, and writes the
    run manifest on success."""

    def __init__(self, command: str, out_dir: Path, config: dict, inputs: list[str]):
        self.command = command
        self.out_dir = Path(out_dir)
        self.config = config
        self.inputs = inputs
        self.outputs: list[Path] = []
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._lock = self.out_dir / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self._lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            os.close(fd)
        except FileExistsError:
            raise InputError(f"output directory {self.out_dir} is locked by another run") from None
        return self

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.outputs.append(p)
        return p

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is not None:
                for p in self.outputs:
                    if p.is_dir():
                        for child in sorted(p.rglob("*"), reverse=True):
                            child.unlink() if child.is_file() else child.rmdir()
                        p.rmdir()
                    elif p.exists():
                        p.unlink()
            else:
                manifest = {
                    "command": self.command,
                    "config_hash": config_hash(self.config),
                    "seed": self.config["seed"],
                    "inputs": sorted(self.inputs),
                    "outputs": sorted(str(p.relative_to(self.out_dir)) for p in self.outputs),
                }
                (self.out_dir / "manifest.json").write_text(
                    json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n",
                    encoding="utf-8",
                )
        finally:
            self._lock.unlink(missing_ok=True)
        return False


def _write(path: Path, text: str) -> None:
    path.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    config = load_config(args.config, args.seed)
    inventory = _load_inventory(config)
    spec = synth.CorpusSpec(**config["corpus"], seed=config["seed"])
    with Run("synth", Path(args.out), config, inputs=[]) as run:
        samples = synth.generate_corpus(spec, inventory)
        corpus_dir = run.path("corpus")
        synth.save_corpus(samples, spec, corpus_dir, inventory)
        rates = synth.measure_rates(samples)
        _write(run.path("rates.json"), json.dumps(rates, sort_keys=True, separators=(",", ":")))
    print(f"synthesized {spec.dialogues} dialogues into {args.out}/corpus")
    return 0


def cmd_g2p(args) -> int:
    config = load_config(args.config, args.seed)
    inventory = _load_inventory(config)
    lexicon = _load_lexicon(config, inventory)
    transcript = load_transcript(args.transcript)
    scripts = phonemize_dialogue(transcript, lexicon)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write(out, written_to_json(scripts, inventory))
    print(f"wrote written phoneme sequences to {out}")
    return 0


def cmd_align(args) -> int:
    config = load_config(args.config, args.seed)
    inventory = _load_inventory(config)
    entries = parse_alignment_file(Path(args.alignment).read_text(encoding="utf-8"))
    timeline = alignment_to_spoken(entries, inventory, args.frames)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_timeline(timeline, inventory, out)
    print(f"wrote timeline ({args.frames} frames) to {out}")
    return 0


def _load_corpus_timelines(corpus_dir: str, inventory: PhonemeInventory):
    paths = sorted(Path(corpus_dir).glob("*.timeline.json"))
    if not paths:
        raise InputError(f"no *.timeline.json files under {corpus_dir}")
    return [load_timeline(p, inventory) for p in paths]


def cmd_train_duration(args) -> int:
    config = load_config(args.config, args.seed)
    inventory = _load_inventory(config)
    timelines = _load_corpus_timelines(args.corpus, inventory)
    model_cfg = nn.ModelConfig(
        vocab_size=len(inventory), seed=config["seed"], **config["duration_model"]
    )
    schedule = dm.DurationTrainSchedule(seed=config["seed"], **config["duration_train"])
    params, log = dm.train_duration_model(timelines, model_cfg, schedule, inventory.sil)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    nn.save_checkpoint(params, model_cfg, out, meta={"kind": "duration", "inventory": list(inventory.symbols)})
    for entry in log:
        print(f"epoch {entry['epoch']}: loss {entry['loss']:.4f} (ce {entry['edge_ce']:.4f})")
    print(f"saved duration checkpoint to {out}")
    return 0


def _inventory_from_meta(meta: dict) -> PhonemeInventory:
    if "inventory" not in meta:
        raise InputError("checkpoint meta lacks the phoneme inventory")
    return PhonemeInventory(meta["inventory"])


def cmd_gen_duration(args) -> int:
    config = load_config(args.config, args.seed)
    params, model_cfg, meta = nn.load_checkpoint(args.ckpt)
    inventory = _inventory_from_meta(meta)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.script:
        scripts = written_from_json(Path(args.script).read_text(encoding="utf-8"), inventory)
        timeline, events, state = dm.generate_constrained(
            params, model_cfg, scripts, inventory.sil, args.length,
            temperature=args.temperature, seed=config["seed"],
        )
        events_path = Path(args.events or str(out) + ".events.json")
        _write(events_path, json.dumps(dm.events_to_json(events), sort_keys=True, separators=(",", ":")))
        print(
            f"constrained generation: cursors {state.cursors}, "
            f"coverage {dm.cursor_coverage(state, scripts):.3f}"
        )
    else:
        timeline = dm.generate_unconditional(
            params, model_cfg, inventory.sil, args.length,
            temperature=args.temperature, seed=config["seed"],
        )
    save_timeline(timeline, inventory, out)
    print(f"wrote generated timeline to {out}")
    return 0


def cmd_postprocess(args) -> int:
    config = load_config(args.config, args.seed)
    inventory = _load_inventory(config)
    policy = dm.OverlapPolicy(**config["overlap"])
    timeline = load_timeline(args.infile, inventory)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_timeline(dm.postprocess_overlaps(timeline, inventory.sil, policy), inventory, out)
    print(f"wrote post-processed timeline to {out}")
    return 0


def cmd_train_unitlm(args) -> int:
    config = load_config(args.config, args.seed)
    inventory = _load_inventory(config)
    timelines = _load_corpus_timelines(args.corpus, inventory)
    codec = unitlm.build_codec_spec(inventory, seed=config["seed"], **config["codec"])
    seg = unitlm.SegmentConfig(segment_s=config["segment_s"])
    model_cfg = nn.ModelConfig(
        vocab_size=unitlm.combined_vocab_size(inventory, codec),
        max_positions=seg.half_len,
        seed=config["seed"],
        **config["unit_model"],
    )
    schedule = unitlm.UnitLMSchedule(seed=config["seed"], **config["unit_train"])
    params, log = unitlm.train_unit_lm(timelines, codec, seg, model_cfg, schedule, inventory)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "kind": "unitlm",
        "inventory": list(inventory.symbols),
        "codec": json.loads(unitlm.codec_spec_to_json(codec, inventory)),
        "segment_s": seg.segment_s,
    }
    nn.save_checkpoint(params, model_cfg, out, meta=meta)
    for entry in log:
        print(f"epoch {entry['epoch']}: unit ce {entry['unit_ce']:.4f}")
    print(f"saved unit LM checkpoint to {out}")
    return 0


def cmd_gen_units(args) -> int:
    config = load_config(args.config, args.seed)
    params, model_cfg, meta = nn.load_checkpoint(args.ckpt)
    inventory = _inventory_from_meta(meta)
    codec = unitlm.codec_spec_from_json(json.dumps(meta["codec"]), inventory)
    seg = unitlm.SegmentConfig(segment_s=meta["segment_s"])
    timeline = load_timeline(args.condition, inventory)
    condition = {ch: timeline.channel(ch) for ch in CHANNELS}
    units = unitlm.generate_units(
        params, model_cfg, condition, codec, seg, inventory,
        temperature=args.temperature, seed=config["seed"],
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write(out, unitlm.units_to_json(units))
    if args.decoded:
        decoded = FrameTimeline.from_frames(
            unitlm.codec_decode(units["A"], codec, "A").frames,
            unitlm.codec_decode(units["B"], codec, "B").frames,
        )
        save_timeline(decoded, inventory, Path(args.decoded))
    print(f"wrote generated units to {out}")
    return 0


def cmd_textgen(args) -> int:
    config = load_config(args.config, args.seed)
    tg_cfg = config["textgen"]
    if args.backend == "http":
        backend = textgen.HttpChatBackend.from_env()
        if backend is None:
            raise InputError(f"http backend requires {textgen.ENDPOINT_ENV} to be set")
    else:
        backend = textgen.train_markov_stub(textgen.sample_transcripts(), order=tg_cfg["order"])
    prompt_source = (
        load_transcript(args.sample) if args.sample else textgen.sample_transcripts()[0]
    )
    prompt = textgen.build_prompt(prompt_source)
    transcript = textgen.generate_dialogue(
        backend, prompt, max_turns=tg_cfg["max_turns"],
        temperature=tg_cfg["temperature"], seed=config["seed"],
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_transcript(transcript, out)
    if args.audit:
        textgen.append_audit(args.audit, {"prompt": prompt, "turns": len(transcript)})
    print(f"wrote {len(transcript)} turns to {out}")
    return 0


def cmd_metrics(args) -> int:
    config = load_config(args.config, args.seed)
    inventory = _load_inventory(config)
    timeline = load_timeline(args.infile, inventory)
    events = ev.extract_events(ev.derive_vad(timeline, inventory.sil))
    rep = ev.report(events, len(timeline))
    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        _write(Path(args.csv), ev.report_to_csv(rep))
    if args.json:
        _write(Path(args.json), ev.report_to_json(rep))
    if args.box:
        _write(Path(args.box), ev.durations_to_csv(events))
    print(ev.report_to_csv(rep), end="")
    return 0


def cmd_ppl(args) -> int:
    config = load_config(args.config, args.seed)
    ppl_cfg = config["ppl"]
    if args.transcript:
        text = ev.serialize_transcript(load_transcript(args.transcript))
    else:
        text = Path(args.text).read_text(encoding="utf-8")
    external = ev.ExternalScorer.from_env()
    if external is not None:
        value = ev.perplexity(external, text, first_n_words=ppl_cfg["first_n_words"])
        source = "external"
    else:
        train_texts = []
        for path in args.train or []:
            train_texts.append(ev.serialize_transcript(load_transcript(path)))
        if not train_texts:
            train_texts = [ev.serialize_transcript(t) for t in textgen.sample_transcripts()]
        scorer = ev.ngram_train(train_texts, order=ppl_cfg["order"], smoothing=ppl_cfg["smoothing"])
        value = ev.perplexity(scorer, text, first_n_words=ppl_cfg["first_n_words"])
        source = f"ngram(order={ppl_cfg['order']})"
    if args.out:
        _write(
            Path(args.out),
            json.dumps(
                {"perplexity": value, "scorer": source, "first_n_words": ppl_cfg["first_n_words"]},
                sort_keys=True,
                separators=(",", ":"),
            ),
        )
    print(f"perplexity ({source}): {value:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    config = load_config(args.config, args.seed)
    rng = np.random.default_rng(config["seed"])
    model_cfg = nn.ModelConfig(
        vocab_size=16, embed_dim=16, layers=1, heads=2, ffn_dim=32,
        max_positions=32, seed=config["seed"],
    )
    params = nn.init_params(model_cfg)
    batch = (rng.integers(0, 16, size=12), rng.integers(0, 16, size=12))
    rep = nn.grad_check(params, model_cfg, batch, epsilon=args.epsilon, seed=config["seed"])
    lin = nn.grad_check_linear(epsilon=args.epsilon, seed=config["seed"])
    print(f"two-tower: max rel error {rep.max_rel_error:.3e} ({rep.checked_coords} coords, worst {rep.worst_param})")
    print(f"linear:    max rel error {lin.max_rel_error:.3e}")
    ok = rep.passes(args.tolerance) and lin.passes(1e-6)
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_pipeline(args) -> int:
    config = load_config(args.config, args.seed)
    seed = config["seed"]
    inventory = _load_inventory(config)
    lexicon = _load_lexicon(config, inventory)
    with Run("pipeline", Path(args.out), config, inputs=[args.config] if args.config else []) as run:
        # 1. synthetic corpus (training data for both models)
        spec = synth.CorpusSpec(**config["corpus"], seed=seed)
        samples = synth.generate_corpus(spec, inventory)
        corpus_dir = run.path("corpus")
        synth.save_corpus(samples, spec, corpus_dir, inventory)
        timelines = [s.timeline for s in samples]

        # 2. duration model
        model_cfg = nn.ModelConfig(vocab_size=len(inventory), seed=seed, **config["duration_model"])
        schedule = dm.DurationTrainSchedule(seed=seed, **config["duration_train"])
        dur_params, _ = dm.train_duration_model(timelines, model_cfg, schedule, inventory.sil)
        nn.save_checkpoint(
            dur_params, model_cfg, run.path("duration.ckpt"),
            meta={"kind": "duration", "inventory": list(inventory.symbols)},
        )

        # 3. unit LM
        codec = unitlm.build_codec_spec(inventory, seed=seed, **config["codec"])
        seg = unitlm.SegmentConfig(segment_s=config["segment_s"])
        unit_cfg = nn.ModelConfig(
            vocab_size=unitlm.combined_vocab_size(inventory, codec),
            max_positions=seg.half_len, seed=seed, **config["unit_model"],
        )
        unit_schedule = unitlm.UnitLMSchedule(seed=seed, **config["unit_train"])
        unit_params, _ = unitlm.train_unit_lm(timelines, codec, seg, unit_cfg, unit_schedule, inventory)
        nn.save_checkpoint(
            unit_params, unit_cfg, run.path("unitlm.ckpt"),
            meta={
                "kind": "unitlm",
                "inventory": list(inventory.symbols),
                "codec": json.loads(unitlm.codec_spec_to_json(codec, inventory)),
                "segment_s": seg.segment_s,
            },
        )

        # 4. textual dialogue (stub backend)
        tg_cfg = config["textgen"]
        stub = textgen.train_markov_stub(textgen.sample_transcripts(), order=tg_cfg["order"])
        prompt = textgen.build_prompt(textgen.sample_transcripts()[0])
        transcript = textgen.generate_dialogue(
            stub, prompt, max_turns=tg_cfg["max_turns"], temperature=tg_cfg["temperature"], seed=seed
        )
        save_transcript(transcript, run.path("dialogue.transcript.jsonl"))
        textgen.append_audit(run.path("textgen.audit.jsonl"), {"prompt": prompt, "turns": len(transcript)})

        # 5. written phoneme sequences
        scripts = phonemize_dialogue(transcript, lexicon)
        _write(run.path("script.json"), written_to_json(scripts, inventory))

        # 6. constrained duration generation
        length = config["pipeline"]["length_frames"]
        gen_tl, events, state = dm.generate_constrained(
            dur_params, model_cfg, scripts, inventory.sil, length,
            temperature=config["pipeline"]["temperature"], seed=seed,
        )
        save_timeline(gen_tl, inventory, run.path("generated.timeline.json"))
        _write(
            run.path("generated.events.json"),
            json.dumps(dm.events_to_json(events), sort_keys=True, separators=(",", ":")),
        )

        # 7. overlap post-processing
        policy = dm.OverlapPolicy(**config["overlap"])
        post_tl = dm.postprocess_overlaps(gen_tl, inventory.sil, policy)
        save_timeline(post_tl, inventory, run.path("post.timeline.json"))

        # 8. conditioned unit generation + decode
        condition = {ch: post_tl.channel(ch) for ch in CHANNELS}
        units = unitlm.generate_units(
            unit_params, unit_cfg, condition, codec, seg, inventory,
            temperature=config["pipeline"]["temperature"], seed=seed,
        )
        _write(run.path("units.json"), unitlm.units_to_json(units))
        decoded = FrameTimeline.from_frames(
            unitlm.codec_decode(units["A"], codec, "A").frames,
            unitlm.codec_decode(units["B"], codec, "B").frames,
        )
        save_timeline(decoded, inventory, run.path("decoded.timeline.json"))

        # 9. turn-taking metrics on the decoded timeline
        events2 = ev.extract_events(ev.derive_vad(decoded, inventory.sil))
        rep = ev.report(events2, len(decoded))
        _write(run.path("metrics.csv"), ev.report_to_csv(rep))
        _write(run.path("metrics.json"), ev.report_to_json(rep))
        _write(run.path("boxplot.csv"), ev.durations_to_csv(events2))

        # 10. transcript perplexity under the built-in scorer
        ppl_cfg = config["ppl"]
        scorer = ev.ngram_train(
            [ev.serialize_transcript(t) for t in textgen.sample_transcripts()],
            order=ppl_cfg["order"], smoothing=ppl_cfg["smoothing"],
        )
        value = ev.perplexity(
            scorer, ev.serialize_transcript(transcript), first_n_words=ppl_cfg["first_n_words"]
        )
        _write(
            run.path("ppl.json"),
            json.dumps(
                {"perplexity": value, "scorer": f"ngram(order={ppl_cfg['order']})",
                 "first_n_words": ppl_cfg["first_n_words"]},
                sort_keys=True, separators=(",", ":"),
            ),
        )
    print(f"pipeline complete: artifacts in {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slide", description="Spoken dialogue generation pipeline and evaluation tools."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file merged over defaults")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("synth", help="generate a synthetic dialogue corpus")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("g2p", help="transcript to written phoneme sequences")
    common(p)
    p.add_argument("--transcript", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_g2p)

    p = sub.add_parser("align", help="alignment file to frame timeline")
    common(p)
    p.add_argument("--alignment", required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("train-duration", help="train the duration predictor")
    common(p)
    p.add_argument("--corpus", required=True, help="directory of *.timeline.json")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train_duration)

    p = sub.add_parser("gen-duration", help="generate a phoneme timeline")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--script", help="written phoneme JSON for constrained decoding")
    p.add_argument("--events", help="events side-file (constrained mode)")
    p.add_argument("--length", type=int, default=1500)
    p.add_argument("--temperature", type=float, default=1.0)
    p.set_defaults(func=cmd_gen_duration)

    p = sub.add_parser("postprocess", help="cap long overlaps with silence insertion")
    common(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("train-unitlm", help="train the conditioned unit LM")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_unitlm)

    p = sub.add_parser("gen-units", help="generate unit tokens from a phoneme timeline")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--condition", required=True, help="conditioning timeline JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--decoded", help="also write the decoded phoneme timeline")
    p.add_argument("--temperature", type=float, default=1.0)
    p.set_defaults(func=cmd_gen_units)

    p = sub.add_parser("textgen", help="generate a textual dialogue")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=("stub", "http"), default="stub")
    p.add_argument("--sample", help="prompt sample transcript (JSONL)")
    p.add_argument("--audit", help="prompt/response audit JSONL")
    p.set_defaults(func=cmd_textgen)

    p = sub.add_parser("metrics", help="turn-taking statistics for a timeline")
    common(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--csv")
    p.add_argument("--json", dest="json")
    p.add_argument("--box", help="per-event duration CSV for box plots")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("ppl", help="transcript perplexity")
    common(p)
    p.add_argument("--text", help="plain text file to score")
    p.add_argument("--transcript", help="transcript JSONL to serialize and score")
    p.add_argument("--train", nargs="*", help="transcript JSONL files for the n-gram scorer")
    p.add_argument("--out", help="write the result as JSON")
    p.set_defaults(func=cmd_ppl)

    p = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    common(p)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("pipeline", help="end-to-end run with stub backends")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "ppl" and not (args.text or args.transcript):
        parser.error("ppl requires --text or --transcript")
    try:
        return args.func(args)
    except SlideError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
