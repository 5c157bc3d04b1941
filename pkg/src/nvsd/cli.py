"""Command-line entry point wiring all stages into reproducible workflows."""

from __future__ import annotations

import dataclasses
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import annotate as ann
from . import events as ev
from . import metrics as met
from . import model as mod
from . import personalize as pers
from . import synthbench as sb
from . import train as tr
from .audio import HOP, AudioClip, StreamingFrontend, compute_features, read_wav, write_wav
from .errors import NvsdError


def _fail(code: str, message: str):
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")
    sys.exit(1)


def _guard(fn):
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NvsdError as e:
            _fail(type(e).__name__, str(e))
        except FileNotFoundError as e:
            _fail("FileNotFound", str(e))
    return wrapper


def _class_index(name: str) -> int:
    if name in mod.CLASS_NAMES:
        return mod.CLASS_NAMES.index(name)
    try:
        idx = int(name)
    except ValueError:
        raise NvsdError(f"unknown class {name!r}; known: "
                        f"{', '.join(mod.CLASS_NAMES[:mod.NUM_SOUNDS])}")
    if not 0 <= idx < mod.NUM_SOUNDS:
        raise NvsdError(f"class index {idx} out of range 0..14")
    return idx


# ---------------------------------------------------------------------------
# corpus directories: WAVs + labels.jsonl in the annotate module's format

def save_corpus_dir(path: Path, clips, aggressor=False):
    path.mkdir(parents=True, exist_ok=True)
    records = []
    for i, lc in enumerate(clips):
        stem = lc.clip.source.replace("/", "_") or f"clip{i:04d}"
        wav_path = path / f"{stem}.wav"
        write_wav(wav_path, lc.clip)
        if aggressor:
            cls = mod.SPEECH if lc.frame_labels[:, mod.SPEECH].any() else mod.BACKGROUND
            records.append((wav_path.name, cls, []))
        else:
            records.append((wav_path.name, lc.segments[0].label if lc.segments else 0,
                            lc.segments))
    ann.write_labels(path / "labels.jsonl", records)


def load_corpus_dir(path: Path, inflate: int = ann.DEFAULT_INFLATE):
    path = Path(path)
    labels = path / "labels.jsonl"
    if not labels.exists():
        raise NvsdError(f"{labels} not found")
    clips = []
    for audio_path, cls, segments in ann.read_labels(labels):
        clip = read_wav(path / audio_path)
        if cls >= mod.NUM_SOUNDS:
            clips.append(ann.label_background_clip(clip, speech_like=cls == mod.SPEECH))
        else:
            feats = compute_features(clip)
            frame_labels = ann.render_frame_labels(segments, feats.T, inflate=inflate)
            clips.append(ann.LabeledClip(clip, feats, segments, frame_labels))
    return clips


@click.group()
def main():
    """Streaming nonverbal sound-event detection toolkit."""


@main.command()
@click.option("--spec", "spec_path", type=click.Path(), default=None,
              help="SynthSpec JSON; defaults are used when omitted.")
@click.option("--out", "out_dir", type=click.Path(), required=False)
@click.option("--dump-defaults", is_flag=True)
@_guard
def synth(spec_path, out_dir, dump_defaults):
    """Generate the synthetic corpus (train/eval/aggressors/aggr_eval)."""
    if dump_defaults:
        click.echo(json.dumps(dataclasses.asdict(sb.SynthSpec()), indent=2))
        return
    if not out_dir:
        _fail("BadArgs", "--out is required")
    kwargs = {}
    if spec_path:
        kwargs = json.loads(Path(spec_path).read_text())
        if "snr_db_range" in kwargs:
            kwargs["snr_db_range"] = tuple(kwargs["snr_db_range"])
    spec = sb.SynthSpec(**kwargs)
    train, evals, aggr = sb.generate_corpus(spec)
    out = Path(out_dir)
    save_corpus_dir(out / "train", train)
    save_corpus_dir(out / "eval", evals)
    save_corpus_dir(out / "aggressors", aggr, aggressor=True)
    save_corpus_dir(out / "aggr_eval", sb.generate_eval_aggressors(spec),
                    aggressor=True)
    click.echo(json.dumps({"train_clips": len(train), "eval_clips": len(evals),
                           "aggressor_clips": len(aggr)}))


@main.command("annotate")
@click.option("--in", "in_dir", type=click.Path(exists=True), required=True)
@click.option("--class", "cls_name", required=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Label JSONL path (default: <in>/labels.jsonl)")
@_guard
def annotate_cmd(in_dir, cls_name, out_path):
    """Energy-segment every WAV in a directory under one class label."""
    cls = _class_index(cls_name)
    in_dir = Path(in_dir)
    records = []
    for wav_path in sorted(in_dir.glob("*.wav")):
        clip = read_wav(wav_path)
        segments = ann.energy_segment(clip, cls)
        records.append((wav_path.name, cls, segments))
    out_path = Path(out_path) if out_path else in_dir / "labels.jsonl"
    ann.write_labels(out_path, records)
    click.echo(json.dumps({"clips": len(records),
                           "segments": sum(len(r[2]) for r in records)}))


@main.command("train")
@click.option("--corpus", type=click.Path(exists=True), required=True)
@click.option("--aggressors", type=click.Path(exists=True), default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--dump-defaults", is_flag=True)
@_guard
def train_cmd(corpus, aggressors, config_path, out_path, dump_defaults):
    """Train the detector; writes weights plus a .json metrics sidecar."""
    if dump_defaults:
        click.echo(json.dumps({"train": dataclasses.asdict(tr.TrainConfig()),
                               "spec": dataclasses.asdict(mod.ModelSpec())},
                              indent=2))
        return
    cfg_dict = json.loads(Path(config_path).read_text()) if config_path else {}
    spec = mod.ModelSpec(**cfg_dict.get("spec", {}))
    cfg = tr.TrainConfig(**cfg_dict.get("train", cfg_dict if "spec" not in cfg_dict else {}))
    clips = load_corpus_dir(Path(corpus))
    aggr = load_corpus_dir(Path(aggressors)) if aggressors else []
    result = tr.train(clips, aggr, cfg, spec=spec,
                      log=lambda s: click.echo(s, err=True))
    if result.aborted:
        _fail("Diverged", "training diverged; last good checkpoint written")
    mod.save_weights(result.weights, out_path)
    sidecar = {"history": result.history, "best_epoch": result.best_epoch,
               "config": dataclasses.asdict(cfg)}
    Path(str(out_path) + ".json").write_text(json.dumps(sidecar, indent=2))
    click.echo(json.dumps({"best_epoch": result.best_epoch,
                           "epochs": len(result.history)}))


def _load_postproc(path) -> ev.PostProcConfig:
    if path is None:
        return ev.PostProcConfig()
    return ev.PostProcConfig.from_dict(json.loads(Path(path).read_text()))


def _eval_report(weights, clips, postproc, one_active):
    items = []
    for lc in clips:
        probs, _ = mod.forward(weights, lc.feats)
        items.append((probs, lc))
    if one_active:
        reports = []
        classes = sorted({s.label for _, lc in items for s in lc.segments})
        for c in classes:
            cfg_c = postproc.one_active(c)
            for probs, lc in items:
                evs = ev.process(probs, cfg_c)
                reports.append(met.segmental_score(
                    evs, lc.segments, duration_s=lc.clip.duration_s))
        return met.aggregate_reports(reports)
    reports = [met.segmental_score(ev.process(probs, postproc), lc.segments,
                                   duration_s=lc.clip.duration_s)
               for probs, lc in items]
    return met.aggregate_reports(reports)


@main.command("eval")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--eval", "eval_dir", type=click.Path(exists=True), required=True)
@click.option("--postproc", "postproc_path", type=click.Path(), default=None)
@click.option("--one-active", is_flag=True)
@click.option("--json-out", type=click.Path(), default=None)
@_guard
def eval_cmd(model_path, eval_dir, postproc_path, one_active, json_out):
    """Score a model on a labeled corpus; prints JSON and a table."""
    weights = mod.load_weights(model_path)
    clips = load_corpus_dir(Path(eval_dir))
    postproc = _load_postproc(postproc_path)
    report = _eval_report(weights, clips, postproc, one_active)
    payload = report.to_json(weights.class_names)
    if json_out:
        Path(json_out).write_text(payload)
    click.echo(payload)
    click.echo(report.to_table(weights.class_names), err=True)


@main.command("optimize")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--eval", "eval_dir", type=click.Path(exists=True), required=True)
@click.option("--aggressors", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@_guard
def optimize_cmd(model_path, eval_dir, aggressors, out_path):
    """Grid-search per-class post-processing parameters."""
    weights = mod.load_weights(model_path)
    eval_items = []
    for lc in load_corpus_dir(Path(eval_dir)):
        probs, _ = mod.forward(weights, lc.feats)
        eval_items.append((probs, [(s.start_frame, s.end_frame, s.label)
                                   for s in lc.segments], lc.clip.duration_s))
    aggr_items = []
    for lc in load_corpus_dir(Path(aggressors)):
        probs, _ = mod.forward(weights, lc.feats)
        aggr_items.append((probs, lc.clip.duration_s))
    cfg = ev.optimize(eval_items, aggr_items)
    Path(out_path).write_text(json.dumps(cfg.to_dict(), indent=2))
    click.echo(json.dumps({"theta": cfg.theta, "tau": cfg.tau,
                           "theta_bg": cfg.theta_bg}))


@main.command("detect")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--postproc", "postproc_path", type=click.Path(), default=None)
@click.option("--wav", "wav_path", type=click.Path(exists=True), default=None)
@click.option("--stdin-pcm", is_flag=True,
              help="Read raw little-endian s16 mono 16 kHz PCM from stdin.")
@click.option("--chunk-frames", default=10, show_default=True,
              help="Model/post-processor chunk size for WAV replay.")
@_guard
def detect_cmd(model_path, postproc_path, wav_path, stdin_pcm, chunk_frames):
    """Stream detection events as JSON lines on stdout."""
    if bool(wav_path) == bool(stdin_pcm):
        _fail("BadArgs", "exactly one of --wav or --stdin-pcm is required")
    weights = mod.load_weights(model_path)
    detector = ev.Detector(_load_postproc(postproc_path))
    session = mod.StreamingSession(weights)
    frontend = StreamingFrontend()

    def handle_samples(samples):
        frames = frontend.push(samples)
        if frames.shape[0] == 0:
            return
        probs, _ = session.push(frames)
        for row in probs:
            event = detector.step(row)
            if event is not None:
                click.echo(event.to_json(weights.class_names))
                sys.stdout.flush()

    if wav_path:
        clip = read_wav(wav_path)
        step = chunk_frames * HOP
        for i in range(0, clip.samples.size, step):
            handle_samples(clip.samples[i:i + step])
    else:
        stdin = sys.stdin.buffer
        while True:
            chunk = stdin.read(HOP * 2)
            if not chunk:
                break
            samples = np.frombuffer(chunk, dtype="<i2").astype(np.float32) / 32768.0
            handle_samples(samples)


@main.command("personalize")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--enroll", "enroll_path", type=click.Path(exists=True), required=True)
@click.option("--class", "cls_name", required=True)
@click.option("--shots", default=5, show_default=True)
@click.option("--user-id", default=None)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@_guard
def personalize_cmd(model_path, enroll_path, cls_name, shots, user_id, seed, out_path):
    """Fine-tune one class's head row on an enrollment recording."""
    cls = _class_index(cls_name)
    weights = mod.load_weights(model_path)
    enrollment = ann.annotate_clip(read_wav(enroll_path), cls)
    fitted = pers.fit_head(weights, enrollment, [cls], shots,
                           pers.FitHeadConfig(seed=seed))
    fitted.user_id = user_id
    mod.save_weights(fitted, out_path)
    click.echo(json.dumps({"class": cls_name, "shots": shots,
                           "segments_found": len(enrollment.segments)}))


@main.command("audit")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--corpus", type=click.Path(exists=True), required=True)
@_guard
def audit_cmd(model_path, corpus):
    """Flag clips whose given label disagrees with the model's reading."""
    weights = mod.load_weights(model_path)
    clips = [lc for lc in load_corpus_dir(Path(corpus)) if lc.segments]
    records = ann.audit_labels(weights, clips)
    flagged = 0
    for r in records:
        if r.flagged:
            flagged += 1
        click.echo(json.dumps({
            "clip": r.clip.clip.source,
            "given": weights.class_names[r.given],
            "predicted": weights.class_names[r.predicted],
            "confidence": round(r.confidence, 4),
            "flagged": r.flagged,
        }))
    click.echo(json.dumps({"clips": len(records), "flagged": flagged}), err=True)


@main.command("serve")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--postproc", "postproc_path", type=click.Path(), default=None)
@click.option("--port", default=8040, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@_guard
def serve_cmd(model_path, postproc_path, port, host):
    """Run the streaming detection service."""
    import uvicorn

    from .service import create_app
    weights = mod.load_weights(model_path)
    app = create_app(weights, _load_postproc(postproc_path))
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
