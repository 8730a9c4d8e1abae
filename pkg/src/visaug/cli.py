"""Command-line interface: scene generation, batch runs, reports, services."""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import evalkit, figures, scenesim
from .backends import CorruptionConfig, SyntheticBackend, serve_stdio
from .filters import filter_pipeline
from .masks import mask_to_png_bytes
from .pipeline import (PipelineConfig, augment_dataset, build_backend, build_vlm,
                       preprocess, run_episode)


def _load_config(config_path, setting: str = "blocks", **overrides) -> PipelineConfig:
    if config_path:
        cfg = PipelineConfig.from_file(config_path)
    else:
        cfg = PipelineConfig.for_setting(setting)
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


@click.group()
def main():
    """Input augmentation for instruction-following manipulation policies."""


@main.command("gen-scenes")
@click.option("--setting", type=click.Choice(scenesim.SETTINGS), default="blocks")
@click.option("--count", "n_scenes", type=int, default=10, help="number of scene bundles")
@click.option("--frames", type=int, default=3, help="frames per bundle")
@click.option("--seed", type=int, default=0)
@click.option("--size", type=int, default=480, help="square image side in px")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("--dataset", is_flag=True, help="also write instruction.txt per episode (demo layout)")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def gen_scenes(setting, n_scenes, frames, seed, size, manifest_path, dataset, out_dir):
    """Write scene bundles (scene.json, frames, masks, instructions)."""
    manifest = scenesim.SeenManifest.load(manifest_path)
    out = Path(out_dir)
    written = 0
    for i in range(n_scenes):
        scene_seed = seed + i
        spec, _, _ = scenesim.gen_scene(setting, seed=scene_seed, image_size=(size, size))
        instrs = scenesim.gen_instructions(spec, manifest)
        if not instrs:
            continue
        bundle = out / f"{setting}_{scene_seed:05d}"
        scenesim.write_bundle(spec, bundle, n_frames=frames, manifest=manifest)
        if dataset:
            instr = instrs[scene_seed % len(instrs)]
            (bundle / "instruction.txt").write_text(instr.text + "\n")
        written += 1
    click.echo(f"wrote {written} bundles under {out}")


@main.command("augment-dataset")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--input", "input_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--relabel", type=click.Choice(["on", "off"]), default="off")
@click.option("--backend", type=click.Choice(["synthetic", "http", "stdio"]), default=None)
@click.option("--vlm", type=click.Choice(["mock", "http"]), default=None)
@click.option("--workers", type=int, default=1, help="parallel episodes")
def augment_dataset_cmd(config_path, input_dir, out_dir, seed, relabel, backend, vlm, workers):
    """Augment every demonstration episode under --input (resumable)."""
    cfg = _load_config(config_path)
    cfg = replace(cfg, relabel=(relabel == "on"))
    if backend:
        cfg = replace(cfg, backend=replace(cfg.backend, kind=backend))
    if vlm:
        cfg = replace(cfg, vlm=replace(cfg.vlm, backend=vlm))
    manifest = augment_dataset(input_dir, out_dir, cfg, seed=seed, workers=workers)
    click.echo(json.dumps({k: manifest[k] for k in ("total", "succeeded", "failed", "skipped")}))
    if manifest["failed"]:
        click.echo(f"failures by stage: {manifest['failures_by_stage']}")


@main.command("run-episode")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--bundle", type=click.Path(exists=True), required=True)
@click.option("--instruction", "instruction_text", type=str, required=True)
@click.option("--seed", type=int, default=0)
@click.option("--relabel", type=click.Choice(["on", "off"]), default=None)
@click.option("--variant", type=str, default="augmented")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="directory for augmented frames")
@click.option("--log", "log_path", type=click.Path(), default=None)
def run_episode_cmd(config_path, bundle, instruction_text, seed, relabel, variant, out_dir, log_path):
    """Run one episode end to end and print its log JSON."""
    spec, _, _ = scenesim.read_bundle(bundle)
    cfg = _load_config(config_path, spec.setting)
    if relabel is not None:
        cfg = replace(cfg, relabel=(relabel == "on"))
    manifest = scenesim.SeenManifest.load()
    instr = scenesim.parse_instruction(instruction_text, spec.setting)
    instr = instr.with_category(manifest.categorize(instr))
    log = run_episode(bundle, instr, cfg, seed=seed, variant=variant, out_dir=out_dir)
    line = log.to_json()
    if log_path:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        with open(log_path, "a") as fh:
            fh.write(line + "\n")
    click.echo(line)


@main.command("evaluate")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--bundles", type=click.Path(exists=True), required=True,
              help="directory of scene bundles")
@click.option("--seed", type=int, default=0)
@click.option("--variant", type=str, default="augmented")
@click.option("--relabel", type=click.Choice(["on", "off"]), default=None)
@click.option("--runs-per-instruction", type=int, default=1)
@click.option("--grasp-fail", type=float, default=0.0)
@click.option("--act-fail", type=float, default=0.0)
@click.option("--wrong-object", type=float, default=0.0)
@click.option("--out", "log_path", type=click.Path(), required=True)
def evaluate_cmd(config_path, bundles, seed, variant, relabel, runs_per_instruction,
                 grasp_fail, act_fail, wrong_object, log_path):
    """Run every bundle x instruction combination and write a JSONL log."""
    noise = scenesim.ExecutorNoise(grasp_fail=grasp_fail, act_fail=act_fail,
                                   wrong_object=wrong_object)
    logs = []
    run_idx = 0
    for bundle in sorted(Path(bundles).iterdir()):
        if not (bundle / "scene.json").exists():
            continue
        spec, _, instrs = scenesim.read_bundle(bundle)
        cfg = _load_config(config_path, spec.setting)
        if relabel is not None:
            cfg = replace(cfg, relabel=(relabel == "on"))
        for instr in instrs:
            for r in range(runs_per_instruction):
                log = run_episode(bundle, instr, cfg, noise=noise, seed=seed + run_idx,
                                  variant=variant, episode_id=f"{bundle.name}_{instr.text}_{r}")
                logs.append(log)
                run_idx += 1
    evalkit.write_logs(logs, log_path)
    ok = sum(1 for l in logs if l.score == 1.0)
    click.echo(f"{len(logs)} runs, {ok} full successes -> {log_path}")


@main.command("report")
@click.option("--logs", "log_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--by", type=click.Choice(["setting", "category", "variant"]), multiple=True,
              default=("setting", "category", "variant"))
@click.option("--half-counts-as-failure", is_flag=True, default=False)
@click.option("--figures/--no-figures", "with_figures", default=True)
def report_cmd(log_path, out_dir, by, half_counts_as_failure, with_figures):
    """Aggregate a JSONL log into report.csv/report.json plus figures."""
    logs = evalkit.read_logs(log_path)
    report = evalkit.build_report(logs, by=by, half_counts_as_failure=half_counts_as_failure)
    csv_path, json_path = evalkit.write_report(report, out_dir)
    click.echo(f"wrote {csv_path} and {json_path}")
    if with_figures:
        for p in figures.render_all(report, out_dir):
            click.echo(f"wrote {p}")


@main.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--host", type=str, default="127.0.0.1")
@click.option("--port", type=int, default=8800)
@click.option("--backend", type=click.Choice(["synthetic", "http", "stdio"]), default=None)
@click.option("--vlm", type=click.Choice(["mock", "http"]), default=None)
@click.option("--relabel", type=click.Choice(["on", "off"]), default=None)
def serve_cmd(config_path, host, port, backend, vlm, relabel):
    """Serve the streaming gateway (POST /init, POST /frame, GET /healthz)."""
    import uvicorn

    from .gateway import make_gateway_app

    cfg = _load_config(config_path)
    if relabel is not None:
        cfg = replace(cfg, relabel=(relabel == "on"))
    if backend:
        cfg = replace(cfg, backend=replace(cfg.backend, kind=backend))
    if vlm:
        cfg = replace(cfg, vlm=replace(cfg.vlm, backend=vlm))
    uvicorn.run(make_gateway_app(cfg), host=host, port=port, log_level="warning")


@main.command("serve-backend")
@click.option("--bundle", type=click.Path(exists=True), required=True,
              help="scene bundle backing the synthetic backend")
@click.option("--transport", type=click.Choice(["http", "stdio"]), default="stdio")
@click.option("--host", type=str, default="127.0.0.1")
@click.option("--port", type=int, default=8802)
@click.option("--corruption-seed", type=int, default=0)
@click.option("--drop", type=float, default=0.0)
@click.option("--split", type=float, default=0.0)
@click.option("--overseg", type=float, default=0.0)
def serve_backend_cmd(bundle, transport, host, port, corruption_seed, drop, split, overseg):
    """Expose the synthetic segmenter/tracker over HTTP or stdio JSON lines."""
    spec, _, _ = scenesim.read_bundle(bundle)
    corruption = CorruptionConfig(drop_probability=drop, split_probability=split,
                                  overseg_probability=overseg, rng_seed=corruption_seed)
    backend = SyntheticBackend(spec, corruption)
    if transport == "stdio":
        serve_stdio(backend)
    else:
        import uvicorn

        from .backends import make_backend_app

        uvicorn.run(make_backend_app(backend), host=host, port=port, log_level="warning")


@main.command("mask-debug")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--bundle", type=click.Path(exists=True), required=True)
@click.option("--instruction", "instruction_text", type=str, required=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def mask_debug_cmd(config_path, bundle, instruction_text, seed, out_dir):
    """Dump per-stage masks and renders as PNGs for inspection."""
    spec, _, _ = scenesim.read_bundle(bundle)
    cfg = _load_config(config_path, spec.setting)
    frame0 = np.asarray(Image.open(sorted(Path(bundle).glob("frame_????.png"))[0]).convert("RGB"))
    backend = build_backend(cfg, spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    raw = backend.segment(frame0, cfg.filter.granularity_levels)
    for i, m in enumerate(raw):
        (out / f"raw_{i:03d}.png").write_bytes(mask_to_png_bytes(m))
    filtered = filter_pipeline(raw, cfg.filter)
    for i, m in enumerate(filtered):
        (out / f"filtered_{i:03d}.png").write_bytes(mask_to_png_bytes(m))
    vlm_client = build_vlm(cfg)
    init = preprocess(frame0, instruction_text, spec.setting, cfg, backend, vlm_client, scene=spec)
    Image.fromarray(init.annotated_vlm_image).save(out / "annotated.png")
    Image.fromarray(init.highlighted_native).save(out / "highlighted.png")
    Image.fromarray(init.highlighted_policy).save(out / "policy.png")
    click.echo(f"raw={len(raw)} filtered={len(filtered)} chosen={list(init.selection.chosen_tags)}")
    click.echo(f"stage artifacts under {out}")


if __name__ == "__main__":
    main()
