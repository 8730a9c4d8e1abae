#!/usr/bin/env python3
"""Record golden wire transcripts from the reference synthetic backend.

Regenerate with:  python3 adapter/golden/make_goldens.py
Outputs (committed): synthetic_transcript.json + probe.png. The scene is
static so identical step requests always map to one recorded reply, which
lets the conformance battery run complete against a replay-backed server.
"""

import json
from pathlib import Path

from PIL import Image

from visaug import rasters
from visaug.backends import SyntheticBackend, handle_message
from visaug.scenesim import gen_scene
from visaug.selection import MockVlm, MockVlmConfig, SelectionContext, build_prompt

HERE = Path(__file__).parent
OUT = HERE / "synthetic_transcript.json"
PROBE = HERE / "probe.png"

CONFORMANCE_PROMPT = "Select the relevant tag.\nFINAL: [n]"


def main():
    spec, frame0, masks = gen_scene("blocks", {"count": 2, "order": ["orange", "blue"]},
                                    seed=7, image_size=(128, 128))
    Image.fromarray(frame0).save(PROBE)
    frame_b64 = rasters.to_b64_png(frame0)
    backend = SyntheticBackend(spec)
    sessions = {}
    entries = []

    seg_req = {"image_png_b64": frame_b64, "granularity": [1]}
    seg_resp = handle_message(backend, "segment", dict(seg_req), sessions)
    entries.append({"op": "segment", "request": seg_req, "response": seg_resp})

    init_req = {"image_png_b64": frame_b64, "masks": seg_resp["masks"]}
    init_resp = handle_message(backend, "track_init", dict(init_req), sessions)
    entries.append({"op": "track_init", "request": init_req, "response": init_resp})

    step_req = {"session_id": init_resp["session_id"], "image_png_b64": frame_b64}
    step_resp = handle_message(backend, "track_step", dict(step_req), sessions)
    # wall-clock latency is not replayable; pin it for the golden file
    step_resp["latency_ms"] = 0.0
    entries.append({"op": "track_step", "request": step_req, "response": step_resp})

    tag_masks = {i + 1: m for i, m in enumerate(masks)}
    ctx = SelectionContext(setting="blocks", instruction="lift the leftmost blue block",
                           valid_tags=tuple(tag_masks), tag_masks=tag_masks, scene=spec)
    prompt = build_prompt(ctx.instruction, ctx.valid_tags, "blocks")
    reply = MockVlm(MockVlmConfig(rng_seed=7)).ask(b"", prompt, ctx)
    entries.append({"op": "select",
                    "request": {"image_png_b64": frame_b64, "prompt": prompt},
                    "response": {"reply": reply}})
    # the conformance battery asks with its own fixed prompt
    entries.append({"op": "select",
                    "request": {"image_png_b64": frame_b64, "prompt": CONFORMANCE_PROMPT},
                    "response": {"reply": reply}})

    OUT.write_text(json.dumps(entries, indent=2) + "\n")
    print(f"wrote {OUT} with {len(entries)} entries and {PROBE}")


if __name__ == "__main__":
    main()
