"""Vision-language selection stage: prompt construction, reply parsing, retries.

The service interface is a chat-style endpoint (image + text -> text). Two
clients ship here: an HTTP client for real providers and a deterministic
mock that resolves instructions against synthetic-scene ground truth, with
configurable error injection for failure studies.
"""

from __future__ import annotations

import base64
import re
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import requests

from .masks import BinaryMask
from . import scenesim

# How many tags a valid selection must carry, per task setting.
SETTING_ARITY = {"blocks": 1, "kitchen": 2, "drawers": 1}

_TASK_NOUN = {
    "blocks": "the block to lift",
    "kitchen": "first the vegetable to pick up, then the pot to put it in",
    "drawers": "the drawer to open",
}


@dataclass(frozen=True)
class SelectionResult:
    chosen_tags: Tuple[int, ...]
    raw_reply: str
    status: str  # ok | invalid | timeout
    attempts: int = 1

    def to_json_dict(self) -> dict:
        return {
            "chosen_tags": list(self.chosen_tags),
            "raw_reply": self.raw_reply,
            "status": self.status,
            "attempts": self.attempts,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SelectionResult":
        return cls(chosen_tags=tuple(d["chosen_tags"]), raw_reply=d["raw_reply"],
                   status=d["status"], attempts=d.get("attempts", 1))


@dataclass
class SelectionContext:
    """Side-channel metadata available to in-process clients.

    The wire protocol carries only image + prompt; the mock additionally
    needs the tag-to-mask correspondence and scene ground truth to answer
    like an oracle.
    """

    setting: str
    instruction: str
    valid_tags: Tuple[int, ...]
    tag_masks: Dict[int, BinaryMask] = field(default_factory=dict)
    scene: Optional[scenesim.SceneSpec] = None


class VlmClient(Protocol):
    def ask(self, image_png: bytes, prompt: str, context: Optional[SelectionContext] = None) -> str:
        ...


def build_prompt(instruction: str, valid_tags: Sequence[int], task_setting: str) -> str:
    """Deterministic selection prompt with a strict output grammar."""
    if not valid_tags:
        raise ValueError("valid_tags must be nonempty")
    arity = SETTING_ARITY.get(task_setting, 1)
    tags = ", ".join(str(t) for t in valid_tags)
    lines = [
        "The image shows a robot workspace. Candidate objects are outlined and",
        "labeled with numeric tags.",
        f"Valid tags: [{tags}].",
        f"Task: {instruction}",
        f"Select {_TASK_NOUN.get(task_setting, 'the object relevant to the task')}.",
        f"Answer with exactly {arity} tag number{'s' if arity > 1 else ''}.",
        "You may explain your reasoning, but the last line of your reply must be:",
        "FINAL: [n" + (", m" if arity > 1 else "") + "]",
    ]
    return "\n".join(lines)


_FINAL_RE = re.compile(r"FINAL\s*:\s*\[([^\]]*)\]", re.IGNORECASE)
_BRACKET_RE = re.compile(r"\[([0-9,\s]+)\]")


def parse_selection(reply: str, valid_tags: Sequence[int],
                    arity: Optional[int] = None) -> SelectionResult:
    """Pull tag numbers out of a free-text reply.

    The last FINAL: line wins; failing that, the last bracketed integer list
    anywhere in the text. Order is preserved, duplicates are dropped, and
    any out-of-range tag (or a tag-count below the required arity) makes the
    whole selection invalid.
    """
    finals = _FINAL_RE.findall(reply)
    payload = None
    if finals:
        payload = finals[-1]
    else:
        brackets = _BRACKET_RE.findall(reply)
        if brackets:
            payload = brackets[-1]
    if payload is None:
        return SelectionResult((), reply, "invalid")
    nums: List[int] = []
    for token in re.findall(r"-?\d+", payload):
        n = int(token)
        if n not in nums:
            nums.append(n)
    valid = set(valid_tags)
    if not nums or any(n not in valid for n in nums):
        return SelectionResult((), reply, "invalid")
    if arity is not None and len(nums) < arity:
        return SelectionResult(tuple(nums), reply, "invalid")
    return SelectionResult(tuple(nums), reply, "ok")


def select(annotated_image_png: bytes, instruction: str, client: VlmClient,
           context: SelectionContext, retries: int = 2,
           attempt_timeout_s: float = 30.0) -> SelectionResult:
    """Ask the VLM, re-asking on unparseable/invalid replies up to `retries` times."""
    arity = SETTING_ARITY.get(context.setting, 1)
    prompt = build_prompt(instruction, context.valid_tags, context.setting)
    last = SelectionResult((), "", "invalid", attempts=0)
    attempts = 0
    for _ in range(retries + 1):
        attempts += 1
        start = time.monotonic()
        try:
            reply = client.ask(annotated_image_png, prompt, context)
        except (requests.RequestException, TimeoutError, ConnectionError, OSError):
            last = SelectionResult((), "", "timeout", attempts=attempts)
            continue
        if time.monotonic() - start > attempt_timeout_s:
            last = SelectionResult((), reply, "timeout", attempts=attempts)
            continue
        parsed = parse_selection(reply, context.valid_tags, arity=arity)
        last = SelectionResult(parsed.chosen_tags, parsed.raw_reply, parsed.status, attempts=attempts)
        if last.status == "ok":
            return last
    return last


# ---------------------------------------------------------------------------
# Clients


@dataclass(frozen=True)
class MockVlmConfig:
    wrong_tag_probability: float = 0.0
    refuse_probability: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("wrong_tag_probability", "refuse_probability"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0,1], got {v}")


class MockVlm:
    """Oracle-backed stand-in for a real vision-language model.

    Resolves the instruction against the scene in the selection context and
    answers with the tags whose masks best cover the target objects. Error
    injection: with `refuse_probability` the reply is unparseable chatter,
    with `wrong_tag_probability` one correct tag is swapped for a random
    wrong one. Same seed + same calls -> same replies.
    """

    def __init__(self, config: MockVlmConfig = MockVlmConfig()):
        self.config = config
        self._rng = np.random.Generator(np.random.PCG64(config.rng_seed))

    def _oracle_tags(self, context: SelectionContext) -> List[int]:
        scene = context.scene
        if scene is None:
            return [context.valid_tags[0]]
        instr = scenesim.parse_instruction(context.instruction, context.setting)
        try:
            targets = scenesim.resolve_instruction(scene, instr)
        except scenesim.ResolveError:
            return [context.valid_tags[0]]
        tags: List[int] = []
        for obj_id in targets:
            gt = scenesim.object_mask(scene, obj_id, 0).data
            best_tag, best = context.valid_tags[0], -1
            for tag in context.valid_tags:
                mask = context.tag_masks.get(tag)
                if mask is None:
                    continue
                ov = int((mask.data & gt).sum())
                if ov > best:
                    best, best_tag = ov, tag
            tags.append(best_tag)
        return tags

    def ask(self, image_png: bytes, prompt: str, context: Optional[SelectionContext] = None) -> str:
        if context is None:
            raise ValueError("MockVlm needs a SelectionContext")
        if self._rng.random() < self.config.refuse_probability:
            return "I looked at the image but I am not able to pick an object."
        tags = self._oracle_tags(context)
        if self._rng.random() < self.config.wrong_tag_probability:
            pos = int(self._rng.integers(len(tags)))
            wrong = [t for t in context.valid_tags if t != tags[pos]]
            if wrong:
                tags[pos] = wrong[int(self._rng.integers(len(wrong)))]
        listing = ", ".join(str(t) for t in tags)
        return (f"The scene contains {len(context.valid_tags)} tagged regions. "
                f"Matching the task description, I pick {listing}.\nFINAL: [{listing}]")


class HttpVlm:
    """POST /v1/select {image_png_b64, prompt} -> {reply}."""

    def __init__(self, base_url: str, timeout_s: float = 30.0, session=None):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self._session = session or requests.Session()

    def ask(self, image_png: bytes, prompt: str, context: Optional[SelectionContext] = None) -> str:
        payload = {"image_png_b64": base64.b64encode(image_png).decode("ascii"), "prompt": prompt}
        resp = self._session.post(f"{self.base_url}/v1/select", json=payload, timeout=self.timeout_s)
        resp.raise_for_status()
        return resp.json()["reply"]
