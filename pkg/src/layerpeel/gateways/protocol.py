"""Request types, prompt templates and the JSON wire format.

Every body carries ``protocol_version``; images travel as base64 PNG.

``POST /annotate``   ``{template_id, prompt, images, context, substitutions}`` -> ``{text}``
``POST /remove``     ``{image, edit_prompt, instances, attention_plan, sampler}`` -> ``{image}``
``POST /similarity`` ``{caption, image}`` -> ``{score}``
``POST /perceptual`` ``{image_a, image_b}`` -> ``{distance}``
"""
from __future__ import annotations

import base64
import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Optional

PROTOCOL_VERSION = "1"

# template id -> (sha256 of the shipped text, number of images it expects)
TEMPLATES = {
    "graph_construct": ("0ba82eac45a9393f06a33a196cddcbd7c7dc5762a7b1d72737fab33b93c935d6", 1),
    "graph_update": ("3e0ec008e9b66e7c1152c175be227013c459442769d39861cfbd3d9cd21d0bda", 1),
    "boxes_and_labels": ("52e7e4fcb9a016c8a40613087309e65a671bea9c2126ce224e071f2f3a7136c0", 1),
    "panel_annotation": ("7e617ab0c62abd65cca07a2f51bac5a97da1fe8784433c29b8fcbe81000049fb", 1),
    "ablation_direct": ("e7d3a718c70e071e502ec14c0f2113729929616a7336f5b1fb393759ae3121a5", 1),
}


@lru_cache(maxsize=None)
def template_bytes(template_id: str) -> bytes:
    if template_id not in TEMPLATES:
        raise KeyError(f"unknown template {template_id!r}")
    return resources.files("layerpeel.gateways").joinpath("prompts", f"{template_id}.txt").read_bytes()


def template_text(template_id: str) -> str:
    return template_bytes(template_id).decode("utf-8")


def verify_templates() -> dict[str, bool]:
    """Template id -> whether the shipped text matches its pinned checksum."""
    return {tid: hashlib.sha256(template_bytes(tid)).hexdigest() == digest for tid, (digest, _) in TEMPLATES.items()}


def render_template(template_id: str, substitutions: Optional[dict] = None) -> str:
    """Template text with ``{key}`` placeholders replaced literally (other braces untouched)."""
    text = template_text(template_id)
    for key, value in (substitutions or {}).items():
        text = text.replace("{" + key + "}", value)
    return text


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"), validate=True)


@dataclass(frozen=True)
class VlmRequest:
    template_id: str
    images: tuple = ()  # PNG payloads
    context: Optional[str] = None  # serialized previous layer graph
    substitutions: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.template_id not in TEMPLATES:
            raise ValueError(f"unknown template {self.template_id!r}")
        arity = TEMPLATES[self.template_id][1]
        if len(self.images) != arity:
            raise ValueError(f"{self.template_id} takes {arity} image(s), got {len(self.images)}")

    def to_json(self) -> dict:
        return {
            "protocol_version": PROTOCOL_VERSION,
            "template_id": self.template_id,
            "prompt": render_template(self.template_id, self.substitutions),
            "images": [b64(i) for i in self.images],
            "context": self.context,
            "substitutions": dict(self.substitutions),
        }


@dataclass(frozen=True)
class RemoverRequest:
    image: bytes  # PNG
    edit_prompt: str
    instances: tuple = ()  # (BBoxNorm, label) pairs
    attention_plan: Optional[dict] = None  # AttentionPlan.to_json()
    steps: int = 40
    guidance: float = 4.5
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if not self.guidance > 0:
            raise ValueError("guidance must be positive")

    def to_json(self) -> dict:
        return {
            "protocol_version": PROTOCOL_VERSION,
            "image": b64(self.image),
            "edit_prompt": self.edit_prompt,
            "instances": [{"box": box.to_json(), "label": label} for box, label in self.instances],
            "attention_plan": self.attention_plan,
            "sampler": {"steps": self.steps, "guidance": self.guidance, "seed": self.seed},
        }
