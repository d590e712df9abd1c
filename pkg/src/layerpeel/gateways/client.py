"""HTTP adapters that turn remote model services into peel backends."""
from __future__ import annotations

import logging
import os
import threading
import time
from typing import Callable, Optional, Sequence

import requests

from ..attention import AttentionPlan
from ..errors import (
    BoxOutOfRange,
    InvalidGraphJson,
    InvalidJson,
    MissingTag,
    ProtocolError,
    ServerError,
    Timeout,
    Unauthorized,
)
from ..layer_graph import LayerGraph, serialize
from ..peel import AnnotatorOutput, Instance
from ..raster import RasterImage
from .parsing import graph_from_tags, parse_box_response, parse_tagged_response
from .protocol import PROTOCOL_VERSION, RemoverRequest, VlmRequest, b64, unb64

log = logging.getLogger(__name__)

API_KEY_ENV = "LAYERPEEL_API_KEY"


class ServiceClient:
    """JSON-over-HTTP POSTs with timeouts, bounded retries and exponential backoff.

    5xx replies, dropped connections and timeouts are retried up to
    ``max_retries`` times, sleeping ``backoff * 2**k`` between attempts.  401
    and 403 fail at once with :class:`Unauthorized`; other 4xx replies and
    malformed bodies raise :class:`ProtocolError`.
    """

    def __init__(
        self,
        base_url: str,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        max_concurrent: int = 4,
        session: Optional[requests.Session] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.session = session or requests.Session()
        self.sleep = sleep
        self._slots = threading.BoundedSemaphore(max_concurrent)
        self.last_retries = 0

    def _headers(self) -> dict:
        h = {"Content-Type": "application/json"}
        if self.api_key:
            h["Authorization"] = f"Bearer {self.api_key}"
        return h

    def post(self, route: str, payload: dict) -> dict:
        url = f"{self.base_url}/{route.lstrip('/')}"
        retries = 0
        while True:
            failure: Optional[Exception] = None
            try:
                with self._slots:
                    resp = self.session.post(url, json=payload, headers=self._headers(), timeout=self.timeout)
            except requests.Timeout as e:
                failure = Timeout(f"{url} timed out after {self.timeout}s: {e}", retries=retries)
            except requests.ConnectionError as e:
                failure = ServerError(f"cannot reach {url}: {e}", retries=retries)
            else:
                if resp.status_code in (401, 403):
                    raise Unauthorized(f"{url} refused credentials ({resp.status_code})", resp.content, retries)
                if resp.status_code >= 500:
                    failure = ServerError(f"{url} answered {resp.status_code}", resp.content, retries)
                elif resp.status_code >= 400:
                    raise ProtocolError(f"{url} rejected the request ({resp.status_code})", resp.content, retries)
                else:
                    self.last_retries = retries
                    if retries:
                        log.info("%s succeeded after %d retries", url, retries)
                    return self._decode(resp, retries)
            if retries >= self.max_retries:
                self.last_retries = retries
                raise failure
            delay = self.backoff * (2 ** retries)
            retries += 1
            log.warning("%s; retry %d/%d in %.2fs", failure, retries, self.max_retries, delay)
            self.sleep(delay)

    @staticmethod
    def _decode(resp, retries: int) -> dict:
        try:
            body = resp.json()
        except ValueError:
            raise ProtocolError("response body is not JSON", resp.content, retries) from None
        if not isinstance(body, dict):
            raise ProtocolError("response body is not a JSON object", resp.content, retries)
        version = body.get("protocol_version")
        if version is not None and str(version) != PROTOCOL_VERSION:
            raise ProtocolError(f"server speaks protocol {version!r}, expected {PROTOCOL_VERSION}", resp.content, retries)
        body["_raw"] = resp.content
        return body


def _field(body: dict, key: str, kind):
    value = body.get(key)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ProtocolError(f"response field {key!r} is missing or has the wrong type", body.get("_raw"))
    return value


class RemoteAnnotator:
    """Layer-graph construction/update, then per-region boxes, over ``POST /annotate``."""

    concurrent_safe = True

    def __init__(self, client: ServiceClient):
        self.client = client

    def ask(self, request: VlmRequest) -> tuple[str, bytes]:
        body = self.client.post("annotate", request.to_json())
        return _field(body, "text", str), body.get("_raw")

    def annotate(self, image: RasterImage, prev_graph: Optional[LayerGraph]) -> AnnotatorOutput:
        png = image.to_png()
        if prev_graph is None:
            req = VlmRequest("graph_construct", (png,))
        else:
            req = VlmRequest("graph_update", (png,), context=serialize(prev_graph))
        text, raw = self.ask(req)
        try:
            tags = parse_tagged_response(text, required=("layer_graph", "caption"))
            graph = graph_from_tags(tags)
        except (MissingTag, InvalidGraphJson) as e:
            raise ProtocolError(f"{req.template_id}: {e}", raw) from None
        caption = " ".join(tags["caption"].split())
        if not caption:
            raise ProtocolError(f"{req.template_id}: empty caption", raw)
        box_text, raw = self.ask(VlmRequest("boxes_and_labels", (png,), substitutions={"layers": caption}))
        try:
            boxes = parse_box_response(box_text)
        except (InvalidJson, BoxOutOfRange) as e:
            raise ProtocolError(f"boxes_and_labels: {e}", raw) from None
        return AnnotatorOutput(graph, caption, tuple(Instance(b, label) for b, label in boxes))


class RemoteRemover:
    """Diffusion-based removal over ``POST /remove``."""

    concurrent_safe = True

    def __init__(self, client: ServiceClient):
        self.client = client

    def remove(self, image: RasterImage, edit_prompt: str, instances: Sequence[Instance],
               plan: Optional[AttentionPlan], sampler: dict) -> RasterImage:
        req = RemoverRequest(
            image.to_png(),
            edit_prompt,
            tuple((i.box, i.label) for i in instances),
            plan.to_json() if plan is not None else None,
            steps=int(sampler.get("steps", 40)),
            guidance=float(sampler.get("guidance", 4.5)),
            seed=int(sampler.get("seed", 0)),
        )
        body = self.client.post("remove", req.to_json())
        data = _field(body, "image", str)
        try:
            out = RasterImage.from_png(unb64(data))
        except Exception as e:  # undecodable base64 or image bytes
            raise ProtocolError(f"remover image does not decode: {e}", body.get("_raw")) from None
        if out.shape != image.shape:
            raise ProtocolError(f"remover returned {out.shape}, expected {image.shape}", body.get("_raw"))
        return out


class EmbeddingClient:
    """Caption/image similarity and perceptual distance over the embedding service."""

    def __init__(self, client: ServiceClient):
        self.client = client

    def similarity(self, caption: str, image: RasterImage) -> float:
        body = self.client.post("similarity", {"protocol_version": PROTOCOL_VERSION, "caption": caption,
                                               "image": b64(image.to_png())})
        return float(_field(body, "score", (int, float)))

    def perceptual_distance(self, a: RasterImage, b: RasterImage) -> float:
        body = self.client.post("perceptual", {"protocol_version": PROTOCOL_VERSION,
                                               "image_a": b64(a.to_png()), "image_b": b64(b.to_png())})
        return float(_field(body, "distance", (int, float)))


def remote_annotator(endpoint: str, api_key: Optional[str] = None, **kw) -> RemoteAnnotator:
    return RemoteAnnotator(ServiceClient(endpoint, api_key, **kw))


def remote_remover(endpoint: str, api_key: Optional[str] = None, **kw) -> RemoteRemover:
    return RemoteRemover(ServiceClient(endpoint, api_key, **kw))


def embedding_service(endpoint: str, api_key: Optional[str] = None, **kw) -> EmbeddingClient:
    return EmbeddingClient(ServiceClient(endpoint, api_key, **kw))
