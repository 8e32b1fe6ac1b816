"""HTTP adapters for conforming model servers.

Wire format: JSON bodies with base64-PNG images, one endpoint per
backend operation under /v1. Localization, embedding and judge calls are
idempotent and retried with exponential backoff on transport failures
and 5xx replies; chat and inpainting are generation calls and are only
retried when the connection failed before the request was sent, to
avoid double-generation.
"""

from __future__ import annotations

import base64
import time
from dataclasses import dataclass

import httpx

from ..core.pngio import decode_image_png, decode_mask_png, encode_image_png, encode_mask_png
from ..core.types import BinaryMask, RasterImage, count_seg_markers
from ..errors import BackendError, DecodeError, ProtocolError, TransportError
from .base import JudgeCriterion


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    api_key: str | None = None
    timeout_s: float = 10.0
    retries: int = 2
    backoff_s: float = 0.25


def image_to_b64(image: RasterImage) -> str:
    return base64.b64encode(encode_image_png(image)).decode("ascii")


def b64_to_image(data: str) -> RasterImage:
    return decode_image_png(base64.b64decode(data))


def mask_to_b64(mask: BinaryMask) -> str:
    return base64.b64encode(encode_mask_png(mask)).decode("ascii")


def b64_to_mask(data: str) -> BinaryMask:
    return decode_mask_png(base64.b64decode(data))


class _Endpoint:
    """One backend endpoint: connection pool, auth header, retry loop."""

    def __init__(self, config: EndpointConfig):
        self.config = config
        headers = {}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._client = httpx.Client(
            base_url=config.url.rstrip("/"), headers=headers, timeout=config.timeout_s
        )

    def close(self) -> None:
        self._client.close()

    def post(self, path: str, payload: dict, idempotent: bool) -> dict:
        attempts = self.config.retries + 1
        last_exc: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                time.sleep(self.config.backoff_s * (2 ** (attempt - 1)))
            try:
                resp = self._client.post(path, json=payload)
            except httpx.ConnectError as exc:
                last_exc = TransportError(f"connect failed: {exc}")
                continue  # nothing was sent; always safe to retry
            except httpx.TransportError as exc:
                last_exc = TransportError(f"transport failure: {exc}")
                if idempotent:
                    continue
                raise last_exc from exc
            if resp.status_code >= 500 and idempotent and attempt + 1 < attempts:
                last_exc = BackendError(resp.status_code, resp.text)
                continue
            if not (200 <= resp.status_code < 300):
                raise BackendError(resp.status_code, resp.text)
            try:
                body = resp.json()
            except ValueError as exc:
                raise ProtocolError(f"reply is not valid JSON: {exc}") from exc
            if not isinstance(body, dict):
                raise ProtocolError(f"reply is not a JSON object: {type(body).__name__}")
            return body
        raise last_exc  # retries exhausted

    def field(self, body: dict, key: str):
        if key not in body:
            raise ProtocolError(f"reply is missing field {key!r}")
        return body[key]


class RemoteMllm(_Endpoint):
    def chat(self, image: RasterImage | None, prompt: str) -> str:
        payload = {"prompt": prompt, "image_b64": image_to_b64(image) if image else None}
        body = self.post("/v1/chat", payload, idempotent=False)
        text = self.field(body, "text")
        if not isinstance(text, str):
            raise ProtocolError("chat reply field 'text' is not a string")
        return text


class RemoteSegmentation(_Endpoint):
    def segment(self, image: RasterImage, dialogue: str) -> tuple[str, list[BinaryMask]]:
        payload = {"image_b64": image_to_b64(image), "text": dialogue}
        body = self.post("/v1/segment", payload, idempotent=True)
        text = self.field(body, "text")
        masks_b64 = self.field(body, "masks_b64")
        if not isinstance(masks_b64, list):
            raise ProtocolError("segment reply field 'masks_b64' is not a list")
        try:
            masks = [b64_to_mask(m) for m in masks_b64]
        except (DecodeError, ValueError) as exc:
            raise ProtocolError(f"undecodable mask in segment reply: {exc}") from exc
        if count_seg_markers(text) != len(masks):
            raise ProtocolError(
                f"segment reply has {count_seg_markers(text)} [SEG] markers "
                f"but {len(masks)} masks"
            )
        return text, masks


class RemoteInpaint(_Endpoint):
    def inpaint(self, image: RasterImage, mask: BinaryMask, prompt: str) -> RasterImage:
        payload = {
            "image_b64": image_to_b64(image),
            "mask_b64": mask_to_b64(mask),
            "prompt": prompt,
        }
        body = self.post("/v1/inpaint", payload, idempotent=False)
        try:
            return b64_to_image(self.field(body, "image_b64"))
        except (DecodeError, ValueError) as exc:
            raise ProtocolError(f"undecodable image in inpaint reply: {exc}") from exc


class RemoteEmbedding(_Endpoint):
    def _vector(self, body: dict) -> list[float]:
        vec = self.field(body, "embedding")
        if not isinstance(vec, list) or not vec or not all(isinstance(v, (int, float)) for v in vec):
            raise ProtocolError("embedding reply is not a nonempty number list")
        return [float(v) for v in vec]

    def embed_image(self, image: RasterImage) -> list[float]:
        return self._vector(self.post("/v1/embed_image", {"image_b64": image_to_b64(image)}, idempotent=True))

    def embed_text(self, text: str) -> list[float]:
        return self._vector(self.post("/v1/embed_text", {"text": text}, idempotent=True))


class RemoteJudge(_Endpoint):
    def score(
        self, source: RasterImage, edited: RasterImage, instruction: str, criterion: JudgeCriterion
    ) -> int:
        payload = {
            "image_b64": image_to_b64(source),
            "edited_b64": image_to_b64(edited),
            "prompt": instruction,
            "criterion": criterion.value,
        }
        body = self.post("/v1/judge", payload, idempotent=True)
        text = self.field(body, "text")
        try:
            return int(str(text).strip())
        except ValueError as exc:
            raise ProtocolError(f"judge reply is not an integer: {text!r}") from exc
