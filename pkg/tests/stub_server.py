"""In-process HTTP model server implementing the backend wire protocol.

Wraps a mock BackendSuite behind real sockets so the remote adapters can
be exercised end to end, with per-path fault injection (canned status
codes, artificial latency) for retry and timeout tests.
"""

from __future__ import annotations

import base64
import json
import threading
import time
from collections import defaultdict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from cotcanvas.backends import JudgeCriterion
from cotcanvas.core import decode_image_png, decode_mask_png, encode_image_png, encode_mask_png


class StubModelServer:
    def __init__(self, suite):
        self.suite = suite
        self.fail_queue: dict[str, list[int]] = defaultdict(list)
        self.delay_s: float = 0.0
        self.request_log: list[str] = []
        self.mangle: dict[str, dict] = {}  # path -> reply override

        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                outer.request_log.append(self.path)
                if outer.delay_s:
                    time.sleep(outer.delay_s)
                if outer.fail_queue[self.path]:
                    status = outer.fail_queue[self.path].pop(0)
                    self.send_response(status)
                    self.end_headers()
                    self.wfile.write(b"injected failure")
                    return
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length) or b"{}")
                try:
                    if self.path in outer.mangle:
                        reply = outer.mangle[self.path]
                    else:
                        reply = outer.dispatch(self.path, payload)
                except Exception as exc:  # surface handler bugs as 500s
                    self.send_response(500)
                    self.end_headers()
                    self.wfile.write(str(exc).encode())
                    return
                body = json.dumps(reply).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self._server.server_port}"

    def start(self) -> "StubModelServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def dispatch(self, path: str, payload: dict) -> dict:
        def img(key):
            return decode_image_png(base64.b64decode(payload[key]))

        def msk(key):
            return decode_mask_png(base64.b64decode(payload[key]))

        if path == "/v1/chat":
            image = img("image_b64") if payload.get("image_b64") else None
            return {"text": self.suite.mllm.chat(image, payload["prompt"])}
        if path == "/v1/segment":
            text, masks = self.suite.segmentation.segment(img("image_b64"), payload["text"])
            return {
                "text": text,
                "masks_b64": [base64.b64encode(encode_mask_png(m)).decode() for m in masks],
            }
        if path == "/v1/inpaint":
            out = self.suite.inpaint.inpaint(img("image_b64"), msk("mask_b64"), payload["prompt"])
            return {"image_b64": base64.b64encode(encode_image_png(out)).decode()}
        if path == "/v1/embed_image":
            return {"embedding": self.suite.embedding.embed_image(img("image_b64"))}
        if path == "/v1/embed_text":
            return {"embedding": self.suite.embedding.embed_text(payload["text"])}
        if path == "/v1/judge":
            score = self.suite.judge.score(
                img("image_b64"),
                img("edited_b64"),
                payload["prompt"],
                JudgeCriterion(payload["criterion"]),
            )
            return {"text": str(score)}
        raise ValueError(f"unknown path {path}")
