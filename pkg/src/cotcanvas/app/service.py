"""Interactive edit sessions over HTTP.

Sessions persist through the content-addressed store after every
mutation and before the response is sent, so any acknowledged change
survives a hard kill. Steps are resolved strictly in order: masks are
data-dependent on earlier applications, and the API refuses out-of-order
approval with a conflict instead of guessing.
"""

from __future__ import annotations

import base64
import threading
import time
import uuid
from collections import defaultdict
from typing import Literal

from fastapi import Depends, FastAPI, HTTPException, Request, Response
from pydantic import BaseModel
from pydantic import ValidationError as PydanticValidationError

from ..backends.config import BackendSuite
from ..core.pngio import decode_image_png, decode_mask_png, encode_mask_png
from ..core.types import EditInstruction
from ..decompose import ClauseLexicon, decompose_grammar, decompose_llm
from ..errors import CotCanvasError, DecodeError, SessionError, ShapeError
from ..pipeline import (
    DecomposerKind,
    PipelinePolicy,
    ProposalStatus,
    StepProposal,
    _cot_step_from_json,
    _cot_step_to_json,
    _subprompt_from_json,
    _subprompt_to_json,
    apply_step,
    localize_step,
    reason_step,
)
from .store import SessionStore


class SessionManager:
    def __init__(self, store: SessionStore, backends: BackendSuite, policy: PipelinePolicy | None = None):
        self.store = store
        self.backends = backends
        self.policy = policy or PipelinePolicy()
        self.lexicon = ClauseLexicon.default()
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._locks_guard = threading.Lock()

    def _lock(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks[session_id]

    def _load(self, session_id: str) -> dict:
        record = self.store.load_session(session_id)
        if record is None:
            raise KeyError(f"no session {session_id}")
        return record

    # -- operations ------------------------------------------------------

    def create_session(self, png_bytes: bytes) -> dict:
        image = decode_image_png(png_bytes)  # strict: raises DecodeError
        digest = self.store.put_blob(png_bytes)
        now = time.time()
        record = {
            "session_id": uuid.uuid4().hex,
            "created_at": now,
            "updated_at": now,
            "canvas": digest,
            "width": image.width,
            "height": image.height,
            "history": [],
            "pending": None,
        }
        self.store.save_session(record)
        return record

    def propose(self, session_id: str, instruction: str) -> list[dict]:
        with self._lock(session_id):
            record = self._load(session_id)
            if record["pending"] is not None:
                raise SessionError("a pending proposal batch already exists", conflict=True)
            instr = EditInstruction(instruction)
            if self.policy.decomposer is DecomposerKind.LLM:
                subs = decompose_llm(
                    instr, self.backends.mllm, lexicon=self.lexicon, max_subprompts=self.policy.max_steps
                )
            else:
                subs = decompose_grammar(instr, self.lexicon, max_subprompts=self.policy.max_steps)

            canvas = decode_image_png(self.store.get_blob(record["canvas"]))
            proposals = []
            for k, sub in enumerate(subs, start=1):
                cot_step = reason_step(canvas, sub, self.backends, step_index=k)
                mask = localize_step(canvas, cot_step, self.backends, sub_prompt=sub)
                proposals.append(
                    {
                        "index": k,
                        "sub_prompt": _subprompt_to_json(sub),
                        "cot_step": _cot_step_to_json(cot_step),
                        "mask": self.store.put_blob(encode_mask_png(mask)),
                        "status": ProposalStatus.PROPOSED.value,
                        "rejections": [],
                    }
                )
            record["pending"] = {
                "instruction": instruction,
                "initial": record["canvas"],
                "applied_steps": [],
                "proposals": proposals,
            }
            record["updated_at"] = time.time()
            self.store.save_session(record)
            return proposals

    def resolve(
        self,
        session_id: str,
        index: int,
        decision: str,
        inpaint_prompt: str | None = None,
        mask_b64: str | None = None,
        feedback: str | None = None,
    ) -> dict:
        with self._lock(session_id):
            record = self._load(session_id)
            pending = record["pending"]
            if pending is None:
                raise KeyError(f"session {session_id} has no pending proposals")
            proposal = next((p for p in pending["proposals"] if p["index"] == index), None)
            if proposal is None:
                raise KeyError(f"no proposal {index}")

            live = StepProposal(
                sub_prompt=_subprompt_from_json(proposal["sub_prompt"]),
                cot_step=_cot_step_from_json(proposal["cot_step"]),
                mask=decode_mask_png(self.store.get_blob(proposal["mask"])),
                status=ProposalStatus(proposal["status"]),
            )
            earlier_unapplied = [
                p["index"]
                for p in pending["proposals"]
                if p["index"] < index and p["status"] != ProposalStatus.APPLIED.value
            ]
            if earlier_unapplied:
                raise SessionError(
                    f"steps {earlier_unapplied} must be applied before step {index}", conflict=True
                )

            if decision == "APPROVE":
                live.advance(ProposalStatus.APPROVED)
                self._apply(record, pending, proposal, live, inpaint_prompt, mask_b64)
            elif decision == "REJECT":
                live.advance(ProposalStatus.REJECTED)
                self._repropose(record, pending, proposal, live, feedback)
            else:
                raise ValueError(f"unknown decision {decision!r}")

            record["updated_at"] = time.time()
            self.store.save_session(record)
            return proposal

    def _apply(self, record, pending, proposal, live: StepProposal, inpaint_prompt, mask_b64) -> None:
        canvas = decode_image_png(self.store.get_blob(record["canvas"]))
        mask = live.mask
        mask_overridden = False
        if mask_b64 is not None:
            try:
                mask = decode_mask_png(base64.b64decode(mask_b64))
            except (DecodeError, ValueError) as exc:
                raise ValueError(f"override mask undecodable: {exc}") from exc
            if mask.size != canvas.size:
                raise ValueError(f"override mask {mask.size} does not match canvas {canvas.size}")
            mask_overridden = True

        prompt_overridden = inpaint_prompt is not None
        if inpaint_prompt is None:
            if self.policy.use_reprompt and live.cot_step is not None:
                inpaint_prompt = live.cot_step.inpaint_prompt
            else:
                inpaint_prompt = live.sub_prompt.raw_clause

        after = apply_step(canvas, mask, inpaint_prompt, self.policy, self.backends)
        live.advance(ProposalStatus.APPLIED)
        proposal["status"] = live.status.value
        if mask_overridden:
            proposal["mask"] = self.store.put_blob(encode_mask_png(mask))
        after_sha = self.store.put_blob(_png_bytes(after))
        record["canvas"] = after_sha
        pending["applied_steps"].append(
            {
                "sub_prompt": proposal["sub_prompt"],
                "cot_step": proposal["cot_step"],
                "mask": proposal["mask"],
                "after": after_sha,
                "inpaint_prompt": inpaint_prompt,
                "mask_overridden": mask_overridden,
                "prompt_overridden": prompt_overridden,
            }
        )
        if all(p["status"] == ProposalStatus.APPLIED.value for p in pending["proposals"]):
            record["history"].append(
                {
                    "instruction": pending["instruction"],
                    "initial": pending["initial"],
                    "sub_prompts": [p["sub_prompt"] for p in pending["proposals"]],
                    "steps": pending["applied_steps"],
                    "final": after_sha,
                }
            )
            record["pending"] = None

    def _repropose(self, record, pending, proposal, live: StepProposal, feedback: str | None) -> None:
        canvas = decode_image_png(self.store.get_blob(record["canvas"]))
        cot_step = reason_step(
            canvas, live.sub_prompt, self.backends, step_index=proposal["index"], user_feedback=feedback
        )
        mask = localize_step(canvas, cot_step, self.backends, sub_prompt=live.sub_prompt)
        proposal["rejections"].append({"feedback": feedback})
        proposal["cot_step"] = _cot_step_to_json(cot_step)
        proposal["mask"] = self.store.put_blob(encode_mask_png(mask))
        proposal["status"] = ProposalStatus.PROPOSED.value

    # -- reads -------------------------------------------------------------

    def session(self, session_id: str) -> dict:
        return self._load(session_id)

    def canvas_png(self, session_id: str) -> bytes:
        return self.store.get_blob(self._load(session_id)["canvas"])

    def proposals(self, session_id: str) -> list[dict]:
        record = self._load(session_id)
        return record["pending"]["proposals"] if record["pending"] else []

    def proposal_mask_png(self, session_id: str, index: int) -> bytes:
        for p in self.proposals(session_id):
            if p["index"] == index:
                return self.store.get_blob(p["mask"])
        raise KeyError(f"no proposal {index}")

    def trace(self, session_id: str) -> dict:
        record = self._load(session_id)
        return {
            "session_id": record["session_id"],
            "canvas": record["canvas"],
            "history": record["history"],
            "pending": record["pending"],
        }

    def session_blob(self, session_id: str, digest: str) -> bytes:
        record = self._load(session_id)
        if digest not in _referenced_blobs(record):
            raise KeyError(f"blob {digest} is not part of session {session_id}")
        return self.store.get_blob(digest)


def _referenced_blobs(record: dict) -> set[str]:
    refs = {record["canvas"]}
    for trace in record["history"]:
        refs.add(trace["initial"])
        refs.add(trace["final"])
        for step in trace["steps"]:
            refs.update((step["mask"], step["after"]))
    if record["pending"]:
        refs.add(record["pending"]["initial"])
        for step in record["pending"]["applied_steps"]:
            refs.update((step["mask"], step["after"]))
        for p in record["pending"]["proposals"]:
            refs.add(p["mask"])
    return refs


def _png_bytes(image) -> bytes:
    from ..core.pngio import encode_image_png

    return encode_image_png(image)


class ProposeBody(BaseModel):
    instruction: str


class ResolveBody(BaseModel):
    decision: Literal["APPROVE", "REJECT"]
    inpaint_prompt: str | None = None
    mask_b64: str | None = None
    feedback: str | None = None


class CreateBody(BaseModel):
    image_b64: str


def create_app(
    store: SessionStore,
    backends: BackendSuite,
    policy: PipelinePolicy | None = None,
    token: str | None = None,
) -> FastAPI:
    app = FastAPI(title="cotcanvas", version="0.1.0")
    manager = SessionManager(store, backends, policy)
    app.state.manager = manager

    def auth(request: Request):
        if token and request.headers.get("X-Auth-Token") != token:
            raise HTTPException(status_code=401, detail="missing or wrong token")

    def run(fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except SessionError as exc:
            raise HTTPException(status_code=409 if exc.conflict else 404, detail=str(exc)) from exc
        except DecodeError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except (ValueError, ShapeError, CotCanvasError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/v1/sessions", status_code=201, dependencies=[Depends(auth)])
    async def create_session(request: Request):
        if request.headers.get("content-type", "").startswith("image/png"):
            data = await request.body()
        else:
            try:
                body = CreateBody.model_validate_json(await request.body())
                data = base64.b64decode(body.image_b64)
            except (PydanticValidationError, ValueError) as exc:
                raise HTTPException(status_code=400, detail=f"bad request body: {exc}") from exc
        record = run(manager.create_session, data)
        return {"session_id": record["session_id"]}

    @app.get("/v1/sessions/{session_id}", dependencies=[Depends(auth)])
    def get_session(session_id: str):
        record = run(manager.session, session_id)
        return {
            "session_id": record["session_id"],
            "width": record["width"],
            "height": record["height"],
            "history_length": len(record["history"]),
            "pending": record["pending"] is not None,
        }

    @app.post("/v1/sessions/{session_id}/proposals", dependencies=[Depends(auth)])
    def propose(session_id: str, body: ProposeBody):
        return {"proposals": run(manager.propose, session_id, body.instruction)}

    @app.get("/v1/sessions/{session_id}/proposals", dependencies=[Depends(auth)])
    def get_proposals(session_id: str):
        return {"proposals": run(manager.proposals, session_id)}

    @app.post("/v1/sessions/{session_id}/proposals/{index}/resolve", dependencies=[Depends(auth)])
    def resolve(session_id: str, index: int, body: ResolveBody):
        return run(
            manager.resolve,
            session_id,
            index,
            body.decision,
            inpaint_prompt=body.inpaint_prompt,
            mask_b64=body.mask_b64,
            feedback=body.feedback,
        )

    @app.get("/v1/sessions/{session_id}/canvas.png", dependencies=[Depends(auth)])
    def canvas(session_id: str):
        return Response(content=run(manager.canvas_png, session_id), media_type="image/png")

    @app.get("/v1/sessions/{session_id}/proposals/{index}/mask.png", dependencies=[Depends(auth)])
    def proposal_mask(session_id: str, index: int):
        return Response(content=run(manager.proposal_mask_png, session_id, index), media_type="image/png")

    @app.get("/v1/sessions/{session_id}/trace", dependencies=[Depends(auth)])
    def trace(session_id: str):
        return run(manager.trace, session_id)

    @app.get("/v1/sessions/{session_id}/blobs/{digest}.png", dependencies=[Depends(auth)])
    def session_blob(session_id: str, digest: str):
        return Response(content=run(manager.session_blob, session_id, digest), media_type="image/png")

    return app
