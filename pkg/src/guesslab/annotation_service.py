"""Blinded human-evaluation service for played transcripts.

Annotators see scenes, candidates, and dialogues; which strategy produced
a transcript, and which object was the target, never leave the server.
Assignments are deterministic in (transcripts, session seed), so a
restarted server accepts the same append-only store it wrote before.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Mapping, Optional, Sequence

from fastapi import FastAPI, HTTPException
from fastapi.responses import HTMLResponse
from pydantic import BaseModel

from .agents import Transcript
from .decoding import turn_stream
from .errors import (
    CapacityError,
    EmptyCollectionError,
    FormatError,
    ValidationError,
)
from .world import Dataset, Game

EOQ = "<eoq>"


@dataclass(frozen=True)
class SessionItem:
    """One transcript shown to one annotator; strategy stays server-side."""

    transcript_id: str
    annotator_id: str
    strategy: str
    game_id: str
    transcript: Transcript


def _opaque_id(seed: int, annotator_id: str, strategy: str,
               game_id: str) -> str:
    raw = f"{seed}|{annotator_id}|{strategy}|{game_id}".encode()
    return hashlib.sha256(raw).hexdigest()[:16]


def build_session(transcripts_by_strategy: Mapping[str, Sequence[Transcript]],
                  n_annotators: int = 8, quota: int = 25,
                  seed: int = 0) -> list[SessionItem]:
    """Deterministic blinded assignment of transcripts to annotators.

    Per annotator: exactly `quota` items per strategy, all on distinct
    games (a game is never shown twice to the same person, even under a
    different strategy), presented in a per-annotator shuffled order.
    Games may repeat across annotators.
    """
    if n_annotators < 1:
        raise ValidationError("n_annotators must be >= 1")
    if quota < 1:
        raise ValidationError("quota must be >= 1")
    if not transcripts_by_strategy:
        raise ValidationError("no strategy conditions supplied")

    pools: dict[str, dict[str, Transcript]] = {}
    for strategy in sorted(transcripts_by_strategy):
        pool: dict[str, Transcript] = {}
        for t in transcripts_by_strategy[strategy]:
            pool.setdefault(t.game_id, t)  # one transcript per game
        pools[strategy] = pool

    all_games = sorted({g for pool in pools.values() for g in pool})
    labels = list(pools)
    width = len(str(n_annotators))
    items: list[SessionItem] = []
    for idx in range(n_annotators):
        annotator_id = f"annotator-{idx + 1:0{width}d}"
        rng = turn_stream(seed, f"annotation|{annotator_id}", 0)
        order = [all_games[i] for i in rng.permutation(len(all_games))]
        need = {label: quota for label in labels}
        chosen: list[tuple[str, str]] = []
        for game_id in order:
            if not any(need.values()):
                break
            # most-starved strategy that can still use this game
            candidates = [label for label in labels
                          if need[label] > 0 and game_id in pools[label]]
            if not candidates:
                continue
            label = max(candidates, key=lambda s: (need[s], s))
            need[label] -= 1
            chosen.append((label, game_id))
        short = {label: n for label, n in need.items() if n > 0}
        if short:
            detail = ", ".join(
                f"{label} short {n} of {quota}" for label, n in
                sorted(short.items()))
            raise CapacityError(
                f"not enough distinct games for {annotator_id}: {detail} "
                f"({len(all_games)} games available)")
        for pos in rng.permutation(len(chosen)):
            label, game_id = chosen[pos]
            items.append(SessionItem(
                transcript_id=_opaque_id(seed, annotator_id, label, game_id),
                annotator_id=annotator_id, strategy=label, game_id=game_id,
                transcript=pools[label][game_id]))
    return items


def _dialogue_payload(transcript: Transcript) -> list[dict]:
    out = []
    for turn in transcript.turns:
        words = [w for w in turn.question if w != EOQ]
        out.append({"question": " ".join(words), "answer": turn.answer})
    return out


def _scene_payload(game: Game) -> dict:
    rows, cols = game.scene.grid
    return {
        "grid": [rows, cols],
        "objects": [
            {"id": o.id, "category": o.category, "color": o.color,
             "size": o.size, "bbox": list(o.bbox)}
            for o in game.scene.objects
        ],
    }


class AnnotationService:
    """Session state, validation, and the append-only annotation store."""

    def __init__(self, items: Sequence[SessionItem], dataset: Dataset,
                 store_path: str, quota: Optional[int] = None):
        self._games = {g.game_id: g for g in dataset.games}
        missing = sorted({i.game_id for i in items} - set(self._games))
        if missing:
            raise ValidationError(
                f"transcripts reference games absent from the dataset: "
                f"{missing[:5]}")
        self._items = {i.transcript_id: i for i in items}
        if len(self._items) != len(items):
            raise ValidationError("duplicate transcript ids in session")
        self._by_annotator: dict[str, list[SessionItem]] = {}
        for item in items:
            self._by_annotator.setdefault(item.annotator_id, []).append(item)
        self._strategies = sorted({i.strategy for i in items})
        self._quota = quota
        self._store_path = store_path
        self._lock = threading.Lock()
        # (annotator_id, transcript_id) -> record dict
        self._records: dict[tuple[str, str], dict] = {}
        self._replay()

    @classmethod
    def from_transcripts(cls, transcripts: Sequence[Transcript],
                         dataset: Dataset, n_annotators: int = 8,
                         quota: int = 25, seed: int = 0,
                         store_path: str = "annotations.jsonl"
                         ) -> "AnnotationService":
        by_strategy: dict[str, list[Transcript]] = {}
        for t in transcripts:
            label = ("scripted" if t.config is None else t.config.label())
            by_strategy.setdefault(label, []).append(t)
        items = build_session(by_strategy, n_annotators=n_annotators,
                              quota=quota, seed=seed)
        return cls(items, dataset, store_path, quota=quota)

    # -- store ---------------------------------------------------------------

    def _replay(self) -> None:
        if not os.path.exists(self._store_path):
            return
        with open(self._store_path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    doc = json.loads(line)
                    key = (doc["annotator_id"], doc["transcript_id"])
                    item = self._items.get(doc["transcript_id"])
                except (json.JSONDecodeError, TypeError, KeyError) as exc:
                    raise FormatError(
                        f"{self._store_path} line {lineno}: bad record "
                        f"({exc})")
                if item is None or item.annotator_id != key[0]:
                    raise FormatError(
                        f"{self._store_path} line {lineno}: record does not "
                        f"match this session's assignments")
                self._records[key] = doc

    def _append(self, doc: dict) -> None:
        with open(self._store_path, "a") as fh:
            fh.write(json.dumps(doc, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    # -- session -------------------------------------------------------------

    @property
    def annotator_ids(self) -> list[str]:
        return sorted(self._by_annotator)

    def describe(self) -> str:
        return (f"{len(self._by_annotator)} annotators x "
                f"{len(self._strategies)} conditions, "
                f"{len(self._items)} items")

    def _assignment(self, annotator_id: str) -> list[SessionItem]:
        try:
            return self._by_annotator[annotator_id]
        except KeyError:
            raise ValidationError(f"unknown annotator {annotator_id!r}")

    def next_item(self, annotator_id: str) -> dict:
        """The first unanswered item, identical across reconnects."""
        with self._lock:
            assigned = self._assignment(annotator_id)
            answered = sum((annotator_id, i.transcript_id) in self._records
                           for i in assigned)
            for item in assigned:
                if (annotator_id, item.transcript_id) in self._records:
                    continue
                game = self._games[item.game_id]
                return {
                    "done": False,
                    "item": {
                        "transcript_id": item.transcript_id,
                        "game_id": item.game_id,
                        "scene": _scene_payload(game),
                        "candidate_ids": list(game.candidate_ids),
                        "dialogue": _dialogue_payload(item.transcript),
                    },
                    "progress": {"answered": answered,
                                 "total": len(assigned)},
                }
            return {"done": True,
                    "progress": {"answered": answered,
                                 "total": len(assigned)}}

    def submit_annotation(self, annotator_id: str, transcript_id: str,
                          chosen_candidate_id: int) -> dict:
        """Store one choice; duplicates of the same choice are no-ops."""
        with self._lock:
            assigned = self._assignment(annotator_id)
            item = self._items.get(transcript_id)
            if item is None or item.annotator_id != annotator_id:
                raise ValidationError(
                    f"transcript {transcript_id!r} is not assigned to "
                    f"{annotator_id}")
            key = (annotator_id, transcript_id)
            existing = self._records.get(key)
            if existing is not None:
                if existing["chosen_candidate_id"] != chosen_candidate_id:
                    raise ValidationError(
                        f"transcript {transcript_id!r} already answered "
                        f"with a different choice")
                return {"status": "duplicate",
                        "progress": self._progress(annotator_id, assigned)}
            # answer items in served order only
            for other in assigned:
                if other.transcript_id == transcript_id:
                    break
                if (annotator_id, other.transcript_id) not in self._records:
                    raise ValidationError(
                        f"transcript {transcript_id!r} has not been served "
                        f"to {annotator_id} yet")
            game = self._games[item.game_id]
            if chosen_candidate_id not in game.candidate_ids:
                raise ValidationError(
                    f"candidate {chosen_candidate_id} is not in game "
                    f"{item.game_id}")
            doc = {
                "annotator_id": annotator_id,
                "transcript_id": transcript_id,
                "chosen_candidate_id": int(chosen_candidate_id),
                "correct": bool(chosen_candidate_id == game.target_id),
                "timestamp": datetime.now(timezone.utc).isoformat(),
            }
            self._append(doc)
            self._records[key] = doc
            return {"status": "stored",
                    "progress": self._progress(annotator_id, assigned)}

    def _progress(self, annotator_id: str,
                  assigned: Sequence[SessionItem]) -> dict:
        answered = sum((annotator_id, i.transcript_id) in self._records
                       for i in assigned)
        return {"answered": answered, "total": len(assigned)}

    # -- reporting -----------------------------------------------------------

    def human_accuracy_report(self) -> dict:
        """Per-strategy and per-annotator accuracy over stored records."""
        with self._lock:
            if not self._records:
                raise EmptyCollectionError("no annotations recorded yet")
            per_strategy = {s: [0, 0] for s in self._strategies}
            per_annotator = {a: [0, 0] for a in self._by_annotator}
            for (annotator_id, transcript_id), doc in self._records.items():
                strategy = self._items[transcript_id].strategy
                per_strategy[strategy][0] += 1
                per_strategy[strategy][1] += doc["correct"]
                per_annotator[annotator_id][0] += 1
                per_annotator[annotator_id][1] += doc["correct"]

            def rows(counts: dict, key: str) -> list[dict]:
                out = []
                for name in sorted(counts):
                    answered, correct = counts[name]
                    row = {key: name, "answered": answered,
                           "correct": correct}
                    if answered > 0:
                        row["accuracy"] = round(100.0 * correct / answered, 2)
                    out.append(row)
                return out

            return {
                "strategies": rows(per_strategy, "strategy"),
                "annotators": rows(per_annotator, "annotator_id"),
                "coverage": {
                    "total_items": len(self._items),
                    "answered": len(self._records),
                    "annotators": len(self._by_annotator),
                    "conditions": len(self._strategies),
                    "quota": self._quota,
                },
            }


_FALLBACK_PAGE = """<!doctype html>
<meta charset="utf-8">
<title>guesslab annotation</title>
<p>The annotation UI bundle is not installed. The API is live:
<a href="/api/health">/api/health</a></p>
"""


class AnnotationIn(BaseModel):
    annotator_id: str
    transcript_id: str
    chosen_candidate_id: int


def build_app(service: AnnotationService, ui_dir: Optional[str] = None):
    """FastAPI app wrapping the service; optionally hosts the UI bundle."""
    app = FastAPI(title="guesslab annotation service")

    @app.get("/api/health")
    def health():
        return {"status": "ok",
                "annotators": len(service.annotator_ids),
                "total_items": len(service._items)}

    @app.get("/api/session/{annotator_id}/next")
    def next_item(annotator_id: str):
        try:
            return service.next_item(annotator_id)
        except ValidationError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.post("/api/annotations")
    def submit(body: AnnotationIn):
        try:
            return service.submit_annotation(
                body.annotator_id, body.transcript_id,
                body.chosen_candidate_id)
        except ValidationError as exc:
            message = str(exc)
            if "unknown annotator" in message or "not assigned" in message:
                raise HTTPException(status_code=404, detail=message)
            raise HTTPException(status_code=409, detail=message)

    @app.get("/api/report")
    def report():
        try:
            return service.human_accuracy_report()
        except EmptyCollectionError as exc:
            raise HTTPException(status_code=409, detail=str(exc))

    if ui_dir and os.path.isdir(ui_dir):
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=ui_dir, html=True),
                  name="ui")
    else:
        @app.get("/", response_class=HTMLResponse)
        def index():
            return _FALLBACK_PAGE

    return app
