"""HTTP client for external sentence scorers, plus a built-in mock service.

Wire protocol (version 1): POST /v1/score with JSON body
{"sentences": [...], "per_token": true} and header X-GapLab-Proto: 1.
The response is {"model": str, "results": [{"tokens": [...],
"logprobs": [...]}]} with log-probabilities in nats; the first token of a
sentence may carry null (no left context). Concatenating a result's tokens
must reproduce the input sentence exactly, which is what makes word-level
alignment well defined.
"""
from __future__ import annotations

import json
import threading
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Sequence

import numpy as np
import requests

from .neural_lm.score import LN2, SurprisalProfile

PROTO_VERSION = "1"
PROTO_HEADER = "X-GapLab-Proto"
SCORE_PATH = "/v1/score"


class ClientError(RuntimeError):
    pass


class ConnectionFailed(ClientError):
    pass


class ProtocolMismatch(ClientError):
    pass


class MalformedResponse(ClientError):
    pass


class AlignmentError(ClientError):
    pass


@dataclass(frozen=True)
class ScoreRequest:
    sentences: tuple[str, ...]
    per_token: bool = True

    def __post_init__(self) -> None:
        if not self.sentences or any(not s for s in self.sentences):
            raise ClientError("score requests need non-empty sentences")

    def body(self) -> dict:
        return {"sentences": list(self.sentences), "per_token": self.per_token}


@dataclass
class ScoreResponse:
    model: str
    tokens: list[str]
    logprobs: list[float | None]  # nats; None marks an undefined first token

    @property
    def total_nats(self) -> float:
        return -sum(lp for lp in self.logprobs if lp is not None)


def _excerpt(payload) -> str:
    text = payload if isinstance(payload, str) else json.dumps(payload)
    return text[:200]


def _parse_batch(payload: dict, expected: int) -> list[ScoreResponse]:
    if not isinstance(payload, dict) or "results" not in payload:
        raise MalformedResponse(f"response lacks 'results': {_excerpt(payload)}")
    model = payload.get("model", "")
    results = payload["results"]
    if not isinstance(results, list) or len(results) != expected:
        raise MalformedResponse(
            f"expected {expected} results, got "
            f"{len(results) if isinstance(results, list) else type(results)}: "
            f"{_excerpt(payload)}"
        )
    out = []
    for entry in results:
        tokens = entry.get("tokens")
        logprobs = entry.get("logprobs")
        if (
            not isinstance(tokens, list)
            or not isinstance(logprobs, list)
            or len(tokens) != len(logprobs)
        ):
            raise MalformedResponse(f"bad result entry: {_excerpt(entry)}")
        for lp in logprobs:
            if lp is not None and not isinstance(lp, (int, float)):
                raise MalformedResponse(f"non-numeric logprob: {_excerpt(entry)}")
        out.append(ScoreResponse(model, list(tokens), list(logprobs)))
    return out


def _post_once(endpoint: str, request: ScoreRequest, timeout: float) -> list[ScoreResponse]:
    url = endpoint.rstrip("/") + SCORE_PATH
    resp = requests.post(
        url,
        json=request.body(),
        headers={PROTO_HEADER: PROTO_VERSION},
        timeout=timeout,
    )
    got_proto = resp.headers.get(PROTO_HEADER)
    if got_proto is not None and got_proto != PROTO_VERSION:
        raise ProtocolMismatch(
            f"service speaks protocol {got_proto!r}, client {PROTO_VERSION!r}"
        )
    if resp.status_code >= 500:
        raise ConnectionFailed(f"server error {resp.status_code}")
    if resp.status_code != 200:
        raise MalformedResponse(f"HTTP {resp.status_code}: {_excerpt(resp.text)}")
    try:
        payload = resp.json()
    except ValueError as exc:
        raise MalformedResponse(f"response is not JSON: {_excerpt(resp.text)}") from exc
    return _parse_batch(payload, len(request.sentences))


def score_remote(
    endpoint: str,
    sentences: Sequence[str],
    batch_size: int = 16,
    max_in_flight: int = 1,
    timeout: float = 30.0,
    attempts: int = 3,
    backoff: float = 0.25,
) -> list[ScoreResponse]:
    """Score sentences against a remote service, order preserved.

    Transport failures are retried with exponential backoff up to
    `attempts` tries per batch before raising ConnectionFailed. Protocol
    and payload problems fail immediately.
    """
    if not sentences:
        return []
    batches = [
        (idx, ScoreRequest(tuple(sentences[idx : idx + batch_size])))
        for idx in range(0, len(sentences), batch_size)
    ]

    def run(batch: tuple[int, ScoreRequest]) -> tuple[int, list[ScoreResponse]]:
        idx, request = batch
        last: Exception | None = None
        for attempt in range(attempts):
            try:
                return idx, _post_once(endpoint, request, timeout)
            except (requests.RequestException, ConnectionFailed) as exc:
                last = exc
                if attempt + 1 < attempts:
                    time.sleep(backoff * (2**attempt))
        raise ConnectionFailed(
            f"request failed after {attempts} attempts: {last}"
        ) from last

    results: dict[int, list[ScoreResponse]] = {}
    if max_in_flight > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            for idx, responses in pool.map(run, batches):
                results[idx] = responses
    else:
        for batch in batches:
            idx, responses = run(batch)
            results[idx] = responses
    ordered: list[ScoreResponse] = []
    for idx, _ in batches:
        ordered.extend(results[idx])
    return ordered


# ---------------------------------------------------------------------------
# Subword-to-word alignment


def align_subwords(words: Sequence[str], response: ScoreResponse) -> np.ndarray:
    """Per-word surprisal in bits by summing each word's subword pieces.

    The pieces' concatenation must equal " ".join(words); inter-word space
    characters ride along with whichever piece carries them. A piece whose
    visible characters straddle two words cannot be attributed and raises
    AlignmentError naming the first offending character offset. Undefined
    (null) log-probabilities contribute zero.
    """
    surface = " ".join(words)
    joined = "".join(response.tokens)
    if joined != surface:
        offset = next(
            (k for k, (a, b) in enumerate(zip(joined, surface)) if a != b),
            min(len(joined), len(surface)),
        )
        raise AlignmentError(
            f"subword concatenation diverges from sentence at character {offset}: "
            f"{joined[max(0, offset - 10) : offset + 10]!r}"
        )

    word_spans = []
    pos = 0
    for word in words:
        word_spans.append((pos, pos + len(word)))
        pos += len(word) + 1

    out = np.zeros(len(words), dtype=np.float64)
    piece_start = 0
    word_idx = 0
    for piece, logprob in zip(response.tokens, response.logprobs):
        piece_span = (piece_start, piece_start + len(piece))
        piece_start += len(piece)
        touching = []
        while word_idx < len(words) and word_spans[word_idx][1] <= piece_span[0]:
            word_idx += 1
        probe = word_idx
        while probe < len(words) and word_spans[probe][0] < piece_span[1]:
            touching.append(probe)
            probe += 1
        if not touching:
            # Piece is pure inter-word space; attach it forward.
            if word_idx >= len(words):
                raise AlignmentError(
                    f"trailing piece {piece!r} at character {piece_span[0]} "
                    "belongs to no word"
                )
            touching = [word_idx]
        if len(touching) > 1:
            raise AlignmentError(
                f"piece {piece!r} at character {piece_span[0]} straddles words "
                f"{words[touching[0]]!r} and {words[touching[1]]!r}"
            )
        if logprob is not None:
            out[touching[0]] += -float(logprob) / LN2
    return out


def word_profile(
    words: Sequence[str],
    response: ScoreResponse,
    item_id: int | None = None,
    condition: tuple[bool, bool, bool] | None = None,
) -> SurprisalProfile:
    """SurprisalProfile over word tokens from a remote scorer's response."""
    bits = align_subwords(words, response)
    return SurprisalProfile(tuple(words), bits, item_id=item_id, condition=condition)


# ---------------------------------------------------------------------------
# Built-in mock service


def _mock_logprob(piece: str) -> float:
    """Stable, content-determined fake log-probability in nats."""
    return -(1.0 + (zlib.crc32(piece.encode("utf-8")) % 1000) / 500.0)


def mock_tokenize(sentence: str) -> list[str]:
    """Greedy space-carrying split; long words break into two pieces."""
    pieces = []
    for k, word in enumerate(sentence.split(" ")):
        prefix = "" if k == 0 else " "
        if len(word) > 6:
            half = len(word) // 2
            pieces.append(prefix + word[:half])
            pieces.append(word[half:])
        else:
            pieces.append(prefix + word)
    return pieces


class _MockHandler(BaseHTTPRequestHandler):
    server_version = "GapLabMock/1"

    def log_message(self, *args) -> None:  # quiet test output
        pass

    def do_POST(self) -> None:
        server: "MockScoreServer" = self.server.owner  # type: ignore[attr-defined]
        server.request_count += 1
        if server.fail_next > 0:
            server.fail_next -= 1
            self._reply(503, {"error": "temporarily unavailable"})
            return
        if self.path != SCORE_PATH:
            self._reply(404, {"error": f"unknown path {self.path}"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        try:
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
            sentences = payload["sentences"]
            assert isinstance(sentences, list) and sentences
        except Exception:
            self._reply(400, {"error": "malformed request body"})
            return
        results = []
        for sentence in sentences:
            pieces = mock_tokenize(sentence)
            logprobs: list[float | None] = [None] + [
                _mock_logprob(p) for p in pieces[1:]
            ]
            results.append({"tokens": pieces, "logprobs": logprobs})
        self._reply(200, {"model": "mock", "results": results})

    def _reply(self, status: int, payload: dict) -> None:
        blob = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header(PROTO_HEADER, PROTO_VERSION)
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)


class MockScoreServer:
    """In-process scorer speaking the v1 protocol with deterministic values.

    Use as a context manager; `url` is the endpoint base. `fail_next`
    makes the next N requests return 503, for retry tests.
    """

    def __init__(self) -> None:
        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), _MockHandler)
        self._httpd.owner = self  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self.request_count = 0
        self.fail_next = 0

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "MockScoreServer":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)
