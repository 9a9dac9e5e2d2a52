"""Chat-completion gateway: live HTTP backend, replay backend, transcripts."""
from __future__ import annotations

import asyncio
import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Optional, Protocol

import aiofiles  # type: ignore
import aiohttp  # type: ignore

from .const import (
    API_TIMEOUT,
    DEFAULT_TEMPERATURE,
    FINISH_REASON_LENGTH,
    MAX_RETRIES,
    RETRY_BASE_DELAY,
    RETRYABLE_STATUS_CODES,
    ROLE_ASSISTANT,
    ROLE_SYSTEM,
    ROLE_USER,
)
from .exceptions import BackendError, BackendUnavailableError, ReplayDesyncError

_LOGGER = logging.getLogger(__name__)

_FENCE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


class RateLimiter:
    """Rate limiter to keep a live backend under its requests-per-minute quota."""

    def __init__(self, calls_per_minute: int):
        self.calls_per_minute = calls_per_minute
        self._lock = asyncio.Lock()
        self.call_times: list[datetime] = []

    async def __aenter__(self):
        await self.acquire()

    async def __aexit__(self, exc_type, exc, tb):
        return None

    async def acquire(self):
        """Wait until a request slot is free."""
        if self.calls_per_minute <= 0:
            return
        async with self._lock:
            now = datetime.now()
            self.call_times = [t for t in self.call_times if now - t < timedelta(minutes=1)]
            if len(self.call_times) >= self.calls_per_minute:
                sleep_time = 60 - (now - self.call_times[0]).total_seconds()
                _LOGGER.debug("Rate limiting: waiting %.1f seconds", sleep_time)
                await asyncio.sleep(max(sleep_time, 0))
            self.call_times.append(datetime.now())


@dataclass
class Completion:
    """One successful chat completion."""

    text: str
    model: str
    finish_reason: str = "stop"


@dataclass
class ChatSession:
    """An ordered conversation with its request accounting."""

    session_id: str
    temperature: float = DEFAULT_TEMPERATURE
    system_message: Optional[str] = None
    messages: list[dict[str, str]] = field(default_factory=list)
    counted_requests: int = 0
    transport_failures: int = 0
    last_finish_reason: Optional[str] = None

    def __post_init__(self):
        if not 0 <= self.temperature <= 2:
            raise ValueError(f"Temperature {self.temperature} outside valid range 0-2")
        if self.system_message and not self.messages:
            self.messages.append({"role": ROLE_SYSTEM, "content": self.system_message})

    @property
    def truncated(self) -> bool:
        """Return True if the last reply hit the token limit."""
        return self.last_finish_reason == FINISH_REASON_LENGTH

    @property
    def exchange_messages(self) -> list[dict[str, str]]:
        """Return the user/assistant messages (system message excluded)."""
        return [m for m in self.messages if m["role"] != ROLE_SYSTEM]


@dataclass
class TranscriptRecord:
    """One recorded exchange."""

    session_id: str
    seq: int
    request_messages: Optional[list[dict[str, str]]]
    response_text: str
    model: str
    counted: bool = True
    finish_reason: str = "stop"

    def to_json(self) -> str:
        """Return the JSON-Lines representation."""
        return json.dumps(asdict(self), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TranscriptRecord":
        """Build a record from a decoded JSON object."""
        return cls(
            session_id=data["session_id"],
            seq=int(data["seq"]),
            request_messages=data.get("request_messages"),
            response_text=data["response_text"],
            model=data["model"],
            counted=bool(data.get("counted", True)),
            finish_reason=data.get("finish_reason", "stop"),
        )


def load_transcript(path: Path) -> list[TranscriptRecord]:
    """Read a JSON-Lines transcript.

    Raises:
        ReplayDesyncError: If a line is not a valid record
    """
    records: list[TranscriptRecord] = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise ReplayDesyncError(f"Cannot read transcript {path}: {err}") from err
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(TranscriptRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
            raise ReplayDesyncError(f"Corrupt transcript line {number}: {err}") from err
    return records


def file_digest(path: Path) -> str:
    """Return the sha256 of a file."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class TranscriptWriter:
    """Serialized appends of exchanges to a JSON-Lines transcript."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = asyncio.Lock()
        self.records: list[TranscriptRecord] = []

    async def append(self, record: TranscriptRecord) -> None:
        """Append one record."""
        async with self._lock:
            self.records.append(record)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            async with aiofiles.open(self.path, mode="a", encoding="utf-8") as f:
                await f.write(record.to_json() + "\n")

    async def finalize(self) -> str:
        """Rewrite the transcript sorted by session and sequence.

        Returns:
            sha256 of the final transcript
        """
        async with self._lock:
            ordered = sorted(self.records, key=lambda r: (r.session_id, r.seq))
            self.path.parent.mkdir(parents=True, exist_ok=True)
            async with aiofiles.open(self.path, mode="w", encoding="utf-8") as f:
                await f.write("".join(record.to_json() + "\n" for record in ordered))
        _LOGGER.debug("Transcript finalized with %s records", len(ordered))
        return file_digest(self.path)


class ChatBackend(Protocol):
    """A source of chat completions."""

    model: str

    async def complete(
        self, session_id: str, seq: int, messages: list[dict[str, str]], temperature: float
    ) -> Completion:
        """Return the completion for a conversation."""


class LiveChatBackend:
    """OpenAI-compatible chat-completions endpoint over HTTPS."""

    def __init__(
        self,
        session: aiohttp.ClientSession,
        endpoint_url: str,
        model: str,
        api_key: str,
        timeout: float = API_TIMEOUT,
        requests_per_minute: int = 0,
    ) -> None:
        """Initialize the backend.

        Args:
            session: aiohttp client session for API requests
            endpoint_url: Base URL; ``/chat/completions`` is appended
            model: Model name sent with each request
            api_key: Bearer token
            timeout: Per-request timeout in seconds
            requests_per_minute: Client-side quota, 0 disables it
        """
        self.session = session
        self.endpoint_url = endpoint_url.rstrip("/")
        self.model = model
        self._api_key = api_key
        self.timeout = timeout
        self.rate_limiter = RateLimiter(requests_per_minute)

    async def complete(
        self, session_id: str, seq: int, messages: list[dict[str, str]], temperature: float
    ) -> Completion:
        """POST one chat-completion request."""
        url = f"{self.endpoint_url}/chat/completions"
        payload = {"model": self.model, "messages": messages, "temperature": temperature}
        headers = {
            "Authorization": f"Bearer {self._api_key}",
            "Content-Type": "application/json",
        }
        async with self.rate_limiter:
            _LOGGER.debug(
                "Requesting completion for %s #%s (%s messages)", session_id, seq, len(messages)
            )
            async with self.session.request(
                "POST",
                url,
                json=payload,
                headers=headers,
                timeout=aiohttp.ClientTimeout(total=self.timeout),
            ) as response:
                response_text = await response.text()
                _LOGGER.debug("Response status: %s", response.status)
                if response.status != 200:
                    raise BackendError(
                        f"Chat completion failed: {response.status}, {response_text[:500]}",
                        status_code=response.status,
                    )
        try:
            body = json.loads(response_text)
            choice = body["choices"][0]
            return Completion(
                text=choice["message"]["content"] or "",
                model=body.get("model", self.model),
                finish_reason=choice.get("finish_reason") or "stop",
            )
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as err:
            raise BackendError(f"Malformed chat completion response: {err}") from err


class ReplayChatBackend:
    """Deterministic stand-in answering from a recorded transcript."""

    def __init__(self, records: list[TranscriptRecord], model: str) -> None:
        self.model = model
        self._records: dict[tuple[str, int], TranscriptRecord] = {}
        for record in records:
            key = (record.session_id, record.seq)
            if key in self._records:
                raise ReplayDesyncError(
                    f"Duplicate transcript record {key}", session_id=record.session_id, seq=record.seq
                )
            self._records[key] = record
        self.consumed: set[tuple[str, int]] = set()

    @classmethod
    def from_file(cls, path: Path, model: str) -> "ReplayChatBackend":
        """Load a backend from a transcript file."""
        return cls(load_transcript(path), model)

    @property
    def unconsumed(self) -> list[tuple[str, int]]:
        """Return the records no conversation asked for."""
        return sorted(set(self._records) - self.consumed)

    async def complete(
        self, session_id: str, seq: int, messages: list[dict[str, str]], temperature: float
    ) -> Completion:
        """Return the recorded reply for this exchange."""
        record = self._records.get((session_id, seq))
        if record is None:
            raise ReplayDesyncError(
                f"Transcript has no exchange {seq} for session {session_id}",
                session_id=session_id,
                seq=seq,
            )
        if record.model != self.model:
            raise ReplayDesyncError(
                f"Transcript model {record.model} does not match {self.model}",
                session_id=session_id,
                seq=seq,
            )
        if record.request_messages is not None and record.request_messages != messages:
            raise ReplayDesyncError(
                f"Request {seq} of session {session_id} differs from the transcript",
                session_id=session_id,
                seq=seq,
            )
        self.consumed.add((session_id, seq))
        return Completion(text=record.response_text, model=record.model, finish_reason=record.finish_reason)


def _is_transient(err: Exception) -> bool:
    if isinstance(err, (aiohttp.ClientError, asyncio.TimeoutError)):
        return True
    return isinstance(err, BackendError) and err.status_code in RETRYABLE_STATUS_CODES


class ChatGateway:
    """Sends user turns through a backend with retries and exact accounting."""

    def __init__(
        self,
        backend: ChatBackend,
        transcript: Optional[TranscriptWriter] = None,
        max_retries: int = MAX_RETRIES,
        retry_delay: float = RETRY_BASE_DELAY,
    ) -> None:
        self.backend = backend
        self.transcript = transcript
        self.max_retries = max_retries
        self.retry_delay = retry_delay
        self.total_requests = 0
        self.total_transport_failures = 0

    def new_session(
        self,
        session_id: str,
        temperature: float = DEFAULT_TEMPERATURE,
        system_message: Optional[str] = None,
    ) -> ChatSession:
        """Create an empty session."""
        return ChatSession(
            session_id=session_id, temperature=temperature, system_message=system_message
        )

    async def send(self, session: ChatSession, user_message: str) -> str:
        """Send a user turn and return the assistant reply.

        Only successful completions are counted; transport failures are
        retried with exponential backoff and tallied separately.

        Raises:
            BackendUnavailableError: If every attempt failed
            BackendError: If the backend rejected the request outright
            ReplayDesyncError: If a replay transcript does not match
        """
        messages = session.messages + [{"role": ROLE_USER, "content": user_message}]
        seq = session.counted_requests
        attempts = self.max_retries + 1
        last_error: Optional[Exception] = None

        for attempt in range(attempts):
            try:
                completion = await self.backend.complete(
                    session.session_id, seq, messages, session.temperature
                )
                break
            except ReplayDesyncError:
                raise
            except Exception as err:  # pylint: disable=broad-except
                if not _is_transient(err):
                    raise
                last_error = err
                session.transport_failures += 1
                self.total_transport_failures += 1
                _LOGGER.warning(
                    "Transport failure for %s (attempt %s/%s): %s",
                    session.session_id,
                    attempt + 1,
                    attempts,
                    err,
                )
                if attempt < attempts - 1:
                    await asyncio.sleep(self.retry_delay * (2**attempt))
        else:
            raise BackendUnavailableError(
                f"Backend unavailable after {attempts} attempts: {last_error}",
                attempts=attempts,
                status_code=getattr(last_error, "status_code", None),
            ) from last_error

        session.messages = messages + [{"role": ROLE_ASSISTANT, "content": completion.text}]
        session.counted_requests += 1
        session.last_finish_reason = completion.finish_reason
        self.total_requests += 1

        if self.transcript is not None:
            await self.transcript.append(
                TranscriptRecord(
                    session_id=session.session_id,
                    seq=seq,
                    request_messages=messages,
                    response_text=completion.text,
                    model=self.backend.model,
                    counted=True,
                    finish_reason=completion.finish_reason,
                )
            )
        _LOGGER.debug(
            "Session %s: request %s answered (%s chars, finish=%s)",
            session.session_id,
            seq,
            len(completion.text),
            completion.finish_reason,
        )
        return completion.text


def extract_code_blocks(assistant_reply: str) -> list[str]:
    """Return the fenced code blocks of a reply, or the whole reply if unfenced."""
    blocks = [block.strip("\n") for block in _FENCE.findall(assistant_reply)]
    return blocks if blocks else [assistant_reply]
