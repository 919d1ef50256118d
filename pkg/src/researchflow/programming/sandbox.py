"""Isolated code execution.

``LocalSandbox`` confines a run with a private mount and PID namespace: every
filesystem is remounted read-only except the task's output directory, all
capabilities are dropped, and ``--net`` isolation is added when networking is
off. ``DockerSandbox`` talks to a Docker Engine over its unix socket.
"""

from __future__ import annotations

import hashlib
import os
import shutil
import signal
import struct
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol as TypingProtocol

import httpx

from researchflow.errors import SandboxUnavailableError, ValidationError

CODE_FILE = "code"
TMP_DIR = ".tmp"
TIMEOUT_EXIT = None  # exit status recorded for killed runs

# Interpreter per language tag. R is what the code generator is asked for;
# python exists so the harness can be exercised on hosts without R.
INTERPRETERS = {
    "R": ["Rscript", "--vanilla"],
    "python": ["python3", "-u"],
}

_JAIL = Path(__file__).with_name("_jail.py")


@dataclass(frozen=True)
class CodeArtifact:
    task_id: int
    language: str
    source: str
    revision: int

    def __post_init__(self):
        if not self.source.strip():
            raise ValidationError(f"task {self.task_id}: empty source")
        if self.revision < 1:
            raise ValidationError(f"revision {self.revision} must be >= 1")


@dataclass
class ExecutionResult:
    task_id: int
    revision: int
    exit_status: int | None
    stdout: str
    stderr: str
    outputs: list[dict] = field(default_factory=list)  # {"path", "sha256", "size"}
    duration_s: float = 0.0
    timed_out: bool = False

    def __post_init__(self):
        if self.duration_s < 0:
            raise ValidationError("duration cannot be negative")

    @property
    def success(self) -> bool:
        return self.exit_status == 0 and not self.timed_out

    def to_dict(self) -> dict:
        # duration lives in telemetry so result files stay reproducible
        return {
            "task_id": self.task_id,
            "revision": self.revision,
            "exit_status": self.exit_status,
            "timed_out": self.timed_out,
            "success": self.success,
            "outputs": list(self.outputs),
        }

    @classmethod
    def from_files(cls, rev_dir: Path, data: dict, duration_s: float = 0.0) -> "ExecutionResult":
        return cls(
            data["task_id"],
            data["revision"],
            data["exit_status"],
            (rev_dir / "stdout").read_text(encoding="utf-8"),
            (rev_dir / "stderr").read_text(encoding="utf-8"),
            list(data["outputs"]),
            duration_s,
            data["timed_out"],
        )


class Sandbox(TypingProtocol):
    def execute(self, code: CodeArtifact, rev_dir: Path, tasks_root: Path) -> ExecutionResult: ...

    def describe(self) -> dict: ...


def prepare_rev_dir(code: CodeArtifact, rev_dir: Path) -> Path:
    """Lay out ``rev<k>/`` with the code file and an empty ``outputs/``."""
    if rev_dir.exists():
        shutil.rmtree(rev_dir)
    (rev_dir / "outputs").mkdir(parents=True)
    (rev_dir / CODE_FILE).write_text(code.source, encoding="utf-8")
    return rev_dir / "outputs"


def output_manifest(outputs: Path) -> list[dict]:
    files = []
    for path in sorted(p for p in outputs.rglob("*") if p.is_file()):
        rel = path.relative_to(outputs).as_posix()
        if rel.split("/")[0] == TMP_DIR:
            continue
        data = path.read_bytes()
        files.append({"path": rel, "sha256": hashlib.sha256(data).hexdigest(), "size": len(data)})
    return files


def _decode(data: bytes | None) -> str:
    return (data or b"").decode("utf-8", errors="replace")


def _timeout_note(timeout_s: float) -> str:
    return f"\n[sandbox] killed after {timeout_s:g}s timeout\n"


class LocalSandbox:
    def __init__(self, *, timeout_s: float = 1800.0, memory_mb: int = 4096, network: bool = True,
                 interpreters: dict[str, list[str]] | None = None):
        if timeout_s <= 0:
            raise ValidationError("sandbox timeout must be positive")
        self.timeout_s = timeout_s
        self.memory_mb = memory_mb
        self.network = network
        self.interpreters = dict(interpreters or INTERPRETERS)

    def describe(self) -> dict:
        return {
            "backend": "local",
            "network": self.network,
            "memory_mb": self.memory_mb,
            "timeout_s": self.timeout_s,
            "interpreters": {k: shutil.which(v[0]) for k, v in sorted(self.interpreters.items())},
        }

    def _command(self, code: CodeArtifact, outputs: Path, tasks_root: Path, code_file: Path) -> list[str]:
        if shutil.which("unshare") is None:
            raise SandboxUnavailableError("'unshare' is not available on this host")
        try:
            interp = self.interpreters[code.language]
        except KeyError:
            raise SandboxUnavailableError(f"no interpreter configured for language {code.language!r}") from None
        if shutil.which(interp[0]) is None:
            raise SandboxUnavailableError(f"interpreter {interp[0]!r} for {code.language} not found")
        ns = ["unshare", "--mount", "--pid", "--fork", "--mount-proc"]
        if os.geteuid() != 0:
            ns.append("--map-root-user")
        if not self.network:
            ns.append("--net")
        jail = [sys.executable, "-I", str(_JAIL), str(outputs), str(tasks_root), str(code_file)]
        jail += [str(self.memory_mb), "--"]
        return ns + jail + interp

    def execute(self, code: CodeArtifact, rev_dir: Path, tasks_root: Path) -> ExecutionResult:
        rev_dir, tasks_root = Path(rev_dir).resolve(), Path(tasks_root).resolve()
        outputs = prepare_rev_dir(code, rev_dir)
        (outputs / TMP_DIR).mkdir()
        cmd = self._command(code, outputs, tasks_root, rev_dir / CODE_FILE)
        # HOME, TMPDIR and TASKS_ROOT are set inside the jail
        env = {
            "PATH": os.environ.get("PATH", "/usr/local/bin:/usr/bin:/bin"),
            "LANG": "C.UTF-8",
            "PYTHONDONTWRITEBYTECODE": "1",
        }
        start = time.monotonic()
        proc = subprocess.Popen(
            cmd, cwd=outputs, env=env, stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, start_new_session=True,
        )
        timed_out = False
        try:
            out, err = proc.communicate(timeout=self.timeout_s)
        except subprocess.TimeoutExpired:
            timed_out = True
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            out, err = proc.communicate()
        duration = time.monotonic() - start
        shutil.rmtree(outputs / TMP_DIR, ignore_errors=True)
        stderr = _decode(err)
        if timed_out:
            stderr += _timeout_note(self.timeout_s)
        status = TIMEOUT_EXIT if timed_out else proc.returncode
        result = ExecutionResult(
            code.task_id, code.revision, status, _decode(out), stderr,
            output_manifest(outputs), duration, timed_out,
        )
        write_streams(rev_dir, result)
        return result


def write_streams(rev_dir: Path, result: ExecutionResult):
    (rev_dir / "stdout").write_text(result.stdout, encoding="utf-8")
    (rev_dir / "stderr").write_text(result.stderr, encoding="utf-8")


def demux_logs(raw: bytes) -> tuple[str, str]:
    """Split the Engine's multiplexed log stream (8-byte frame headers)."""
    out, err = bytearray(), bytearray()
    pos = 0
    while pos + 8 <= len(raw):
        kind, size = struct.unpack(">BxxxL", raw[pos : pos + 8])
        chunk = raw[pos + 8 : pos + 8 + size]
        (err if kind == 2 else out).extend(chunk)
        pos += 8 + size
    return _decode(bytes(out)), _decode(bytes(err))


class DockerSandbox:
    """One container per execution: create, start, wait, logs, remove."""

    API = "/v1.43"
    WORKDIR = "/workspace/outputs"

    def __init__(self, *, image: str, timeout_s: float = 1800.0, memory_mb: int = 4096, network: bool = True,
                 socket_path: str = "/var/run/docker.sock", transport: httpx.BaseTransport | None = None,
                 interpreters: dict[str, list[str]] | None = None):
        if timeout_s <= 0:
            raise ValidationError("sandbox timeout must be positive")
        self.image = image
        self.timeout_s = timeout_s
        self.memory_mb = memory_mb
        self.network = network
        self.interpreters = dict(interpreters or INTERPRETERS)
        self._client = httpx.Client(
            transport=transport or httpx.HTTPTransport(uds=socket_path),
            base_url="http://docker" + self.API,
            timeout=httpx.Timeout(30.0),
        )
        self._digest: str | None = None

    def _call(self, method: str, url: str, *, timeout_ok: bool = False, **kw) -> httpx.Response:
        try:
            resp = self._client.request(method, url, **kw)
        except httpx.TimeoutException:
            if timeout_ok:
                raise
            raise SandboxUnavailableError(f"container runtime timed out on {url}") from None
        except httpx.TransportError as exc:
            raise SandboxUnavailableError(f"container runtime unreachable: {exc}") from exc
        if resp.status_code >= 500 or (resp.status_code == 404 and url.startswith("/images")):
            raise SandboxUnavailableError(f"container runtime error {resp.status_code} on {url}: {resp.text}")
        return resp

    def image_digest(self) -> str:
        if self._digest is None:
            resp = self._call("GET", f"/images/{self.image}/json")
            self._digest = resp.json().get("Id", "")
        return self._digest

    def describe(self) -> dict:
        return {
            "backend": "docker",
            "image": self.image,
            "image_digest": self.image_digest(),
            "network": self.network,
            "memory_mb": self.memory_mb,
            "timeout_s": self.timeout_s,
        }

    def execute(self, code: CodeArtifact, rev_dir: Path, tasks_root: Path) -> ExecutionResult:
        rev_dir, tasks_root = Path(rev_dir).resolve(), Path(tasks_root).resolve()
        try:
            interp = self.interpreters[code.language]
        except KeyError:
            raise SandboxUnavailableError(f"no interpreter configured for language {code.language!r}") from None
        outputs = prepare_rev_dir(code, rev_dir)
        body = {
            "Image": self.image,
            "Cmd": interp + [f"/workspace/{CODE_FILE}"],
            "WorkingDir": self.WORKDIR,
            "Env": ["TASKS_ROOT=/tasks", f"HOME={self.WORKDIR}", f"TMPDIR={self.WORKDIR}/{TMP_DIR}"],
            "NetworkDisabled": not self.network,
            "HostConfig": {
                "Binds": [
                    f"{outputs}:{self.WORKDIR}:rw",
                    f"{rev_dir / CODE_FILE}:/workspace/{CODE_FILE}:ro",
                    f"{tasks_root}:/tasks:ro",
                ],
                "Memory": self.memory_mb * 1024 * 1024,
                "NetworkMode": "bridge" if self.network else "none",
                "ReadonlyRootfs": False,
            },
        }
        resp = self._call("POST", "/containers/create", json=body)
        if resp.status_code != 201:
            raise SandboxUnavailableError(f"container create failed ({resp.status_code}): {resp.text}")
        cid = resp.json()["Id"]
        start = time.monotonic()
        timed_out = False
        try:
            resp = self._call("POST", f"/containers/{cid}/start")
            if resp.status_code not in (204, 304):
                raise SandboxUnavailableError(f"container start failed ({resp.status_code}): {resp.text}")
            try:
                resp = self._call(
                    "POST", f"/containers/{cid}/wait", params={"condition": "not-running"},
                    timeout=httpx.Timeout(30.0, read=self.timeout_s), timeout_ok=True,
                )
                status = int(resp.json()["StatusCode"])
            except httpx.ReadTimeout:
                timed_out = True
                self._call("POST", f"/containers/{cid}/kill")
                status = TIMEOUT_EXIT
            duration = time.monotonic() - start
            logs = self._call("GET", f"/containers/{cid}/logs", params={"stdout": 1, "stderr": 1})
            stdout, stderr = demux_logs(logs.content)
        finally:
            self._call("DELETE", f"/containers/{cid}", params={"force": "true"})
        shutil.rmtree(outputs / TMP_DIR, ignore_errors=True)
        if timed_out:
            stderr += _timeout_note(self.timeout_s)
        result = ExecutionResult(
            code.task_id, code.revision, status, stdout, stderr, output_manifest(outputs), duration, timed_out
        )
        write_streams(rev_dir, result)
        return result


def make_sandbox(config) -> Sandbox:
    """Build the sandbox named by a ``SandboxConfig``."""
    if config.backend == "docker":
        return DockerSandbox(
            image=config.image, timeout_s=config.timeout_s, memory_mb=config.memory_mb,
            network=config.network, socket_path=config.docker_socket,
        )
    return LocalSandbox(timeout_s=config.timeout_s, memory_mb=config.memory_mb, network=config.network)
