"""Line protocol for simulators running as child processes.

Each request is one line on the child's standard input::

    EVAL <id> <x_1> ... <x_dx> <t_1> ... <t_p>

and the child answers on standard output with ``OK <id> <y>`` or
``ERR <id> <message>``.  Requests in a batch are pipelined and answers may
arrive in any order; they are matched by id.
"""
from __future__ import annotations

import os
import queue
import shlex
import subprocess
import threading
import time
from collections import deque

import numpy as np

from .simulators import Simulator, SimulatorError

__all__ = ["DEFAULT_TIMEOUT", "ExternalSimulator", "format_request", "parse_response"]

DEFAULT_TIMEOUT = 60.0
_EOF = object()


def format_request(req_id, x, t) -> str:
    nums = " ".join(repr(float(v)) for v in (*x, *t))
    return f"EVAL {req_id} {nums}"


def parse_response(line: str):
    """``(kind, id, payload)`` for one response line; raises ``ValueError`` if malformed."""
    parts = line.rstrip("\r\n").split(" ", 2)
    if len(parts) < 3 or parts[0] not in ("OK", "ERR") or not parts[1]:
        raise ValueError(f"malformed response line {line.rstrip()!r}")
    kind, rid, payload = parts
    if kind == "OK":
        try:
            payload = float(payload.strip())
        except ValueError:
            raise ValueError(f"malformed response line {line.rstrip()!r}") from None
    return kind, rid, payload


class ExternalSimulator(Simulator):
    """Simulator backed by a long-lived child process.

    Parameters
    ----------
    command : str or list of str
        Command line of the child; a string is split with shell rules.
    n_inputs, n_params : int
        Number of control inputs and calibration inputs per request.
    timeout : float
        Seconds to wait for each answer before giving up.
    concurrency_safe : bool
        Whether several chains may share the command (each process gets
        its own child in that case).
    cwd, env : optional
        Working directory and extra environment of the child.

    The child is started on first use.  Instances pickle without their
    process, so worker processes spawn their own child.
    """

    name = "external"

    def __init__(self, command, n_inputs: int, n_params: int = 2, timeout: float = DEFAULT_TIMEOUT,
                 concurrency_safe: bool = False, cwd=None, env=None, name: str = None):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise ValueError("empty simulator command")
        if not timeout > 0:
            raise ValueError("timeout must be positive")
        self.n_inputs = int(n_inputs)
        self.n_params = int(n_params)
        self.timeout = float(timeout)
        self.concurrency_safe = bool(concurrency_safe)
        self.cwd = cwd
        self.env = dict(env or {})
        if name:
            self.name = name
        self._proc = None
        self._lines = None
        self._stderr = None
        self._lock = threading.Lock()
        self._next_id = 0

    # pickling drops the live process
    def __getstate__(self):
        state = self.__dict__.copy()
        state.update(_proc=None, _lines=None, _lock=None, _stderr=None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def _start(self):
        try:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.PIPE, text=True, bufsize=1, cwd=self.cwd,
                env={**os.environ, **self.env},
            )
        except OSError as exc:
            raise SimulatorError(f"cannot start simulator {self.command!r}: {exc}") from exc
        self._lines = queue.Queue()
        self._stderr = deque(maxlen=20)
        threading.Thread(target=self._pump, args=(self._proc.stdout, self._lines),
                         daemon=True).start()
        threading.Thread(target=self._pump_stderr, args=(self._proc.stderr, self._stderr),
                         daemon=True).start()

    @staticmethod
    def _pump(stream, sink):
        for line in stream:
            sink.put(line)
        sink.put(_EOF)

    @staticmethod
    def _pump_stderr(stream, tail):
        # drained continuously so a chatty child never blocks on a full pipe
        for line in stream:
            tail.append(line)

    def _alive(self) -> bool:
        return self._proc is not None and self._proc.poll() is None

    def _stderr_tail(self) -> str:
        time.sleep(0.05)
        err = "".join(self._stderr).strip()
        return f"; stderr: {err[-500:]}" if err else ""

    def evaluate(self, X, T):
        with self._lock:
            if not self._alive():
                if self._proc is not None:
                    raise SimulatorError(f"simulator exited with status {self._proc.returncode}")
                self._start()
            return self._batch(X, T)

    def _batch(self, X, T):
        pending = {}
        for x, t in zip(X, T):
            rid = str(self._next_id)
            self._next_id += 1
            pending[rid] = (len(pending), format_request(rid, x, t))
        out = np.empty(len(pending))
        writer_error = []

        def write():
            try:
                for _, line in pending.values():
                    self._proc.stdin.write(line + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError, ValueError) as exc:
                writer_error.append(exc)

        w = threading.Thread(target=write, daemon=True)
        w.start()
        remaining = dict(pending)
        while remaining:
            first = next(iter(remaining.values()))[1]
            deadline = time.monotonic() + self.timeout
            try:
                line = self._lines.get(timeout=max(deadline - time.monotonic(), 0.0))
            except queue.Empty:
                self.close()
                raise SimulatorError(f"simulator timed out after {self.timeout:g} s",
                                     request=first) from None
            if line is _EOF:
                self._proc.wait()
                raise SimulatorError(
                    f"simulator exited with status {self._proc.returncode}{self._stderr_tail()}",
                    request=first)
            try:
                kind, rid, payload = parse_response(line)
            except ValueError as exc:
                self.close()
                raise SimulatorError(str(exc), request=first) from None
            if rid not in remaining:
                self.close()
                raise SimulatorError(f"response for unknown request id {rid!r}", request=first)
            k, req = remaining.pop(rid)
            if kind == "ERR":
                self._drain(remaining)
                raise SimulatorError(f"simulator reported an error: {payload}", request=req)
            out[k] = payload
        w.join()
        if writer_error:
            raise SimulatorError(f"cannot write to simulator: {writer_error[0]}")
        return out

    def _drain(self, remaining):
        # consume answers still owed so the next batch starts clean
        deadline = time.monotonic() + self.timeout
        while remaining:
            try:
                line = self._lines.get(timeout=max(deadline - time.monotonic(), 0.0))
            except queue.Empty:
                self.close()
                return
            if line is _EOF:
                return
            try:
                remaining.pop(parse_response(line)[1], None)
            except ValueError:
                self.close()
                return

    def close(self):
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            if proc.stdin:
                proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
        for stream in (proc.stdout, proc.stderr):
            try:
                stream.close()
            except (OSError, AttributeError):
                pass

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    def describe(self) -> dict:
        return {**super().describe(), "command": self.command, "timeout": self.timeout,
                "concurrency_safe": self.concurrency_safe}
