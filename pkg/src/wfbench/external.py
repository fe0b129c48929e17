"""Potentials computed by a separate process speaking line-delimited JSON.

On start the process receives one handshake line
``{"k":..,"m":..,"dist":[[..]],"config_count":..}``, then one request per work
function ``{"id":..,"wf":[..]}`` and must answer each, in order, with
``{"id":..,"phi":number}``.
"""
from __future__ import annotations

import json
import logging
import math
import queue
import subprocess
import threading

import numpy as np

from .errors import ExternalProcessExited, ExternalProtocolError, ExternalTimeout
from .potential import Potential, PotentialSpec
from .workfn import WFContext

logger = logging.getLogger(__name__)

_EOF = object()
# Requests in flight before waiting for replies; keeps both pipes far from full.
WINDOW = 64


class ExternalPotential(Potential):
    integral = False

    def __init__(self, ctx: WFContext, spec: PotentialSpec):
        super().__init__(ctx)
        self.spec = spec
        self.timeout = spec.timeout_ms / 1000
        self.last_ack: int | None = None
        self._next_id = 0
        self._proc = subprocess.Popen(
            list(spec.cmd),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._send(
            {
                "k": ctx.k,
                "m": ctx.m,
                "dist": ctx.dist.tolist(),
                "config_count": ctx.count,
            }
        )

    def _pump(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(_EOF)

    def _send(self, obj) -> None:
        try:
            self._proc.stdin.write(json.dumps(obj, separators=(",", ":")) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise ExternalProcessExited(
                f"external potential exited (code {self._proc.poll()})", last_ack=self.last_ack
            ) from None

    def _receive(self, expected_id: int) -> float:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise ExternalTimeout(
                f"no reply to request {expected_id} within {self.timeout:g}s",
                last_ack=self.last_ack,
            ) from None
        if line is _EOF:
            code = self._proc.wait()
            raise ExternalProcessExited(
                f"external potential exited (code {code}) before answering request {expected_id}",
                last_ack=self.last_ack,
            )
        try:
            reply = json.loads(line)
            rid, phi = reply["id"], reply["phi"]
        except (ValueError, TypeError, KeyError):
            raise ExternalProtocolError(
                f"malformed reply to request {expected_id}: {line.strip()[:200]!r}",
                last_ack=self.last_ack,
            ) from None
        if rid != expected_id:
            raise ExternalProtocolError(
                f"reply id {rid} out of order (expected {expected_id})", last_ack=self.last_ack
            )
        if isinstance(phi, bool) or not isinstance(phi, (int, float)) or math.isnan(phi):
            raise ExternalProtocolError(
                f"reply to request {expected_id} has non-numeric phi {phi!r}",
                last_ack=self.last_ack,
            )
        self.last_ack = rid
        return float(phi)

    def evaluate_many(self, ws):
        """Values for each row; on failure the error's ``node_id`` is the row position."""
        ws = np.asarray(ws)
        self._check(ws)
        out = np.empty(ws.shape[0], dtype=np.float64)
        first_id = self._next_id
        sent = got = 0
        try:
            while got < ws.shape[0]:
                while sent < ws.shape[0] and sent - got < WINDOW:
                    self._send({"id": first_id + sent, "wf": ws[sent].tolist()})
                    sent += 1
                out[got] = self._receive(first_id + got)
                got += 1
        except (ExternalProcessExited, ExternalProtocolError, ExternalTimeout) as exc:
            exc.node_id = got
            self.close()
            raise
        finally:
            self._next_id = first_id + sent
        return out

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=1)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass
