"""Minimal HTTP API exposing the annotation session to the browser frontend.

Endpoints (JSON over HTTP/1.1, UTF-8):

    GET  /api/session              session summary and label vocabulary
    GET  /api/requests/next        next pending centroid request, 204 when done
    POST /api/requests/{id}/label  submit {"label_id": n}; 409 on duplicates
    GET  /api/clusters/{id}        member count and centroid clip span
    GET  /assets/...               operator-supplied static media
    GET  /...                      optional static UI bundle

Ground-truth labels are never exposed: the human path stays blind. Session
mutation is serialized inside the session object; reads are snapshots.
"""

from __future__ import annotations

import json
import mimetypes
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .annotate import AnnotationSession
from .errors import DataError, StateError

DEFAULT_PORT = 8787

_LABEL_RE = re.compile(r"^/api/requests/(?P<rid>[^/]+)/label$")
_CLUSTER_RE = re.compile(r"^/api/clusters/(?P<cid>\d+)$")


def _request_payload(session: AnnotationSession, request) -> dict:
    size = session.cluster_sizes.get(request.cluster_id)
    return {
        "request_id": request.request_id,
        "participant_id": request.participant_id,
        "cluster_id": request.cluster_id,
        "clip_index": request.clip_index,
        "start_s": request.start_s,
        "end_s": request.end_s,
        "media_hint": request.media_hint,
        "member_count": size,
    }


def session_summary(session: AnnotationSession) -> dict:
    return {
        "session_id": session.session_id,
        "participant_id": session.participant_id,
        "total_clusters": session.total_clusters,
        "labeled": session.labeled_count,
        "pending": session.pending_count,
        "labels": [{"id": i, "name": name}
                   for i, name in enumerate(session.label_names)],
    }


class AnnotationServer:
    """Threaded HTTP server around one annotation session at a time."""

    def __init__(self, session: AnnotationSession | None, host: str = "127.0.0.1",
                 port: int = DEFAULT_PORT, assets_dir=None, ui_dir=None):
        self._session_lock = threading.Lock()
        self._session = session
        self.assets_dir = Path(assets_dir) if assets_dir else None
        self.ui_dir = Path(ui_dir) if ui_dir else None
        server = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):  # tests stay quiet
                pass

            def _send_json(self, status: int, payload: dict | None) -> None:
                body = b"" if payload is None else json.dumps(payload).encode("utf-8")
                self.send_response(status)
                if body:
                    self.send_header("Content-Type", "application/json; charset=utf-8")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                if body:
                    self.wfile.write(body)

            def _send_file(self, root: Path, rel: str) -> None:
                target = (root / rel).resolve()
                if not str(target).startswith(str(root.resolve())) or not target.is_file():
                    self._send_json(404, {"error": "not found"})
                    return
                data = target.read_bytes()
                ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
                self.send_response(200)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_GET(self):
                session = server.session
                path = self.path.split("?", 1)[0]
                if path == "/api/session":
                    if session is None or session.closed:
                        self._send_json(404, {"error": "no open session"})
                        return
                    self._send_json(200, session_summary(session))
                    return
                if path == "/api/requests/next":
                    if session is None or session.closed:
                        self._send_json(404, {"error": "no open session"})
                        return
                    request = session.next_request()
                    if request is None:
                        self._send_json(204, None)
                        return
                    self._send_json(200, _request_payload(session, request))
                    return
                match = _CLUSTER_RE.match(path)
                if match:
                    if session is None or session.closed:
                        self._send_json(404, {"error": "no open session"})
                        return
                    cid = int(match.group("cid"))
                    if cid not in session.centroids:
                        self._send_json(404, {"error": f"no cluster {cid}"})
                        return
                    centroid = session.centroids[cid]
                    start_s, end_s = session.clip_spans[centroid.clip_index]
                    self._send_json(200, {
                        "cluster_id": cid,
                        "member_count": session.cluster_sizes.get(cid),
                        "centroid_clip_index": centroid.clip_index,
                        "start_s": float(start_s),
                        "end_s": float(end_s),
                        "labeled": cid in session.labels(),
                    })
                    return
                if path.startswith("/assets/"):
                    if server.assets_dir is None:
                        self._send_json(404, {"error": "no assets directory"})
                        return
                    self._send_file(server.assets_dir, path[len("/assets/"):])
                    return
                if server.ui_dir is not None:
                    rel = "index.html" if path in ("", "/") else path.lstrip("/")
                    self._send_file(server.ui_dir, rel)
                    return
                self._send_json(404, {"error": "not found"})

            def do_POST(self):
                session = server.session
                path = self.path.split("?", 1)[0]
                match = _LABEL_RE.match(path)
                if not match:
                    self._send_json(404, {"error": "not found"})
                    return
                if session is None or session.closed:
                    self._send_json(404, {"error": "no open session"})
                    return
                length = int(self.headers.get("Content-Length", "0"))
                try:
                    payload = json.loads(self.rfile.read(length) or b"{}")
                    label_id = int(payload["label_id"])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    self._send_json(422, {"error": "body must be {\"label_id\": int}"})
                    return
                rid = match.group("rid")
                try:
                    session.submit(rid, label_id)
                except StateError as exc:
                    if "closed" in str(exc):
                        self._send_json(404, {"error": str(exc)})
                    else:
                        self._send_json(409, {"error": str(exc)})
                    return
                except DataError as exc:
                    if "unknown request" in str(exc):
                        self._send_json(404, {"error": str(exc)})
                    else:
                        self._send_json(422, {"error": str(exc)})
                    return
                self._send_json(200, {
                    "labeled": session.labeled_count,
                    "pending": session.pending_count,
                })

        self._httpd = ThreadingHTTPServer((host, port), Handler)
        self._thread: threading.Thread | None = None

    @property
    def session(self) -> AnnotationSession | None:
        with self._session_lock:
            return self._session

    @session.setter
    def session(self, value: AnnotationSession | None) -> None:
        with self._session_lock:
            self._session = value

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> None:
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None

    def serve_until_complete(self, poll_s: float = 0.2) -> None:
        """Block until every cluster of the current session is labeled."""
        session = self.session
        if session is None:
            raise StateError("no session to serve")
        while not session.wait_complete(timeout=poll_s):
            pass
