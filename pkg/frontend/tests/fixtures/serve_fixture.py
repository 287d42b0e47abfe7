"""Start a live annotation server for the UI integration test.

Usage: python3 serve_fixture.py <log-path>
Prints one JSON line {"port": ...} once the server accepts connections, then
blocks until every cluster is labeled and exits 0.
"""

import json
import sys
import time

from session_builder import make_session

from weakanno.annoserve import AnnotationServer


def main() -> int:
    session = make_session(sys.argv[1], clock=time.time)
    server = AnnotationServer(session, port=0)
    server.start()
    print(json.dumps({"port": server.port}), flush=True)
    server.serve_until_complete()
    time.sleep(1.0)  # let the client's final polls drain before closing
    server.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
