import threading

import pytest

from scalebench.protocol import serve_tcp
from scalebench.simenv import default_env_config


@pytest.fixture(scope="session")
def server_endpoint():
    """A live environment server on an ephemeral port."""
    server = serve_tcp(default_env_config(), port=0)
    port = server.server_address[1]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"127.0.0.1:{port}"
    server.shutdown()
    server.server_close()
