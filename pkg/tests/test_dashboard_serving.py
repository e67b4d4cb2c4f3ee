import os

import pytest
import requests

from usbgate.gateway import GatewayServer, SinkServer
from usbgate.resources import read_data_text

DIST = os.path.join(os.path.dirname(__file__), "..", "frontend", "dist")

pytestmark = pytest.mark.skipif(
    not os.path.isfile(os.path.join(DIST, "index.html")),
    reason="dashboard not built; the primary suite must pass without it",
)


def test_gateway_serves_the_dashboard_bundle():
    sink = SinkServer()
    gateway = GatewayServer(
        read_data_text("default-config.json"),
        sink_addr=sink.address,
        control_listen=("127.0.0.1", 0),
        ui_dir=DIST,
        stats_tick_s=None,
    ).start()
    base = f"http://{gateway.control_address[0]}:{gateway.control_address[1]}"
    try:
        index = requests.get(f"{base}/ui/")
        assert index.status_code == 200
        assert "usbgate console" in index.text
        main_js = requests.get(f"{base}/ui/main.js")
        assert main_js.status_code == 200
        assert "EventStream" in main_js.text
        assert requests.get(f"{base}/ui/../secrets").status_code == 404
        # root redirects into the app
        root = requests.get(base + "/", allow_redirects=False)
        assert root.status_code == 302 and root.headers["Location"] == "/ui/"
    finally:
        gateway.stop()
        sink.close()
