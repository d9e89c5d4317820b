import json
import socket
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from gazesom.errors import ContractError, FormatError, RetryableError
from gazesom.frame import Frame
from gazesom.masks import (
    MaskSet,
    RegionMask,
    decode_rle,
    encode_rle,
    fetch_masks_remote,
    load_masks_indexed_image,
    load_masks_rle,
    masks_from_json,
    masks_to_json,
    save_masks_rle,
)


def test_rle_example_row():
    doc = {"width": 4, "height": 1, "regions": [{"id": 3, "counts": [1, 2, 1]}]}
    ms = masks_from_json(doc)
    assert ms.regions[0].bitmap.tolist() == [[False, True, True, False]]


def test_duplicate_region_id_rejected():
    doc = {"width": 2, "height": 1, "regions": [{"id": 1, "counts": [2]}, {"id": 1, "counts": [1, 1]}]}
    with pytest.raises(FormatError, match="duplicate"):
        masks_from_json(doc)


def test_run_sum_mismatch_names_region():
    doc = {"width": 3, "height": 3, "regions": [{"id": 5, "counts": [4, 4]}]}
    with pytest.raises(FormatError, match="5"):
        masks_from_json(doc)


def test_decode_rejects_negative_runs():
    with pytest.raises(FormatError):
        decode_rle([2, -1, 3], 4, 1)


def test_leading_foreground_run():
    assert encode_rle(np.array([[True, False]])) == [0, 1, 1]


@settings(max_examples=200)
@given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_rle_round_trip(bitmap):
    h, w = bitmap.shape
    counts = encode_rle(bitmap)
    assert sum(counts) == w * h
    np.testing.assert_array_equal(decode_rle(counts, w, h), bitmap)


@settings(max_examples=50)
@given(st.permutations([1, 2, 3, 4]))
def test_region_order_in_file_does_not_matter(order):
    rng = np.random.default_rng(0)
    maps = {k: rng.random((6, 5)) < 0.3 for k in (1, 2, 3, 4)}
    doc = {"width": 5, "height": 6,
           "regions": [{"id": k, "counts": encode_rle(maps[k])} for k in order]}
    ms = masks_from_json(doc)
    assert ms.ids == [1, 2, 3, 4]
    assert masks_to_json(ms) == masks_to_json(masks_from_json(
        {**doc, "regions": sorted(doc["regions"], key=lambda r: r["id"])}))


def test_save_load_round_trip(tmp_path):
    bm = np.zeros((4, 6), bool)
    bm[1:3, 2:5] = True
    ms = MaskSet(6, 4, (RegionMask.from_bitmap(9, bm),))
    save_masks_rle(ms, tmp_path / "m.json")
    back = load_masks_rle(tmp_path / "m.json")
    np.testing.assert_array_equal(back.regions[0].bitmap, bm)


def test_load_rejects_bad_json(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{not json")
    with pytest.raises(FormatError):
        load_masks_rle(p)


def test_bitmap_is_read_only():
    r = RegionMask.from_bitmap(1, np.ones((2, 2), bool))
    with pytest.raises(ValueError):
        r.bitmap[0, 0] = False


def test_mask_dims_must_agree():
    r = RegionMask.from_bitmap(1, np.ones((2, 3), bool))
    with pytest.raises(FormatError):
        MaskSet(2, 2, (r,))


# -------------------------------------------------------------------- indexed images


def _labels():
    lab = np.zeros((8, 8), np.uint8)
    lab[0:3, 0:3] = 1
    lab[4:8, 0:2] = 2
    lab[5:7, 5:8] = 3
    return lab


def test_indexed_image_three_regions(tmp_path):
    p = tmp_path / "lab.png"
    Image.fromarray(_labels(), "L").save(p)
    ms = load_masks_indexed_image(p)
    assert ms.ids == [1, 2, 3]
    for r in ms.regions:
        np.testing.assert_array_equal(r.bitmap, _labels() == r.region_id)


def test_palette_image_accepted(tmp_path):
    p = tmp_path / "lab.png"
    img = Image.fromarray(_labels(), "P")
    img.putpalette([0, 0, 0, 255, 0, 0, 0, 255, 0, 0, 0, 255])
    img.save(p)
    assert load_masks_indexed_image(p).ids == [1, 2, 3]


def test_all_zero_image_has_no_regions(tmp_path):
    p = tmp_path / "lab.png"
    Image.fromarray(np.zeros((5, 5), np.uint8), "L").save(p)
    assert len(load_masks_indexed_image(p)) == 0


def test_truncated_image_is_format_error(tmp_path):
    src = tmp_path / "lab.png"
    Image.fromarray(_labels(), "L").save(src)
    p = tmp_path / "cut.png"
    p.write_bytes(src.read_bytes()[:40])
    with pytest.raises(FormatError):
        load_masks_indexed_image(p)


def test_rgb_image_is_format_error(tmp_path):
    p = tmp_path / "rgb.png"
    Image.fromarray(np.zeros((4, 4, 3), np.uint8), "RGB").save(p)
    with pytest.raises(FormatError, match="single-channel"):
        load_masks_indexed_image(p)


# -------------------------------------------------------------------- remote service


def _serve(reply):
    """Start a one-route stub that answers every POST with ``reply(body)``."""

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            body = self.rfile.read(int(self.headers["Content-Length"]))
            status, payload = reply(body, self.headers)
            data = payload.encode() if isinstance(payload, str) else json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args):
            pass

    server = HTTPServer(("127.0.0.1", 0), Handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server, f"http://127.0.0.1:{server.server_port}/segment"


@pytest.fixture
def frame():
    return Frame(np.zeros((6, 8, 3), np.uint8))


def _two_regions(w, h):
    a = np.zeros((h, w), bool)
    a[0, :] = True
    b = np.zeros((h, w), bool)
    b[-1, :] = True
    return {"width": w, "height": h,
            "regions": [{"id": 1, "counts": encode_rle(a)}, {"id": 2, "counts": encode_rle(b)}]}


def test_remote_returns_regions(frame):
    seen = {}

    def reply(body, headers):
        seen["png"] = body[:8]
        seen["ctype"] = headers["Content-Type"]
        return 200, _two_regions(8, 6)

    server, url = _serve(reply)
    try:
        ms = fetch_masks_remote(url, frame, timeout=5)
    finally:
        server.shutdown()
    assert ms.ids == [1, 2]
    assert seen["png"] == b"\x89PNG\r\n\x1a\n"
    assert seen["ctype"] == "image/png"


def test_remote_wrong_dimensions(frame):
    server, url = _serve(lambda b, h: (200, _two_regions(5, 5)))
    try:
        with pytest.raises(ContractError):
            fetch_masks_remote(url, frame, timeout=5)
    finally:
        server.shutdown()


def test_remote_http_error(frame):
    server, url = _serve(lambda b, h: (500, {"error": "boom"}))
    try:
        with pytest.raises(ContractError, match="500"):
            fetch_masks_remote(url, frame, timeout=5)
    finally:
        server.shutdown()


def test_remote_non_json(frame):
    server, url = _serve(lambda b, h: (200, "<html>"))
    try:
        with pytest.raises(FormatError):
            fetch_masks_remote(url, frame, timeout=5)
    finally:
        server.shutdown()


def test_remote_connection_refused(frame):
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    url = f"http://127.0.0.1:{port}/segment"
    with pytest.raises(RetryableError, match=str(port)):
        fetch_masks_remote(url, frame, timeout=2)
