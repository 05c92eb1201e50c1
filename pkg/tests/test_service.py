"""HTTP API conformance tests against a short-run fixture checkpoint."""
import base64
import io
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from sketchmesh.data import load_dataset
from sketchmesh.geometry import Mesh, check_watertight
from sketchmesh.service import MAX_BODY_BYTES, create_app


@pytest.fixture(scope="module")
def client(checkpoint_path):
    return TestClient(create_app(checkpoint_path))


@pytest.fixture(scope="module")
def sketch_b64(dataset_dir):
    png = (dataset_dir / "s0000_sketch.png").read_bytes()
    return base64.b64encode(png).decode("ascii")


def png_b64(arr: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(arr.astype(np.uint8), mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


# ------------------------------------------------------------------- health

def test_health(client):
    r = client.get("/api/v1/health")
    assert r.status_code == 200
    body = r.json()
    assert body["status"] == "ok"
    assert len(body["checkpoint"]) == 12
    int(body["checkpoint"], 16)


# -------------------------------------------------------------------- model

def test_model_returns_watertight_template_mesh(client, sketch_b64):
    r = client.post("/api/v1/model", json={"sketch": sketch_b64})
    assert r.status_code == 200
    body = r.json()
    assert list(body) == ["vertices", "faces", "silhouette_png",
                          "n_vertices", "n_faces", "checkpoint"]
    assert body["n_vertices"] == 642
    assert body["n_faces"] == 1280
    mesh = Mesh(np.array(body["vertices"]), np.array(body["faces"]))
    assert check_watertight(mesh)
    ms = float(r.headers["X-Timing-Ms"])
    assert ms > 0.0


def test_model_silhouette_preview_is_binary_png(client, sketch_b64):
    r = client.post("/api/v1/model", json={"sketch": sketch_b64})
    png = base64.b64decode(r.json()["silhouette_png"])
    img = Image.open(io.BytesIO(png))
    assert img.size == (16, 16)
    values = set(np.asarray(img.convert("L")).ravel().tolist())
    assert values <= {0, 255}


def test_model_responses_byte_identical(client, sketch_b64):
    payload = {"sketch": sketch_b64}
    a = client.post("/api/v1/model", json=payload)
    b = client.post("/api/v1/model", json=payload)
    assert a.content == b.content
    assert a.json()["checkpoint"] == client.get("/api/v1/health").json()["checkpoint"]


def test_model_accepts_correct_declared_resolution(client, sketch_b64):
    r = client.post("/api/v1/model",
                    json={"sketch": sketch_b64, "resolution": 16})
    assert r.status_code == 200


def test_model_rejects_wrong_declared_resolution(client, sketch_b64):
    r = client.post("/api/v1/model",
                    json={"sketch": sketch_b64, "resolution": 999})
    assert r.status_code == 400
    assert "resolution" in r.json()["error"]
    r = client.post("/api/v1/model",
                    json={"sketch": sketch_b64, "resolution": "16"})
    assert r.status_code == 400


def test_model_resamples_oversized_sketch(client):
    big = np.ones((128, 128), dtype=np.uint8) * 255
    big[40:90, 60:64] = 0
    r = client.post("/api/v1/model", json={"sketch": png_b64(big)})
    assert r.status_code == 200
    assert r.json()["n_vertices"] == 642


@pytest.mark.parametrize("sketch,reason", [
    ("not base64!!", "base64"),
    (base64.b64encode(b"plain bytes").decode(), "image"),
])
def test_model_rejects_undecodable_sketches(client, sketch, reason):
    r = client.post("/api/v1/model", json={"sketch": sketch})
    assert r.status_code == 400


def test_model_rejects_blank_and_solid_sketches(client):
    blank = np.full((16, 16), 255, dtype=np.uint8)
    r = client.post("/api/v1/model", json={"sketch": png_b64(blank)})
    assert r.status_code == 400
    assert "stroke" in r.json()["error"]
    solid = np.zeros((16, 16), dtype=np.uint8)
    r = client.post("/api/v1/model", json={"sketch": png_b64(solid)})
    assert r.status_code == 400


def test_model_rejects_missing_or_non_string_sketch(client):
    assert client.post("/api/v1/model", json={}).status_code == 400
    assert client.post("/api/v1/model",
                       json={"sketch": 42}).status_code == 400


def test_model_rejects_malformed_json(client):
    r = client.post("/api/v1/model", content=b"{oops",
                    headers={"content-type": "application/json"})
    assert r.status_code == 400
    r = client.post("/api/v1/model", content=b"[1, 2]",
                    headers={"content-type": "application/json"})
    assert r.status_code == 400


def test_model_rejects_oversized_body(client):
    filler = "A" * (MAX_BODY_BYTES + 64)
    r = client.post("/api/v1/model", json={"sketch": filler})
    assert r.status_code == 413


# ------------------------------------------------------------------- export

@pytest.fixture(scope="module")
def predicted(client, sketch_b64):
    return client.post("/api/v1/model", json={"sketch": sketch_b64}).json()


def test_export_obj(client, predicted):
    r = client.post("/api/v1/export", json={
        "vertices": predicted["vertices"], "faces": predicted["faces"],
        "format": "obj"})
    assert r.status_code == 200
    assert r.headers["content-type"].startswith("model/obj")
    text = r.content.decode()
    assert text.count("\nf ") + text.startswith("f ") == 1280
    from sketchmesh.geometry import load_obj
    mesh = load_obj(r.content)
    assert check_watertight(mesh)


def test_export_stl_length_arithmetic(client, predicted):
    r = client.post("/api/v1/export", json={
        "vertices": predicted["vertices"], "faces": predicted["faces"],
        "format": "stl"})
    assert r.status_code == 200
    assert r.headers["content-type"].startswith("model/stl")
    assert len(r.content) == 84 + 50 * len(predicted["faces"])


def test_export_rejects_bad_format(client, predicted):
    r = client.post("/api/v1/export", json={
        "vertices": predicted["vertices"], "faces": predicted["faces"],
        "format": "ply"})
    assert r.status_code == 400


def test_export_rejects_bad_payloads(client):
    tri = {"vertices": [[0, 0, 0], [1, 0, 0], [0, 1, 0]],
           "faces": [[0, 1, 2]]}
    # A lone triangle is a legal OBJ but not a closed surface, so STL
    # export refuses it.
    r = client.post("/api/v1/export", json={**tri, "format": "stl"})
    assert r.status_code == 400
    r = client.post("/api/v1/export", json={**tri, "format": "obj"})
    assert r.status_code == 200
    for broken in (
        {"vertices": [], "faces": [[0, 1, 2]], "format": "obj"},
        {"vertices": [[0, 0, 0]], "faces": [], "format": "obj"},
        {"vertices": [[0, 0]], "faces": [[0, 0, 0]], "format": "obj"},
        {"vertices": [[0, 0, 0]], "faces": [[0, 1, 9]], "format": "obj"},
        {"vertices": "zzz", "faces": [[0, 1, 2]], "format": "obj"},
    ):
        r = client.post("/api/v1/export", json=broken)
        assert r.status_code == 400, broken


def test_export_round_trip_through_obj(client, predicted):
    """OBJ leaving the service re-imports to the same mesh."""
    from sketchmesh.geometry import load_obj
    r = client.post("/api/v1/export", json={
        "vertices": predicted["vertices"], "faces": predicted["faces"],
        "format": "obj"})
    mesh = load_obj(r.content)
    np.testing.assert_allclose(mesh.vertices,
                               np.array(predicted["vertices"]), atol=0)
    np.testing.assert_array_equal(mesh.faces, np.array(predicted["faces"]))
