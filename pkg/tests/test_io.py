import struct

import numpy as np
import pytest

from dualreg import io
from dualreg.metrics import LandmarkSet
from dualreg.mind import MindVolume
from dualreg.registration import FusionKernel, RegistrationConfig
from dualreg.translator import ArtifactInjector, GammaRemapTranslator, IdentityTranslator
from dualreg.volume import BinaryMask, DisplacementField, Volume3


def test_volume_roundtrip_bit_exact(tmp_path, rng):
    v = Volume3(rng.random((8, 8, 8)), (0.5, 1.25, 3.0))
    io.write_volume(tmp_path / "v.mha", v)
    back = io.read_volume(tmp_path / "v.mha")
    assert isinstance(back, Volume3)
    assert np.array_equal(back.data, v.data) and back.spacing == v.spacing


@pytest.mark.parametrize("make", [
    lambda r: DisplacementField(r.normal(size=(5, 6, 7, 3)), (1.0, 2.0, 3.0)),
    lambda r: MindVolume(r.random((4, 5, 6, 6))),
    lambda r: BinaryMask(r.random((6, 5, 4)) > 0.5, (2.0, 2.0, 2.0)),
])
def test_other_types_roundtrip(tmp_path, rng, make):
    obj = make(rng)
    io.write_volume(tmp_path / "x.mha", obj)
    back = io.read_volume(tmp_path / "x.mha")
    assert type(back) is type(obj)
    assert np.array_equal(back.data, obj.data) and back.spacing == obj.spacing


def _handwritten(tmp_path, header_lines, payload: bytes):
    p = tmp_path / "h.mha"
    p.write_bytes(("\n".join(header_lines) + "\n").encode() + payload)
    return p


def test_handwritten_header_byte_layout(tmp_path):
    values = [float(i) + 0.5 for i in range(8)]
    p = _handwritten(tmp_path, ["NDims = 3", "DimSize = 2 2 2", "ElementType = MET_DOUBLE",
                                "ElementByteOrderMSB = False", "ElementDataFile = LOCAL"],
                     struct.pack("<8d", *values))
    v = io.read_volume(p)
    # x fastest, then y, then z
    for k, val in enumerate(values):
        x, y, z = k % 2, (k // 2) % 2, k // 4
        assert v.data[x, y, z] == val
    assert v.spacing == (1.0, 1.0, 1.0)


def test_float32_payload(tmp_path):
    p = _handwritten(tmp_path, ["NDims = 3", "DimSize = 1 1 2", "ElementType = MET_FLOAT", "ElementDataFile = LOCAL"],
                     struct.pack("<2f", 0.25, 0.5))
    assert io.read_volume(p).data.ravel().tolist() == [0.25, 0.5]


@pytest.mark.parametrize("lines,payload,key", [
    (["NDims = 3", "DimSize = 2 2 2", "ElementNumberOfChannels = 4", "ElementType = MET_DOUBLE",
      "ElementDataFile = LOCAL"], bytes(8 * 8 * 4), "ElementNumberOfChannels"),
    (["NDims = 3", "DimSize = 2 2 2", "ElementType = MET_SHORT", "ElementDataFile = LOCAL"], bytes(16), "ElementType"),
    (["NDims = 2", "DimSize = 2 2", "ElementType = MET_DOUBLE", "ElementDataFile = LOCAL"], bytes(32), "NDims"),
    (["NDims = 3", "DimSize = 2 2 2", "ElementType = MET_DOUBLE", "ElementDataFile = LOCAL"], bytes(63), "DimSize"),
    (["NDims = 3", "DimSize = 2 2 2", "ElementType = MET_DOUBLE"], b"", "ElementDataFile"),
    (["NDims = 3", "DimSize = 2 x 2", "ElementType = MET_DOUBLE", "ElementDataFile = LOCAL"], bytes(64), "DimSize"),
    (["NDims = 3", "DimSize = 2 2 2", "ElementType = MET_DOUBLE", "ElementByteOrderMSB = True",
      "ElementDataFile = LOCAL"], bytes(64), "ElementByteOrderMSB"),
])
def test_malformed_headers(tmp_path, lines, payload, key):
    with pytest.raises(io.FormatError, match=key):
        io.read_volume(_handwritten(tmp_path, lines, payload))


def test_parse_config():
    cfg = io.parse_config("# comment\nregistration.lambda_smooth = 2.5\n\nregistration.iterations = 3, 2, 1  # x\n"
                          "mind.sigma = 0.8\ntranslator.kind = gamma\ntranslator.gamma = 2\n")
    rc = io.registration_config(cfg)
    assert rc.lambda_smooth == 2.5 and rc.iterations == (3, 2, 1) and rc.mind.sigma == 0.8
    assert isinstance(io.translator_from(cfg), GammaRemapTranslator)
    assert io.registration_config({}) == RegistrationConfig()


@pytest.mark.parametrize("text,match", [
    ("registration.lamda = 1", "unknown key"),
    ("bogus.key = 1", "unknown key"),
    ("lambda_smooth = 1", "no section"),
    ("registration.levels = two", "bad value"),
    ("registration.levels = 1\nregistration.levels = 2", "duplicate"),
    ("just words", "expected"),
])
def test_config_errors(text, match):
    with pytest.raises(io.ConfigError, match=match):
        io.parse_config(text)


def test_config_semantic_errors():
    with pytest.raises(io.ConfigError, match="registration"):
        io.registration_config(io.parse_config("registration.similarity = ncc"))
    with pytest.raises(io.ConfigError, match="translator"):
        io.translator_from(io.parse_config("translator.kind = cyclegan"))
    with pytest.raises(io.ConfigError, match="phantom"):
        io.phantom_spec(io.parse_config("phantom.max_disp = -1"))


def test_translator_from_variants():
    assert isinstance(io.translator_from({}), IdentityTranslator)
    t = io.translator_from(io.parse_config("translator.kind = gamma\ntranslator.table = 0:0, 0.5:0.9, 1:1"))
    assert t.table == ((0.0, 0.0), (0.5, 0.9), (1.0, 1.0))
    inj = io.translator_from(io.parse_config("translator.kind = phantom\ntranslator.blobs = 3\ntranslator.seed = 4"))
    assert isinstance(inj, ArtifactInjector) and inj.n_random == 3 and inj.seed == 4
    inj = io.translator_from(io.parse_config("translator.blobs = 1 2 3 2.0 0.5 -1; 4 4 4 1 0.1 1"))
    assert len(inj.blobs) == 2 and inj.blobs[0].sign == -1


def test_phantom_spec_text_roundtrip():
    spec = io.phantom_spec(io.parse_config("phantom.seed = 5\nphantom.dims = 16 24 32\nphantom.spacing = 1.5"))
    assert spec.dims == (16, 24, 32) and spec.spacing == (1.5, 1.5, 1.5)
    again = io.phantom_spec(io.parse_config(io.format_phantom_spec(spec)))
    assert again == spec


def test_landmarks_roundtrip(tmp_path):
    lm = LandmarkSet(["a", "b"], [[0.1, 2.0, 3.3333333333333335], [4.0, 5.0, 6.0]])
    io.write_landmarks(tmp_path / "l.csv", lm)
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "label,x,y,z"
    back = io.read_landmarks(tmp_path / "l.csv")
    assert back.labels == lm.labels and np.array_equal(back.points, lm.points)
    (tmp_path / "bad.csv").write_text("name,x,y,z\n")
    with pytest.raises(io.FormatError, match="label,x,y,z"):
        io.read_landmarks(tmp_path / "bad.csv")


def test_kernel_text_roundtrip(rng):
    k = FusionKernel(rng.normal(size=(3, 3, 3, 6, 3)), rng.normal(size=3))
    text = io.format_kernel(k)
    lines = text.splitlines()
    assert len(lines) == 27 * 18 + 3
    dz, dy, dx, ci, co, val = lines[1].split()
    assert (dz, dy, dx, ci, co) == ("-1", "-1", "-1", "0", "1")
    assert float(val) == k.weights[0, 0, 0, 0, 1]
    back = io.parse_kernel(text)
    assert np.array_equal(back.weights, k.weights) and np.array_equal(back.bias, k.bias)
