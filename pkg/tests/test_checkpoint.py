import json
import struct
import time

import numpy as np
import pytest

from mvflow.autodiff import Tensor
from mvflow.checkpoint import (FORMAT_VERSION, MAGIC, Checkpoint,
                               CheckpointError, load_checkpoint, model_params,
                               read_latest, restore_optimizer, save_checkpoint,
                               write_latest)
from mvflow.optim import AdamW
from mvflow.rng import RandomStream

CFG = {"train": {"stage": "single", "seed": 3}, "model": {"d": 8}}


def toy_params(seed=0):
    rs = RandomStream(seed, 0)
    return {
        "dit.a.w": Tensor(rs.child(0).normal((3, 4)), requires_grad=True),
        "dit.a.b": Tensor(np.zeros(4, np.float32), requires_grad=True),
        "moe.g.c1": Tensor(rs.child(1).normal((2, 2, 1, 1, 1)), requires_grad=True),
    }


def rewrite(path, header, payload):
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def split(path):
    raw = open(path, "rb").read()
    (hlen,) = struct.unpack("<Q", raw[4:12])
    return json.loads(raw[12:12 + hlen]), raw[12 + hlen:]


class TestRoundTrip:
    def test_bitwise_params(self, tmp_path):
        path = tmp_path / "m.wvck"
        params = toy_params()
        save_checkpoint(path, params, step=5, stage="single", config=CFG)
        ckpt = load_checkpoint(path)
        assert ckpt.step == 5
        assert ckpt.stage == "single"
        assert ckpt.config == CFG
        assert set(ckpt.tensors) == set(params)
        for name, p in params.items():
            assert ckpt.tensors[name].dtype == p.data.dtype
            assert np.array_equal(ckpt.tensors[name], p.data)

    def test_mixed_dtypes(self, tmp_path):
        path = tmp_path / "m.wvck"
        tensors = {"f64": np.arange(4, dtype=np.float64),
                   "i32": np.array([[1, -2]], np.int32),
                   "u8": np.array([0, 255], np.uint8),
                   "flag": np.array([True, False])}
        save_checkpoint(path, tensors, step=1, stage="vae", config={})
        ckpt = load_checkpoint(path)
        for name, arr in tensors.items():
            assert ckpt.tensors[name].dtype == arr.dtype
            assert np.array_equal(ckpt.tensors[name], arr)

    def test_unsupported_dtype_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="dtype"):
            save_checkpoint(tmp_path / "m.wvck", {"c": np.array([1j])},
                            step=1, stage="vae", config={})

    def test_file_carries_no_timestamp(self, tmp_path):
        params = toy_params()
        save_checkpoint(tmp_path / "a.wvck", params, step=5, stage="single",
                        config=CFG)
        time.sleep(0.05)
        save_checkpoint(tmp_path / "b.wvck", params, step=5, stage="single",
                        config=CFG)
        assert (tmp_path / "a.wvck").read_bytes() == (tmp_path / "b.wvck").read_bytes()

    def test_header_sorted_and_contiguous(self, tmp_path):
        path = tmp_path / "m.wvck"
        save_checkpoint(path, toy_params(), step=5, stage="single", config=CFG)
        header, payload = split(path)
        names = [e["name"] for e in header["tensors"]]
        assert names == sorted(names)
        offset = 0
        for entry in header["tensors"]:
            assert entry["offset"] == offset
            offset += entry["byte_length"]
        assert offset == len(payload)

    def test_model_params_returns_tensors(self, tmp_path):
        path = tmp_path / "m.wvck"
        params = toy_params()
        opt = AdamW(params, lr=1e-3)
        save_checkpoint(path, params, step=1, stage="single", config=CFG,
                        optimizer=opt)
        restored = model_params(load_checkpoint(path))
        assert set(restored) == set(params)
        for name, p in restored.items():
            assert isinstance(p, Tensor)
            assert p.requires_grad
            assert np.array_equal(p.data, params[name].data)


class TestOptimizerRoundTrip:
    def fake_step(self, params, opt, seed):
        rs = RandomStream(seed, 9)
        for i, name in enumerate(sorted(params)):
            params[name].grad = rs.child(i).normal(params[name].data.shape)
        opt.step()

    def test_state_restored_exactly(self, tmp_path):
        path = tmp_path / "m.wvck"
        params = toy_params()
        opt = AdamW(params, lr=3e-3, betas=(0.8, 0.99), eps=1e-7,
                    weight_decay=0.02)
        self.fake_step(params, opt, 1)
        self.fake_step(params, opt, 2)
        save_checkpoint(path, params, step=2, stage="single", config=CFG,
                        optimizer=opt)

        restored_p = model_params(load_checkpoint(path))
        restored_o = restore_optimizer(load_checkpoint(path), restored_p)
        assert restored_o.t == 2
        assert (restored_o.lr, restored_o.beta1, restored_o.beta2,
                restored_o.eps, restored_o.weight_decay) == (3e-3, 0.8, 0.99,
                                                             1e-7, 0.02)
        for name in params:
            assert np.array_equal(restored_o.m[name], opt.m[name])
            assert np.array_equal(restored_o.v[name], opt.v[name])

        self.fake_step(params, opt, 3)
        self.fake_step(restored_p, restored_o, 3)
        for name in params:
            assert np.array_equal(restored_p[name].data, params[name].data)

    def test_no_optimizer_restores_none(self, tmp_path):
        path = tmp_path / "m.wvck"
        save_checkpoint(path, toy_params(), step=1, stage="single", config=CFG)
        ckpt = load_checkpoint(path)
        assert restore_optimizer(ckpt, model_params(ckpt)) is None


class TestErrors:
    def good(self, tmp_path):
        path = tmp_path / "m.wvck"
        save_checkpoint(path, toy_params(), step=5, stage="single", config=CFG)
        return path

    def test_is_os_error(self):
        assert issubclass(CheckpointError, OSError)

    def test_bad_magic(self, tmp_path):
        path = self.good(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "m.wvck"
        path.write_bytes(MAGIC + b"\x01")
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_header_beyond_file(self, tmp_path):
        path = tmp_path / "m.wvck"
        path.write_bytes(MAGIC + struct.pack("<Q", 10 ** 6) + b"{}")
        with pytest.raises(CheckpointError, match="header length"):
            load_checkpoint(path)

    def test_corrupt_header_json(self, tmp_path):
        path = tmp_path / "m.wvck"
        blob = b"{not json"
        path.write_bytes(MAGIC + struct.pack("<Q", len(blob)) + blob)
        with pytest.raises(CheckpointError, match="corrupt header"):
            load_checkpoint(path)

    def test_unsupported_version(self, tmp_path):
        path = self.good(tmp_path)
        header, payload = split(path)
        header["format_version"] = FORMAT_VERSION + 1
        rewrite(path, header, payload)
        with pytest.raises(CheckpointError, match="format_version"):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        path = self.good(tmp_path)
        header, payload = split(path)
        rewrite(path, header, payload[:-2])
        with pytest.raises(CheckpointError, match="out of bounds"):
            load_checkpoint(path)

    def test_byte_length_mismatch(self, tmp_path):
        path = self.good(tmp_path)
        header, payload = split(path)
        header["tensors"][0]["byte_length"] += 4
        rewrite(path, header, payload)
        with pytest.raises(CheckpointError, match="byte_length"):
            load_checkpoint(path)

    def test_overlapping_tensors(self, tmp_path):
        path = self.good(tmp_path)
        header, payload = split(path)
        header["tensors"][1]["offset"] = header["tensors"][0]["offset"]
        rewrite(path, header, payload)
        with pytest.raises(CheckpointError, match="overlap"):
            load_checkpoint(path)

    def test_unknown_dtype_in_header(self, tmp_path):
        path = self.good(tmp_path)
        header, payload = split(path)
        header["tensors"][0]["dtype"] = "float16"
        rewrite(path, header, payload)
        with pytest.raises(CheckpointError, match="dtype"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_checkpoint(tmp_path / "absent.wvck")


class TestLatest:
    def test_round_trip(self, tmp_path):
        write_latest(tmp_path, "ckpt_vae_step000400.wvck", 400, "vae")
        assert read_latest(tmp_path) == str(tmp_path / "ckpt_vae_step000400.wvck")
        doc = json.loads((tmp_path / "latest.json").read_text())
        assert doc == {"path": "ckpt_vae_step000400.wvck", "step": 400,
                       "stage": "vae"}

    def test_checkpoint_dataclass_fields(self):
        ckpt = Checkpoint(step=1, stage="multi", config={}, tensors={},
                          header={})
        assert (ckpt.step, ckpt.stage) == (1, "multi")
