import csv

import numpy as np
import pytest

from maskshift import checkpoint as ckpt
from maskshift import data, networks, train
from maskshift.losses import LossWeights


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("trainds")
    return data.synth_generate(data.SynthConfig(
        root=str(root), count_train=4, count_test=2, seed=31))


def small_config(**kw):
    base = dict(mode="unsupervised", weights=LossWeights(10.0, 1.0, 1.0, 1.0),
                epochs_keep=1, epochs_decay=0, checkpoint_every=1, seed=0,
                width_base=8, sparse_warmup_epochs=0)
    base.update(kw)
    return train.TrainConfig(**base)


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestTrainConfig:
    def test_roundtrip_dict(self):
        cfg = small_config(seed=7)
        assert train.TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            small_config(mode="semi")
        with pytest.raises(ValueError, match="batch_size"):
            small_config(batch_size=2)
        with pytest.raises(ValueError, match="base_lr"):
            small_config(base_lr=0.0)
        with pytest.raises(ValueError, match="sparse_warmup"):
            small_config(sparse_warmup_epochs=-1)

    def test_sparse_ramp(self):
        cfg = small_config(sparse_warmup_epochs=4)
        assert train.sparse_ramp(cfg, 0) == 0.0
        assert train.sparse_ramp(cfg, 2) == 0.5
        assert train.sparse_ramp(cfg, 4) == 1.0
        assert train.sparse_ramp(cfg, 9) == 1.0
        assert train.sparse_ramp(small_config(sparse_warmup_epochs=0), 0) == 1.0


def build_step_fixtures(manifest, config):
    init, rngs = train._make_rngs(config.seed)
    bundle = networks.build_bundle(config.width_base, 3, config.image_size, init)
    opts = train._make_optimizers(bundle, config)
    buffers = {k: train.ReplayBuffer(config.buffer_capacity, rngs["buffer_" + k])
               for k in ("x", "y")}
    sx = data.load_sample(manifest, "trainA", 0)
    sy = data.load_sample(manifest, "trainB", 0)
    return bundle, opts, buffers, sx, sy


class TestTrainStep:
    def test_report_finite_and_decomposes(self, manifest):
        config = small_config()
        bundle, opts, buffers, sx, sy = build_step_fixtures(manifest, config)
        rep = train.train_step(bundle, sx, sy, config, opts, buffers, 2e-4)
        vals = rep.row()
        assert all(np.isfinite(v) for v in vals)
        w = config.weights
        assert rep.total_g == pytest.approx(
            rep.gan_g_xy + rep.gan_g_yx + w.lambda_cyc * rep.cyc
            + w.lambda_a_cyc * rep.a_cyc + w.lambda_a_sparse * rep.a_sparse, rel=1e-6)
        assert rep.total_d == pytest.approx(rep.gan_d_x + rep.gan_d_y, rel=1e-6)

    def test_updates_generator_and_discriminator_params(self, manifest):
        config = small_config()
        bundle, opts, buffers, sx, sy = build_step_fixtures(manifest, config)
        before = {n: t.data.copy() for n, t in bundle.named_tensors().items()}
        train.train_step(bundle, sx, sy, config, opts, buffers, 2e-4)
        changed = {n for n, t in bundle.named_tensors().items()
                   if not np.array_equal(before[n], t.data)}
        # every network moves (generator nets via the combined loss, each
        # discriminator via its own)
        for net in ("a_x/", "a_y/", "t_x/", "t_y/", "d_x/", "d_y/"):
            assert any(n.startswith(net) for n in changed), net

    def test_discriminator_backward_reaches_no_generator_param(self, manifest):
        from maskshift import losses as losses_mod
        from maskshift.engine import Tensor
        config = small_config()
        bundle, opts, buffers, sx, sy = build_step_fixtures(manifest, config)
        x = Tensor(sx.image[None])
        y = Tensor(sy.image[None])
        fake_y, _, _ = networks.map_g(bundle, x)
        pooled = Tensor(fake_y.data.copy())  # detached, as the d-step uses it
        for opt in opts.values():
            opt.zero_grad()
        loss_d = losses_mod.loss_gan_d(
            networks.discriminator_forward(bundle.d_y, y),
            networks.discriminator_forward(bundle.d_y, pooled))
        loss_d.backward()
        for net_name, net in bundle.generator_networks():
            for pname, t in net.named_tensors():
                assert t.grad is None, net_name + "/" + pname
        assert any(t.grad is not None for _, t in bundle.d_y.named_tensors())

    def test_deterministic(self, manifest):
        config = small_config()
        outs = []
        for _ in range(2):
            bundle, opts, buffers, sx, sy = build_step_fixtures(manifest, config)
            rep = train.train_step(bundle, sx, sy, config, opts, buffers, 2e-4)
            outs.append((rep.row(), {n: t.data.copy()
                                     for n, t in bundle.named_tensors().items()}))
        assert outs[0][0] == outs[1][0]
        for n in outs[0][1]:
            assert np.array_equal(outs[0][1][n], outs[1][1][n])

    def test_supervised_without_masks_rejected(self, manifest):
        config = small_config(mode="supervised",
                              weights=LossWeights(10.0, 0.0, 0.0, 1.0))
        bundle, opts, buffers, sx, sy = build_step_fixtures(manifest, config)
        sx.mask = None
        with pytest.raises(ValueError, match="mask"):
            train.train_step(bundle, sx, sy, config, opts, buffers, 2e-4)

    def test_sparse_scale_zero_matches_zero_weight(self, manifest):
        config = small_config()
        bundle, opts, buffers, sx, sy = build_step_fixtures(manifest, config)
        rep = train.train_step(bundle, sx, sy, config, opts, buffers, 0.0,
                               sparse_scale=0.0)
        assert rep.total_g == pytest.approx(
            rep.gan_g_xy + rep.gan_g_yx + 10.0 * rep.cyc + rep.a_cyc, rel=1e-6)

    def test_gan_only_weights_total(self, manifest):
        config = small_config(weights=LossWeights(0.0, 0.0, 0.0, 1.0))
        bundle, opts, buffers, sx, sy = build_step_fixtures(manifest, config)
        rep = train.train_step(bundle, sx, sy, config, opts, buffers, 0.0)
        assert rep.total_g == pytest.approx(rep.gan_g_xy + rep.gan_g_yx, rel=1e-6)


class TestTrainLoop:
    def test_loop_arithmetic_and_outputs(self, manifest, tmp_path):
        out = tmp_path / "run"
        path = train.train_loop(small_config(), manifest, out)
        rows = read_rows(out / "loss.csv")
        assert rows[0] == train.CSV_HEADER
        assert len(rows) == 1 + 4  # 1 epoch x max(4,4) steps
        assert path.name == "epoch_0001.ckpt"
        assert (out / "grids" / "epoch_0001.png").exists()

    def test_same_seed_identical_csv(self, manifest, tmp_path):
        a = train.train_loop(small_config(), manifest, tmp_path / "a")
        b = train.train_loop(small_config(), manifest, tmp_path / "b")
        assert (tmp_path / "a" / "loss.csv").read_bytes() == \
            (tmp_path / "b" / "loss.csv").read_bytes()
        _, arrays_a = ckpt.load(a)
        _, arrays_b = ckpt.load(b)
        assert set(arrays_a) == set(arrays_b)
        for k in arrays_a:
            assert arrays_a[k].tobytes() == arrays_b[k].tobytes(), k

    def test_different_seed_differs(self, manifest, tmp_path):
        train.train_loop(small_config(seed=0), manifest, tmp_path / "a")
        train.train_loop(small_config(seed=1), manifest, tmp_path / "b")
        assert (tmp_path / "a" / "loss.csv").read_text() != \
            (tmp_path / "b" / "loss.csv").read_text()

    def test_resume_matches_uninterrupted(self, manifest, tmp_path):
        config = small_config(epochs_keep=2, epochs_decay=0, checkpoint_every=1)
        full = train.train_loop(config, manifest, tmp_path / "full")
        # interrupted: run the same schedule but resume from the mid checkpoint
        train.train_loop(config, manifest, tmp_path / "half")
        mid = tmp_path / "full" / "checkpoints" / "epoch_0001.ckpt"
        resumed = train.train_loop(config, manifest, tmp_path / "resumed", resume=mid)
        full_rows = read_rows(tmp_path / "full" / "loss.csv")
        res_rows = read_rows(tmp_path / "resumed" / "loss_resumed.csv")
        # resumed trace equals the second epoch of the uninterrupted trace
        assert res_rows[1:] == [r for r in full_rows[1:] if r[0] == "1"]
        _, full_arrays = ckpt.load(full)
        _, res_arrays = ckpt.load(resumed)
        for k in full_arrays:
            assert full_arrays[k].tobytes() == res_arrays[k].tobytes(), k

    def test_resume_config_mismatch_rejected(self, manifest, tmp_path):
        config = small_config()
        path = train.train_loop(config, manifest, tmp_path / "x")
        other = small_config(seed=5)
        with pytest.raises(ValueError, match="config"):
            train.train_loop(other, manifest, tmp_path / "y", resume=path)

    def test_supervised_requires_mask_dirs(self, tmp_path):
        import shutil
        root = tmp_path / "nomask"
        data.synth_generate(data.SynthConfig(root=str(root), count_train=2,
                                             count_test=1, seed=5))
        shutil.rmtree(root / "masksA")
        m = data.DatasetManifest.load(root)
        config = small_config(mode="supervised",
                              weights=LossWeights(10.0, 0.0, 0.0, 1.0))
        with pytest.raises(ValueError, match="mask"):
            train.train_loop(config, m, tmp_path / "out")

    def test_zero_epoch_schedule_still_writes_checkpoint(self, manifest, tmp_path):
        config = small_config(epochs_keep=0, epochs_decay=0)
        path = train.train_loop(config, manifest, tmp_path / "z")
        assert path.exists()
        meta, _ = ckpt.load(path)
        assert meta["epoch"] == 0


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, manifest, tmp_path):
        config = small_config()
        path = train.train_loop(config, manifest, tmp_path / "run")
        cfg, bundle, opts, buffers, rngs, epoch = train.load_checkpoint(path)
        assert cfg == config and epoch == 1
        second = tmp_path / "second.ckpt"
        train.save_checkpoint(second, bundle, cfg, opts, buffers, rngs, epoch)
        assert path.read_bytes() == second.read_bytes()

    def test_low_level_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {"a/w": rng.normal(size=(2, 3)).astype(np.float32),
                  "b/x": rng.normal(size=(4,)).astype(np.float32),
                  "scalarish": np.float32(1.5).reshape(())}
        meta = {"epoch": 3, "note": "hi"}
        p = tmp_path / "c.ckpt"
        ckpt.save(p, meta, arrays)
        meta2, arrays2 = ckpt.load(p)
        assert meta2 == meta
        for k, v in arrays.items():
            assert arrays2[k].tobytes() == np.asarray(v, np.float32).tobytes()

    def test_corruption_detected(self, tmp_path):
        p = tmp_path / "c.ckpt"
        ckpt.save(p, {}, {"a": np.ones(4, np.float32)})
        blob = bytearray(p.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        p.write_bytes(bytes(blob))
        with pytest.raises(ckpt.CheckpointError, match="checksum"):
            ckpt.load(p)

    def test_wrong_magic_rejected(self, tmp_path):
        p = tmp_path / "c.ckpt"
        ckpt.save(p, {}, {"a": np.ones(4, np.float32)})
        blob = bytearray(p.read_bytes())
        blob[0] ^= 0xFF
        p.write_bytes(bytes(blob))
        with pytest.raises(ckpt.CheckpointError, match="magic|checksum"):
            ckpt.load(p)

    def test_truncation_rejected(self, tmp_path):
        p = tmp_path / "c.ckpt"
        ckpt.save(p, {}, {"a": np.ones(4, np.float32)})
        p.write_bytes(p.read_bytes()[:10])
        with pytest.raises(ckpt.CheckpointError):
            ckpt.load(p)

    def test_wrong_version_rejected(self, tmp_path):
        import hashlib
        import struct
        p = tmp_path / "c.ckpt"
        ckpt.save(p, {}, {"a": np.ones(4, np.float32)})
        blob = bytearray(p.read_bytes()[:-8])
        blob[8:12] = struct.pack("<I", 99)
        blob += hashlib.blake2b(bytes(blob), digest_size=8).digest()
        p.write_bytes(bytes(blob))
        with pytest.raises(ckpt.CheckpointError, match="version"):
            ckpt.load(p)
