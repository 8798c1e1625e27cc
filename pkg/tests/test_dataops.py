"""Episode file format, rate alignment, manifests."""

import numpy as np
import pytest

import deskgrasp.dataops as do


def make_tick(i, cams=("front_cam",)):
    rng = np.random.default_rng(100 + i)
    return do.Tick(
        t_idx=i, t_sec=i / 30.0,
        q_arm=rng.normal(size=6), q_hand=rng.normal(size=12),
        cmd_arm=rng.normal(size=6), cmd_hand=rng.normal(size=12),
        ee_pose=np.concatenate([rng.normal(size=3), [1, 0, 0, 0]]),
        tactile_res=rng.normal(size=15),
        frames={c: i for c in cams},
        operator_engaged=bool(i % 2), copilot_active=True,
        intervention=False)


def make_episode(n_ticks=5, with_tactile=False, with_latent=False,
                 seed=3):
    rng = np.random.default_rng(seed)
    rec = do.EpisodeRecord(
        task="grasp", instruction_id=2, instruction="pick up the box",
        robot="xhand12", rates={"inner": 450, "operator": 90, "hand": 50,
                                "log": 30},
        seed=seed,
        ticks=[make_tick(i) for i in range(n_ticks)],
        depth_frames=[rng.normal(size=(32, 32)).astype(np.float32)
                      for _ in range(n_ticks)],
        success=True)
    if with_tactile:
        rec.tactile_frames = [rng.normal(size=(5, 10, 12, 3))
                              .astype(np.float32) for _ in range(n_ticks)]
    if with_latent:
        rec.latent_frames = [rng.normal(size=(5, 128)).astype(np.float32)
                             for _ in range(n_ticks)]
    return rec


class TestEpisodeFormat:
    def test_roundtrip_bit_exact(self, tmp_path):
        rec = make_episode(6, with_tactile=True, with_latent=True)
        p1 = tmp_path / "ep1.jsonl"
        p2 = tmp_path / "ep2.jsonl"
        do.write_episode(str(p1), rec)
        back = do.read_episode(str(p1))
        do.write_episode(str(p2), back)
        assert p1.read_bytes() == p2.read_bytes()
        for kind in ("depth", "tactile", "latent"):
            s1 = do.episode_paths(str(p1))[kind].read_bytes()
            s2 = do.episode_paths(str(p2))[kind].read_bytes()
            assert s1 == s2

    def test_roundtrip_preserves_values(self, tmp_path):
        rec = make_episode(4, with_tactile=True)
        p = tmp_path / "ep.jsonl"
        do.write_episode(str(p), rec)
        back = do.read_episode(str(p))
        assert back.task == "grasp" and back.seed == 3
        assert back.success and back.failure is None
        assert len(back.ticks) == 4
        np.testing.assert_allclose(back.ticks[2].q_hand,
                                   rec.ticks[2].q_hand, atol=0)
        np.testing.assert_array_equal(back.depth_frames[1],
                                      rec.depth_frames[1])
        np.testing.assert_array_equal(back.tactile_frames[3],
                                      rec.tactile_frames[3])
        assert back.ticks[1].operator_engaged is True

    def test_truncated_sidecar_names_missing_frame(self, tmp_path):
        rec = make_episode(5)
        p = tmp_path / "ep.jsonl"
        do.write_episode(str(p), rec)
        depth = do.episode_paths(str(p))["depth"]
        blob = depth.read_bytes()
        depth.write_bytes(blob[:4 + 3 * 32 * 32 * 4])  # keep 3 of 5 frames
        with pytest.raises(do.IntegrityError, match="frame 3 missing"):
            do.read_episode(str(p))

    def test_corrupt_magic_rejected(self, tmp_path):
        rec = make_episode(2)
        p = tmp_path / "ep.jsonl"
        do.write_episode(str(p), rec)
        depth = do.episode_paths(str(p))["depth"]
        depth.write_bytes(b"XXXX" + depth.read_bytes()[4:])
        with pytest.raises(do.IntegrityError, match="magic"):
            do.read_episode(str(p))

    def test_header_only_file(self, tmp_path):
        rec = make_episode(0)
        rec.depth_frames = []
        rec.footer_present = False
        p = tmp_path / "ep.jsonl"
        do.write_episode(str(p), rec)
        back = do.read_episode(str(p))
        assert back.ticks == []
        assert back.footer_present is False

    def test_footer_tick_count_checked(self, tmp_path):
        rec = make_episode(3)
        p = tmp_path / "ep.jsonl"
        do.write_episode(str(p), rec)
        lines = p.read_text().strip().split("\n")
        lines.pop(2)  # drop a tick line, footer now lies
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(do.IntegrityError):
            do.read_episode(str(p))

    def test_validate_rejects_gaps_and_bad_refs(self):
        rec = make_episode(3)
        rec.ticks[2].t_idx = 5
        with pytest.raises(do.IntegrityError, match="gap"):
            rec.validate()
        rec2 = make_episode(3)
        rec2.ticks[1].frames["front_cam"] = 99
        with pytest.raises(do.IntegrityError, match="unresolvable"):
            rec2.validate()


class TestSyncSample:
    def test_constant_sources_pass_through(self):
        bufs = {"a": do.RateSyncBuffer(rate=90.0),
                "b": do.RateSyncBuffer(rate=50.0)}
        bufs["a"].push(0.0, 7)
        bufs["b"].push(0.0, "x")
        out = do.sync_sample(bufs, 0.01)
        assert out["a"].value == 7 and out["b"].value == "x"
        assert not out["a"].stale

    def test_90hz_source_at_one_thirtieth(self):
        buf = do.RateSyncBuffer(rate=90.0)
        for i in range(10):
            buf.push(i / 90.0, i)
        out = do.sync_sample({"arm": buf}, 1.0 / 30.0)
        assert out["arm"].value == 3
        assert out["arm"].t_source == 3 / 90.0

    def test_silent_source_held_and_stale(self):
        buf = do.RateSyncBuffer(rate=90.0)
        buf.push(0.0, 42)
        out = do.sync_sample({"arm": buf}, 5.0 / 90.0)
        assert out["arm"].value == 42
        assert out["arm"].stale

    def test_empty_source_errors(self):
        with pytest.raises(do.MissingSourceError):
            do.sync_sample({"arm": do.RateSyncBuffer(rate=90.0)}, 0.0)

    def test_no_sample_before_tick_errors(self):
        buf = do.RateSyncBuffer(rate=90.0)
        buf.push(1.0, 3)
        with pytest.raises(do.MissingSourceError):
            do.sync_sample({"arm": buf}, 0.5)

    def test_timestamps_must_increase(self):
        buf = do.RateSyncBuffer(rate=30.0)
        buf.push(0.1, 1)
        with pytest.raises(ValueError):
            buf.push(0.1, 2)


class TestManifest:
    def write_eps(self, tmp_path, ids, created=1000.0):
        m = do.new_manifest()
        for i, eid in enumerate(ids):
            p = tmp_path / f"{eid}.jsonl"
            do.write_episode(str(p), make_episode(2, seed=10 + i))
            do.manifest_add(m, eid, str(p), "D_uni", created + i)
        return m

    def test_hash_verification_catches_bit_flip(self, tmp_path):
        m = self.write_eps(tmp_path, ["ep_000"])
        mp = tmp_path / "manifest.json"
        do.save_manifest(str(mp), m)
        do.load_manifest(str(mp), verify_dir=str(tmp_path))  # clean
        target = tmp_path / "ep_000.jsonl"
        blob = bytearray(target.read_bytes())
        blob[len(blob) // 2] ^= 0x01
        target.write_bytes(bytes(blob))
        with pytest.raises(do.IntegrityError, match="hash mismatch"):
            do.load_manifest(str(mp), verify_dir=str(tmp_path))

    def test_sidecar_corruption_detected(self, tmp_path):
        m = self.write_eps(tmp_path, ["ep_000"])
        mp = tmp_path / "manifest.json"
        do.save_manifest(str(mp), m)
        depth = tmp_path / "ep_000.depth"
        blob = bytearray(depth.read_bytes())
        blob[-1] ^= 0x80
        depth.write_bytes(bytes(blob))
        with pytest.raises(do.IntegrityError, match="hash mismatch"):
            do.load_manifest(str(mp), verify_dir=str(tmp_path))

    def test_aggregate_disjoint_union(self, tmp_path):
        a = self.write_eps(tmp_path, [f"a{i}" for i in range(4)])
        b = self.write_eps(tmp_path, [f"b{i}" for i in range(3)],
                           created=2000.0)
        merged = do.aggregate(a, b)
        assert len(merged["episodes"]) == 7

    def test_aggregate_duplicate_keeps_newer(self, tmp_path):
        a = self.write_eps(tmp_path, ["dup"], created=1000.0)
        p = tmp_path / "dup.jsonl"
        do.write_episode(str(p), make_episode(2, seed=99))
        b = do.new_manifest()
        do.manifest_add(b, "dup", str(p), "D_uni", 2000.0)
        merged = do.aggregate(a, b)
        assert len(merged["episodes"]) == 1
        assert merged["episodes"]["dup"]["created"] == 2000.0
        # merging the stale copy back does not resurrect it
        again = do.aggregate(merged, a)
        assert again["episodes"]["dup"]["created"] == 2000.0

    def test_aggregate_empty_is_identity(self, tmp_path):
        a = self.write_eps(tmp_path, ["x"])
        merged = do.aggregate(a, do.new_manifest())
        assert merged["episodes"] == a["episodes"]

    def test_aggregate_equal_timestamp_conflict(self, tmp_path):
        a = self.write_eps(tmp_path, ["dup"], created=1000.0)
        p = tmp_path / "dup.jsonl"
        do.write_episode(str(p), make_episode(2, seed=77))
        b = do.new_manifest()
        do.manifest_add(b, "dup", str(p), "D_uni", 1000.0)
        with pytest.raises(do.ManifestConflict):
            do.aggregate(a, b)

    def test_partition_filter(self, tmp_path):
        m = do.new_manifest()
        for i, part in enumerate(["D_uni", "D_success(1)",
                                  "D_corrective(1)", "D_success(2)"]):
            p = tmp_path / f"e{i}.jsonl"
            do.write_episode(str(p), make_episode(1, seed=i))
            do.manifest_add(m, f"e{i}", str(p), part, 100.0 + i)
        assert do.partition_ids(m, "D_success") == ["e1", "e3"]
        assert do.partition_ids(m, "D_success(1)") == ["e1"]
        assert do.partition_ids(m, "D_uni") == ["e0"]
        with pytest.raises(ValueError):
            do.manifest_add(m, "bad", str(tmp_path / "e0.jsonl"),
                            "D_bogus", 1.0)


class TestCommandSidecars:
    def _with_cmds(self, n_ticks=2, seed=7):
        # rates 450/90/50/30: per log tick 15 inner steps, so 3 arm
        # commands per tick and ceil(15 n / 9) hand commands
        rec = make_episode(n_ticks, seed=seed)
        rng = np.random.default_rng(seed + 1)
        n_arm, n_hand = rec.expected_cmd_counts()
        rec.arm_cmd_frames = [rng.normal(size=6) for _ in range(n_arm)]
        rec.hand_cmd_frames = [rng.normal(size=12) for _ in range(n_hand)]
        return rec

    def test_expected_counts_match_rates(self):
        rec = self._with_cmds(n_ticks=2)
        assert rec.expected_cmd_counts() == (6, 4)   # 30 steps: /5, ceil/9
        rec3 = make_episode(3)
        assert rec3.expected_cmd_counts() == (9, 5)  # 45 steps: /5, /9

    def test_float64_roundtrip_bit_exact(self, tmp_path):
        rec = self._with_cmds()
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        do.write_episode(str(p1), rec)
        back = do.read_episode(str(p1))
        assert back.arm_cmd_frames[0].dtype == np.float64
        np.testing.assert_array_equal(back.arm_cmd_frames[3],
                                      rec.arm_cmd_frames[3])
        np.testing.assert_array_equal(back.hand_cmd_frames[2],
                                      rec.hand_cmd_frames[2])
        do.write_episode(str(p2), back)
        for kind in ("episode", "arm_cmds", "hand_cmds"):
            assert do.episode_paths(str(p1))[kind].read_bytes() == \
                do.episode_paths(str(p2))[kind].read_bytes()

    def test_count_mismatch_rejected(self, tmp_path):
        rec = self._with_cmds()
        rec.arm_cmd_frames.pop()
        with pytest.raises(do.IntegrityError, match="rates imply"):
            do.write_episode(str(tmp_path / "a.jsonl"), rec)

    def test_unknown_sidecar_kind_rejected(self, tmp_path):
        rec = make_episode(2)
        p = tmp_path / "a.jsonl"
        do.write_episode(str(p), rec)
        text = p.read_text().split("\n")
        text[0] = text[0].replace('"sidecars": ["depth"]',
                                  '"sidecars": ["depth", "audio"]')
        p.write_text("\n".join(text))
        with pytest.raises(do.IntegrityError, match="unknown sidecar"):
            do.read_episode(str(p))

    def test_scene_metadata_preserved(self, tmp_path):
        rec = make_episode(2)
        rec.scene = {"seed": 9, "n_objects": 2, "workspace": [0.4, 0.4]}
        p = tmp_path / "a.jsonl"
        do.write_episode(str(p), rec)
        back = do.read_episode(str(p))
        assert back.scene == {"seed": 9, "n_objects": 2,
                              "workspace": [0.4, 0.4]}
